//! Channel-swap counterfactuals for multivariate series.
//!
//! A candidate replaces a subset of channels wholesale with the NUN's
//! channels. The subset is searched by random-restart hill climbing on
//! `(tau - p_target)^2 + lambda * max(|A| - sigma, 0)`, with a greedy
//! channel-adding fallback.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{nun, CfContext, CfGenerator, CfRequest, CfStatus, Counterfactual, Method, Timer};
use crate::classifier::ClassifierModel;
use crate::error::{Error, Result};
use crate::series::TimeSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComteConfig {
    pub lambda: f64,
    pub sigma: usize,
    pub tau: f64,
    pub restarts: usize,
    pub max_steps: usize,
}

impl Default for ComteConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            sigma: 3,
            tau: 0.95,
            restarts: 5,
            max_steps: 200,
        }
    }
}

impl ComteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma < 1 {
            return Err(Error::Config("comte: sigma must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config("comte: tau must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn loss(&self, target_prob: f64, swapped: usize) -> f64 {
        let over = swapped.saturating_sub(self.sigma) as f64;
        (self.tau - target_prob).powi(2) + self.lambda * over
    }
}

/// Copies the channels selected by `mask` from `donor` into `x`.
pub fn swap_channels(x: &TimeSeries, donor: &TimeSeries, mask: &[bool]) -> TimeSeries {
    let mut out = x.clone();
    for (c, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        out.channel_mut(c).copy_from_slice(donor.channel(c));
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Eval {
    loss: f64,
    accepted: bool,
}

struct Search<'a> {
    cfg: &'a ComteConfig,
    req: &'a CfRequest,
    model: &'a ClassifierModel,
    donor: &'a TimeSeries,
    cache: BTreeMap<Vec<bool>, Eval>,
    best: Option<(f64, usize, Vec<bool>)>,
}

impl Search<'_> {
    fn eval(&mut self, mask: &[bool]) -> Result<Eval> {
        if let Some(e) = self.cache.get(mask) {
            return Ok(*e);
        }
        let cand = swap_channels(&self.req.instance, self.donor, mask);
        let probs = self.model.predict_proba(&cand)?;
        let count = mask.iter().filter(|&&m| m).count();
        let e = Eval {
            loss: self.cfg.loss(probs[self.req.target], count),
            accepted: self.req.accepts(&probs),
        };
        if e.accepted {
            let better = self.best.as_ref().is_none_or(|(bl, bc, bm)| {
                (e.loss, count, mask) < (*bl, *bc, bm.as_slice())
            });
            if better {
                self.best = Some((e.loss, count, mask.to_vec()));
            }
        }
        self.cache.insert(mask.to_vec(), e);
        Ok(e)
    }
}

#[derive(Debug, Clone)]
pub struct Comte {
    cfg: ComteConfig,
}

impl Comte {
    pub fn new(cfg: ComteConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }
}

impl CfGenerator for Comte {
    fn name(&self) -> &str {
        Method::Comte.tag()
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).expect("serializable")
    }

    fn generate(&self, req: &CfRequest, ctx: &CfContext<'_>) -> Result<Counterfactual> {
        comte(req, ctx, &self.cfg)
    }
}

pub fn comte(req: &CfRequest, ctx: &CfContext<'_>, cfg: &ComteConfig) -> Result<Counterfactual> {
    let timer = Timer::start();
    let x = &req.instance;
    let n = x.channels();
    if n < 2 {
        return Err(Error::Unsupported(
            "comte: method requires multivariate input (at least 2 channels)".into(),
        ));
    }
    let model = ctx.model;
    model.check_input(x)?;
    let Ok(donor) = nun(ctx.pool, x, req.target) else {
        return timer.finish(Method::Comte, req, model, x.clone(), CfStatus::NoCfFound);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut search = Search {
        cfg,
        req,
        model,
        donor,
        cache: BTreeMap::new(),
        best: None,
    };
    let mut timed_out = false;

    'restarts: for _ in 0..cfg.restarts {
        let size = rng.random_range(1..=cfg.sigma.min(n));
        let mut mask = vec![false; n];
        for c in sample(&mut rng, n, size) {
            mask[c] = true;
        }
        let mut current = search.eval(&mask)?;
        for _ in 0..cfg.max_steps {
            if ctx.budget.expired() {
                timed_out = true;
                break 'restarts;
            }
            let mut step: Option<(f64, usize)> = None;
            for c in 0..n {
                mask[c] = !mask[c];
                let e = search.eval(&mask)?;
                mask[c] = !mask[c];
                if step.is_none_or(|(l, _)| e.loss < l) {
                    step = Some((e.loss, c));
                }
            }
            match step {
                Some((loss, c)) if loss < current.loss => {
                    mask[c] = !mask[c];
                    current = search.eval(&mask)?;
                }
                _ => break,
            }
        }
    }

    if search.best.is_none() && !timed_out {
        // greedy fallback: add the channel with the best loss until accepted
        let mut mask = vec![false; n];
        while search.best.is_none() && mask.iter().any(|m| !m) {
            if ctx.budget.expired() {
                timed_out = true;
                break;
            }
            let mut pick: Option<(f64, usize)> = None;
            for c in 0..n {
                if mask[c] {
                    continue;
                }
                mask[c] = true;
                let e = search.eval(&mask)?;
                mask[c] = false;
                if pick.is_none_or(|(l, _)| e.loss < l) {
                    pick = Some((e.loss, c));
                }
            }
            let (_, c) = pick.expect("an unswapped channel exists");
            mask[c] = true;
        }
        if search.best.is_none() && !timed_out {
            // every channel swapped: the NUN itself, valid by construction
            return timer.finish(Method::Comte, req, model, donor.clone(), CfStatus::Ok);
        }
    }

    let Some((mut best_loss, _, mut mask)) = search.best.clone() else {
        let status = if timed_out { CfStatus::TimedOut } else { CfStatus::NoCfFound };
        return timer.finish(Method::Comte, req, model, x.clone(), status);
    };
    // drop channels that are not needed for an accepted, no-worse candidate
    let mut changed = true;
    while changed && !ctx.budget.expired() {
        changed = false;
        for c in 0..n {
            if !mask[c] || mask.iter().filter(|&&m| m).count() == 1 {
                continue;
            }
            mask[c] = false;
            let e = search.eval(&mask)?;
            if e.accepted && e.loss <= best_loss {
                best_loss = e.loss;
                changed = true;
            } else {
                mask[c] = true;
            }
        }
    }
    timer.finish(Method::Comte, req, model, swap_channels(x, donor, &mask), CfStatus::Ok)
}
