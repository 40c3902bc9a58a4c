//! Evolutionary counterfactuals: NSGA-II over proximity (L1), sparsity
//! (changed fraction) and `|1 - p_target|`.
//!
//! The population starts from the NUN plus copies of the query carrying one
//! window from a random target-predicted train instance. An archive keeps
//! the valid individual with the smallest `(L0, L1)` seen in any generation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::nsga::{crowding_distance, fast_non_dominated_sort};
use super::{nun_index, CfContext, CfGenerator, CfRequest, CfStatus, Counterfactual, Method, Timer};
use crate::classifier::{argmax, ClassifierModel};
use crate::error::{Error, Result};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutationProbs {
    pub opposing: f64,
    pub frequency: f64,
    pub gaussian: f64,
}

impl Default for MutationProbs {
    fn default() -> Self {
        Self {
            opposing: 0.2,
            frequency: 0.2,
            gaussian: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsevoConfig {
    pub population: usize,
    pub generations: usize,
    pub mutation_probs: MutationProbs,
    /// Overrides the per-invocation seed when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Longest random window as a fraction of the series length.
    pub max_window_frac: f64,
}

impl Default for TsevoConfig {
    fn default() -> Self {
        Self {
            population: 60,
            generations: 100,
            mutation_probs: MutationProbs::default(),
            seed: None,
            max_window_frac: 0.3,
        }
    }
}

impl TsevoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 || self.population % 2 != 0 {
            return Err(Error::Config(format!(
                "tsevo: population must be even and at least 4, got {}",
                self.population
            )));
        }
        let p = self.mutation_probs;
        let parts = [p.opposing, p.frequency, p.gaussian];
        if parts.iter().any(|v| !(0.0..=1.0).contains(v)) || parts.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::Config(
                "tsevo: mutation probabilities must be non-negative and sum to at most 1".into(),
            ));
        }
        if !(self.max_window_frac > 0.0 && self.max_window_frac <= 1.0) {
            return Err(Error::Config("tsevo: max_window_frac must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Tsevo {
    cfg: TsevoConfig,
}

impl Tsevo {
    pub fn new(cfg: TsevoConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }
}

impl CfGenerator for Tsevo {
    fn name(&self) -> &str {
        Method::Tsevo.tag()
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).expect("serializable")
    }

    fn generate(&self, req: &CfRequest, ctx: &CfContext<'_>) -> Result<Counterfactual> {
        tsevo(req, ctx, &self.cfg)
    }
}

/// Objective vector `[L1, L0 / (N T), |1 - p_target|]`.
pub fn objectives(x: &TimeSeries, cand: &TimeSeries, target_prob: f64) -> [f64; 3] {
    let (mut l1, mut l0) = (0.0, 0usize);
    for (a, b) in x.values().iter().zip(cand.values()) {
        let d = (a - b).abs();
        l1 += d;
        l0 += usize::from(d != 0.0);
    }
    [l1, l0 as f64 / x.len() as f64, (1.0 - target_prob).abs()]
}

struct Individual {
    series: TimeSeries,
    objs: Vec<f64>,
}

struct Evolution<'a> {
    req: &'a CfRequest,
    model: &'a ClassifierModel,
    refs: Vec<&'a TimeSeries>,
    ranges: Vec<f64>,
    max_window: usize,
    probs: MutationProbs,
    fft: (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>),
    rng: ChaCha8Rng,
    /// `(l0, l1, series)` of the best valid individual so far.
    archive: Option<(usize, f64, TimeSeries)>,
}

impl Evolution<'_> {
    fn evaluate(&mut self, series: TimeSeries) -> Result<Individual> {
        let probs = self.model.predict_proba(&series)?;
        let objs = objectives(&self.req.instance, &series, probs[self.req.target]);
        if argmax(&probs) == self.req.target {
            let l0 = (objs[1] * series.len() as f64).round() as usize;
            if self.archive.as_ref().is_none_or(|(b0, b1, _)| (l0, objs[0]) < (*b0, *b1)) {
                self.archive = Some((l0, objs[0], series.clone()));
            }
        }
        Ok(Individual {
            series,
            objs: objs.to_vec(),
        })
    }

    fn window(&mut self) -> (usize, usize) {
        let steps = self.req.instance.steps();
        let len = self.rng.random_range(1..=self.max_window);
        let start = self.rng.random_range(0..=steps - len);
        (start, start + len)
    }

    fn copy_window(dst: &mut TimeSeries, src: &TimeSeries, (a, b): (usize, usize)) {
        for c in 0..dst.channels() {
            dst.channel_mut(c)[a..b].copy_from_slice(&src.channel(c)[a..b]);
        }
    }

    fn random_ref(&mut self) -> &TimeSeries {
        self.refs[self.rng.random_range(0..self.refs.len())]
    }

    fn mutate(&mut self, child: &mut TimeSeries) {
        let cfg = self.probs;
        let u: f64 = self.rng.random();
        if u < cfg.opposing {
            let w = self.window();
            Self::copy_window(child, &self.req.instance, w);
        } else if u < cfg.opposing + cfg.frequency {
            self.frequency(child);
        } else if u < cfg.opposing + cfg.frequency + cfg.gaussian {
            let w = self.window();
            for c in 0..child.channels() {
                let sd = 0.05 * self.ranges[c];
                if !(sd > 0.0) {
                    continue;
                }
                let normal = Normal::new(0.0, sd).expect("positive sd");
                for v in &mut child.channel_mut(c)[w.0..w.1] {
                    *v += normal.sample(&mut self.rng);
                }
            }
        }
    }

    /// Replaces a band of Fourier coefficients of one channel with those of
    /// a reference instance, keeping the spectrum conjugate-symmetric.
    fn frequency(&mut self, child: &mut TimeSeries) {
        let steps = child.steps();
        let c = self.rng.random_range(0..child.channels());
        let reference = self.random_ref().channel(c).to_vec();
        let half = steps / 2;
        let k0 = self.rng.random_range(0..=half);
        let width = self.rng.random_range(1..=(half + 1).div_ceil(4).max(1));
        let k1 = (k0 + width).min(half + 1);
        let mut xs: Vec<Complex<f64>> = child.channel(c).iter().map(|&v| Complex::new(v, 0.0)).collect();
        let mut rs: Vec<Complex<f64>> = reference.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.0.process(&mut xs);
        self.fft.0.process(&mut rs);
        for k in k0..k1 {
            xs[k] = rs[k];
            if k != 0 && steps - k != k {
                xs[steps - k] = rs[steps - k];
            }
        }
        self.fft.1.process(&mut xs);
        for (v, z) in child.channel_mut(c).iter_mut().zip(&xs) {
            *v = z.re / steps as f64;
        }
    }
}

/// Binary tournament on (front rank, crowding distance); lower index wins
/// exact ties.
fn tournament(rng: &mut ChaCha8Rng, rank: &[usize], crowd: &[f64]) -> usize {
    let a = rng.random_range(0..rank.len());
    let b = rng.random_range(0..rank.len());
    let better = |i: usize, j: usize| rank[i] < rank[j] || (rank[i] == rank[j] && crowd[i] > crowd[j]);
    if better(a, b) || (!better(b, a) && a <= b) {
        a
    } else {
        b
    }
}

/// Front rank and crowding distance of every individual.
fn rank_and_crowd(objs: &[Vec<f64>]) -> (Vec<Vec<usize>>, Vec<usize>, Vec<f64>) {
    let fronts = fast_non_dominated_sort(objs);
    let mut rank = vec![0; objs.len()];
    let mut crowd = vec![0.0; objs.len()];
    for (r, front) in fronts.iter().enumerate() {
        for (&i, d) in front.iter().zip(crowding_distance(objs, front)) {
            rank[i] = r;
            crowd[i] = d;
        }
    }
    (fronts, rank, crowd)
}

pub fn tsevo(req: &CfRequest, ctx: &CfContext<'_>, cfg: &TsevoConfig) -> Result<Counterfactual> {
    let timer = Timer::start();
    let x = &req.instance;
    let model = ctx.model;
    model.check_input(x)?;
    cfg.validate()?;
    let Ok(nun_idx) = nun_index(ctx.pool, x, req.target) else {
        return timer.finish(Method::Tsevo, req, model, x.clone(), CfStatus::NoCfFound);
    };
    let (n, steps) = x.shape();
    let ranges = (0..n)
        .map(|c| {
            let (lo, hi) = ctx
                .pool
                .instances
                .iter()
                .flat_map(|s| s.channel(c).iter().copied())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            hi - lo
        })
        .collect();
    let mut planner = FftPlanner::new();
    let mut evo = Evolution {
        req,
        model,
        refs: ctx.pool.predicted_as(req.target).map(|i| &ctx.pool.instances[i]).collect(),
        ranges,
        max_window: ((cfg.max_window_frac * steps as f64).ceil() as usize).clamp(1, steps),
        probs: cfg.mutation_probs,
        fft: (planner.plan_fft_forward(steps), planner.plan_fft_inverse(steps)),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed.unwrap_or(ctx.seed)),
        archive: None,
    };

    let mut pop = vec![evo.evaluate(ctx.pool.instances[nun_idx].clone())?];
    while pop.len() < cfg.population {
        let mut s = x.clone();
        let w = evo.window();
        let r = evo.random_ref().clone();
        Evolution::copy_window(&mut s, &r, w);
        pop.push(evo.evaluate(s)?);
    }

    let mut timed_out = false;
    'gens: for _ in 0..cfg.generations {
        let objs: Vec<Vec<f64>> = pop.iter().map(|i| i.objs.clone()).collect();
        let (_, rank, crowd) = rank_and_crowd(&objs);
        let mut offspring = Vec::with_capacity(cfg.population);
        while offspring.len() < cfg.population {
            if ctx.budget.expired() {
                timed_out = true;
                break 'gens;
            }
            let a = tournament(&mut evo.rng, &rank, &crowd);
            let b = tournament(&mut evo.rng, &rank, &crowd);
            let mut c1 = pop[a].series.clone();
            let mut c2 = pop[b].series.clone();
            let w = evo.window();
            Evolution::copy_window(&mut c1, &pop[b].series, w);
            Evolution::copy_window(&mut c2, &pop[a].series, w);
            for mut child in [c1, c2] {
                evo.mutate(&mut child);
                offspring.push(evo.evaluate(child)?);
            }
        }
        pop.extend(offspring);
        let objs: Vec<Vec<f64>> = pop.iter().map(|i| i.objs.clone()).collect();
        let (fronts, _, crowd) = rank_and_crowd(&objs);
        let mut keep = Vec::with_capacity(cfg.population);
        for front in fronts {
            if keep.len() + front.len() <= cfg.population {
                keep.extend(front);
            } else {
                let mut rest = front;
                rest.sort_by(|&i, &j| crowd[j].total_cmp(&crowd[i]).then(i.cmp(&j)));
                keep.extend(rest.into_iter().take(cfg.population - keep.len()));
            }
            if keep.len() == cfg.population {
                break;
            }
        }
        keep.sort_unstable();
        let mut slots: Vec<Option<Individual>> = pop.into_iter().map(Some).collect();
        pop = keep.into_iter().map(|i| slots[i].take().expect("kept once")).collect();
    }

    let (best, found) = match evo.archive.take() {
        Some((_, _, best)) => (best, true),
        None => (x.clone(), false),
    };
    let status = match (timed_out, found) {
        (true, _) => CfStatus::TimedOut,
        (false, true) => CfStatus::Ok,
        (false, false) => CfStatus::NoCfFound,
    };
    timer.finish(Method::Tsevo, req, model, best, status)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::test_util::{linear_sum_model, pool_of};
    use crate::cf::Budget;

    fn small() -> TsevoConfig {
        TsevoConfig {
            population: 12,
            generations: 15,
            ..TsevoConfig::default()
        }
    }

    #[test]
    fn config_invariants() {
        assert!(TsevoConfig::default().validate().is_ok());
        assert!(TsevoConfig { population: 5, ..small() }.validate().is_err());
        assert!(TsevoConfig { population: 2, ..small() }.validate().is_err());
        let probs = MutationProbs {
            opposing: 0.5,
            frequency: 0.5,
            gaussian: 0.1,
        };
        assert!(TsevoConfig { mutation_probs: probs, ..small() }.validate().is_err());
    }

    #[test]
    fn objective_vector() {
        let x = TimeSeries::univariate(vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let c = TimeSeries::univariate(vec![1.0, 0.0, -2.0, 0.0]).unwrap();
        assert_eq!(objectives(&x, &c, 0.75), [3.0, 0.5, 0.25]);
    }

    #[test]
    fn always_valid_and_sparser_than_nun() {
        let steps = 16;
        let model = linear_sum_model(steps, 1.0, 4.0);
        let pool = pool_of(&model, vec![vec![-1.0; steps], vec![1.0; steps]]);
        let x = TimeSeries::univariate(vec![0.0; steps]).unwrap();
        for seed in 0..3 {
            let ctx = CfContext {
                model: &model,
                pool: &pool,
                seed,
                budget: Budget::unlimited(),
            };
            let cf = tsevo(&CfRequest::new(x.clone(), 0, 1).unwrap(), &ctx, &small()).unwrap();
            assert!(cf.valid);
            let changed = cf.perturbed.values().iter().filter(|&&v| v != 0.0).count();
            assert!(changed < steps, "seed {seed}: {changed}");
            let again = tsevo(&CfRequest::new(x.clone(), 0, 1).unwrap(), &ctx, &small()).unwrap();
            assert_eq!(again.perturbed, cf.perturbed);
        }
    }

    #[test]
    fn no_target_reference_means_no_cf() {
        let model = linear_sum_model(4, 1.0, 100.0);
        let pool = pool_of(&model, vec![vec![0.0; 4]]);
        let ctx = CfContext {
            model: &model,
            pool: &pool,
            seed: 0,
            budget: Budget::unlimited(),
        };
        let x = TimeSeries::univariate(vec![0.0; 4]).unwrap();
        let cf = tsevo(&CfRequest::new(x, 0, 1).unwrap(), &ctx, &small()).unwrap();
        assert_eq!(cf.status, CfStatus::NoCfFound);
        assert!(!cf.valid);
    }
}
