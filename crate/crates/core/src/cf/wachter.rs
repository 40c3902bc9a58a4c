//! Gradient-descent counterfactuals on
//! `lambda * (p_target - stop_prob)^2 + d(x, x')`, where `d` is the
//! MAD-weighted L1 distance, averaged over feature points by default.

use serde::{Deserialize, Serialize};

use super::{train_channel_ranges, CfContext, CfGenerator, CfRequest, CfStatus, Counterfactual, Method, Timer};
use crate::classifier::{DistanceTerm, LossSpec};
use crate::dataset::LabeledInstance;
use crate::error::{Error, Result};
use crate::series::TimeSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WachterConfig {
    pub lambda_init: f64,
    pub lambda_growth: f64,
    /// Iterations between lambda increases.
    pub growth_every: usize,
    pub max_iters: usize,
    pub step_size: f64,
    /// Per feature point MAD of the train split; filled in by
    /// [`Wachter::new`] when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mad: Vec<f64>,
    /// Average the distance term over the `N * T` feature points instead of
    /// summing it. With a fixed step the summed form makes every point
    /// oscillate around the original by `step / MAD`.
    #[serde(default = "default_true")]
    pub mean_distance: bool,
    /// Record the loss at every iteration.
    #[serde(default)]
    pub trace: bool,
}

fn default_true() -> bool {
    true
}

impl Default for WachterConfig {
    fn default() -> Self {
        Self {
            lambda_init: 10.0,
            lambda_growth: 1.5,
            growth_every: 50,
            max_iters: 500,
            step_size: 0.01,
            mad: Vec::new(),
            mean_distance: true,
            trace: false,
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation of every feature point across `train`, floored
/// at `1e-6` times the channel's train range (or `1e-6` for a flat channel).
pub fn median_absolute_deviation(train: &[LabeledInstance]) -> Result<Vec<f64>> {
    let first = train
        .first()
        .ok_or_else(|| Error::Data("MAD needs a non-empty train split".into()))?;
    let (n, t) = first.series.shape();
    let ranges = train_channel_ranges(train);
    let mut column = vec![0.0; train.len()];
    let mut mad = Vec::with_capacity(n * t);
    for c in 0..n {
        let floor = if ranges[c] > 0.0 { 1e-6 * ranges[c] } else { 1e-6 };
        for s in 0..t {
            for (v, inst) in column.iter_mut().zip(train) {
                *v = inst.series.get(c, s);
            }
            let med = median(&mut column);
            for v in column.iter_mut() {
                *v = (*v - med).abs();
            }
            mad.push(median(&mut column).max(floor));
        }
    }
    Ok(mad)
}

#[derive(Debug, Clone)]
pub struct Wachter {
    cfg: WachterConfig,
}

impl Wachter {
    pub fn new(mut cfg: WachterConfig, train: &[LabeledInstance]) -> Result<Self> {
        if cfg.mad.is_empty() {
            cfg.mad = median_absolute_deviation(train)?;
        }
        cfg.validate()?;
        Ok(Self { cfg })
    }
}

impl WachterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_init > 0.0) {
            return Err(Error::Config("wcf: lambda must be positive".into()));
        }
        if self.mad.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config("wcf: MAD entries must be positive".into()));
        }
        Ok(())
    }
}

impl CfGenerator for Wachter {
    fn name(&self) -> &str {
        Method::Wachter.tag()
    }

    fn config(&self) -> serde_json::Value {
        let mut snapshot = self.cfg.clone();
        snapshot.mad.clear();
        serde_json::to_value(&snapshot).expect("serializable")
    }

    fn generate(&self, req: &CfRequest, ctx: &CfContext<'_>) -> Result<Counterfactual> {
        wachter(req, ctx, &self.cfg)
    }
}

pub fn wachter(req: &CfRequest, ctx: &CfContext<'_>, cfg: &WachterConfig) -> Result<Counterfactual> {
    let timer = Timer::start();
    let x = &req.instance;
    let model = ctx.model;
    model.check_input(x)?;
    if cfg.mad.len() != x.len() {
        return Err(Error::Config(format!(
            "wcf: MAD vector has {} entries for {} feature points",
            cfg.mad.len(),
            x.len()
        )));
    }
    let weights: Vec<f64> = if cfg.mean_distance {
        let n = x.len() as f64;
        cfg.mad.iter().map(|m| m * n).collect()
    } else {
        cfg.mad.clone()
    };
    let mut cand: TimeSeries = x.clone();
    let mut lambda = cfg.lambda_init;
    let mut trace = cfg.trace.then(Vec::new);
    let mut best = (f64::NEG_INFINITY, cand.clone());
    let mut status = CfStatus::NoCfFound;

    for it in 0..=cfg.max_iters {
        if ctx.budget.expired() {
            status = CfStatus::TimedOut;
            break;
        }
        let lg = model.input_gradient(
            &cand,
            &LossSpec {
                target: req.target,
                lambda,
                target_prob: req.stop_prob,
                distance: Some(DistanceTerm {
                    original: x,
                    mad: &weights,
                }),
            },
        )?;
        if let Some(t) = trace.as_mut() {
            t.push(lg.loss);
        }
        if req.accepts(&lg.probs) {
            best.1 = cand;
            status = CfStatus::Ok;
            break;
        }
        if lg.prob > best.0 {
            best = (lg.prob, cand.clone());
        }
        if it == cfg.max_iters {
            break;
        }
        if lg.gradient.iter().any(|g| !g.is_finite()) {
            break;
        }
        for (v, g) in cand.values_mut().iter_mut().zip(&lg.gradient) {
            *v -= cfg.step_size * g;
        }
        if (it + 1) % cfg.growth_every.max(1) == 0 {
            lambda *= cfg.lambda_growth;
        }
    }
    let mut cf = timer.finish(Method::Wachter, req, model, best.1, status)?;
    cf.trace = trace;
    Ok(cf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::{Budget, ReferencePool};

    #[test]
    fn mad_is_floored_by_channel_range() {
        let train: Vec<LabeledInstance> = [[0.0, 5.0, 1.0], [0.0, 1.0, 2.0], [0.0, 3.0, 3.0]]
            .iter()
            .map(|v| LabeledInstance {
                series: TimeSeries::univariate(v.to_vec()).unwrap(),
                label: 0,
            })
            .collect();
        let mad = median_absolute_deviation(&train).unwrap();
        // column 0 constant -> floored at 1e-6 * range(5)
        for (a, b) in mad.iter().zip([5e-6, 2.0, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn logistic_descent_reaches_line_search_optimum() {
        // Two-step linear logistic model p_1 = sigmoid(w . x + b). With the
        // distance term weighted off (huge MAD), the loss reduces to
        // lambda (p - 0.9)^2 whose minimizer along the gradient direction w
        // has p = 0.9 exactly; descent must land within 1e-3 of it.
        use crate::classifier::{Architecture, ClassifierModel};
        use crate::nn::{Dense, Layer};
        let w = [1.5, -0.5];
        let model = ClassifierModel::from_layers(
            Architecture::Mlp,
            vec![
                Layer::Flatten,
                Layer::Dense(Dense {
                    inputs: 2,
                    outputs: 2,
                    weight: vec![0.0, 0.0, w[0], w[1]],
                    bias: vec![0.0, -1.0],
                }),
            ],
            (1, 2),
            2,
        )
        .unwrap();
        let pool = ReferencePool::new(&model, &[]).unwrap();
        let ctx = CfContext {
            model: &model,
            pool: &pool,
            seed: 0,
            budget: Budget::unlimited(),
        };
        let x = TimeSeries::univariate(vec![0.0, 0.0]).unwrap();
        let req = CfRequest::with_limits(x.clone(), 0, 1, 0.9, 60.0).unwrap();
        let cfg = WachterConfig {
            mad: vec![1e12, 1e12],
            mean_distance: false,
            lambda_growth: 1.0,
            max_iters: 20_000,
            step_size: 0.5,
            ..WachterConfig::default()
        };
        let cf = wachter(&req, &ctx, &cfg).unwrap();
        // closed-form line search oracle: x* = s w with sigmoid(s |w|^2 - 1) = 0.9
        let wn2 = w[0] * w[0] + w[1] * w[1];
        let s = ((0.9f64 / 0.1).ln() + 1.0) / wn2;
        let opt = [s * w[0], s * w[1]];
        // p approaches 0.9 from below; the best-so-far iterate is the last one
        for (a, b) in cf.perturbed.values().iter().zip(opt) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn trace_is_recorded_on_request() {
        let model = crate::cf::test_util::linear_sum_model(4, 1.0, 2.0);
        let pool = ReferencePool::new(&model, &[]).unwrap();
        let ctx = CfContext {
            model: &model,
            pool: &pool,
            seed: 0,
            budget: Budget::unlimited(),
        };
        let x = TimeSeries::univariate(vec![0.0; 4]).unwrap();
        let cfg = WachterConfig {
            mad: vec![1.0; 4],
            trace: true,
            ..WachterConfig::default()
        };
        let cf = wachter(&CfRequest::new(x, 0, 1).unwrap(), &ctx, &cfg).unwrap();
        let trace = cf.trace.unwrap();
        assert!(!trace.is_empty());
        assert!(trace.iter().all(|v| v.is_finite()));
    }
}
