//! CAM-guided subsequence replacement from the nearest unlike neighbour.
//!
//! For growing window lengths, the window with the largest summed class
//! activation (for the originally predicted class) is copied from the NUN
//! into the query. At full length the result is the NUN itself.

use serde::{Deserialize, Serialize};

use super::{nun, CfContext, CfGenerator, CfRequest, CfStatus, Counterfactual, Method, Timer};
use crate::error::{Error, Result};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthSchedule {
    /// `1, 1 + step, 1 + 2 step, ...`
    Linear { step: usize },
    /// `1, ceil(1 * factor), ...` for long series.
    Geometric { factor: f64 },
}

impl LengthSchedule {
    /// Window lengths to try, increasing and always ending at `steps`.
    pub fn lengths(&self, steps: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut l = 1usize;
        while l < steps {
            out.push(l);
            l = match *self {
                LengthSchedule::Linear { step } => l + step.max(1),
                LengthSchedule::Geometric { factor } => ((l as f64 * factor).ceil() as usize).max(l + 1),
            };
        }
        out.push(steps);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NativeGuideConfig {
    pub schedule: LengthSchedule,
}

impl Default for NativeGuideConfig {
    fn default() -> Self {
        Self {
            schedule: LengthSchedule::Linear { step: 1 },
        }
    }
}

/// Start of the length-`len` window with the largest sum of `weights`;
/// the earliest start wins ties.
pub fn best_window(weights: &[f64], len: usize) -> usize {
    let mut sum: f64 = weights[..len].iter().sum();
    let (mut best, mut best_sum) = (0, sum);
    for s in 1..=weights.len() - len {
        sum += weights[s + len - 1] - weights[s - 1];
        if sum > best_sum {
            best = s;
            best_sum = sum;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct NativeGuide {
    cfg: NativeGuideConfig,
}

impl NativeGuide {
    pub fn new(cfg: NativeGuideConfig) -> Self {
        Self { cfg }
    }
}

impl CfGenerator for NativeGuide {
    fn name(&self) -> &str {
        Method::NativeGuide.tag()
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).expect("serializable")
    }

    fn generate(&self, req: &CfRequest, ctx: &CfContext<'_>) -> Result<Counterfactual> {
        native_guide(req, ctx, &self.cfg)
    }
}

pub fn native_guide(
    req: &CfRequest,
    ctx: &CfContext<'_>,
    cfg: &NativeGuideConfig,
) -> Result<Counterfactual> {
    let timer = Timer::start();
    let x = &req.instance;
    if x.channels() != 1 {
        return Err(Error::Unsupported("ng: method requires univariate input".into()));
    }
    let model = ctx.model;
    let cam = model.class_activation_map(x, req.original_pred)?;
    let Ok(nun) = nun(ctx.pool, x, req.target) else {
        return timer.finish(Method::NativeGuide, req, model, x.clone(), CfStatus::NoCfFound);
    };
    let steps = x.steps();
    // cumulative window sums; recomputing is O(T) per length
    for len in cfg.schedule.lengths(steps) {
        if ctx.budget.expired() {
            return timer.finish(Method::NativeGuide, req, model, x.clone(), CfStatus::TimedOut);
        }
        let start = best_window(&cam, len);
        let mut cand: TimeSeries = x.clone();
        cand.values_mut()[start..start + len].copy_from_slice(&nun.values()[start..start + len]);
        if len == steps || req.accepts(&model.predict_proba(&cand)?) {
            return timer.finish(Method::NativeGuide, req, model, cand, CfStatus::Ok);
        }
    }
    unreachable!("schedule always ends at full length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::{Budget, ReferencePool};
    use crate::classifier::{Architecture, ClassifierModel};
    use crate::dataset::LabeledInstance;
    use crate::nn::{Conv1d, Dense, Layer};

    /// Two width-1 filters: A_0 = relu(1) (constant), A_1 = relu(x).
    /// logit_0 = a * mean(A_0), logit_1 = b * mean(A_1).
    fn cam_model(steps: usize, a: f64, b: f64) -> ClassifierModel {
        ClassifierModel::from_layers(
            Architecture::Fcn,
            vec![
                Layer::Conv1d(Conv1d {
                    in_channels: 1,
                    filters: 2,
                    width: 1,
                    weight: vec![0.0, 1.0],
                    bias: vec![1.0, 0.0],
                }),
                Layer::Relu,
                Layer::GlobalAvgPool,
                Layer::Dense(Dense {
                    inputs: 2,
                    outputs: 2,
                    weight: vec![a, 0.0, 0.0, b],
                    bias: vec![0.0, 0.0],
                }),
            ],
            (1, steps),
            2,
        )
        .unwrap()
    }

    fn pool(model: &ClassifierModel, rows: Vec<Vec<f64>>) -> ReferencePool {
        let train: Vec<LabeledInstance> = rows
            .into_iter()
            .map(|v| LabeledInstance {
                series: TimeSeries::univariate(v).unwrap(),
                label: 0,
            })
            .collect();
        ReferencePool::new(model, &train).unwrap()
    }

    #[test]
    fn schedules_end_at_full_length() {
        assert_eq!(LengthSchedule::Linear { step: 1 }.lengths(4), vec![1, 2, 3, 4]);
        assert_eq!(LengthSchedule::Linear { step: 3 }.lengths(5), vec![1, 4, 5]);
        assert_eq!(
            LengthSchedule::Geometric { factor: 2.0 }.lengths(10),
            vec![1, 2, 4, 8, 10]
        );
    }

    #[test]
    fn best_window_prefers_earliest_on_ties() {
        assert_eq!(best_window(&[1.0, 1.0, 1.0, 1.0], 2), 0);
        assert_eq!(best_window(&[0.0, 1.0, 3.0, 1.0], 2), 1);
        assert_eq!(best_window(&[0.0, 1.0, 3.0, 2.0], 2), 2);
    }

    #[test]
    fn uniform_cam_single_point_flip_uses_earliest_window() {
        let steps = 10;
        let model = cam_model(steps, 1.0, 1.0);
        let x = TimeSeries::univariate(vec![0.0; steps]).unwrap();
        assert_eq!(model.predict_label(&x).unwrap(), 0);
        let cam = model.class_activation_map(&x, 0).unwrap();
        assert!(cam.iter().all(|&v| v == 1.0));
        let pool = pool(&model, vec![vec![100.0; steps]]);
        let ctx = CfContext {
            model: &model,
            pool: &pool,
            seed: 0,
            budget: Budget::unlimited(),
        };
        let cf = native_guide(&CfRequest::new(x, 0, 1).unwrap(), &ctx, &NativeGuideConfig::default())
            .unwrap();
        assert!(cf.valid);
        let mut expect = vec![0.0; steps];
        expect[0] = 100.0;
        assert_eq!(cf.perturbed.values(), expect.as_slice());
    }

    #[test]
    fn flips_only_on_full_replacement_returns_nun() {
        let steps = 8;
        // logit_0 = 9.99, logit_1 = 10 * mean(x): needs mean(x) > 0.999
        let model = cam_model(steps, 9.99, 10.0);
        let x = TimeSeries::univariate(vec![0.0; steps]).unwrap();
        let pool = pool(&model, vec![vec![1.0; steps]]);
        let ctx = CfContext {
            model: &model,
            pool: &pool,
            seed: 0,
            budget: Budget::unlimited(),
        };
        let cf = native_guide(&CfRequest::new(x, 0, 1).unwrap(), &ctx, &NativeGuideConfig::default())
            .unwrap();
        assert!(cf.valid);
        assert_eq!(cf.perturbed.values(), &[1.0; 8]);
    }

    #[test]
    fn multivariate_is_unsupported() {
        let model = cam_model(4, 1.0, 1.0);
        let pool = pool(&model, vec![vec![1.0; 4]]);
        let ctx = CfContext {
            model: &model,
            pool: &pool,
            seed: 0,
            budget: Budget::unlimited(),
        };
        let x = TimeSeries::new(2, 4, vec![0.0; 8]).unwrap();
        let req = CfRequest::new(x, 0, 1).unwrap();
        let err = native_guide(&req, &ctx, &NativeGuideConfig::default()).unwrap_err();
        assert!(err.to_string().contains("univariate"));
    }
}
