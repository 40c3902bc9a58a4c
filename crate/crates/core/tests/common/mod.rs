#![allow(dead_code)]

use tscf_core::cf::{Budget, CfContext, CfRequest, Counterfactual, MethodSpec, ReferencePool};
use tscf_core::classifier::{argmax, train, Architecture, ClassifierModel, TrainConfig};
use tscf_core::harness::select_target;
use tscf_core::nn::{Dense, Layer};
use tscf_core::{Dataset, LabeledInstance, TimeSeries};

pub fn fcn(ds: &Dataset, seed: u64, filters: [usize; 3], epochs: usize) -> ClassifierModel {
    let mut cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    cfg.fcn.filters = filters;
    train(Architecture::Fcn, ds, &cfg).expect("training succeeds")
}

pub fn mlp(ds: &Dataset, seed: u64, hidden: usize, epochs: usize) -> ClassifierModel {
    let mut cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    cfg.mlp.hidden = hidden;
    cfg.mlp.depth = 2;
    train(Architecture::Mlp, ds, &cfg).expect("training succeeds")
}

/// Two-class linear model on univariate input of length `steps`:
/// `logit_1 - logit_0 = scale * sum(x) - offset`.
pub fn linear_sum_model(steps: usize, scale: f64, offset: f64) -> ClassifierModel {
    let mut weight = vec![0.0; 2 * steps];
    weight[steps..].fill(scale);
    ClassifierModel::from_layers(
        Architecture::Mlp,
        vec![
            Layer::Flatten,
            Layer::Dense(Dense {
                inputs: steps,
                outputs: 2,
                weight,
                bias: vec![0.0, -offset],
            }),
        ],
        (1, steps),
        2,
    )
    .expect("valid layers")
}

/// Runs a prepared method on test instance `index` with the harness's
/// target rule.
pub fn explain(
    spec: &MethodSpec,
    model: &ClassifierModel,
    pool: &ReferencePool,
    train: &[LabeledInstance],
    x: &TimeSeries,
    seed: u64,
) -> Counterfactual {
    let gen = spec.prepare(model, train, seed).expect("method applies");
    let probs = model.predict_proba(x).unwrap();
    let req = CfRequest::new(x.clone(), argmax(&probs), select_target(&probs)).unwrap();
    let ctx = CfContext {
        model,
        pool,
        seed,
        budget: Budget::unlimited(),
    };
    gen.generate(&req, &ctx).expect("generation succeeds")
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
