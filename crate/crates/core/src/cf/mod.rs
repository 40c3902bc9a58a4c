//! Counterfactual generators sharing one request/result contract.
//!
//! Every generator receives a [`CfRequest`] (instance, its predicted class,
//! the desired target class, a probability stopping threshold and a time
//! budget) plus a [`CfContext`] holding the model, the reference pool of
//! training instances with their model predictions, a seed and a cooperative
//! [`Budget`].

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::classifier::{argmax, ClassifierModel};
use crate::dataset::LabeledInstance;
use crate::error::{Error, Result};
use crate::series::TimeSeries;

pub mod comte;
pub mod native_guide;
pub mod nsga;
pub mod sets;
pub mod tsevo;
pub mod wachter;

pub use comte::ComteConfig;
pub use native_guide::{LengthSchedule, NativeGuideConfig};
pub use sets::{SetsConfig, Shapelet, ShapeletSet};
pub use tsevo::{MutationProbs, TsevoConfig};
pub use wachter::WachterConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "nun_cf")]
    NunCf,
    #[serde(rename = "ng")]
    NativeGuide,
    #[serde(rename = "comte")]
    Comte,
    #[serde(rename = "sets")]
    Sets,
    #[serde(rename = "wcf")]
    Wachter,
    #[serde(rename = "tsevo")]
    Tsevo,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::NunCf,
        Method::NativeGuide,
        Method::Comte,
        Method::Sets,
        Method::Wachter,
        Method::Tsevo,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::NunCf => "nun_cf",
            Method::NativeGuide => "ng",
            Method::Comte => "comte",
            Method::Sets => "sets",
            Method::Wachter => "wcf",
            Method::Tsevo => "tsevo",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Ok(match norm.as_str() {
            "nun_cf" | "nun" => Method::NunCf,
            "ng" | "native_guide" => Method::NativeGuide,
            "comte" => Method::Comte,
            "sets" => Method::Sets,
            "wcf" | "wachter" => Method::Wachter,
            "tsevo" => Method::Tsevo,
            _ => {
                return Err(Error::Config(format!(
                    "unknown method {s:?} (expected nun_cf, ng, comte, sets, wcf, tsevo)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfStatus {
    Ok,
    NoCfFound,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfRequest {
    pub instance: TimeSeries,
    pub original_pred: usize,
    pub target: usize,
    pub stop_prob: f64,
    /// Seconds.
    pub time_budget: f64,
}

impl CfRequest {
    pub const DEFAULT_STOP_PROB: f64 = 0.5;
    pub const DEFAULT_TIME_BUDGET: f64 = 3600.0;

    pub fn new(instance: TimeSeries, original_pred: usize, target: usize) -> Result<Self> {
        Self::with_limits(
            instance,
            original_pred,
            target,
            Self::DEFAULT_STOP_PROB,
            Self::DEFAULT_TIME_BUDGET,
        )
    }

    pub fn with_limits(
        instance: TimeSeries,
        original_pred: usize,
        target: usize,
        stop_prob: f64,
        time_budget: f64,
    ) -> Result<Self> {
        if target == original_pred {
            return Err(Error::Contract(format!(
                "target class {target} equals the original prediction"
            )));
        }
        if !(stop_prob > 0.0 && stop_prob < 1.0) {
            return Err(Error::Contract(format!("stop_prob {stop_prob} not in (0, 1)")));
        }
        if !(time_budget > 0.0) {
            return Err(Error::Contract("time budget must be positive".into()));
        }
        Ok(Self {
            instance,
            original_pred,
            target,
            stop_prob,
            time_budget,
        })
    }

    /// The stopping rule shared by all methods: target is the argmax and its
    /// probability reaches `stop_prob`.
    pub fn accepts(&self, probs: &[f64]) -> bool {
        argmax(probs) == self.target && probs[self.target] >= self.stop_prob
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub original: TimeSeries,
    pub perturbed: TimeSeries,
    pub target: usize,
    /// The model's argmax on `perturbed` equals `target`.
    pub valid: bool,
    /// Wall-clock seconds.
    pub gen_time: f64,
    pub method: String,
    pub status: CfStatus,
    /// Per-iteration loss, recorded by gradient-based methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<f64>>,
}

/// Cooperative time limit shared by a generator and an external monitor.
#[derive(Debug, Clone)]
pub struct Budget {
    start: Instant,
    limit: Option<Duration>,
    cancel: Arc<AtomicBool>,
}

impl Budget {
    pub fn new(seconds: f64) -> Self {
        Self {
            start: Instant::now(),
            limit: Some(Duration::from_secs_f64(seconds.max(0.0))),
            cancel: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn unlimited() -> Self {
        Self {
            start: Instant::now(),
            limit: None,
            cancel: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn expired(&self) -> bool {
        self.cancel.load(Ordering::Relaxed) || self.limit.is_some_and(|l| self.start.elapsed() >= l)
    }

    pub fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    /// Handle that lets another thread cut the budget short.
    pub fn canceller(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.cancel)
    }
}

/// Training instances together with the model's predictions on them.
#[derive(Debug, Clone)]
pub struct ReferencePool {
    pub instances: Vec<TimeSeries>,
    pub labels: Vec<usize>,
    pub predicted: Vec<usize>,
}

impl ReferencePool {
    pub fn new(model: &ClassifierModel, train: &[LabeledInstance]) -> Result<Self> {
        let predicted = train
            .iter()
            .map(|i| model.predict_label(&i.series))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            instances: train.iter().map(|i| i.series.clone()).collect(),
            labels: train.iter().map(|i| i.label).collect(),
            predicted,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Indices of instances the model assigns to `class`.
    pub fn predicted_as(&self, class: usize) -> impl Iterator<Item = usize> + '_ {
        self.predicted
            .iter()
            .enumerate()
            .filter(move |(_, &p)| p == class)
            .map(|(i, _)| i)
    }
}

/// Everything a generator may consult besides the request.
#[derive(Debug, Clone)]
pub struct CfContext<'a> {
    pub model: &'a ClassifierModel,
    pub pool: &'a ReferencePool,
    pub seed: u64,
    pub budget: Budget,
}

/// Index of the nearest pool instance predicted as `target` under
/// `distance`; ties go to the lowest index.
pub fn nun_index_with<F>(pool: &ReferencePool, x: &TimeSeries, target: usize, distance: F) -> Result<usize>
where
    F: Fn(&TimeSeries, &TimeSeries) -> f64,
{
    let mut best: Option<(usize, f64)> = None;
    for i in pool.predicted_as(target) {
        let d = distance(x, &pool.instances[i]);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| {
        Error::Data(format!("no training instance is predicted as class {target}"))
    })
}

/// Nearest unlike neighbour by Euclidean distance on raw values.
pub fn nun_index(pool: &ReferencePool, x: &TimeSeries, target: usize) -> Result<usize> {
    nun_index_with(pool, x, target, TimeSeries::sq_distance)
}

pub fn nun<'p>(pool: &'p ReferencePool, x: &TimeSeries, target: usize) -> Result<&'p TimeSeries> {
    Ok(&pool.instances[nun_index(pool, x, target)?])
}

pub(crate) struct Timer {
    start: Instant,
}

impl Timer {
    pub(crate) fn start() -> Self {
        Self {
            start: Instant::now(),
        }
    }

    /// Packages a result, deciding validity from the model's argmax.
    pub(crate) fn finish(
        self,
        method: Method,
        req: &CfRequest,
        model: &ClassifierModel,
        perturbed: TimeSeries,
        status: CfStatus,
    ) -> Result<Counterfactual> {
        let valid = model.predict_label(&perturbed)? == req.target;
        let status = match status {
            CfStatus::Ok if !valid => CfStatus::NoCfFound,
            s => s,
        };
        Ok(Counterfactual {
            original: req.instance.clone(),
            perturbed,
            target: req.target,
            valid: valid && status == CfStatus::Ok,
            gen_time: self.start.elapsed().as_secs_f64(),
            method: method.tag().to_string(),
            status,
            trace: None,
        })
    }
}

/// Uniform generator interface used by the harness.
pub trait CfGenerator: Send + Sync {
    fn name(&self) -> &str;

    /// Configuration snapshot recorded with results for replay.
    fn config(&self) -> serde_json::Value;

    fn generate(&self, req: &CfRequest, ctx: &CfContext<'_>) -> Result<Counterfactual>;
}

/// Returns the nearest unlike neighbour itself.
#[derive(Debug, Clone, Default)]
pub struct NunCf;

impl CfGenerator for NunCf {
    fn name(&self) -> &str {
        Method::NunCf.tag()
    }

    fn config(&self) -> serde_json::Value {
        serde_json::json!({})
    }

    fn generate(&self, req: &CfRequest, ctx: &CfContext<'_>) -> Result<Counterfactual> {
        nun_cf(req, ctx)
    }
}

pub fn nun_cf(req: &CfRequest, ctx: &CfContext<'_>) -> Result<Counterfactual> {
    let timer = Timer::start();
    ctx.model.check_input(&req.instance)?;
    match nun(ctx.pool, &req.instance, req.target) {
        Ok(n) => timer.finish(Method::NunCf, req, ctx.model, n.clone(), CfStatus::Ok),
        Err(_) => timer.finish(
            Method::NunCf,
            req,
            ctx.model,
            req.instance.clone(),
            CfStatus::NoCfFound,
        ),
    }
}

/// Serializable method choice with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodSpec {
    NunCf,
    #[serde(rename = "ng")]
    NativeGuide(NativeGuideConfig),
    Comte(ComteConfig),
    Sets(SetsConfig),
    #[serde(rename = "wcf")]
    Wachter(WachterConfig),
    Tsevo(TsevoConfig),
}

impl MethodSpec {
    pub fn default_for(method: Method) -> Self {
        match method {
            Method::NunCf => MethodSpec::NunCf,
            Method::NativeGuide => MethodSpec::NativeGuide(NativeGuideConfig::default()),
            Method::Comte => MethodSpec::Comte(ComteConfig::default()),
            Method::Sets => MethodSpec::Sets(SetsConfig::default()),
            Method::Wachter => MethodSpec::Wachter(WachterConfig::default()),
            Method::Tsevo => MethodSpec::Tsevo(TsevoConfig::default()),
        }
    }

    pub fn method(&self) -> Method {
        match self {
            MethodSpec::NunCf => Method::NunCf,
            MethodSpec::NativeGuide(_) => Method::NativeGuide,
            MethodSpec::Comte(_) => Method::Comte,
            MethodSpec::Sets(_) => Method::Sets,
            MethodSpec::Wachter(_) => Method::Wachter,
            MethodSpec::Tsevo(_) => Method::Tsevo,
        }
    }

    /// Checks whether the method can run on this model and input shape.
    pub fn check_applicable(&self, model: &ClassifierModel) -> Result<()> {
        let (n, _) = model.input_shape;
        match self.method() {
            Method::NativeGuide if n != 1 => Err(Error::Unsupported(
                "ng: method requires univariate input".into(),
            )),
            Method::NativeGuide if model.architecture != crate::classifier::Architecture::Fcn => {
                Err(Error::Unsupported(
                    "ng: method requires an FCN model (class activation maps)".into(),
                ))
            }
            Method::Comte if n < 2 => Err(Error::Unsupported(
                "comte: method requires multivariate input (at least 2 channels)".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Builds a ready generator. SETS mines its shapelets here and wCF
    /// derives its MAD vector from the training split.
    pub fn prepare(
        &self,
        model: &ClassifierModel,
        train: &[LabeledInstance],
        seed: u64,
    ) -> Result<Box<dyn CfGenerator>> {
        self.check_applicable(model)?;
        Ok(match self {
            MethodSpec::NunCf => Box::new(NunCf),
            MethodSpec::NativeGuide(c) => Box::new(native_guide::NativeGuide::new(c.clone())),
            MethodSpec::Comte(c) => Box::new(comte::Comte::new(c.clone())?),
            MethodSpec::Sets(c) => Box::new(sets::Sets::mine(c.clone(), train, seed)?),
            MethodSpec::Wachter(c) => Box::new(wachter::Wachter::new(c.clone(), train)?),
            MethodSpec::Tsevo(c) => Box::new(tsevo::Tsevo::new(c.clone())?),
        })
    }
}

/// Method tag, configuration and seed of one generator invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub method: String,
    pub config: serde_json::Value,
    pub seed: u64,
}

/// Per-invocation seed derived from a global seed and an instance index.
pub fn instance_seed(global: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = global ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-channel `max - min` over every training value.
pub(crate) fn train_channel_ranges(train: &[LabeledInstance]) -> Vec<f64> {
    let n = train.first().map_or(0, |i| i.series.channels());
    (0..n)
        .map(|c| {
            let (lo, hi) = train
                .iter()
                .flat_map(|i| i.series.channel(c).iter().copied())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            hi - lo
        })
        .collect()
}
