//! Benchmark orchestration: target selection, stratified sampling,
//! per-instance timeouts with consecutive-timeout abort, metric evaluation,
//! aggregation, ranking and report emission.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::cf::{
    instance_seed, Budget, CfContext, CfGenerator, CfRequest, CfStatus, Counterfactual, InvocationRecord, Method,
    MethodSpec, ReferencePool,
};
use crate::classifier::{argmax, train, Architecture, ClassifierModel, TrainConfig};
use crate::dataset::{load_multivariate, load_univariate_tsv, stratified_sample, Dataset, LabeledInstance};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport, PlausibilityConfig, PlausibilityIndex, SparsityConfig};
use crate::synthetic;

pub mod report;
pub mod stats;
pub mod svg;

pub use report::{emit_report, write_results, ReportFormat, Summary};
pub use stats::{aggregate_rankings, critical_difference, friedman_nemenyi, CdResult, Direction, RankTable};

/// Class with the second-highest probability: the argmax after excluding
/// the predicted class, lowest index on ties.
pub fn select_target(probs: &[f64]) -> usize {
    let pred = argmax(probs);
    let mut best: Option<usize> = None;
    for (i, &p) in probs.iter().enumerate() {
        if i != pred && best.is_none_or(|b| p > probs[b]) {
            best = Some(i);
        }
    }
    best.expect("at least two classes")
}

/// Resolves a dataset reference: `synth:<name>[:seed]`, a multivariate
/// manifest (`.toml` / `.manifest`), or a univariate `*_TRAIN` file whose
/// `*_TEST` sibling is picked up when present.
pub fn load_dataset(reference: &str) -> Result<Dataset> {
    if let Some(name) = reference.strip_prefix("synth:") {
        return synthetic::by_name(name);
    }
    let path = Path::new(reference);
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml" | "manifest") => load_multivariate(path),
        _ => {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let test = name
                .contains("_TRAIN")
                .then(|| path.with_file_name(name.replacen("_TRAIN", "_TEST", 1)))
                .filter(|p| p.exists());
            load_univariate_tsv(path, test.as_deref())
        }
    }
}

/// A classifier to train (or load) for every dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub epochs: Option<usize>,
    /// FCN filter counts per block.
    #[serde(default)]
    pub filters: Option<[usize; 3]>,
    /// MLP hidden width.
    #[serde(default)]
    pub hidden: Option<usize>,
    /// Load this model file instead of training.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl ModelSpec {
    pub fn new(arch: Architecture, seed: u64) -> Self {
        Self {
            arch,
            seed,
            epochs: None,
            filters: None,
            hidden: None,
            path: None,
        }
    }

    pub fn label(&self) -> String {
        format!("{}-s{}", self.arch, self.seed)
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig {
            seed: self.seed,
            ..TrainConfig::default()
        };
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(f) = self.filters {
            cfg.fcn.filters = f;
        }
        if let Some(h) = self.hidden {
            cfg.mlp.hidden = h;
        }
        cfg
    }

    pub fn build(&self, ds: &Dataset) -> Result<ClassifierModel> {
        match &self.path {
            Some(p) => ClassifierModel::load(p),
            None => train(self.arch, ds, &self.train_config()),
        }
    }
}

fn default_cap() -> usize {
    160
}
fn default_capped() -> Vec<Method> {
    vec![Method::Wachter, Method::Tsevo]
}
fn default_timeout() -> f64 {
    CfRequest::DEFAULT_TIME_BUDGET
}
fn default_abort() -> usize {
    10
}
fn default_workers() -> usize {
    1
}
fn default_stop() -> f64 {
    CfRequest::DEFAULT_STOP_PROB
}
fn default_alpha() -> f64 {
    0.05
}
fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub datasets: Vec<String>,
    pub models: Vec<ModelSpec>,
    pub methods: Vec<MethodSpec>,
    /// Test instances sampled (stratified, shared) for the capped methods.
    #[serde(default = "default_cap")]
    pub sample_cap: usize,
    #[serde(default = "default_capped")]
    pub capped_methods: Vec<Method>,
    /// Per-instance wall-clock limit in seconds.
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_abort")]
    pub consecutive_timeout_abort: usize,
    #[serde(default)]
    pub global_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_stop")]
    pub stop_prob: f64,
    /// Significance level for the Friedman/Nemenyi comparison.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Drop aborted methods from rankings instead of ranking them last.
    #[serde(default)]
    pub exclude_aborted: bool,
    /// Train a second model with this seed to measure consistency.
    #[serde(default)]
    pub consistency_seed: Option<u64>,
    /// Z-normalize every series of each dataset before training.
    #[serde(default)]
    pub z_normalize: bool,
    #[serde(default)]
    pub sparsity: SparsityConfig,
    #[serde(default)]
    pub plausibility: PlausibilityConfig,
}

impl ExperimentConfig {
    pub fn new(datasets: Vec<String>, models: Vec<ModelSpec>, methods: Vec<MethodSpec>) -> Self {
        Self {
            name: default_name(),
            datasets,
            models,
            methods,
            sample_cap: default_cap(),
            capped_methods: default_capped(),
            timeout_s: default_timeout(),
            consecutive_timeout_abort: default_abort(),
            global_seed: 0,
            workers: default_workers(),
            stop_prob: default_stop(),
            alpha: default_alpha(),
            exclude_aborted: false,
            consistency_seed: None,
            z_normalize: false,
            sparsity: SparsityConfig::default(),
            plausibility: PlausibilityConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_cap < 1 {
            return Err(Error::Config("sample_cap must be at least 1".into()));
        }
        if !(self.timeout_s > 0.0) {
            return Err(Error::Config("timeout_s must be positive".into()));
        }
        if self.consecutive_timeout_abort < 1 {
            return Err(Error::Config("consecutive_timeout_abort must be at least 1".into()));
        }
        if self.workers < 1 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(self.stop_prob > 0.0 && self.stop_prob < 1.0) {
            return Err(Error::Config("stop_prob must lie in (0, 1)".into()));
        }
        if self.datasets.is_empty() || self.models.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("datasets, models and methods must be non-empty".into()));
        }
        stats::nemenyi_q(self.alpha, 2)?;
        self.sparsity.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    NoCfFound,
    TimedOut,
    /// The generator returned an error or panicked.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    /// Index into the test split.
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    pub target: usize,
    pub seed: u64,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Present whenever the generator returned a series.
    pub metrics: Option<MetricReport>,
    pub perturbed: Option<Vec<f64>>,
    /// Consistency inputs: both models classify the instance correctly, and
    /// the second model also predicts the target on the counterfactual.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub both_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_b: Option<bool>,
    pub gen_time: f64,
}

impl InstanceRecord {
    pub fn valid(&self) -> bool {
        self.outcome != Outcome::TimedOut && self.metrics.as_ref().is_some_and(|m| m.valid)
    }
}

/// Everything `run_method` needs besides the generator.
pub struct RunContext<'a> {
    pub model: &'a ClassifierModel,
    pub pool: &'a ReferencePool,
    pub plausibility: Option<&'a PlausibilityIndex>,
    pub second_model: Option<&'a ClassifierModel>,
    pub test: &'a [LabeledInstance],
    pub sparsity: SparsityConfig,
    pub stop_prob: f64,
    pub timeout_s: f64,
    pub abort_after: usize,
    pub workers: usize,
    pub global_seed: u64,
}

impl<'a> RunContext<'a> {
    pub fn new(model: &'a ClassifierModel, pool: &'a ReferencePool, test: &'a [LabeledInstance]) -> Self {
        Self {
            model,
            pool,
            plausibility: None,
            second_model: None,
            test,
            sparsity: SparsityConfig::default(),
            stop_prob: CfRequest::DEFAULT_STOP_PROB,
            timeout_s: CfRequest::DEFAULT_TIME_BUDGET,
            abort_after: 10,
            workers: 1,
            global_seed: 0,
        }
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

fn attempt(ctx: &RunContext<'_>, gen: &dyn CfGenerator, index: usize) -> InstanceRecord {
    let inst = &ctx.test[index];
    let seed = instance_seed(ctx.global_seed, index);
    let mut rec = InstanceRecord {
        index,
        label: inst.label,
        predicted: 0,
        target: 0,
        seed,
        outcome: Outcome::Failed,
        error: None,
        metrics: None,
        perturbed: None,
        both_correct: None,
        valid_b: None,
        gen_time: 0.0,
    };
    let result = (|| -> Result<()> {
        let probs = ctx.model.predict_proba(&inst.series)?;
        rec.predicted = argmax(&probs);
        rec.target = select_target(&probs);
        if let Some(b) = ctx.second_model {
            rec.both_correct = Some(rec.predicted == inst.label && b.predict_label(&inst.series)? == inst.label);
        }
        let req = CfRequest::with_limits(inst.series.clone(), rec.predicted, rec.target, ctx.stop_prob, ctx.timeout_s)?;
        let cctx = CfContext {
            model: ctx.model,
            pool: ctx.pool,
            seed,
            budget: Budget::new(ctx.timeout_s),
        };
        let started = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(|| gen.generate(&req, &cctx)));
        rec.gen_time = started.elapsed().as_secs_f64();
        let cf: Counterfactual = match out {
            Ok(r) => r?,
            Err(p) => return Err(Error::Numeric(format!("generator panicked: {}", panic_message(p)))),
        };
        rec.outcome = if cf.status == CfStatus::TimedOut || rec.gen_time >= ctx.timeout_s {
            Outcome::TimedOut
        } else if cf.status == CfStatus::Ok {
            Outcome::Ok
        } else {
            Outcome::NoCfFound
        };
        let mut metrics = evaluate(&cf, ctx.model, &ctx.sparsity, ctx.plausibility)?;
        metrics.gen_time = rec.gen_time;
        if rec.outcome == Outcome::TimedOut {
            metrics.valid = false;
        }
        if let Some(b) = ctx.second_model {
            rec.valid_b = Some(b.predict_label(&cf.perturbed)? == cf.target);
        }
        rec.perturbed = Some(cf.perturbed.values().to_vec());
        rec.metrics = Some(metrics);
        Ok(())
    })();
    if let Err(e) = result {
        rec.outcome = Outcome::Failed;
        rec.error = Some(e.to_string());
        rec.metrics = None;
    }
    rec
}

/// Runs `gen` on the test instances at `indices`, in index order. After
/// `abort_after` consecutive timeouts the remaining instances are skipped and
/// the run is marked aborted.
pub fn run_method(ctx: &RunContext<'_>, gen: &dyn CfGenerator, indices: &[usize]) -> (Vec<InstanceRecord>, bool) {
    let mut records = Vec::with_capacity(indices.len());
    let mut streak = 0;
    for chunk in indices.chunks(ctx.workers.max(1)) {
        let batch: Vec<InstanceRecord> = if chunk.len() == 1 {
            vec![attempt(ctx, gen, chunk[0])]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|&i| s.spawn(move || attempt(ctx, gen, i))).collect();
                handles.into_iter().map(|h| h.join().expect("attempt catches panics")).collect()
            })
        };
        for rec in batch {
            streak = if rec.outcome == Outcome::TimedOut { streak + 1 } else { 0 };
            records.push(rec);
            if streak >= ctx.abort_after {
                return (records, true);
            }
        }
    }
    (records, false)
}

/// Results of one method on one (dataset, model) block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub invocation: InvocationRecord,
    pub records: Vec<InstanceRecord>,
    pub aborted: bool,
    /// Why the method did not run (not applicable or failed to prepare).
    pub skipped: Option<String>,
}

impl MethodRun {
    pub fn block(&self) -> String {
        format!("{}/{}", self.dataset, self.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub dataset: String,
    pub model: String,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub global_seed: u64,
    pub sampled: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub models: Vec<ModelInfo>,
    pub runs: Vec<MethodRun>,
}

/// Runs every (dataset, model, method) combination in the configuration.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let mut runs = Vec::new();
    let mut models = Vec::new();
    let mut sampled = BTreeMap::new();
    for reference in &cfg.datasets {
        let mut ds = load_dataset(reference)?;
        if cfg.z_normalize {
            ds = ds.z_normalized();
        }
        let labels: Vec<usize> = ds.test.iter().map(|i| i.label).collect();
        let capped = stratified_sample(&labels, cfg.sample_cap, cfg.global_seed).indices;
        let all: Vec<usize> = (0..ds.test.len()).collect();
        sampled.insert(ds.name.clone(), capped.clone());
        for spec in &cfg.models {
            let model = spec.build(&ds)?;
            models.push(ModelInfo {
                dataset: ds.name.clone(),
                model: spec.label(),
                train_accuracy: model.train_accuracy,
                test_accuracy: model.test_accuracy,
            });
            let second = match cfg.consistency_seed {
                Some(seed) => Some(train(
                    spec.arch,
                    &ds,
                    &TrainConfig {
                        seed,
                        ..spec.train_config()
                    },
                )?),
                None => None,
            };
            let pool = ReferencePool::new(&model, &ds.train)?;
            let plaus = PlausibilityIndex::build(&model, &ds.train, &cfg.plausibility).ok();
            let ctx = RunContext {
                model: &model,
                pool: &pool,
                plausibility: plaus.as_ref(),
                second_model: second.as_ref(),
                test: &ds.test,
                sparsity: cfg.sparsity,
                stop_prob: cfg.stop_prob,
                timeout_s: cfg.timeout_s,
                abort_after: cfg.consecutive_timeout_abort,
                workers: cfg.workers,
                global_seed: cfg.global_seed,
            };
            for mspec in &cfg.methods {
                let method = mspec.method();
                let mut run = MethodRun {
                    dataset: ds.name.clone(),
                    model: spec.label(),
                    method: method.tag().to_string(),
                    invocation: InvocationRecord {
                        method: method.tag().to_string(),
                        config: serde_json::to_value(mspec).expect("serializable"),
                        seed: cfg.global_seed,
                    },
                    records: Vec::new(),
                    aborted: false,
                    skipped: None,
                };
                match mspec.prepare(&model, &ds.train, cfg.global_seed) {
                    Err(e) => run.skipped = Some(e.to_string()),
                    Ok(gen) => {
                        run.invocation.config = gen.config();
                        let indices = if cfg.capped_methods.contains(&method) { &capped } else { &all };
                        let (records, aborted) = run_method(&ctx, gen.as_ref(), indices);
                        run.records = records;
                        run.aborted = aborted;
                    }
                }
                runs.push(run);
            }
        }
    }
    Ok(RunResult {
        config: cfg.clone(),
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").to_string(),
            global_seed: cfg.global_seed,
            sampled,
        },
        models,
        runs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, n })
    }
}

/// Metrics averaged over valid counterfactuals only.
pub const VALID_ONLY: [&str; 10] = [
    "l1",
    "l2",
    "linf",
    "l0",
    "thresh_l0",
    "thresh_l0_count",
    "sens",
    "num_seg",
    "dist_all",
    "dist_class",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub attempted: usize,
    pub valid: usize,
    pub timeouts: usize,
    pub failures: usize,
    pub aborted: bool,
    pub skipped: Option<String>,
    /// Fraction of attempted instances with a valid counterfactual.
    pub validity: Option<f64>,
    pub metrics: BTreeMap<String, Option<Stat>>,
    pub consist_bc: Option<f64>,
    pub consist_bv: Option<f64>,
}

/// Generation times, kept apart from the deterministic aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingAggregate {
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub all: Option<Stat>,
    pub valid_only: Option<Stat>,
}

impl MethodRun {
    pub fn aggregate(&self) -> Aggregate {
        let valid: Vec<&InstanceRecord> = self.records.iter().filter(|r| r.valid()).collect();
        let metrics = VALID_ONLY
            .iter()
            .map(|&name| {
                let vals: Vec<f64> = valid
                    .iter()
                    .filter_map(|r| r.metrics.as_ref()?.field(name))
                    .filter(|v| v.is_finite())
                    .collect();
                (name.to_string(), Stat::of(&vals))
            })
            .collect();
        let eligible: Vec<&InstanceRecord> = self.records.iter().filter(|r| r.both_correct == Some(true)).collect();
        let valid_eligible = eligible.iter().filter(|r| r.valid()).count();
        let consistent = eligible.iter().filter(|r| r.valid() && r.valid_b == Some(true)).count();
        let frac = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
        let attempted = self.records.len();
        Aggregate {
            dataset: self.dataset.clone(),
            model: self.model.clone(),
            method: self.method.clone(),
            attempted,
            valid: valid.len(),
            timeouts: self.records.iter().filter(|r| r.outcome == Outcome::TimedOut).count(),
            failures: self.records.iter().filter(|r| r.outcome == Outcome::Failed).count(),
            aborted: self.aborted,
            skipped: self.skipped.clone(),
            validity: frac(valid.len(), attempted),
            metrics,
            consist_bc: frac(consistent, eligible.len()),
            consist_bv: frac(consistent, valid_eligible),
        }
    }

    pub fn timing(&self) -> TimingAggregate {
        let all: Vec<f64> = self.records.iter().map(|r| r.gen_time).collect();
        let valid: Vec<f64> = self.records.iter().filter(|r| r.valid()).map(|r| r.gen_time).collect();
        TimingAggregate {
            dataset: self.dataset.clone(),
            model: self.model.clone(),
            method: self.method.clone(),
            all: Stat::of(&all),
            valid_only: Stat::of(&valid),
        }
    }
}
