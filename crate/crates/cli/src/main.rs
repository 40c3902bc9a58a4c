use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tscf_core::cf::{instance_seed, Budget, CfContext, CfRequest, Counterfactual, InvocationRecord, Method, MethodSpec, ReferencePool};
use tscf_core::classifier::{argmax, train, Architecture, ClassifierModel};
use tscf_core::harness::{
    emit_report, load_dataset, run_benchmark, select_target, svg, write_results, ExperimentConfig, ModelSpec,
    ReportFormat, Summary,
};
use tscf_core::metrics::{evaluate, perceptible_mask, MetricReport, PlausibilityConfig, PlausibilityIndex, SparsityConfig};
use tscf_core::{Dataset, Error, Result};

/// Counterfactual explanations for time-series classifiers.
#[derive(Parser, Debug)]
#[command(name = "tscf", version)]
struct Cli {
    /// Base directory for relative output paths.
    #[arg(long, global = true, env = "TSCF_WORKSPACE", default_value = ".")]
    workspace: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a classifier and save it to a model file.
    Train(TrainArgs),
    /// Generate one counterfactual for a test instance.
    Explain(ExplainArgs),
    /// Run one method with a saved model over a dataset's test split.
    Evaluate(EvaluateArgs),
    /// Run a benchmark described by a TOML config or by flags.
    Bench(BenchArgs),
    /// Render reports from a results directory.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArchArg {
    Mlp,
    Fcn,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Mlp => Architecture::Mlp,
            ArchArg::Fcn => Architecture::Fcn,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    #[value(name = "nun_cf")]
    NunCf,
    Ng,
    Comte,
    Sets,
    Wcf,
    Tsevo,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::NunCf => Method::NunCf,
            MethodArg::Ng => Method::NativeGuide,
            MethodArg::Comte => Method::Comte,
            MethodArg::Sets => Method::Sets,
            MethodArg::Wcf => Method::Wachter,
            MethodArg::Tsevo => Method::Tsevo,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
    Json,
    SvgCd,
    Radar,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Table => ReportFormat::Table,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
            FormatArg::SvgCd => ReportFormat::SvgCd,
            FormatArg::Radar => ReportFormat::Radar,
        }
    }
}

/// Architecture and training knobs shared by `train` and `bench`.
#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "fcn")]
    arch: ArchArg,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// FCN filters per block, e.g. 16,32,16.
    #[arg(long, value_delimiter = ',')]
    filters: Option<Vec<usize>>,
    /// MLP hidden width.
    #[arg(long)]
    hidden: Option<usize>,
}

impl ModelArgs {
    fn spec(&self, seed: u64) -> Result<ModelSpec> {
        let filters = match self.filters.as_deref() {
            None => None,
            Some(&[a, b, c]) => Some([a, b, c]),
            Some(f) => return Err(Error::Config(format!("--filters needs three widths, got {}", f.len()))),
        };
        Ok(ModelSpec {
            epochs: Some(self.epochs),
            filters,
            hidden: self.hidden,
            ..ModelSpec::new(self.arch.into(), seed)
        })
    }
}

/// Metric settings.
#[derive(Args, Debug, Clone)]
struct MetricArgs {
    /// Perceptibility threshold as a fraction of the instance range.
    #[arg(long, default_value_t = 0.0025)]
    tau: f64,
    /// Segment gap tolerance as a fraction of the series length.
    #[arg(long, default_value_t = 0.01)]
    tolerance: f64,
    /// Neighbours for the latent plausibility distances.
    #[arg(long, default_value_t = 5)]
    k: usize,
}

impl MetricArgs {
    fn sparsity(&self) -> SparsityConfig {
        SparsityConfig {
            tau: self.tau,
            tolerance_frac: self.tolerance,
            global_range: false,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset: a *_TRAIN file, a multivariate manifest, or synth:<name>[:seed].
    #[arg(long)]
    dataset: String,
    #[command(flatten)]
    model: ModelArgs,
    /// Z-normalize every series after loading (use the same setting for train and explain).
    #[arg(long)]
    z_normalize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "model.tscf")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    /// Saved model file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: String,
    /// Test instance index.
    #[arg(long)]
    index: usize,
    /// Z-normalize every series after loading (use the same setting for train and explain).
    #[arg(long)]
    z_normalize: bool,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// TOML file with method parameters.
    #[arg(long)]
    method_config: Option<PathBuf>,
    #[command(flatten)]
    metrics: MetricArgs,
    /// Per-instance time limit in seconds.
    #[arg(long, default_value_t = 3600.0)]
    timeout: f64,
    /// Target probability at which the search stops.
    #[arg(long, default_value_t = 0.5)]
    stop_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record the per-iteration loss (wcf).
    #[arg(long)]
    trace: bool,
    /// Skip the SVG overlay plot.
    #[arg(long)]
    no_plot: bool,
    /// Output directory.
    #[arg(long, default_value = "explain")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: String,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    method_config: Option<PathBuf>,
    #[command(flatten)]
    metrics: MetricArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

/// Harness settings shared by `evaluate` and `bench`.
#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Instances sampled for wcf and tsevo.
    #[arg(long, default_value_t = 160)]
    sample_cap: usize,
    /// Per-instance time limit in seconds.
    #[arg(long, default_value_t = 3600.0)]
    timeout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parallel instances per method.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Z-normalize every series after loading (use the same setting for train and explain).
    #[arg(long)]
    z_normalize: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Experiment config (TOML). Flags below override its harness settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Datasets, when no config is given.
    #[arg(long)]
    dataset: Vec<String>,
    /// Saved model files; without any, one model per dataset is trained.
    #[arg(long)]
    model: Vec<PathBuf>,
    #[arg(long, value_enum)]
    method: Vec<MethodArg>,
    #[command(flatten)]
    model_args: ModelArgs,
    /// Instances sampled for wcf and tsevo [default: 160].
    #[arg(long)]
    sample_cap: Option<usize>,
    /// Per-instance time limit in seconds [default: 3600].
    #[arg(long)]
    timeout: Option<f64>,
    /// Global seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel instances per method [default: 1].
    #[arg(long)]
    workers: Option<usize>,
    /// Z-normalize every series after loading (use the same setting for train and explain).
    #[arg(long)]
    z_normalize: bool,
    /// Perceptibility threshold as a fraction of the instance range [default: 0.0025].
    #[arg(long)]
    tau: Option<f64>,
    /// Segment gap tolerance as a fraction of the series length [default: 0.01].
    #[arg(long)]
    tolerance: Option<f64>,
    /// Neighbours for the latent plausibility distances [default: 5].
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Results directory written by bench or evaluate.
    #[arg(long, default_value = "results")]
    results: PathBuf,
    /// Formats to emit (repeatable); all when omitted.
    #[arg(long, value_enum)]
    format: Vec<FormatArg>,
    /// Output directory; defaults to the results directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(ws: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        ws.join(p)
    }
}

fn resolve_dataset(ws: &Path, reference: &str) -> String {
    if reference.starts_with("synth:") || Path::new(reference).is_absolute() || Path::new(reference).exists() {
        reference.to_string()
    } else {
        ws.join(reference).to_string_lossy().into_owned()
    }
}

fn method_spec(method: Method, config: Option<&Path>) -> Result<MethodSpec> {
    let Some(path) = config else {
        return Ok(MethodSpec::default_for(method));
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    table.insert("method".into(), toml::Value::String(method.tag().into()));
    table
        .try_into()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dataset(ws: &Path, reference: &str, z_normalize: bool) -> Result<Dataset> {
    let ds = load_dataset(&resolve_dataset(ws, reference))?;
    Ok(if z_normalize { ds.z_normalized() } else { ds })
}

fn cmd_train(ws: &Path, a: TrainArgs) -> Result<()> {
    let ds = dataset(ws, &a.dataset, a.z_normalize)?;
    let spec = a.model.spec(a.seed)?;
    let model = train(spec.arch, &ds, &spec.train_config())?;
    let out = resolve(ws, &a.out);
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    model.save(&out)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".into(), |v| format!("{v:.4}"));
    println!(
        "{} {} seed {}: train accuracy {}, test accuracy {} -> {}",
        ds.name,
        spec.arch,
        a.seed,
        fmt(model.train_accuracy),
        fmt(model.test_accuracy),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ExplainRecord<'a> {
    dataset: &'a str,
    index: usize,
    label: usize,
    predicted: usize,
    target: usize,
    invocation: InvocationRecord,
    counterfactual: &'a Counterfactual,
    metrics: &'a MetricReport,
}

fn cmd_explain(ws: &Path, a: ExplainArgs) -> Result<()> {
    let model = ClassifierModel::load(&resolve(ws, &a.model))?;
    let ds = dataset(ws, &a.dataset, a.z_normalize)?;
    let mut spec = method_spec(a.method.into(), a.method_config.as_deref())?;
    spec.check_applicable(&model)?;
    if let MethodSpec::Wachter(w) = &mut spec {
        w.trace |= a.trace;
    }
    let sparsity = a.metrics.sparsity();
    sparsity.validate()?;
    let inst = ds.test.get(a.index).ok_or_else(|| {
        Error::Config(format!("instance index {} out of range (test split has {})", a.index, ds.test.len()))
    })?;
    model.check_input(&inst.series)?;
    let gen = spec.prepare(&model, &ds.train, a.seed)?;
    let pool = ReferencePool::new(&model, &ds.train)?;
    let probs = model.predict_proba(&inst.series)?;
    let (predicted, target) = (argmax(&probs), select_target(&probs));
    let req = CfRequest::with_limits(inst.series.clone(), predicted, target, a.stop_prob, a.timeout)?;
    let seed = instance_seed(a.seed, a.index);
    let ctx = CfContext {
        model: &model,
        pool: &pool,
        seed,
        budget: Budget::new(a.timeout),
    };
    let cf = gen.generate(&req, &ctx)?;
    let plaus = PlausibilityIndex::build(&model, &ds.train, &PlausibilityConfig { k: a.metrics.k }).ok();
    let metrics = evaluate(&cf, &model, &sparsity, plaus.as_ref())?;

    let out = resolve(ws, &a.out);
    let record = ExplainRecord {
        dataset: &ds.name,
        index: a.index,
        label: inst.label,
        predicted,
        target,
        invocation: InvocationRecord {
            method: gen.name().to_string(),
            config: gen.config(),
            seed,
        },
        counterfactual: &cf,
        metrics: &metrics,
    };
    let json = serde_json::to_string_pretty(&record).map_err(|e| Error::Report(e.to_string()))?;
    write_text(&out.join("cf.json"), &(json + "\n"))?;
    if !a.no_plot {
        let mask = perceptible_mask(&cf.original, &cf.perturbed, &sparsity)?;
        let title = format!("{} #{}: {} (class {} -> {})", ds.name, a.index, gen.name(), predicted, target);
        write_text(&out.join("overlay.svg"), &svg::overlay_plot(&title, &cf.original, &cf.perturbed, &mask))?;
    }
    println!(
        "{} #{} {}: status {:?}, valid {}, L0 {:.4}, ThreshL0 {:.4}, NumSeg {} -> {}",
        ds.name,
        a.index,
        gen.name(),
        cf.status,
        metrics.valid,
        metrics.l0,
        metrics.thresh_l0,
        metrics.num_seg,
        out.display()
    );
    Ok(())
}

fn finish_run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let result = run_benchmark(cfg)?;
    write_results(&result, out)?;
    let summary = Summary::from_result(&result)?;
    print!("{}", tscf_core::harness::report::render_table(&summary));
    println!("results -> {}", out.display());
    Ok(())
}

fn cmd_evaluate(ws: &Path, a: EvaluateArgs) -> Result<()> {
    let path = resolve(ws, &a.model);
    let model = ClassifierModel::load(&path)?;
    let spec = method_spec(a.method.into(), a.method_config.as_deref())?;
    let mut cfg = ExperimentConfig::new(
        vec![resolve_dataset(ws, &a.dataset)],
        vec![ModelSpec {
            path: Some(path),
            ..ModelSpec::new(model.architecture, 0)
        }],
        vec![spec],
    );
    cfg.name = "evaluate".into();
    cfg.sample_cap = a.run.sample_cap;
    cfg.timeout_s = a.run.timeout;
    cfg.global_seed = a.run.seed;
    cfg.workers = a.run.workers;
    cfg.z_normalize = a.run.z_normalize;
    cfg.sparsity = a.metrics.sparsity();
    cfg.plausibility.k = a.metrics.k;
    finish_run(&cfg, &resolve(ws, &a.out))
}

fn cmd_bench(ws: &Path, a: BenchArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(&resolve(ws, p))?,
        None => {
            if a.dataset.is_empty() || a.method.is_empty() {
                return Err(Error::Config("bench needs --config, or --dataset and --method".into()));
            }
            let models = if a.model.is_empty() {
                vec![a.model_args.spec(a.seed.unwrap_or(0))?]
            } else {
                a.model
                    .iter()
                    .map(|p| {
                        let path = resolve(ws, p);
                        let m = ClassifierModel::load(&path)?;
                        Ok(ModelSpec {
                            path: Some(path),
                            ..ModelSpec::new(m.architecture, 0)
                        })
                    })
                    .collect::<Result<_>>()?
            };
            ExperimentConfig::new(
                a.dataset.iter().map(|d| resolve_dataset(ws, d)).collect(),
                models,
                a.method.iter().map(|&m| MethodSpec::default_for(m.into())).collect(),
            )
        }
    };
    if let Some(v) = a.sample_cap {
        cfg.sample_cap = v;
    }
    if let Some(v) = a.timeout {
        cfg.timeout_s = v;
    }
    if let Some(v) = a.seed {
        cfg.global_seed = v;
    }
    if let Some(v) = a.workers {
        cfg.workers = v;
    }
    cfg.z_normalize |= a.z_normalize;
    if let Some(v) = a.tau {
        cfg.sparsity.tau = v;
    }
    if let Some(v) = a.tolerance {
        cfg.sparsity.tolerance_frac = v;
    }
    if let Some(v) = a.k {
        cfg.plausibility.k = v;
    }
    cfg.validate()?;
    finish_run(&cfg, &resolve(ws, &a.out))
}

fn cmd_report(ws: &Path, a: ReportArgs) -> Result<()> {
    let dir = resolve(ws, &a.results);
    let summary = Summary::load(&dir)?;
    let out = a.out.map_or_else(|| dir.clone(), |o| resolve(ws, &o));
    let formats: Vec<ReportFormat> = if a.format.is_empty() {
        ReportFormat::ALL.to_vec()
    } else {
        a.format.into_iter().map(Into::into).collect()
    };
    for f in formats {
        for p in emit_report(&summary, f, &out)? {
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ws = cli.workspace;
    let result = match cli.command {
        Command::Train(a) => cmd_train(&ws, a),
        Command::Explain(a) => cmd_explain(&ws, a),
        Command::Evaluate(a) => cmd_evaluate(&ws, a),
        Command::Bench(a) => cmd_bench(&ws, a),
        Command::Report(a) => cmd_report(&ws, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
