//! Result trees on disk and the report formats derived from them.
//!
//! Everything except `timing/` is a pure function of the configuration and
//! seeds, so repeated runs produce byte-identical files there.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::stats::{aggregate_rankings, direction, friedman_nemenyi, CdResult, Direction, RankTable};
use super::{svg, Aggregate, ExperimentConfig, ModelInfo, RunResult, TimingAggregate, VALID_ONLY};
use crate::error::{Error, Result};

/// Metrics that get a ranking, in report order.
pub const RANKED: [&str; 13] = [
    "validity",
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
    "consist_bc",
    "consist_bv",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub direction: Direction,
    pub table: RankTable,
    /// Friedman/Nemenyi result; absent when fewer than two blocks or more
    /// than ten methods entered the ranking (see `note`).
    pub cd: Option<CdResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub alpha: f64,
    pub methods: Vec<String>,
    pub blocks: Vec<String>,
    pub aggregates: Vec<Aggregate>,
    pub timing: Vec<TimingAggregate>,
    pub models: Vec<ModelInfo>,
    pub rankings: Vec<Ranking>,
}

fn block_of(a: &Aggregate) -> String {
    format!("{}/{}", a.dataset, a.model)
}

fn metric_value(a: &Aggregate, metric: &str) -> Option<f64> {
    if a.aborted || a.skipped.is_some() {
        return None;
    }
    match metric {
        "validity" => a.validity,
        "consist_bc" => a.consist_bc,
        "consist_bv" => a.consist_bv,
        m => a.metrics.get(m).copied().flatten().map(|s| s.mean),
    }
}

impl Summary {
    /// Ranks methods within each (dataset, model) block. Methods that were
    /// skipped in every block are left out; aborted or inapplicable methods
    /// rank last in their block, or are dropped entirely with
    /// `exclude_aborted`.
    pub fn new(
        aggregates: Vec<Aggregate>,
        timing: Vec<TimingAggregate>,
        models: Vec<ModelInfo>,
        alpha: f64,
        exclude_aborted: bool,
    ) -> Result<Self> {
        let mut methods: Vec<String> = Vec::new();
        let mut blocks: Vec<String> = Vec::new();
        for a in &aggregates {
            if !methods.contains(&a.method) {
                methods.push(a.method.clone());
            }
            let b = block_of(a);
            if !blocks.contains(&b) {
                blocks.push(b);
            }
        }
        methods.retain(|m| {
            let runs: Vec<&Aggregate> = aggregates.iter().filter(|a| &a.method == m).collect();
            !runs.iter().all(|a| a.skipped.is_some()) && !(exclude_aborted && runs.iter().any(|a| a.aborted))
        });
        if methods.is_empty() {
            return Err(Error::Report("no method results to report".into()));
        }
        let index: BTreeMap<(String, String), &Aggregate> =
            aggregates.iter().map(|a| ((block_of(a), a.method.clone()), a)).collect();
        let mut rankings = Vec::new();
        if methods.len() >= 2 {
            for metric in RANKED {
                let values: Vec<Vec<Option<f64>>> = blocks
                    .iter()
                    .map(|b| {
                        methods
                            .iter()
                            .map(|m| index.get(&(b.clone(), m.clone())).and_then(|a| metric_value(a, metric)))
                            .collect()
                    })
                    .collect();
                let dir = direction(metric);
                let Ok(table) = aggregate_rankings(metric, &methods, &blocks, &values, dir) else {
                    continue;
                };
                let (cd, note) = match friedman_nemenyi(&table.ranks, alpha) {
                    Ok(cd) => (Some(cd), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                rankings.push(Ranking {
                    direction: dir,
                    table,
                    cd,
                    note,
                });
            }
        }
        Ok(Self {
            alpha,
            methods,
            blocks,
            aggregates,
            timing,
            models,
            rankings,
        })
    }

    pub fn from_result(result: &RunResult) -> Result<Self> {
        Self::new(
            result.runs.iter().map(|r| r.aggregate()).collect(),
            result.runs.iter().map(|r| r.timing()).collect(),
            result.models.clone(),
            result.config.alpha,
            result.config.exclude_aborted,
        )
    }

    /// Rebuilds the summary from a directory written by [`write_results`].
    pub fn load(dir: &Path) -> Result<Self> {
        let agg_path = dir.join("aggregates.json");
        if !agg_path.is_file() {
            return Err(Error::Report(format!("no results found in {}", dir.display())));
        }
        let aggregates: Vec<Aggregate> = read_json(&agg_path)?;
        let config: Option<ExperimentConfig> = read_optional(&dir.join("config.json"))?;
        let models = read_optional(&dir.join("models.json"))?.unwrap_or_default();
        let timing = read_optional(&dir.join("timing").join("aggregates.json"))?.unwrap_or_default();
        let (alpha, exclude) = config.map_or((0.05, false), |c| (c.alpha, c.exclude_aborted));
        Self::new(aggregates, timing, models, alpha, exclude)
    }

    pub fn ranking(&self, metric: &str) -> Option<&Ranking> {
        self.rankings.iter().find(|r| r.table.metric == metric)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))
}

fn read_optional<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if path.is_file() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Report(e.to_string()))?;
    text.push('\n');
    write_file(path, &text)
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    /// Plain-text tables (`summary.txt`).
    Table,
    /// Aggregates as comma-separated values (`aggregates.csv`).
    Csv,
    /// Aggregates and rankings as JSON.
    Json,
    /// One critical-difference diagram per ranked metric (`cd/*.svg`).
    SvgCd,
    /// Normalized average ranks per method for radar plots (`radar.json`).
    Radar,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 5] = [Self::Table, Self::Csv, Self::Json, Self::SvgCd, Self::Radar];
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" | "text" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "svg" | "svg-cd" | "cd" => Ok(Self::SvgCd),
            "radar" => Ok(Self::Radar),
            other => Err(Error::Config(format!("unknown report format {other:?} (table, csv, json, svg-cd, radar)"))),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

/// Human-readable tables: model accuracies, per-block aggregates and
/// average ranks with the Friedman/Nemenyi outcome.
pub fn render_table(s: &Summary) -> String {
    let mut out = String::new();
    if !s.models.is_empty() {
        let _ = writeln!(out, "models");
        for m in &s.models {
            let _ = writeln!(
                out,
                "  {:<24} {:<10} train_acc {}  test_acc {}",
                m.dataset,
                m.model,
                fmt_opt(m.train_accuracy),
                fmt_opt(m.test_accuracy)
            );
        }
        out.push('\n');
    }
    let cols = ["validity", "l1", "l0", "thresh_l0", "sens", "num_seg", "dist_all", "dist_class", "consist_bc"];
    for b in &s.blocks {
        let _ = writeln!(out, "{b}");
        let _ = write!(out, "  {:<10} {:>5}", "method", "n");
        for c in cols {
            let _ = write!(out, " {c:>10}");
        }
        out.push('\n');
        for a in s.aggregates.iter().filter(|a| &block_of(a) == b) {
            let _ = write!(out, "  {:<10} {:>5}", a.method, a.attempted);
            for c in cols {
                let v = match c {
                    "validity" => a.validity,
                    "consist_bc" => a.consist_bc,
                    m => a.metrics.get(m).copied().flatten().map(|st| st.mean),
                };
                let _ = write!(out, " {:>10}", fmt_opt(v));
            }
            if a.aborted {
                out.push_str("  [aborted]");
            }
            if let Some(why) = &a.skipped {
                let _ = write!(out, "  [skipped: {why}]");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    if !s.rankings.is_empty() {
        let _ = writeln!(out, "average ranks (1 = best)");
        let _ = write!(out, "  {:<16}", "metric");
        for m in &s.methods {
            let _ = write!(out, " {m:>9}");
        }
        let _ = writeln!(out, "  {:>8}  {:>6}", "p", "CD");
        for r in &s.rankings {
            let _ = write!(out, "  {:<16}", r.table.metric);
            for v in &r.table.average {
                let _ = write!(out, " {v:>9.3}");
            }
            match &r.cd {
                Some(cd) => {
                    let groups: Vec<String> = cd
                        .groups
                        .iter()
                        .map(|g| g.iter().map(|&j| s.methods[j].as_str()).collect::<Vec<_>>().join(","))
                        .collect();
                    let _ = writeln!(out, "  {:>8.4}  {:>6.3}  groups [{}]", cd.p_value, cd.cd, groups.join("] ["));
                }
                None => {
                    let _ = writeln!(out, "  {:>8}  {:>6}", "-", "-");
                }
            }
        }
    }
    out
}

fn render_csv(s: &Summary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["dataset", "model", "method", "attempted", "valid", "timeouts", "failures", "aborted", "skipped", "validity"]
        .iter()
        .map(|h| h.to_string())
        .collect();
    for m in VALID_ONLY {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    header.extend(["consist_bc".into(), "consist_bv".into()]);
    let err = |e: csv::Error| Error::Report(e.to_string());
    w.write_record(&header).map_err(err)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for a in &s.aggregates {
        let mut row = vec![
            a.dataset.clone(),
            a.model.clone(),
            a.method.clone(),
            a.attempted.to_string(),
            a.valid.to_string(),
            a.timeouts.to_string(),
            a.failures.to_string(),
            a.aborted.to_string(),
            a.skipped.clone().unwrap_or_default(),
            opt(a.validity),
        ];
        for m in VALID_ONLY {
            let st = a.metrics.get(m).copied().flatten();
            row.push(opt(st.map(|s| s.mean)));
            row.push(opt(st.map(|s| s.std)));
        }
        row.push(opt(a.consist_bc));
        row.push(opt(a.consist_bv));
        w.write_record(&row).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarData {
    pub axes: Vec<String>,
    /// Per method, `1 - (avg_rank - 1) / (M - 1)` on every axis, so 1 is
    /// best and 0 worst.
    pub methods: BTreeMap<String, Vec<f64>>,
}

pub fn radar_data(s: &Summary) -> RadarData {
    let m = s.methods.len();
    let mut data = RadarData {
        axes: s.rankings.iter().map(|r| r.table.metric.clone()).collect(),
        methods: s.methods.iter().map(|name| (name.clone(), Vec::new())).collect(),
    };
    for r in &s.rankings {
        for (j, name) in s.methods.iter().enumerate() {
            let score = if m > 1 { 1.0 - (r.table.average[j] - 1.0) / (m - 1) as f64 } else { 1.0 };
            data.methods.get_mut(name).expect("known method").push(score);
        }
    }
    data
}

/// Writes one report format into `out_dir` and returns the files written.
pub fn emit_report(summary: &Summary, format: ReportFormat, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if summary.methods.is_empty() {
        return Err(Error::Report("no method results to report".into()));
    }
    match format {
        ReportFormat::Table => Ok(vec![write_file(&out_dir.join("summary.txt"), &render_table(summary))?]),
        ReportFormat::Csv => Ok(vec![write_file(&out_dir.join("aggregates.csv"), &render_csv(summary)?)?]),
        ReportFormat::Json => Ok(vec![
            write_json(&out_dir.join("aggregates.json"), &summary.aggregates)?,
            write_json(&out_dir.join("ranks.json"), &summary.rankings)?,
        ]),
        ReportFormat::SvgCd => {
            let mut paths = Vec::new();
            for r in &summary.rankings {
                if let Some(cd) = &r.cd {
                    let title = format!("{} (alpha = {})", r.table.metric, cd.alpha);
                    let body = svg::cd_diagram(&title, &r.table.methods, cd);
                    paths.push(write_file(&out_dir.join("cd").join(format!("{}.svg", r.table.metric)), &body)?);
                }
            }
            Ok(paths)
        }
        ReportFormat::Radar => Ok(vec![write_json(&out_dir.join("radar.json"), &radar_data(summary))?]),
    }
}

#[derive(Serialize)]
struct TimingRecord<'a> {
    dataset: &'a str,
    model: &'a str,
    method: &'a str,
    index: usize,
    gen_time: f64,
}

/// Writes the full results tree for a benchmark run. Wall-clock times go
/// to `timing/` only; every other file depends on configuration and seeds
/// alone.
pub fn write_results(result: &RunResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = vec![
        write_json(&dir.join("config.json"), &result.config)?,
        write_json(&dir.join("provenance.json"), &result.provenance)?,
        write_json(&dir.join("models.json"), &result.models)?,
    ];
    let mut timing = Vec::new();
    for run in &result.runs {
        let mut run_clean = run.clone();
        for rec in &mut run_clean.records {
            timing.push(TimingRecord {
                dataset: &run.dataset,
                model: &run.model,
                method: &run.method,
                index: rec.index,
                gen_time: rec.gen_time,
            });
            rec.gen_time = 0.0;
            if let Some(m) = rec.metrics.as_mut() {
                m.gen_time = 0.0;
            }
        }
        let name = format!("{}__{}__{}.json", file_stem(&run.dataset), file_stem(&run.model), file_stem(&run.method));
        paths.push(write_json(&dir.join("records").join(name), &run_clean)?);
    }
    let summary = Summary::from_result(result)?;
    for format in ReportFormat::ALL {
        paths.extend(emit_report(&summary, format, dir)?);
    }
    paths.push(write_json(&dir.join("timing").join("records.json"), &timing)?);
    paths.push(write_json(&dir.join("timing").join("aggregates.json"), &summary.timing)?);
    Ok(paths)
}
