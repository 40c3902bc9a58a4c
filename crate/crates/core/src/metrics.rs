//! Evaluation metrics for counterfactuals: validity, proximity, sparsity
//! (plain and thresholded), sensitivity to imperceptible changes, segment
//! counts, latent-space plausibility and cross-model consistency.

use serde::{Deserialize, Serialize};

use crate::cf::Counterfactual;
use crate::classifier::{argmax, ClassifierModel};
use crate::dataset::LabeledInstance;
use crate::error::{Error, Result};
use crate::series::{instance_range, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparsityConfig {
    /// Perceptibility threshold as a fraction of the value range.
    pub tau: f64,
    /// Longest unmarked gap merged into a segment, as a fraction of `T`.
    pub tolerance_frac: f64,
    /// Use the range over all channels instead of per channel.
    #[serde(default)]
    pub global_range: bool,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        Self {
            tau: 0.0025,
            tolerance_frac: 0.01,
            global_range: false,
        }
    }
}

impl SparsityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1), got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.tolerance_frac) {
            return Err(Error::Config(format!(
                "tolerance must lie in [0, 1), got {}",
                self.tolerance_frac
            )));
        }
        Ok(())
    }

    /// Gap tolerance in steps: `ceil(frac * T)`, at least 1 unless the
    /// fraction is zero.
    pub fn tolerance_steps(&self, steps: usize) -> usize {
        if self.tolerance_frac == 0.0 {
            0
        } else {
            ((self.tolerance_frac * steps as f64).ceil() as usize).max(1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlausibilityConfig {
    pub k: usize,
}

impl Default for PlausibilityConfig {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proximity {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

pub fn proximity(x: &TimeSeries, xh: &TimeSeries) -> Result<Proximity> {
    x.check_same_shape(xh)?;
    let mut p = Proximity {
        l1: 0.0,
        l2: 0.0,
        linf: 0.0,
    };
    for (a, b) in x.values().iter().zip(xh.values()) {
        let d = (a - b).abs();
        p.l1 += d;
        p.l2 += d * d;
        p.linf = p.linf.max(d);
    }
    p.l2 = p.l2.sqrt();
    Ok(p)
}

/// Fraction of feature points that differ at all.
pub fn sparsity_l0(x: &TimeSeries, xh: &TimeSeries) -> Result<f64> {
    x.check_same_shape(xh)?;
    let changed = x.values().iter().zip(xh.values()).filter(|(a, b)| a != b).count();
    Ok(changed as f64 / x.len() as f64)
}

/// Per-channel perceptibility thresholds `tau * range(x)`.
pub fn thresholds(x: &TimeSeries, cfg: &SparsityConfig) -> Vec<f64> {
    let ranges = instance_range(x);
    if cfg.global_range {
        let (lo, hi) = x
            .values()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        vec![cfg.tau * (hi - lo); ranges.len()]
    } else {
        ranges.iter().map(|r| cfg.tau * r).collect()
    }
}

/// Marks of perceptible changes, row-major like the series values.
pub fn perceptible_mask(x: &TimeSeries, xh: &TimeSeries, cfg: &SparsityConfig) -> Result<Vec<bool>> {
    x.check_same_shape(xh)?;
    let theta = thresholds(x, cfg);
    let t = x.steps();
    Ok(x.values()
        .iter()
        .zip(xh.values())
        .enumerate()
        .map(|(i, (a, b))| {
            let d = (a - b).abs();
            d > 0.0 && d >= theta[i / t]
        })
        .collect())
}

/// Raw count of perceptible changes.
pub fn thresh_l0_count(x: &TimeSeries, xh: &TimeSeries, cfg: &SparsityConfig) -> Result<usize> {
    Ok(perceptible_mask(x, xh, cfg)?.into_iter().filter(|&m| m).count())
}

/// Fraction of feature points with a perceptible change.
pub fn thresh_l0(x: &TimeSeries, xh: &TimeSeries, cfg: &SparsityConfig) -> Result<f64> {
    Ok(thresh_l0_count(x, xh, cfg)? as f64 / x.len() as f64)
}

/// Number of perceptibly changed runs, merging gaps of at most the
/// tolerance, summed over channels.
pub fn num_segments(x: &TimeSeries, xh: &TimeSeries, cfg: &SparsityConfig) -> Result<usize> {
    let mask = perceptible_mask(x, xh, cfg)?;
    let t = x.steps();
    let tol = cfg.tolerance_steps(t);
    let mut total = 0;
    for row in mask.chunks(t) {
        let mut last: Option<usize> = None;
        for (s, _) in row.iter().enumerate().filter(|(_, &m)| m) {
            if last.is_none_or(|l| s - l - 1 > tol) {
                total += 1;
            }
            last = Some(s);
        }
    }
    Ok(total)
}

/// 1 when dropping the imperceptible changes changes the prediction, 0
/// otherwise; `None` when `xh` is not predicted as `target`.
pub fn sensitivity(
    x: &TimeSeries,
    xh: &TimeSeries,
    target: usize,
    model: &ClassifierModel,
    cfg: &SparsityConfig,
) -> Result<Option<u8>> {
    let pred = model.predict_label(xh)?;
    if pred != target {
        return Ok(None);
    }
    let mask = perceptible_mask(x, xh, cfg)?;
    let values = x
        .values()
        .iter()
        .zip(xh.values())
        .zip(&mask)
        .map(|((&a, &b), &m)| if m { b } else { a })
        .collect();
    let masked = TimeSeries::new(x.channels(), x.steps(), values)?;
    Ok(Some(u8::from(model.predict_label(&masked)? != pred)))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Mean squared Euclidean distance from `query` to its `k` nearest members
/// of `reps` whose label passes `class` (all when `None`); `exclude` drops
/// one member, used when the query is itself in `reps`.
pub fn dist_nbr(
    reps: &[Vec<f64>],
    labels: &[usize],
    query: &[f64],
    class: Option<usize>,
    k: usize,
    exclude: Option<usize>,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut d: Vec<f64> = reps
        .iter()
        .zip(labels)
        .enumerate()
        .filter(|&(i, (_, &l))| Some(i) != exclude && class.is_none_or(|c| c == l))
        .map(|(_, (r, _))| sq_dist(r, query))
        .collect();
    if d.is_empty() {
        return Err(Error::Metric(match class {
            Some(c) => format!("no training representation predicted as class {c}"),
            None => "no training representations".into(),
        }));
    }
    d.sort_by(f64::total_cmp);
    let k = k.min(d.len());
    Ok(d[..k].iter().sum::<f64>() / k as f64)
}

/// A plausibility ratio; a zero denominator yields `+inf` with `degenerate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub degenerate: bool,
}

fn ratio(num: f64, den: f64) -> Ratio {
    if den > 0.0 {
        Ratio {
            value: num / den,
            degenerate: false,
        }
    } else {
        Ratio {
            value: f64::INFINITY,
            degenerate: true,
        }
    }
}

/// Latent training representations with precomputed plausibility
/// denominators.
#[derive(Debug, Clone)]
pub struct PlausibilityIndex {
    pub reps: Vec<Vec<f64>>,
    /// Model predictions on the training instances.
    pub labels: Vec<usize>,
    pub k: usize,
    all_den: f64,
    class_den: Vec<Option<f64>>,
}

impl PlausibilityIndex {
    pub fn build(model: &ClassifierModel, train: &[LabeledInstance], cfg: &PlausibilityConfig) -> Result<Self> {
        let reps = train
            .iter()
            .map(|i| model.latent(&i.series).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        let labels = train
            .iter()
            .map(|i| model.predict_label(&i.series))
            .collect::<Result<Vec<_>>>()?;
        Self::from_reps(reps, labels, model.num_classes, cfg.k)
    }

    pub fn from_reps(reps: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize, k: usize) -> Result<Self> {
        if reps.len() < 2 {
            return Err(Error::Metric("plausibility needs at least two training representations".into()));
        }
        let mean_over = |class: Option<usize>| -> Option<f64> {
            let members: Vec<usize> = (0..reps.len())
                .filter(|&i| class.is_none_or(|c| labels[i] == c))
                .collect();
            let vals: Vec<f64> = members
                .iter()
                .filter_map(|&i| dist_nbr(&reps, &labels, &reps[i], class, k, Some(i)).ok())
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let all_den = mean_over(None).expect("at least two representations");
        let class_den = (0..classes).map(|c| mean_over(Some(c))).collect();
        Ok(Self {
            reps,
            labels,
            k,
            all_den,
            class_den,
        })
    }

    pub fn dist_all(&self, query: &[f64]) -> Result<Ratio> {
        let num = dist_nbr(&self.reps, &self.labels, query, None, self.k, None)?;
        Ok(ratio(num, self.all_den))
    }

    pub fn dist_class(&self, query: &[f64], class: usize) -> Result<Ratio> {
        let num = dist_nbr(&self.reps, &self.labels, query, Some(class), self.k, None)?;
        let den = self
            .class_den
            .get(class)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Metric(format!("class {class} has fewer than two training representations")))?;
        Ok(ratio(num, den))
    }
}

/// One record per counterfactual; absent metrics are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub valid: bool,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub l0: f64,
    pub thresh_l0: f64,
    pub thresh_l0_count: usize,
    pub sens: Option<u8>,
    pub num_seg: usize,
    pub dist_all: Option<f64>,
    pub dist_class: Option<f64>,
    /// A plausibility denominator was zero.
    pub dist_degenerate: bool,
    pub gen_time: f64,
}

impl MetricReport {
    pub const FIELDS: [&'static str; 13] = [
        "valid",
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
        "dist_degenerate",
        "gen_time",
    ];

    /// Numeric value of a field for averaging; `None` when absent.
    pub fn field(&self, name: &str) -> Option<f64> {
        Some(match name {
            "valid" => f64::from(u8::from(self.valid)),
            "l1" => self.l1,
            "l2" => self.l2,
            "linf" => self.linf,
            "l0" => self.l0,
            "thresh_l0" => self.thresh_l0,
            "thresh_l0_count" => self.thresh_l0_count as f64,
            "sens" => f64::from(self.sens?),
            "num_seg" => self.num_seg as f64,
            "dist_all" => self.dist_all?,
            "dist_class" => self.dist_class?,
            "dist_degenerate" => f64::from(u8::from(self.dist_degenerate)),
            "gen_time" => self.gen_time,
            _ => return None,
        })
    }
}

/// Scores one counterfactual. Validity is recomputed from the model.
pub fn evaluate(
    cf: &Counterfactual,
    model: &ClassifierModel,
    sparsity: &SparsityConfig,
    plausibility: Option<&PlausibilityIndex>,
) -> Result<MetricReport> {
    let (x, xh) = (&cf.original, &cf.perturbed);
    let prox = proximity(x, xh)?;
    let valid = model.predict_label(xh)? == cf.target;
    let (mut dist_all, mut dist_class, mut degenerate) = (None, None, false);
    if let Some(index) = plausibility {
        let rep = model.latent(xh)?.0;
        if let Ok(r) = index.dist_all(&rep) {
            degenerate |= r.degenerate;
            dist_all = Some(r.value);
        }
        if let Ok(r) = index.dist_class(&rep, cf.target) {
            degenerate |= r.degenerate;
            dist_class = Some(r.value);
        }
    }
    Ok(MetricReport {
        valid,
        l1: prox.l1,
        l2: prox.l2,
        linf: prox.linf,
        l0: sparsity_l0(x, xh)?,
        thresh_l0: thresh_l0(x, xh, sparsity)?,
        thresh_l0_count: thresh_l0_count(x, xh, sparsity)?,
        sens: sensitivity(x, xh, cf.target, model, sparsity)?,
        num_seg: num_segments(x, xh, sparsity)?,
        dist_all,
        dist_class,
        dist_degenerate: degenerate,
        gen_time: cf.gen_time,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    /// Consistent CFs over instances both models classify correctly.
    pub consist_bc: Option<f64>,
    /// Consistent CFs over valid CFs among those instances.
    pub consist_bv: Option<f64>,
    pub eligible: usize,
    pub valid: usize,
    pub consistent: usize,
}

/// Consistency of counterfactuals generated against `model_a` under an
/// independently trained `model_b`. `pairs` couples each test instance with
/// its counterfactual.
pub fn consistency(
    pairs: &[(&LabeledInstance, &Counterfactual)],
    model_a: &ClassifierModel,
    model_b: &ClassifierModel,
) -> Result<Consistency> {
    if model_a.input_shape != model_b.input_shape || model_a.num_classes != model_b.num_classes {
        return Err(Error::Contract("models disagree on input shape or class count".into()));
    }
    let (mut eligible, mut valid, mut consistent) = (0, 0, 0);
    for (inst, cf) in pairs {
        if model_a.predict_label(&inst.series)? != inst.label || model_b.predict_label(&inst.series)? != inst.label {
            continue;
        }
        eligible += 1;
        let pa = argmax(&model_a.predict_proba(&cf.perturbed)?);
        if pa != cf.target {
            continue;
        }
        valid += 1;
        if model_b.predict_label(&cf.perturbed)? == cf.target {
            consistent += 1;
        }
    }
    let frac = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
    Ok(Consistency {
        consist_bc: frac(consistent, eligible),
        consist_bv: frac(consistent, valid),
        eligible,
        valid,
        consistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uni(v: &[f64]) -> TimeSeries {
        TimeSeries::univariate(v.to_vec()).unwrap()
    }

    #[test]
    fn proximity_345() {
        let p = proximity(&uni(&[0.0, 0.0]), &uni(&[3.0, -4.0])).unwrap();
        assert_eq!((p.l1, p.l2, p.linf), (7.0, 5.0, 4.0));
    }

    #[test]
    fn thresh_l0_single_point() {
        let x = uni(&[0.0, 1.0, 2.0, 3.0]);
        let xh = uni(&[0.0, 1.5, 2.0, 3.0]);
        assert_eq!(thresh_l0(&x, &xh, &SparsityConfig::default()).unwrap(), 0.25);
        assert_eq!(sparsity_l0(&x, &xh).unwrap(), 0.25);
    }

    #[test]
    fn constant_channel_counts_any_change() {
        let x = uni(&[1.0, 1.0, 1.0]);
        let xh = uni(&[1.0, 1.0 + 1e-12, 1.0]);
        assert_eq!(thresh_l0_count(&x, &xh, &SparsityConfig::default()).unwrap(), 1);
    }

    #[test]
    fn segments_by_hand() {
        let x = TimeSeries::univariate((0..100).map(f64::from).collect()).unwrap();
        let mut v = x.values().to_vec();
        for t in [0, 1, 9, 10] {
            v[t] += 50.0;
        }
        let xh = uni(&v);
        assert_eq!(num_segments(&x, &xh, &SparsityConfig::default()).unwrap(), 2);
        assert_eq!(num_segments(&x, &x, &SparsityConfig::default()).unwrap(), 0);
    }

    #[test]
    fn tolerance_steps_rule() {
        let c = SparsityConfig::default();
        assert_eq!(c.tolerance_steps(50), 1);
        assert_eq!(c.tolerance_steps(150), 2);
        let none = SparsityConfig {
            tolerance_frac: 0.0,
            ..c
        };
        assert_eq!(none.tolerance_steps(150), 0);
    }

    #[test]
    fn dist_nbr_hand_cases() {
        let reps = vec![vec![0.0], vec![2.0], vec![10.0]];
        let labels = vec![0, 0, 0];
        assert_eq!(dist_nbr(&reps, &labels, &[0.0], None, 2, None).unwrap(), 2.0);
        // self excluded, k = 1 -> second nearest
        assert_eq!(dist_nbr(&reps, &labels, &[0.0], None, 1, Some(0)).unwrap(), 4.0);
        assert!(dist_nbr(&reps, &labels, &[0.0], Some(1), 1, None).is_err());
    }

    #[test]
    fn line_of_reps_ratio() {
        // reps at 0..10, k = 2
        let reps: Vec<Vec<f64>> = (0..10).map(|i| vec![f64::from(i)]).collect();
        let idx = PlausibilityIndex::from_reps(reps, vec![0; 10], 1, 2).unwrap();
        // ends: (1 + 4) / 2 = 2.5; interior: (1 + 1) / 2 = 1
        let den = (2.0 * 2.5 + 8.0 * 1.0) / 10.0;
        let num = (0.25 + 0.25) / 2.0; // query 4.5 -> neighbours 4 and 5
        let r = idx.dist_all(&[4.5]).unwrap();
        assert!((r.value - num / den).abs() < 1e-12);
        assert!(!r.degenerate);
        assert_eq!(idx.dist_class(&[4.5], 0).unwrap(), r);
    }

    #[test]
    fn identical_reps_are_degenerate() {
        let idx = PlausibilityIndex::from_reps(vec![vec![1.0]; 4], vec![0; 4], 1, 2).unwrap();
        let r = idx.dist_all(&[3.0]).unwrap();
        assert!(r.degenerate && r.value.is_infinite());
    }
}
