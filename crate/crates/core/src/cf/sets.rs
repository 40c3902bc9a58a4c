//! Shapelet-based counterfactuals.
//!
//! Mining samples candidate subsequences per channel, scores each by the
//! information gain of its best distance split (source class against the
//! rest), sets a detection threshold at a low quantile of its distance
//! distribution, drops shapelets detected in more than one class and keeps
//! the best `per_class` per class.
//!
//! Generation walks the shapelets by decreasing quality: detected shapelets
//! of the original class are overwritten with the NUN's values, shapelets of
//! the target class are implanted at their best-match position after an
//! affine rescale onto the replaced window's range.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use web_time::Instant;

use super::{nun, CfContext, CfGenerator, CfRequest, CfStatus, Counterfactual, Method, Timer};
use crate::dataset::LabeledInstance;
use crate::error::{Error, Result};
use crate::series::TimeSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SetsConfig {
    /// Quantile of a shapelet's train distance distribution used as its
    /// detection threshold.
    pub tau_quantile: f64,
    pub per_class: usize,
    /// Candidate lengths as fractions of the series length.
    pub length_fracs: Vec<f64>,
    /// Random candidates drawn per channel and length.
    pub candidates_per_length: usize,
    /// Total mining time in seconds, split evenly across channels.
    pub mining_budget: f64,
}

impl Default for SetsConfig {
    fn default() -> Self {
        Self {
            tau_quantile: 0.05,
            per_class: 5,
            length_fracs: vec![0.1, 0.2, 0.3],
            candidates_per_length: 100,
            mining_budget: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shapelet {
    pub values: Vec<f64>,
    pub channel: usize,
    pub source_class: usize,
    /// Information gain of the best distance split.
    pub quality: f64,
    pub detect_threshold: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShapeletSet {
    /// Sorted by decreasing quality.
    pub shapelets: Vec<Shapelet>,
}

fn znorm(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd < 1e-8 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| (x - mean) / sd).collect()
    }
}

/// Length-normalized Euclidean distance between z-normalized sequences.
pub fn znorm_distance(a: &[f64], b: &[f64]) -> f64 {
    let (za, zb) = (znorm(a), znorm(b));
    (za.iter().zip(&zb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Minimum sliding z-normalized distance of `shape` over `series` and the
/// start of the best match (earliest on ties).
pub fn best_match(shape: &[f64], series: &[f64]) -> (f64, usize) {
    let len = shape.len();
    let zs = znorm(shape);
    let zs_flat = zs.iter().all(|&v| v == 0.0);
    let mut best = (f64::INFINITY, 0);
    for start in 0..=series.len() - len {
        let w = &series[start..start + len];
        let mean = w.iter().sum::<f64>() / len as f64;
        let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / len as f64).sqrt();
        // with zs centred and unit-variance: |zs - zw|^2 / L = 2 - 2 <zs, w> / (L sd)
        let d2 = if sd < 1e-8 {
            if zs_flat { 0.0 } else { 1.0 }
        } else if zs_flat {
            1.0
        } else {
            let dot: f64 = zs.iter().zip(w).map(|(a, b)| a * b).sum();
            (2.0 - 2.0 * dot / (len as f64 * sd)).max(0.0)
        };
        if d2 < best.0 {
            best = (d2, start);
        }
    }
    (best.0.sqrt(), best.1)
}

fn entropy(pos: usize, total: usize) -> f64 {
    if total == 0 || pos == 0 || pos == total {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

/// Best information gain over threshold splits of `dists` for the binary
/// labelling `is_source`.
pub fn information_gain(dists: &[f64], is_source: &[bool]) -> f64 {
    let n = dists.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]));
    let total_pos = is_source.iter().filter(|&&s| s).count();
    let parent = entropy(total_pos, n);
    let mut best = 0.0f64;
    let mut left_pos = 0;
    for k in 0..n.saturating_sub(1) {
        left_pos += usize::from(is_source[order[k]]);
        if dists[order[k]] == dists[order[k + 1]] {
            continue;
        }
        let nl = k + 1;
        let nr = n - nl;
        let h = (nl as f64 * entropy(left_pos, nl) + nr as f64 * entropy(total_pos - left_pos, nr)) / n as f64;
        best = best.max(parent - h);
    }
    best
}

/// Nearest-rank quantile of unsorted values.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((q * (v.len() - 1) as f64).floor() as usize).min(v.len() - 1);
    v[idx]
}

/// Mines class-specific shapelets from `train`. Stops early, possibly with
/// an empty set, when the per-channel time share runs out.
pub fn sets_mine(train: &[LabeledInstance], cfg: &SetsConfig, seed: u64) -> Result<ShapeletSet> {
    if train.is_empty() {
        return Err(Error::Data("sets: empty training split".into()));
    }
    if !(cfg.mining_budget > 0.0) {
        return Err(Error::Config("sets: mining budget must be positive".into()));
    }
    let (n, t) = train[0].series.shape();
    let labels: Vec<usize> = train.iter().map(|i| i.label).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_channel = Duration::from_secs_f64(cfg.mining_budget / n as f64);
    let mut lengths: Vec<usize> = cfg
        .length_fracs
        .iter()
        .map(|f| ((f * t as f64).round() as usize).clamp(3.min(t - 1), t - 1))
        .collect();
    lengths.dedup();

    let mut candidates: Vec<Shapelet> = Vec::new();
    for channel in 0..n {
        let started = Instant::now();
        'lengths: for &len in &lengths {
            for _ in 0..cfg.candidates_per_length {
                if started.elapsed() >= per_channel {
                    break 'lengths;
                }
                let src = rng.random_range(0..train.len());
                let start = rng.random_range(0..=t - len);
                let values = train[src].series.channel(channel)[start..start + len].to_vec();
                let dists: Vec<f64> = train
                    .iter()
                    .map(|i| best_match(&values, i.series.channel(channel)).0)
                    .collect();
                let source_class = labels[src];
                let is_source: Vec<bool> = labels.iter().map(|&l| l == source_class).collect();
                let detect_threshold = quantile(&dists, cfg.tau_quantile);
                let detected_classes = {
                    let mut seen = vec![false; classes];
                    for (d, &l) in dists.iter().zip(&labels) {
                        if *d <= detect_threshold {
                            seen[l] = true;
                        }
                    }
                    seen.iter().filter(|&&s| s).count()
                };
                if detected_classes > 1 {
                    continue;
                }
                candidates.push(Shapelet {
                    quality: information_gain(&dists, &is_source),
                    values,
                    channel,
                    source_class,
                    detect_threshold,
                });
            }
        }
    }
    // stable sort keeps generation order among equal qualities
    candidates.sort_by(|a, b| b.quality.total_cmp(&a.quality));
    let mut kept = vec![0usize; classes];
    let shapelets = candidates
        .into_iter()
        .filter(|s| {
            let keep = kept[s.source_class] < cfg.per_class;
            kept[s.source_class] += usize::from(keep);
            keep
        })
        .collect();
    Ok(ShapeletSet { shapelets })
}

/// Affinely maps `shape` onto `[lo, hi]`. A flat target window degenerates to
/// translating the shapelet so its minimum sits on the window level; a flat
/// shapelet becomes the window midpoint.
pub fn scale_onto(shape: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let smin = shape.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = shape.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        shape.iter().map(|v| v - smin + lo).collect()
    } else if smax - smin <= 0.0 {
        vec![0.5 * (lo + hi); shape.len()]
    } else {
        shape
            .iter()
            .map(|v| (v - smin) / (smax - smin) * (hi - lo) + lo)
            .collect()
    }
}

/// Applies one shapelet edit to `cand` in place. Returns `false` when the
/// shapelet does not apply (other class, or original-class shapelet not
/// detected).
fn apply_edit(s: &Shapelet, cand: &mut TimeSeries, donor: &TimeSeries, original: usize, target: usize) -> bool {
    let len = s.values.len();
    let (dist, pos) = best_match(&s.values, cand.channel(s.channel));
    if s.source_class == original {
        if dist > s.detect_threshold {
            return false;
        }
        let src = &donor.channel(s.channel)[pos..pos + len];
        cand.channel_mut(s.channel)[pos..pos + len].copy_from_slice(src);
        true
    } else if s.source_class == target {
        let window = &cand.channel(s.channel)[pos..pos + len];
        let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled = scale_onto(&s.values, lo, hi);
        cand.channel_mut(s.channel)[pos..pos + len].copy_from_slice(&scaled);
        true
    } else {
        false
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn sets(req: &CfRequest, shapelets: &ShapeletSet, ctx: &CfContext<'_>) -> Result<Counterfactual> {
    let timer = Timer::start();
    let x = &req.instance;
    let model = ctx.model;
    model.check_input(x)?;
    if shapelets.shapelets.is_empty() {
        return timer.finish(Method::Sets, req, model, x.clone(), CfStatus::NoCfFound);
    }
    let Ok(donor) = nun(ctx.pool, x, req.target) else {
        return timer.finish(Method::Sets, req, model, x.clone(), CfStatus::NoCfFound);
    };
    // Edits on one channel only read and write that channel, so combinations
    // are only worth trying over channels where some edit applied.
    let mut active = Vec::new();
    let singles = (0..x.channels()).map(|c| vec![c]);
    let mut subsets: Box<dyn Iterator<Item = Vec<usize>>> = Box::new(singles);
    let mut combos_started = false;
    loop {
        let Some(subset) = subsets.next() else {
            if combos_started || active.len() < 2 {
                break;
            }
            combos_started = true;
            let act = active.clone();
            subsets = Box::new(
                (2..=act.len()).flat_map(move |k| {
                    let act = act.clone();
                    combinations(act.len(), k)
                        .into_iter()
                        .map(move |ix| ix.iter().map(|&i| act[i]).collect::<Vec<_>>())
                }),
            );
            continue;
        };
        let mut cand = x.clone();
        for s in shapelets.shapelets.iter().filter(|s| subset.contains(&s.channel)) {
            if ctx.budget.expired() {
                return timer.finish(Method::Sets, req, model, x.clone(), CfStatus::TimedOut);
            }
            if !apply_edit(s, &mut cand, donor, req.original_pred, req.target) {
                continue;
            }
            if !combos_started && !active.contains(&subset[0]) {
                active.push(subset[0]);
            }
            if req.accepts(&model.predict_proba(&cand)?) {
                return timer.finish(Method::Sets, req, model, cand, CfStatus::Ok);
            }
        }
    }
    timer.finish(Method::Sets, req, model, x.clone(), CfStatus::NoCfFound)
}

/// SETS generator holding the shapelets mined at preparation time.
#[derive(Debug, Clone)]
pub struct Sets {
    cfg: SetsConfig,
    shapelets: ShapeletSet,
}

impl Sets {
    pub fn mine(cfg: SetsConfig, train: &[LabeledInstance], seed: u64) -> Result<Self> {
        let shapelets = sets_mine(train, &cfg, seed)?;
        Ok(Self { cfg, shapelets })
    }

    pub fn with_shapelets(cfg: SetsConfig, shapelets: ShapeletSet) -> Self {
        Self { cfg, shapelets }
    }

    pub fn shapelets(&self) -> &ShapeletSet {
        &self.shapelets
    }
}

impl CfGenerator for Sets {
    fn name(&self) -> &str {
        Method::Sets.tag()
    }

    fn config(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.cfg,
            "shapelets": self.shapelets.shapelets.len(),
        })
    }

    fn generate(&self, req: &CfRequest, ctx: &CfContext<'_>) -> Result<Counterfactual> {
        sets(req, &self.shapelets, ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::{Budget, ReferencePool};
    use crate::cf::test_util::linear_sum_model;
    use crate::synthetic;

    #[test]
    fn best_match_agrees_with_direct_distance() {
        let series = [0.0, 0.5, 2.0, 0.1, -1.0, 3.0, 2.5, 0.0];
        let shape = [0.0, 1.0, 0.2];
        let (d, pos) = best_match(&shape, &series);
        let brute = (0..=series.len() - 3)
            .map(|s| (znorm_distance(&shape, &series[s..s + 3]), s))
            .fold((f64::INFINITY, 0), |b, c| if c.0 < b.0 { c } else { b });
        assert!((d - brute.0).abs() < 1e-9);
        assert_eq!(pos, brute.1);
    }

    #[test]
    fn information_gain_of_perfect_split_is_parent_entropy() {
        let d = [0.1, 0.2, 0.9, 1.0];
        assert!((information_gain(&d, &[true, true, false, false]) - 1.0).abs() < 1e-12);
        assert_eq!(information_gain(&[0.5; 4], &[true, true, false, false]), 0.0);
    }

    #[test]
    fn scaling_maps_range_and_handles_flat_windows() {
        assert_eq!(scale_onto(&[0.0, 2.0, 1.0], 1.0, 3.0), vec![1.0, 3.0, 2.0]);
        assert_eq!(scale_onto(&[0.0, 2.0, 1.0], 5.0, 5.0), vec![5.0, 7.0, 6.0]);
        assert_eq!(scale_onto(&[1.0, 1.0], 0.0, 2.0), vec![1.0, 1.0]);
    }

    #[test]
    fn combinations_are_ordered_by_size() {
        assert_eq!(combinations(3, 1), vec![vec![0], vec![1], vec![2]]);
        assert_eq!(combinations(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn planted_motif_is_mined() {
        let ds = synthetic::planted_motif(4, 40, 10, 30);
        let set = sets_mine(&ds.train, &SetsConfig::default(), 1).unwrap();
        let motif = [0.0, 1.0, 0.0];
        let hit = set
            .shapelets
            .iter()
            .filter(|s| s.source_class == 0)
            .any(|s| best_match(&motif, &s.values).0 < 0.1);
        assert!(hit, "{:?}", set.shapelets.iter().map(|s| (&s.values, s.source_class)).collect::<Vec<_>>());
    }

    #[test]
    fn identical_classes_leave_nothing() {
        let series = TimeSeries::univariate((0..20).map(|t| (t as f64 * 0.7).sin()).collect()).unwrap();
        let train: Vec<LabeledInstance> = (0..10)
            .map(|i| LabeledInstance {
                series: series.clone(),
                label: i % 2,
            })
            .collect();
        let set = sets_mine(&train, &SetsConfig::default(), 0).unwrap();
        assert!(set.shapelets.is_empty());
    }

    #[test]
    fn per_class_bound() {
        let ds = synthetic::planted_motif(2, 30, 10, 30);
        let cfg = SetsConfig {
            per_class: 1,
            ..SetsConfig::default()
        };
        let set = sets_mine(&ds.train, &cfg, 3).unwrap();
        assert!(set.shapelets.len() <= ds.num_classes);
    }

    #[test]
    fn no_applicable_shapelets_means_no_cf() {
        let model = linear_sum_model(6, 1.0, 3.0);
        let train = vec![LabeledInstance {
            series: TimeSeries::univariate(vec![1.0; 6]).unwrap(),
            label: 1,
        }];
        let pool = ReferencePool::new(&model, &train).unwrap();
        let ctx = CfContext {
            model: &model,
            pool: &pool,
            seed: 0,
            budget: Budget::unlimited(),
        };
        let x = TimeSeries::univariate(vec![0.0, 0.1, 0.0, 0.2, 0.0, 0.1]).unwrap();
        // only a class-2 shapelet: neither original (0) nor target (1)
        let set = ShapeletSet {
            shapelets: vec![Shapelet {
                values: vec![0.0, 1.0, 0.0],
                channel: 0,
                source_class: 2,
                quality: 1.0,
                detect_threshold: 10.0,
            }],
        };
        let cf = sets(&CfRequest::new(x.clone(), 0, 1).unwrap(), &set, &ctx).unwrap();
        assert_eq!(cf.status, CfStatus::NoCfFound);
        assert_eq!(cf.perturbed, x);
        let empty = sets(&CfRequest::new(x, 0, 1).unwrap(), &ShapeletSet::default(), &ctx).unwrap();
        assert_eq!(empty.status, CfStatus::NoCfFound);
    }
}
