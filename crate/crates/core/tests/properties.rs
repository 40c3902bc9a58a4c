mod common;

use proptest::prelude::*;

use tscf_core::classifier::ClassifierModel;
use tscf_core::dataset::{stratified_quotas, stratified_sample};
use tscf_core::harness::friedman_nemenyi;
use tscf_core::harness::stats::{rank_values, Direction};
use tscf_core::metrics::{num_segments, perceptible_mask, sparsity_l0, thresh_l0, SparsityConfig};
use tscf_core::{synthetic, TimeSeries};

/// A series and a copy with a random subset of points moved.
fn pair() -> impl Strategy<Value = (TimeSeries, TimeSeries)> {
    (1usize..4, 4usize..40).prop_flat_map(|(n, t)| {
        (
            prop::collection::vec(-5.0f64..5.0, n * t),
            prop::collection::vec(prop_oneof![Just(0.0), -1.0f64..1.0], n * t),
        )
            .prop_map(move |(x, d)| {
                let xh: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
                (TimeSeries::new(n, t, x).unwrap(), TimeSeries::new(n, t, xh).unwrap())
            })
    })
}

fn sparsity(tau: f64, tolerance_frac: f64) -> SparsityConfig {
    SparsityConfig {
        tau,
        tolerance_frac,
        global_range: false,
    }
}

proptest! {
    #[test]
    fn thresh_l0_bounded_by_l0_and_monotone_in_tau((x, xh) in pair(), a in 0.0f64..0.5, b in 0.0f64..0.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let l0 = sparsity_l0(&x, &xh).unwrap();
        let t_lo = thresh_l0(&x, &xh, &sparsity(lo, 0.01)).unwrap();
        let t_hi = thresh_l0(&x, &xh, &sparsity(hi, 0.01)).unwrap();
        prop_assert!(t_lo <= l0 + 1e-12);
        prop_assert!(t_hi <= t_lo + 1e-12);
    }

    #[test]
    fn segments_bounded_by_marks_and_shrink_with_tolerance((x, xh) in pair(), a in 0.0f64..0.9, b in 0.0f64..0.9) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let cfg = sparsity(0.01, lo);
        let marked = perceptible_mask(&x, &xh, &cfg).unwrap().iter().filter(|&&m| m).count();
        let s_lo = num_segments(&x, &xh, &cfg).unwrap();
        let s_hi = num_segments(&x, &xh, &sparsity(0.01, hi)).unwrap();
        prop_assert!(s_lo <= marked);
        prop_assert!(s_hi <= s_lo);
        prop_assert_eq!(s_lo == 0, marked == 0);
    }

    #[test]
    fn identical_series_have_no_changes((x, _) in pair()) {
        prop_assert_eq!(sparsity_l0(&x, &x).unwrap(), 0.0);
        prop_assert_eq!(num_segments(&x, &x, &SparsityConfig::default()).unwrap(), 0);
    }

    #[test]
    fn ranks_sum_to_triangular_number(values in prop::collection::vec(prop::option::of(-3i32..3), 1..8), higher in any::<bool>()) {
        let values: Vec<Option<f64>> = values.into_iter().map(|v| v.map(f64::from)).collect();
        let dir = if higher { Direction::HigherIsBetter } else { Direction::LowerIsBetter };
        let ranks = rank_values(&values, dir);
        let m = values.len() as f64;
        prop_assert!((ranks.iter().sum::<f64>() - m * (m + 1.0) / 2.0).abs() < 1e-9);
        let worst_present = values.iter().zip(&ranks).filter(|(v, _)| v.is_some()).map(|(_, r)| *r).fold(0.0, f64::max);
        for (v, r) in values.iter().zip(&ranks) {
            prop_assert!((1.0..=m).contains(r));
            if v.is_none() {
                prop_assert!(*r > worst_present);
            }
        }
    }

    #[test]
    fn friedman_p_value_is_a_probability(
        (m, rows) in (3usize..6).prop_flat_map(|m| (Just(m), prop::collection::vec(prop::collection::vec(-10i32..10, m), 2..12)))
    ) {
        let ranks: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| rank_values(&r.iter().map(|&v| Some(f64::from(v))).collect::<Vec<_>>(), Direction::LowerIsBetter))
            .collect();
        let cd = friedman_nemenyi(&ranks, 0.05).unwrap();
        prop_assert!((0.0..=1.0).contains(&cd.p_value), "p = {}", cd.p_value);
        prop_assert!(cd.friedman_chi2 >= -1e-9);
        prop_assert!(cd.cd > 0.0);
        prop_assert_eq!(cd.average.len(), m);
        let mean = cd.average.iter().sum::<f64>() / m as f64;
        prop_assert!((mean - (m as f64 + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn stratified_sample_keeps_class_proportions(labels in prop::collection::vec(0usize..4, 1..80), n in 0usize..100, seed in any::<u64>()) {
        let sel = stratified_sample(&labels, n, seed);
        prop_assert_eq!(sel.indices.len(), n.min(labels.len()));
        prop_assert_eq!(sel.truncated, n > labels.len());
        prop_assert!(sel.indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(&sel, &stratified_sample(&labels, n, seed));
        if n < labels.len() {
            let mut counts = vec![0usize; 4];
            for &l in &labels {
                counts[l] += 1;
            }
            let quotas = stratified_quotas(&counts, n);
            prop_assert_eq!(quotas.iter().sum::<usize>(), n);
            for (c, (&q, &m)) in quotas.iter().zip(&counts).enumerate() {
                let exact = (m * n) as f64 / labels.len() as f64;
                prop_assert!((q as f64 - exact).abs() < 1.0, "class {c}: {q} vs {exact}");
                let got = sel.indices.iter().filter(|&&i| labels[i] == c).count();
                prop_assert_eq!(got, q);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn model_bytes_round_trip(seed in 0u64..1000) {
        let ds = synthetic::planted_bump(seed, 8, 4, 16);
        let model = common::mlp(&ds, seed, 6, 2);
        let back = ClassifierModel::from_bytes(&model.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), model.to_bytes());
        for inst in &ds.test {
            prop_assert_eq!(back.logits(&inst.series).unwrap(), model.logits(&inst.series).unwrap());
        }
    }
}

#[test]
fn truncated_bytes_are_rejected() {
    let ds = synthetic::planted_bump(0, 8, 4, 16);
    let bytes = common::mlp(&ds, 0, 6, 1).to_bytes();
    for cut in [0, 4, bytes.len() / 2, bytes.len() - 1] {
        assert!(ClassifierModel::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
}
