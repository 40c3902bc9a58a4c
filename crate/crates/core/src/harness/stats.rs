//! Per-block ranking, Friedman test and Nemenyi critical difference.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

/// Ranking direction of each reported metric.
pub fn direction(metric: &str) -> Direction {
    match metric {
        "validity" | "consist_bc" | "consist_bv" => Direction::HigherIsBetter,
        _ => Direction::LowerIsBetter,
    }
}

/// Ranks (1 = best) with mid-ranks for ties. Missing values share the
/// last places.
pub fn rank_values(values: &[Option<f64>], dir: Direction) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    let key = |i: usize| -> (bool, f64) {
        match values[i] {
            Some(v) if !v.is_nan() => (
                false,
                match dir {
                    Direction::HigherIsBetter => -v,
                    Direction::LowerIsBetter => v,
                },
            ),
            _ => (true, 0.0),
        }
    };
    order.sort_by(|&a, &b| {
        let (ma, va) = key(a);
        let (mb, vb) = key(b);
        ma.cmp(&mb).then(va.total_cmp(&vb))
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && key(order[j + 1]) == key(order[i]) {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub metric: String,
    pub methods: Vec<String>,
    /// Blocks (dataset/model pairs) that entered the ranking.
    pub blocks: Vec<String>,
    /// `ranks[block][method]`.
    pub ranks: Vec<Vec<f64>>,
    pub average: Vec<f64>,
    /// Blocks dropped because no method had a value.
    pub excluded: Vec<String>,
}

/// Ranks methods within every block and averages over blocks.
/// `values[block][method]`; a block where every value is missing is
/// excluded and listed in the table.
pub fn aggregate_rankings(
    metric: &str,
    methods: &[String],
    blocks: &[String],
    values: &[Vec<Option<f64>>],
    dir: Direction,
) -> Result<RankTable> {
    if methods.len() < 2 {
        return Err(Error::Report("ranking needs at least two methods".into()));
    }
    let mut table = RankTable {
        metric: metric.to_string(),
        methods: methods.to_vec(),
        blocks: Vec::new(),
        ranks: Vec::new(),
        average: vec![0.0; methods.len()],
        excluded: Vec::new(),
    };
    for (b, row) in blocks.iter().zip(values) {
        if row.len() != methods.len() {
            return Err(Error::Report(format!("block {b} has {} values for {} methods", row.len(), methods.len())));
        }
        if row.iter().all(|v| v.is_none_or(f64::is_nan)) {
            table.excluded.push(b.clone());
            continue;
        }
        table.blocks.push(b.clone());
        table.ranks.push(rank_values(row, dir));
    }
    if table.ranks.is_empty() {
        return Err(Error::Report(format!("metric {metric} has no values in any block")));
    }
    let d = table.ranks.len() as f64;
    for row in &table.ranks {
        for (a, r) in table.average.iter_mut().zip(row) {
            *a += r / d;
        }
    }
    Ok(table)
}

/// Studentized range statistic divided by sqrt(2) for the Nemenyi test.
pub fn nemenyi_q(alpha: f64, methods: usize) -> Result<f64> {
    const Q05: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];
    const Q10: [f64; 9] = [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920];
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &Q05
    } else if (alpha - 0.10).abs() < 1e-12 {
        &Q10
    } else {
        return Err(Error::Config(format!("alpha {alpha} unsupported (use 0.05 or 0.10)")));
    };
    methods
        .checked_sub(2)
        .and_then(|i| table.get(i))
        .copied()
        .ok_or_else(|| Error::Config(format!("Nemenyi table covers 2 to 10 methods, got {methods}")))
}

/// `q_alpha * sqrt(M (M + 1) / (6 D))`.
pub fn critical_difference(alpha: f64, methods: usize, blocks: usize) -> Result<f64> {
    if blocks < 1 {
        return Err(Error::Config("critical difference needs at least one block".into()));
    }
    let m = methods as f64;
    Ok(nemenyi_q(alpha, methods)? * (m * (m + 1.0) / (6.0 * blocks as f64)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdResult {
    pub alpha: f64,
    pub friedman_chi2: f64,
    pub p_value: f64,
    pub significant: bool,
    pub cd: f64,
    pub average: Vec<f64>,
    /// Maximal sets of methods (indices, best first) whose average ranks
    /// span less than the critical difference.
    pub groups: Vec<Vec<usize>>,
}

/// Friedman test over a `D x M` rank matrix plus Nemenyi grouping.
pub fn friedman_nemenyi(ranks: &[Vec<f64>], alpha: f64) -> Result<CdResult> {
    let d = ranks.len();
    let m = ranks.first().map_or(0, Vec::len);
    if d < 2 || m < 2 {
        return Err(Error::Config(format!("Friedman test needs D >= 2 and M >= 2, got D={d}, M={m}")));
    }
    let cd = critical_difference(alpha, m, d)?;
    let (df, mf) = (d as f64, m as f64);
    let average: Vec<f64> = (0..m).map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / df).collect();
    let sum_sq: f64 = average.iter().map(|r| r * r).sum();
    let chi2 = (12.0 * df / (mf * (mf + 1.0)) * (sum_sq - mf * (mf + 1.0).powi(2) / 4.0)).max(0.0);
    let dist = ChiSquared::new(mf - 1.0).map_err(|e| Error::Numeric(e.to_string()))?;
    let p_value = 1.0 - dist.cdf(chi2);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| average[a].total_cmp(&average[b]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last_end = 0;
    for i in 0..m {
        let mut j = i;
        while j + 1 < m && average[order[j + 1]] - average[order[i]] < cd {
            j += 1;
        }
        if j + 1 > last_end {
            groups.push(order[i..=j].to_vec());
            last_end = j + 1;
        }
    }
    Ok(CdResult {
        alpha,
        friedman_chi2: chi2,
        p_value,
        significant: p_value < alpha,
        cd,
        average,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_and_ties() {
        assert_eq!(rank_values(&[Some(1.0), Some(2.0), Some(3.0)], Direction::LowerIsBetter), vec![1.0, 2.0, 3.0]);
        assert_eq!(rank_values(&[Some(1.0), Some(1.0), Some(2.0)], Direction::LowerIsBetter), vec![1.5, 1.5, 3.0]);
        assert_eq!(rank_values(&[Some(0.2), None, Some(0.9), None], Direction::HigherIsBetter), vec![2.0, 3.5, 1.0, 3.5]);
    }

    #[test]
    fn cd_hand_arithmetic() {
        let cd = critical_difference(0.05, 5, 20).unwrap();
        assert!((cd - 2.728 * (30.0f64 / 120.0).sqrt()).abs() < 1e-12);
        assert!(critical_difference(0.01, 5, 20).is_err());
    }

    #[test]
    fn identical_ranks_single_group() {
        let ranks = vec![vec![2.0, 2.0, 2.0]; 4];
        let r = friedman_nemenyi(&ranks, 0.05).unwrap();
        assert_eq!(r.friedman_chi2, 0.0);
        assert!(!r.significant);
        assert_eq!(r.groups, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn consistent_ordering_is_significant() {
        let ranks = vec![vec![1.0, 2.0, 3.0]; 10];
        let r = friedman_nemenyi(&ranks, 0.05).unwrap();
        // 12 * 10 / 12 * (14 - 12) = 20
        assert!((r.friedman_chi2 - 20.0).abs() < 1e-9);
        assert!(r.significant);
        // CD = 2.343 * sqrt(12 / 60) ~ 1.048 > 1, so neighbours group
        assert_eq!(r.groups, vec![vec![0, 1], vec![1, 2]]);
    }
}
