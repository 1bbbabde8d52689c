//! Descriptive statistics of popularity series: correlations between days,
//! per-day distributions and per-group summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{PopularitySeries, PostRecord, DAYS};
use crate::par::{self, Execution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrelationError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("correlation undefined: both inputs are constant")]
    Undefined,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// 1-based ranks; tied values share the average of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

fn check(x: &[f64], y: &[f64]) -> Result<(), CorrelationError> {
    if x.len() != y.len() {
        return Err(CorrelationError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(CorrelationError::TooShort(x.len()));
    }
    Ok(())
}

/// Pearson correlation. When exactly one input is constant the covariance is
/// zero and 0 is returned.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    check(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    match (sxx > 0.0, syy > 0.0) {
        (false, false) => Err(CorrelationError::Undefined),
        (true, true) => Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)),
        _ => Ok(0.0),
    }
}

/// Spearman rank correlation: Pearson over average-tie ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    check(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// `(1/(n−1)) Σ ((xᵢ−x̄)/σx)((yᵢ−ȳ)/σy)` with sample standard deviations,
/// evaluated on the raw values (no rank transform).
pub fn zscore_product(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    check(x, y)?;
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    match (sx > 0.0, sy > 0.0) {
        (false, false) => Err(CorrelationError::Undefined),
        (true, true) => Ok(x
            .iter()
            .zip(y)
            .map(|(a, b)| ((a - mx) / sx) * ((b - my) / sy))
            .sum::<f64>()
            / (n - 1.0)),
        _ => Ok(0.0),
    }
}

/// Which estimator fills the rank-correlation matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankForm {
    #[default]
    Ranks,
    RawZScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrices {
    pub pc: Vec<Vec<f64>>,
    pub src: Vec<Vec<f64>>,
    /// 0-based day columns with zero variance; their rows and columns are NaN.
    pub constant_days: Vec<usize>,
}

/// Day-by-day Pearson and Spearman matrices across samples.
pub fn correlation_matrices(
    series: &[PopularitySeries],
    form: RankForm,
    exec: Execution,
) -> Result<CorrelationMatrices, CorrelationError> {
    if series.len() < 2 {
        return Err(CorrelationError::TooShort(series.len()));
    }
    let days = series.iter().map(|s| s.p.len()).min().unwrap_or(0).min(DAYS);
    let columns: Vec<Vec<f64>> = (0..days).map(|d| series.iter().map(|s| s.p[d]).collect()).collect();
    let constant: Vec<bool> = columns
        .iter()
        .map(|c| c.iter().all(|&x| x == c[0]))
        .collect();
    let ranked: Vec<Vec<f64>> = columns.iter().map(|c| average_ranks(c)).collect();
    let pairs: Vec<(usize, usize)> = (0..days).flat_map(|i| (i..days).map(move |j| (i, j))).collect();
    let values = par::map(exec, &pairs, |&(i, j)| {
        if constant[i] || constant[j] {
            return (f64::NAN, f64::NAN);
        }
        if i == j {
            return (1.0, 1.0);
        }
        let pc = pearson(&columns[i], &columns[j]).unwrap_or(f64::NAN);
        let src = match form {
            RankForm::Ranks => pearson(&ranked[i], &ranked[j]),
            RankForm::RawZScore => zscore_product(&columns[i], &columns[j]),
        }
        .unwrap_or(f64::NAN);
        (pc, src)
    });
    let mut pc = vec![vec![0.0; days]; days];
    let mut src = vec![vec![0.0; days]; days];
    for (&(i, j), (p, s)) in pairs.iter().zip(values) {
        pc[i][j] = p;
        pc[j][i] = p;
        src[i][j] = s;
        src[j][i] = s;
    }
    Ok(CorrelationMatrices {
        pc,
        src,
        constant_days: (0..days).filter(|&d| constant[d]).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayDistribution {
    /// 1-based day.
    pub day: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Box-plot statistics of the popularity score for each day.
pub fn distribution_summary(series: &[PopularitySeries]) -> Vec<DayDistribution> {
    if series.is_empty() {
        return Vec::new();
    }
    let days = series.iter().map(|s| s.p.len()).min().unwrap_or(0);
    (0..days)
        .map(|d| {
            let mut col: Vec<f64> = series.iter().map(|s| s.p[d]).collect();
            col.sort_by(f64::total_cmp);
            let m = mean(&col);
            let std = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            DayDistribution {
                day: d + 1,
                min: col[0],
                q1: quantile(&col, 0.25),
                median: quantile(&col, 0.5),
                q3: quantile(&col, 0.75),
                max: col[col.len() - 1],
                mean: m,
                std,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Category,
    Language,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub key: String,
    pub count: usize,
    /// Mean final-day popularity of the group.
    pub mean_popularity: f64,
}

/// Sample count and mean day-30 popularity per group, largest groups first.
pub fn group_stats(records: &[PostRecord], key: GroupKey) -> Vec<GroupStat> {
    let mut acc: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for r in records {
        let Some(p) = r.popularity_on(DAYS) else {
            continue;
        };
        let k = match key {
            GroupKey::Category => r.category.as_str(),
            GroupKey::Language => r.language.as_str(),
        };
        let e = acc.entry(k).or_default();
        e.0 += 1;
        e.1 += p;
    }
    let mut out: Vec<GroupStat> = acc
        .into_iter()
        .map(|(k, (c, s))| GroupStat {
            key: k.to_string(),
            count: c,
            mean_popularity: s / c as f64,
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.key.cmp(&b.key)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        // covariance oracle: x̄ = 2.5, ȳ = 3.75, Σdxdy = 3.5, Σdx² = 5, Σdy² = 4.75 → 3.5/√23.75
        let r = pearson(&x, &[2.0, 4.0, 5.0, 4.0]).unwrap();
        assert!((r - 3.5 / 23.75f64.sqrt()).abs() < 1e-12);
        assert!((r - 0.7182).abs() < 1e-4);
    }

    #[test]
    fn pearson_errors() {
        assert_eq!(pearson(&[1.0, 1.0], &[2.0, 2.0]), Err(CorrelationError::Undefined));
        assert_eq!(pearson(&[1.0], &[2.0]), Err(CorrelationError::TooShort(1)));
        assert_eq!(pearson(&[1.0, 2.0], &[2.0]), Err(CorrelationError::LengthMismatch(2, 1)));
        assert_eq!(pearson(&[1.0, 2.0], &[3.0, 3.0]), Ok(0.0));
    }

    #[test]
    fn spearman_examples() {
        let x = [0.3, 1.0, 2.5, 7.0, 9.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert!((spearman(&x, &rev).unwrap() + 1.0).abs() < 1e-12);
        // ranks of {1,2,2,4} are {1, 2.5, 2.5, 4}; against {1,2,3,4}:
        // Σdxdy = 4.5, Σdx² = 4.5, Σdy² = 5 → 4.5/√22.5
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap();
        assert!((r - 4.5 / 22.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn average_ranks_handle_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn zscore_product_equals_pearson_on_raw_values() {
        let x = [1.0, 4.0, 2.0, 8.0, 5.0];
        let y = [2.0, 3.0, 1.0, 9.0, 4.0];
        assert!((zscore_product(&x, &y).unwrap() - pearson(&x, &y).unwrap()).abs() < 1e-12);
    }

    fn series(rows: &[&[f64]]) -> Vec<PopularitySeries> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| PopularitySeries {
                id: i.to_string(),
                p: r.to_vec(),
            })
            .collect()
    }

    #[test]
    fn proportional_pair_gives_all_ones() {
        let a: Vec<f64> = (1..=30).map(|d| d as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| 3.0 * x).collect();
        let m = correlation_matrices(&series(&[&a, &b]), RankForm::Ranks, Execution::Sequential).unwrap();
        for row in &m.pc {
            assert!(row.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn constant_day_is_flagged() {
        let m = correlation_matrices(
            &series(&[&[1.0, 5.0, 2.0], &[1.0, 6.0, 1.0], &[1.0, 7.0, 3.0]]),
            RankForm::Ranks,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(m.constant_days, vec![0]);
        assert!(m.pc[0][1].is_nan() && m.src[2][0].is_nan());
        assert_eq!(m.src[1][1], 1.0);
    }

    #[test]
    fn synthetic_matrices_are_symmetric_and_strongly_correlated() {
        let set = generate_synthetic(300, 11, &SyntheticConfig::default()).unwrap();
        let s: Vec<_> = set.records.iter().map(|r| r.popularity()).collect();
        let m = correlation_matrices(&s, RankForm::Ranks, Execution::Parallel).unwrap();
        let seq = correlation_matrices(&s, RankForm::Ranks, Execution::Sequential).unwrap();
        assert_eq!(m, seq);
        for i in 0..30 {
            assert!((m.pc[i][i] - 1.0).abs() < 1e-9);
            for j in 0..30 {
                assert_eq!(m.pc[i][j], m.pc[j][i]);
                assert_eq!(m.src[i][j], m.src[j][i]);
                assert!((-1.0..=1.0).contains(&m.src[i][j]));
            }
            if i + 1 < 30 {
                assert!(m.src[i][i + 1] > 0.9, "day {i}: {}", m.src[i][i + 1]);
            }
        }
        assert!(m.src[0][29] > 0.9);
    }

    #[test]
    fn distribution_is_ordered() {
        let set = generate_synthetic(100, 2, &SyntheticConfig::default()).unwrap();
        let s: Vec<_> = set.records.iter().map(|r| r.popularity()).collect();
        let d = distribution_summary(&s);
        assert_eq!(d.len(), 30);
        for x in d {
            assert!(x.min <= x.q1 && x.q1 <= x.median && x.median <= x.q3 && x.q3 <= x.max);
        }
        let one = distribution_summary(&series(&[&[1.0, 2.0, 3.0, 4.0, 5.0]]));
        assert_eq!(one[2].median, 3.0);
        let col = distribution_summary(&series(&[&[1.0], &[2.0], &[3.0], &[4.0]]));
        assert_eq!((col[0].q1, col[0].median, col[0].q3), (1.75, 2.5, 3.25));
    }

    fn rec(id: &str, cat: &str, lang: &str, final_views: u64) -> PostRecord {
        PostRecord {
            id: id.into(),
            category: cat.into(),
            title: String::new(),
            description: String::new(),
            tags: vec![],
            user_id: "u".into(),
            language: lang.into(),
            duration_s: 1.0,
            followers: 0,
            post_count: 0,
            views: vec![final_views; 30],
        }
    }

    #[test]
    fn group_means_match_hand_oracle() {
        // day-30 popularity = log2(v/30 + 1): v = 30 → 1, v = 90 → 2, v = 210 → 3
        let recs = vec![
            rec("a", "Music", "en", 30),
            rec("b", "Music", "en", 90),
            rec("c", "Music", "es", 210),
            rec("d", "Gaming", "es", 0),
        ];
        let g = group_stats(&recs, GroupKey::Category);
        assert_eq!(g.len(), 2);
        assert_eq!((g[0].key.as_str(), g[0].count), ("Music", 3));
        assert!((g[0].mean_popularity - 2.0).abs() < 1e-12);
        assert_eq!((g[1].key.as_str(), g[1].count, g[1].mean_popularity), ("Gaming", 1, 0.0));
        let l = group_stats(&recs, GroupKey::Language);
        assert_eq!(l.iter().map(|s| s.count).sum::<usize>(), 4);
        assert!((l[0].mean_popularity - 1.5).abs() < 1e-12);
    }

    #[test]
    fn single_group() {
        let recs = vec![rec("a", "Music", "en", 30), rec("b", "Music", "en", 90)];
        let g = group_stats(&recs, GroupKey::Category);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].count, 2);
        assert!((g[0].mean_popularity - 1.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn spearman_is_invariant_under_increasing_maps(
            x in prop::collection::vec(-5.0f64..5.0, 3..30),
            y_seed in prop::collection::vec(-5.0f64..5.0, 30),
            a in 0.1f64..10.0, b in -5.0f64..5.0,
        ) {
            let y = &y_seed[..x.len()];
            if let Ok(r) = spearman(&x, y) {
                let fx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
                let gy: Vec<f64> = y.iter().map(|v| a * v + b).collect();
                let r2 = spearman(&fx, &gy).unwrap();
                prop_assert!((r - r2).abs() < 1e-9);
            }
        }

        #[test]
        fn pearson_affine_behaviour(
            x in prop::collection::vec(-5.0f64..5.0, 3..30),
            y_seed in prop::collection::vec(-5.0f64..5.0, 30),
            a in 0.1f64..10.0, b in -5.0f64..5.0,
        ) {
            let y = &y_seed[..x.len()];
            if let Ok(r) = pearson(&x, y) {
                let pos: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let neg: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
                prop_assert!((pearson(&pos, y).unwrap() - r).abs() < 1e-9);
                prop_assert!((pearson(&neg, y).unwrap() + r).abs() < 1e-9);
            }
        }
    }
}
