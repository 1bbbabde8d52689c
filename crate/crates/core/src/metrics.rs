//! Daily and averaged error and rank-correlation metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{average_ranks, pearson};
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("prediction shape {pred:?} does not match truth shape {truth:?}")]
    Shape { pred: Vec<usize>, truth: Vec<usize> },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("cannot average an empty vector")]
    Empty,
}

fn dims(pred: &Tensor, truth: &Tensor) -> Result<(usize, usize), MetricError> {
    match (pred.shape(), truth.shape()) {
        ([n, s], [m, t]) if n == m && s == t => Ok((*n, *s)),
        _ => Err(MetricError::Shape {
            pred: pred.shape().to_vec(),
            truth: truth.shape().to_vec(),
        }),
    }
}

fn column(t: &Tensor, d: usize) -> Vec<f64> {
    (0..t.rows()).map(|i| t.at(i, d)).collect()
}

/// Mean absolute error per day (column) over samples (rows).
pub fn mae_daily(pred: &Tensor, truth: &Tensor) -> Result<Vec<f64>, MetricError> {
    let (n, s) = dims(pred, truth)?;
    if n == 0 {
        return Err(MetricError::TooFewSamples { needed: 1, got: 0 });
    }
    let mut acc = vec![0.0; s];
    for i in 0..n {
        for (d, a) in acc.iter_mut().enumerate() {
            *a += (pred.at(i, d) - truth.at(i, d)).abs();
        }
    }
    Ok(acc.into_iter().map(|a| a / n as f64).collect())
}

/// Spearman correlation per day across samples; constant columns give NaN.
pub fn src_daily(pred: &Tensor, truth: &Tensor) -> Result<Vec<f64>, MetricError> {
    let (n, s) = dims(pred, truth)?;
    if n < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, got: n });
    }
    Ok((0..s)
        .map(|d| {
            let (p, t) = (column(pred, d), column(truth, d));
            let constant = |c: &[f64]| c.iter().all(|&x| x == c[0]);
            if constant(&p) || constant(&t) {
                return f64::NAN;
            }
            pearson(&average_ranks(&p), &average_ranks(&t)).unwrap_or(f64::NAN)
        })
        .collect())
}

fn mean(xs: &[f64]) -> Result<f64, MetricError> {
    if xs.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn amae(mae_d: &[f64]) -> Result<f64, MetricError> {
    mean(mae_d)
}

pub fn asrc(src_d: &[f64]) -> Result<f64, MetricError> {
    mean(src_d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Calendar day of the first column (2 in early-popularity mode).
    pub first_day: usize,
    pub samples: usize,
    pub mae_d: Vec<f64>,
    pub amae: f64,
    pub src_d: Vec<f64>,
    pub asrc: f64,
    pub day30_mae: f64,
    pub day30_src: f64,
    /// Days whose SRC is undefined because a column was constant.
    pub degenerate_days: Vec<usize>,
}

impl EvalReport {
    pub fn compute(pred: &Tensor, truth: &Tensor, first_day: usize) -> Result<Self, MetricError> {
        let mae_d = mae_daily(pred, truth)?;
        let src_d = src_daily(pred, truth)?;
        let degenerate_days = src_d
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_nan())
            .map(|(d, _)| d + first_day)
            .collect();
        Ok(EvalReport {
            first_day,
            samples: pred.rows(),
            amae: amae(&mae_d)?,
            asrc: asrc(&src_d)?,
            day30_mae: *mae_d.last().expect("non-empty"),
            day30_src: *src_d.last().expect("non-empty"),
            mae_d,
            src_d,
            degenerate_days,
        })
    }

    pub fn days(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.mae_d.len()).map(|d| d + self.first_day)
    }

    /// Two-column `day,value` table.
    pub fn curve_csv(&self, values: &[f64]) -> String {
        let mut out = String::from("day,value\n");
        for (day, v) in self.days().zip(values) {
            out.push_str(&format!("{day},{v}\n"));
        }
        out
    }

    pub fn mae_curve(&self) -> String {
        self.curve_csv(&self.mae_d)
    }

    pub fn src_curve(&self) -> String {
        self.curve_csv(&self.src_d)
    }
}

/// Drops the leading `days` columns of a `samples × steps` matrix.
pub fn drop_leading_days(t: &Tensor, days: usize) -> Tensor {
    let (n, s) = (t.rows(), t.cols());
    let keep = s.saturating_sub(days);
    let mut data = Vec::with_capacity(n * keep);
    for i in 0..n {
        data.extend_from_slice(&t.row(i)[days.min(s)..]);
    }
    Tensor::new(vec![n, keep], data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, s: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::new(vec![n, s], (0..n * s).map(|_| rng.random_range(0.0..5.0)).collect()).unwrap()
    }

    #[test]
    fn mae_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random(4, 3, &mut rng);
        assert_eq!(mae_daily(&t, &t).unwrap(), vec![0.0; 3]);
        let shifted = t.map(|x| x + 1.0);
        for v in mae_daily(&shifted, &t).unwrap() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(mae_daily(&t, &random(3, 3, &mut rng)).is_err());
    }

    #[test]
    fn mae_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random(5, 3, &mut rng);
        let t = random(5, 3, &mut rng);
        let got = mae_daily(&p, &t).unwrap();
        for d in 0..3 {
            let mut s = 0.0;
            for i in 0..5 {
                s += (p.data()[i * 3 + d] - t.data()[i * 3 + d]).abs();
            }
            assert_eq!(got[d], s / 5.0);
        }
    }

    #[test]
    fn averages() {
        assert_eq!(amae(&[2.5; 7]).unwrap(), 2.5);
        assert_eq!(asrc(&[0.0, 1.0]).unwrap(), 0.5);
        assert_eq!(amae(&[]), Err(MetricError::Empty));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..29).map(|_| rng.random()).collect();
        let mut s = 0.0;
        for x in &v {
            s += x;
        }
        assert!((amae(&v).unwrap() - s / 29.0).abs() < 1e-15);
    }

    #[test]
    fn src_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random(10, 4, &mut rng);
        assert!(src_daily(&t, &t).unwrap().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let rev = t.map(|x| -x);
        assert!(src_daily(&rev, &t).unwrap().iter().all(|v| (v + 1.0).abs() < 1e-12));
        let single = random(1, 4, &mut rng);
        assert!(matches!(
            src_daily(&single, &single),
            Err(MetricError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn constant_column_is_flagged() {
        let p = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 3.0], vec![1.0, 4.0]]).unwrap();
        let r = EvalReport::compute(&p, &p, 2).unwrap();
        assert!(r.src_d[0].is_nan());
        assert_eq!(r.degenerate_days, vec![2]);
        assert!((r.src_d[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_and_curves() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random(8, 29, &mut rng);
        let r = EvalReport::compute(&t, &t, 2).unwrap();
        assert_eq!(r.amae, 0.0);
        assert!((r.asrc - 1.0).abs() < 1e-12);
        let csv = r.mae_curve();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "day,value");
        assert_eq!(lines.len(), 30);
        assert!(lines[1].starts_with("2,"));
        assert!(lines[29].starts_with("30,"));
        let p = random(8, 29, &mut rng);
        let r = EvalReport::compute(&p, &t, 2).unwrap();
        assert!((r.amae - r.mae_d.iter().sum::<f64>() / 29.0).abs() < 1e-15);
        assert_eq!(r.day30_mae, r.mae_d[28]);
    }

    #[test]
    fn drop_leading_days_keeps_tail() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(drop_leading_days(&t, 1).data(), &[2.0, 3.0, 5.0, 6.0]);
    }

    proptest! {
        #[test]
        fn src_invariant_under_increasing_maps(data in prop::collection::vec(0.0f64..5.0, 24), seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = Tensor::new(vec![8, 3], data).unwrap();
            let t = random(8, 3, &mut rng);
            let a = src_daily(&p, &t).unwrap();
            let b = src_daily(&p.map(|x| (2.0 * x).exp() + 3.0), &t).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.is_nan() && y.is_nan()) || (x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn constant_shift_bounds_mae(c in -3.0f64..3.0, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random(6, 4, &mut rng);
            let t = random(6, 4, &mut rng);
            let base = mae_daily(&p, &t).unwrap();
            let moved = mae_daily(&p.map(|x| x + c), &t).unwrap();
            for (a, b) in base.iter().zip(&moved) {
                prop_assert!((a - b).abs() <= c.abs() + 1e-12);
            }
            // predictions uniformly above truth shift exactly by |c| for c ≥ 0
            let above = t.map(|x| x + 6.0);
            let b0 = mae_daily(&above, &t).unwrap();
            let b1 = mae_daily(&above.map(|x| x + c.abs()), &t).unwrap();
            for (a, b) in b0.iter().zip(&b1) {
                prop_assert!((b - a - c.abs()).abs() < 1e-9);
            }
        }
    }
}
