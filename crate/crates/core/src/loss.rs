//! Composite gradient loss for daily popularity sequences.
//!
//! The loss on a `batch × S` prediction matrix `P̂` against targets `P` is
//!
//! ```text
//! L = SL(P̂, P) + λ1·SL(Δ¹P̂, Δ¹P) + λ2·SL(Δ²P̂, Δ²P)
//!     + α·mean_i |onehot(argmax P̂_i) − onehot(argmax P_i)|₁ + ε·LR(P̂)
//! LR(P̂) = (1/batch) Σ_i (Σ|Δ¹P̂_i| + Σ|Δ²P̂_i|)
//! ```
//!
//! where SL is mean-reduced SmoothL1 with transition `β` and `Δᵏ` is the
//! k-th discrete difference along the day axis. The peak term is piecewise
//! constant: it is reported in the loss value but contributes no gradient.

use serde::{Deserialize, Serialize};

use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub beta: f64,
    pub epsilon: f64,
    /// Value the annealed weights decay to at the horizon.
    pub anneal_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 0.1,
            epsilon: 1e-6,
            anneal_floor: 0.0,
        }
    }
}

/// Weights in effect for one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::at_epoch(&LossConfig::default(), 0, 1)
    }
}

impl LossWeights {
    pub fn at_epoch(config: &LossConfig, epoch: usize, horizon: usize) -> Self {
        let w = config.anneal_floor + (1.0 - config.anneal_floor) * anneal(epoch, horizon);
        LossWeights {
            lambda1: w,
            lambda2: w,
            alpha: w,
            epsilon: config.epsilon,
            beta: config.beta,
        }
    }
}

/// Cosine annealing factor `0.5·(1 + cos(π·e/E))`.
pub fn anneal(epoch: usize, horizon: usize) -> f64 {
    if horizon == 0 {
        return 0.0;
    }
    if epoch > horizon {
        log::warn!("annealing epoch {epoch} beyond horizon {horizon}; clamping");
        return 0.0;
    }
    let t = epoch as f64 / horizon as f64;
    0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub base: f64,
    pub first_diff: f64,
    pub second_diff: f64,
    pub peak: f64,
    pub laplacian: f64,
}

impl LossReport {
    pub fn assemble(w: &LossWeights, base: f64, d1: f64, d2: f64, peak: f64, lr: f64) -> Self {
        LossReport {
            total: base + w.lambda1 * d1 + w.lambda2 * d2 + w.alpha * peak + w.epsilon * lr,
            base,
            first_diff: d1,
            second_diff: d2,
            peak,
            laplacian: lr,
        }
    }

    /// Weighted accumulation used to combine chunk reports into a batch mean.
    pub fn accumulate(&mut self, other: &LossReport, weight: f64) {
        self.total += weight * other.total;
        self.base += weight * other.base;
        self.first_diff += weight * other.first_diff;
        self.second_diff += weight * other.second_diff;
        self.peak += weight * other.peak;
        self.laplacian += weight * other.laplacian;
    }
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [b, s] => Ok((*b, *s)),
        s => Err(TensorError::InvalidShape {
            op,
            shape: s.to_vec(),
            reason: "expected batch × steps".into(),
        }),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean-reduced SmoothL1.
pub fn smooth_l1(pred: &Tensor, target: &Tensor, beta: f64) -> Result<f64> {
    same_shape("smooth_l1", pred, target)?;
    let n = pred.numel().max(1) as f64;
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = (p - t).abs();
            if d < beta {
                0.5 * d * d / beta
            } else {
                d - 0.5 * beta
            }
        })
        .sum();
    Ok(s / n)
}

/// Discrete difference of order 1 or 2 along the step axis.
pub fn discrete_diff(series: &Tensor, order: usize) -> Result<Tensor> {
    let (b, s) = matrix_dims("discrete_diff", series)?;
    if s <= order {
        return Err(TensorError::InvalidShape {
            op: "discrete_diff",
            shape: series.shape().to_vec(),
            reason: format!("need more than {order} steps"),
        });
    }
    let mut cur: Vec<Vec<f64>> = (0..b).map(|i| series.row(i).to_vec()).collect();
    for _ in 0..order {
        cur = cur
            .into_iter()
            .map(|r| r.windows(2).map(|w| w[1] - w[0]).collect())
            .collect();
    }
    let width = s - order;
    Tensor::new(vec![b, width], cur.concat())
}

fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Mean over the batch of the L1 distance between one-hot peak positions.
/// Each sample contributes 0 or 2; ties resolve to the first index.
pub fn peak_l1(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape("peak_l1", pred, target)?;
    let (b, _) = matrix_dims("peak_l1", pred)?;
    if b == 0 {
        return Ok(0.0);
    }
    let mismatches = (0..b)
        .filter(|&i| argmax_first(pred.row(i)) != argmax_first(target.row(i)))
        .count();
    Ok(2.0 * mismatches as f64 / b as f64)
}

/// Smoothness remainder: `(1/batch) Σ_i (Σ|Δ¹P̂_i| + Σ|Δ²P̂_i|)`.
pub fn laplacian_remainder(pred: &Tensor) -> Result<f64> {
    let (b, s) = matrix_dims("laplacian_remainder", pred)?;
    if s < 3 {
        return Err(TensorError::InvalidShape {
            op: "laplacian_remainder",
            shape: pred.shape().to_vec(),
            reason: "need at least 3 steps".into(),
        });
    }
    let d1 = discrete_diff(pred, 1)?;
    let d2 = discrete_diff(pred, 2)?;
    let s: f64 = d1.data().iter().chain(d2.data()).map(|x| x.abs()).sum();
    Ok(s / b.max(1) as f64)
}

fn diff_on_tape(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = tape.value(x).cols();
    let hi = tape.slice_cols(x, 1, s)?;
    let lo = tape.slice_cols(x, 0, s - 1)?;
    tape.sub(hi, lo)
}

/// Records the differentiable part of the loss on `tape` and returns it with
/// the full report. The returned node excludes the peak term (zero gradient);
/// `report.total` includes it.
pub fn cgl_on_tape(
    tape: &mut Tape,
    pred: Var,
    target: Var,
    w: &LossWeights,
) -> Result<(Var, LossReport)> {
    let (b, s) = matrix_dims("cgl", tape.value(pred))?;
    same_shape("cgl", tape.value(pred), tape.value(target))?;
    if s < 3 {
        return Err(TensorError::InvalidShape {
            op: "cgl",
            shape: vec![b, s],
            reason: "need at least 3 steps".into(),
        });
    }
    let base = tape.smooth_l1(pred, target, w.beta)?;
    let p1 = diff_on_tape(tape, pred)?;
    let t1 = diff_on_tape(tape, target)?;
    let d1 = tape.smooth_l1(p1, t1, w.beta)?;
    let p2 = diff_on_tape(tape, p1)?;
    let t2 = diff_on_tape(tape, t1)?;
    let d2 = tape.smooth_l1(p2, t2, w.beta)?;
    let a1 = tape.abs_sum(p1);
    let a2 = tape.abs_sum(p2);
    let lr_sum = tape.add(a1, a2)?;
    let lr = tape.scale(lr_sum, 1.0 / b.max(1) as f64);

    let peak = peak_l1(tape.value(pred), tape.value(target))?;

    let wd1 = tape.scale(d1, w.lambda1);
    let wd2 = tape.scale(d2, w.lambda2);
    let wlr = tape.scale(lr, w.epsilon);
    let mut total = tape.add(base, wd1)?;
    total = tape.add(total, wd2)?;
    total = tape.add(total, wlr)?;

    let report = LossReport::assemble(
        w,
        tape.value(base).item(),
        tape.value(d1).item(),
        tape.value(d2).item(),
        peak,
        tape.value(lr).item(),
    );
    Ok((total, report))
}

/// Loss value of predictions against targets.
pub fn cgl(pred: &Tensor, target: &Tensor, w: &LossWeights) -> Result<LossReport> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let t = tape.constant(target.clone());
    cgl_on_tape(&mut tape, p, t, w).map(|(_, r)| r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random(b: usize, s: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::new(vec![b, s], (0..b * s).map(|_| rng.random_range(0.0..3.0)).collect()).unwrap()
    }

    #[test]
    fn smooth_l1_examples() {
        let a = m(&[&[1.0, 2.0]]);
        assert_eq!(smooth_l1(&a, &a, 0.1).unwrap(), 0.0);
        let v = smooth_l1(&m(&[&[0.05]]), &m(&[&[0.0]]), 0.1).unwrap();
        assert!((v - 0.0125).abs() < 1e-15);
        let v = smooth_l1(&m(&[&[1.0]]), &m(&[&[0.0]]), 0.1).unwrap();
        assert!((v - 0.95).abs() < 1e-15);
        assert!(smooth_l1(&m(&[&[1.0]]), &m(&[&[0.0, 1.0]]), 0.1).is_err());
    }

    #[test]
    fn discrete_diff_examples() {
        let c = m(&[&[2.0, 2.0, 2.0, 2.0]]);
        assert!(discrete_diff(&c, 1).unwrap().data().iter().all(|&x| x == 0.0));
        assert!(discrete_diff(&c, 2).unwrap().data().iter().all(|&x| x == 0.0));
        let lin = m(&[&[1.0, 4.0, 7.0, 10.0, 13.0]]);
        assert!(discrete_diff(&lin, 2).unwrap().data().iter().all(|&x| x == 0.0));
        let s = m(&[&[1.0, 3.0, 2.0, 5.0]]);
        assert_eq!(discrete_diff(&s, 1).unwrap().data(), &[2.0, -1.0, 3.0]);
        assert_eq!(discrete_diff(&s, 2).unwrap().data(), &[-3.0, 4.0]);
        assert!(discrete_diff(&m(&[&[1.0, 2.0]]), 2).is_err());
    }

    #[test]
    fn peak_examples() {
        let a = m(&[&[0.0, 3.0, 1.0]]);
        let b = m(&[&[1.0, 2.0, 0.0]]);
        assert_eq!(peak_l1(&a, &b).unwrap(), 0.0);
        let c = m(&[&[5.0, 2.0, 0.0]]);
        assert_eq!(peak_l1(&a, &c).unwrap(), 2.0);
        let pred = m(&[&[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]]);
        let truth = m(&[&[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0]]);
        assert_eq!(peak_l1(&pred, &truth).unwrap(), 0.5);
        // ties: first index wins on both sides
        assert_eq!(peak_l1(&m(&[&[1.0, 1.0]]), &m(&[&[1.0, 0.0]])).unwrap(), 0.0);
    }

    #[test]
    fn laplacian_examples() {
        assert_eq!(laplacian_remainder(&m(&[&[3.0; 5]])).unwrap(), 0.0);
        let slope = -0.7;
        let row: Vec<f64> = (0..5).map(|i| 1.0 + slope * i as f64).collect();
        let t = Tensor::from_rows(&[row.clone(), row]).unwrap();
        assert!((laplacian_remainder(&t).unwrap() - 4.0 * 0.7).abs() < 1e-12);
        assert!(laplacian_remainder(&m(&[&[1.0, 2.0]])).is_err());
    }

    #[test]
    fn laplacian_matches_brute_force_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random(6, 9, &mut rng);
        let mut oracle = 0.0;
        for i in 0..6 {
            let r = p.row(i);
            for d in 0..8 {
                oracle += (r[d + 1] - r[d]).abs();
            }
            for d in 0..7 {
                oracle += (r[d + 2] - 2.0 * r[d + 1] + r[d]).abs();
            }
        }
        oracle /= 6.0;
        assert!((laplacian_remainder(&p).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn anneal_schedule() {
        assert_eq!(anneal(0, 10), 1.0);
        assert!(anneal(10, 10).abs() < 1e-15);
        assert!((anneal(5, 10) - 0.5).abs() < 1e-15);
        assert_eq!(anneal(11, 10), 0.0);
        let ws: Vec<f64> = (0..=20).map(|e| anneal(e, 20)).collect();
        assert!(ws.windows(2).all(|w| w[1] <= w[0]));
        let w = LossWeights::at_epoch(&LossConfig::default(), 0, 20);
        assert_eq!((w.lambda1, w.lambda2, w.alpha), (1.0, 1.0, 1.0));
        assert_eq!(w.epsilon, 1e-6);
        let floored = LossConfig {
            anneal_floor: 0.2,
            ..LossConfig::default()
        };
        assert!((LossWeights::at_epoch(&floored, 20, 20).alpha - 0.2).abs() < 1e-15);
    }

    #[test]
    fn identical_constant_series_give_zero_loss() {
        let t = m(&[&[2.0; 6], &[0.5; 6]]);
        let r = cgl(&t, &t, &LossWeights::default()).unwrap();
        assert_eq!(r, LossReport::default());
    }

    #[test]
    fn identical_varying_series_leave_only_remainder() {
        let t = m(&[&[1.0, 2.0, 1.5, 3.0], &[0.0, 0.5, 0.2, 0.1]]);
        let w = LossWeights::default();
        let r = cgl(&t, &t, &w).unwrap();
        assert_eq!((r.base, r.first_diff, r.second_diff, r.peak), (0.0, 0.0, 0.0, 0.0));
        assert!(r.laplacian > 0.0);
        assert_eq!(r.total, w.epsilon * r.laplacian);
    }

    #[test]
    fn total_matches_component_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random(5, 7, &mut rng);
        let t = random(5, 7, &mut rng);
        let w = LossWeights {
            lambda1: 0.7,
            lambda2: 0.3,
            alpha: 0.9,
            epsilon: 1e-6,
            beta: 0.1,
        };
        let r = cgl(&p, &t, &w).unwrap();
        // component oracles computed independently of the tape route
        let sl = |a: &[f64], b: &[f64]| -> f64 {
            let mut s = 0.0;
            for (x, y) in a.iter().zip(b) {
                let d = (x - y).abs();
                s += if d < 0.1 { 5.0 * d * d } else { d - 0.05 };
            }
            s / a.len() as f64
        };
        let diff = |v: &[f64]| -> Vec<f64> { v.windows(2).map(|w| w[1] - w[0]).collect() };
        let (mut pa, mut ta, mut p1, mut t1, mut p2, mut t2) = (vec![], vec![], vec![], vec![], vec![], vec![]);
        let mut peak = 0.0;
        let mut lr = 0.0;
        for i in 0..5 {
            let (pr, tr) = (p.row(i), t.row(i));
            pa.extend_from_slice(pr);
            ta.extend_from_slice(tr);
            let (a1, b1) = (diff(pr), diff(tr));
            let (a2, b2) = (diff(&a1), diff(&b1));
            lr += a1.iter().chain(&a2).map(|x| x.abs()).sum::<f64>();
            p1.extend(a1);
            t1.extend(b1);
            p2.extend(a2);
            t2.extend(b2);
            let am = |r: &[f64]| (0..r.len()).fold(0, |b, k| if r[k] > r[b] { k } else { b });
            if am(pr) != am(tr) {
                peak += 2.0;
            }
        }
        let expect = sl(&pa, &ta) + 0.7 * sl(&p1, &t1) + 0.3 * sl(&p2, &t2) + 0.9 * peak / 5.0 + 1e-6 * lr / 5.0;
        assert!((r.total - expect).abs() < 1e-12, "{} vs {}", r.total, expect);
        let again = r.base + 0.7 * r.first_diff + 0.3 * r.second_diff + 0.9 * r.peak + 1e-6 * r.laplacian;
        assert!((r.total - again).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random(3, 6, &mut rng);
        let t = random(3, 6, &mut rng);
        let w = LossWeights::default();
        let mut tape = Tape::new();
        let pv = tape.param(p.clone());
        let tv = tape.constant(t.clone());
        let (root, _) = cgl_on_tape(&mut tape, pv, tv, &w).unwrap();
        tape.backward(root).unwrap();
        let g = tape.grad(pv).unwrap().clone();
        // the peak term is piecewise constant; subtract it from the value
        let value = |x: &Tensor| {
            let r = cgl(x, &t, &w).unwrap();
            r.total - w.alpha * r.peak
        };
        let h = 1e-5;
        for i in 0..p.numel() {
            let mut a = p.clone();
            a.data_mut()[i] += h;
            let mut b = p.clone();
            b.data_mut()[i] -= h;
            let fd = (value(&a) - value(&b)) / (2.0 * h);
            let an = g.data()[i];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-8);
            assert!(rel < 1e-4, "entry {i}: {an} vs {fd}");
        }
    }

    #[test]
    fn loss_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let p = random(4, 5, &mut rng);
            let t = random(4, 5, &mut rng);
            assert!(cgl(&p, &t, &LossWeights::default()).unwrap().total >= 0.0);
        }
    }
}
