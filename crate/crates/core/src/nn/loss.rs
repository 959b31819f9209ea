use super::matrix::Matrix;
use crate::error::{config_err, Result};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

const SUM_TOL: f64 = 1e-6;

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let data = logits.iter_rows().flat_map(softmax).collect();
    Matrix::from_vec(logits.rows(), logits.cols(), data).expect("shape preserved")
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return config_err(format!("{name} has a negative or non-finite entry"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return config_err(format!("{name} sums to {sum}, not 1"));
    }
    Ok(())
}

/// `sum_i p_i ln(p_i / q_i)`, with `0 ln(0/q) = 0` and `q_i` floored at [`PROB_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return config_err(format!(
            "distribution lengths differ: {} vs {}",
            p.len(),
            q.len()
        ));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    Ok(kl_unchecked(p, q))
}

fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(PROB_FLOOR)).ln())
        .sum()
}

fn check_probs_labels(probs: &Matrix, labels: &[usize]) -> Result<()> {
    if probs.rows() != labels.len() {
        return config_err(format!(
            "{} probability rows but {} labels",
            probs.rows(),
            labels.len()
        ));
    }
    if probs.rows() == 0 {
        return config_err("empty batch");
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= probs.cols()) {
        return config_err(format!(
            "label {bad} out of range for {} classes",
            probs.cols()
        ));
    }
    for (i, row) in probs.iter_rows().enumerate() {
        check_distribution(row, &format!("probability row {i}"))?;
    }
    Ok(())
}

/// Mean over rows of `-ln p[label]`.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_probs_labels(probs, labels)?;
    Ok(cross_entropy_unchecked(probs, labels))
}

fn cross_entropy_unchecked(probs: &Matrix, labels: &[usize]) -> f64 {
    let total: f64 = probs
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| -row[y].max(PROB_FLOOR).ln())
        .sum();
    total / labels.len() as f64
}

/// Mean over rows of `sum_j (p_j - onehot_j)^2`.
pub fn mse_onehot(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_probs_labels(probs, labels)?;
    Ok(mse_unchecked(probs, labels))
}

fn mse_unchecked(probs: &Matrix, labels: &[usize]) -> f64 {
    let total: f64 = probs
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| {
            row.iter()
                .enumerate()
                .map(|(j, &p)| {
                    let d = p - if j == y { 1.0 } else { 0.0 };
                    d * d
                })
                .sum::<f64>()
        })
        .sum();
    total / labels.len() as f64
}

/// Supervised criterion used for local training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Criterion {
    #[default]
    CrossEntropy,
    MseOneHot,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::CrossEntropy => "cross_entropy",
            Criterion::MseOneHot => "mse",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cross_entropy" | "ce" => Ok(Criterion::CrossEntropy),
            "mse" | "mse_onehot" => Ok(Criterion::MseOneHot),
            other => Err(format!("unknown loss `{other}` (expected cross_entropy or mse)")),
        }
    }
}

/// Loss whose gradient [`super::grad`] can backpropagate.
///
/// `KlFromTarget(t)` is the batch mean of `KL(t_i || softmax(f(x_i)))` with the
/// target rows held constant. `Composite` is a weighted sum of terms.
#[derive(Debug, Clone)]
pub enum LossKind<'a> {
    CrossEntropy,
    MseOneHot,
    KlFromTarget(&'a Matrix),
    Composite(Vec<(f64, LossKind<'a>)>),
}

impl From<Criterion> for LossKind<'_> {
    fn from(c: Criterion) -> Self {
        match c {
            Criterion::CrossEntropy => LossKind::CrossEntropy,
            Criterion::MseOneHot => LossKind::MseOneHot,
        }
    }
}

impl LossKind<'_> {
    pub(crate) fn validate(&self, rows: usize, classes: usize) -> Result<()> {
        match self {
            LossKind::CrossEntropy | LossKind::MseOneHot => Ok(()),
            LossKind::KlFromTarget(t) => {
                if t.rows() != rows || t.cols() != classes {
                    return config_err(format!(
                        "KL target is {}x{}, batch needs {rows}x{classes}",
                        t.rows(),
                        t.cols()
                    ));
                }
                for (i, row) in t.iter_rows().enumerate() {
                    check_distribution(row, &format!("KL target row {i}"))?;
                }
                Ok(())
            }
            LossKind::Composite(terms) => {
                for (w, term) in terms {
                    if !w.is_finite() {
                        return config_err("non-finite loss weight");
                    }
                    term.validate(rows, classes)?;
                }
                Ok(())
            }
        }
    }

    /// Mean loss over the batch. Inputs must already be validated.
    pub(crate) fn value(&self, probs: &Matrix, labels: &[usize]) -> f64 {
        match self {
            LossKind::CrossEntropy => cross_entropy_unchecked(probs, labels),
            LossKind::MseOneHot => mse_unchecked(probs, labels),
            LossKind::KlFromTarget(t) => {
                let total: f64 = t
                    .iter_rows()
                    .zip(probs.iter_rows())
                    .map(|(tr, pr)| kl_unchecked(tr, pr))
                    .sum();
                total / probs.rows() as f64
            }
            LossKind::Composite(terms) => terms
                .iter()
                .map(|(w, term)| w * term.value(probs, labels))
                .sum(),
        }
    }

    /// Adds `scale * d(per-row loss)/d(logits)` into `delta`.
    pub(crate) fn accumulate_logit_grad(
        &self,
        probs: &Matrix,
        labels: &[usize],
        scale: f64,
        delta: &mut Matrix,
    ) {
        match self {
            LossKind::CrossEntropy => {
                for (i, &y) in labels.iter().enumerate() {
                    let p = probs.row(i);
                    for (j, d) in delta.row_mut(i).iter_mut().enumerate() {
                        let onehot = if j == y { 1.0 } else { 0.0 };
                        *d += scale * (p[j] - onehot);
                    }
                }
            }
            LossKind::MseOneHot => {
                // dL/dp_j = 2 (p_j - y_j); through softmax: dz_i = p_i (g_i - sum_j g_j p_j).
                for (i, &y) in labels.iter().enumerate() {
                    let p = probs.row(i);
                    let g: Vec<f64> = p
                        .iter()
                        .enumerate()
                        .map(|(j, &pj)| 2.0 * (pj - if j == y { 1.0 } else { 0.0 }))
                        .collect();
                    let dot: f64 = g.iter().zip(p).map(|(gj, pj)| gj * pj).sum();
                    for (j, d) in delta.row_mut(i).iter_mut().enumerate() {
                        *d += scale * p[j] * (g[j] - dot);
                    }
                }
            }
            LossKind::KlFromTarget(t) => {
                for i in 0..probs.rows() {
                    let p = probs.row(i);
                    let tr = t.row(i);
                    for (j, d) in delta.row_mut(i).iter_mut().enumerate() {
                        *d += scale * (p[j] - tr[j]);
                    }
                }
            }
            LossKind::Composite(terms) => {
                for (w, term) in terms {
                    term.accumulate_logit_grad(probs, labels, scale * w, delta);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_symmetric() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_ln2() {
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!(close(p[0], 2.0 / 3.0, 1e-15) && close(p[1], 1.0 / 3.0, 1e-15));
    }

    #[test]
    fn softmax_large_logit_no_overflow() {
        // exp(-1000) underflows to 0 in f64; the exact value is ~5e-435.
        let p = softmax(&[1000.0, 0.0]);
        assert_eq!(p[0], 1.0);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
    }

    #[test]
    fn kl_identity_and_forced_value() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!(close(v, 2f64.ln(), 1e-15));
    }

    #[test]
    fn kl_length_mismatch() {
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn kl_clamps_zero_denominator() {
        let v = kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!(v.is_finite());
        assert!(close(v, 0.5 * 0.5f64.ln() + 0.5 * (0.5 / 1e-12f64).ln(), 1e-12));
    }

    #[test]
    fn kl_matches_term_by_term_oracle() {
        let mut rng = crate::rng::stream(11, &[]);
        for _ in 0..200 {
            let n = rng.random_range(2..8);
            let raw_p: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
            let raw_q: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
            let (sp, sq): (f64, f64) = (raw_p.iter().sum(), raw_q.iter().sum());
            let p: Vec<f64> = raw_p.iter().map(|v| v / sp).collect();
            let q: Vec<f64> = raw_q.iter().map(|v| v / sq).collect();
            let mut oracle = 0.0;
            for i in 0..n {
                oracle += p[i] * p[i].ln() - p[i] * q[i].ln();
            }
            assert!(close(kl_divergence(&p, &q).unwrap(), oracle, 1e-10));
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let perfect = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(cross_entropy(&perfect, &[0]).unwrap(), 0.0);
        let half = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert!(close(cross_entropy(&half, &[1]).unwrap(), 2f64.ln(), 1e-15));
        assert!(cross_entropy(&half, &[2]).is_err());
    }

    #[test]
    fn mse_cases() {
        let perfect = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(mse_onehot(&perfect, &[0]).unwrap(), 0.0);
        let half = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert!(close(mse_onehot(&half, &[0]).unwrap(), 0.5, 1e-15));
        assert!(mse_onehot(&half, &[5]).is_err());
    }

    #[test]
    fn batch_losses_match_row_oracle() {
        let mut rng = crate::rng::stream(12, &[]);
        for _ in 0..50 {
            let (n, l) = (rng.random_range(1..10), rng.random_range(2..6));
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| softmax(&(0..l).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>()))
                .collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..l)).collect();
            let probs = Matrix::from_rows(&rows).unwrap();
            let mut ce = 0.0;
            let mut mse = 0.0;
            for (row, &y) in rows.iter().zip(&labels) {
                ce -= row[y].ln();
                for (j, &p) in row.iter().enumerate() {
                    let t = if j == y { 1.0 } else { 0.0 };
                    mse += (p - t) * (p - t);
                }
            }
            assert!(close(cross_entropy(&probs, &labels).unwrap(), ce / n as f64, 1e-12));
            assert!(close(mse_onehot(&probs, &labels).unwrap(), mse / n as f64, 1e-12));
        }
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            logits in proptest::collection::vec(-50.0f64..50.0, 2..10),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&logits);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            for (a, b) in p.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn kl_nonnegative_and_zero_on_equal(
            raw_p in proptest::collection::vec(0.0f64..1.0, 2..8),
            seed in 0u64..1000,
        ) {
            let sp: f64 = raw_p.iter().sum();
            prop_assume!(sp > 1e-3);
            let p: Vec<f64> = raw_p.iter().map(|v| v / sp).collect();
            let mut rng = crate::rng::stream(seed, &[]);
            let raw_q: Vec<f64> = p.iter().map(|_| rng.random::<f64>() + 1e-6).collect();
            let sq: f64 = raw_q.iter().sum();
            let q: Vec<f64> = raw_q.iter().map(|v| v / sq).collect();
            prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-15);
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-10);
        }
    }
}
