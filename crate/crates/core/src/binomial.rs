//! Two-class specialization with the logit link and a single weight vector
//! (the zero gauge: class 0 is pinned at zero, so the scalar overlap is the
//! log-odds of class 1). The Hessian carries no shift zero mode here, and
//! the per-sample correction reduces to a scalar resolvent.
//!
//! Binary labels use `y in {0, 1}`; `y = 0` corresponds to class index 0 of
//! the general two-class model (file label 1).

use ndarray::{Array1, Axis};

use crate::acv::{AcvResult, SAMPLE_COND_LIMIT};
use crate::error::{Error, Result};
use crate::model::Dataset;

/// A two-class fit in the zero gauge: a single length-N weight vector.
/// Exact zeros define the active set.
#[derive(Debug, Clone)]
pub struct LogitFit {
    weights: Array1<f64>,
}

impl LogitFit {
    pub fn new(weights: Array1<f64>) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite weight".into()));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn active_features(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Numerically stable `(sigma(u), sigma(-u))` pair.
#[inline]
fn sigmoid_pair(u: f64) -> (f64, f64) {
    if u >= 0.0 {
        let t = (-u).exp();
        (1.0 / (1.0 + t), t / (1.0 + t))
    } else {
        let t = u.exp();
        (t / (1.0 + t), 1.0 / (1.0 + t))
    }
}

/// First and second derivatives of the per-sample loss with respect to the
/// overlap: `(delta_{y,0} - sigma(-u), sigma(u) sigma(-u))`, computed
/// overflow-safely.
pub fn logit_derivatives(u: f64, y: u8) -> (f64, f64) {
    let (s_pos, s_neg) = sigmoid_pair(u);
    // delta_{y,0} - sigma(-u); the y = 0 branch equals sigma(u), which
    // avoids the cancellation in 1 - sigma(-u).
    let first = if y == 0 { s_pos } else { -s_neg };
    (first, s_pos * s_neg)
}

/// Per-sample loss `-ln phi_logit(y | u)` via softplus.
pub fn logit_nll(u: f64, y: u8) -> f64 {
    let z = if y == 1 { -u } else { u };
    // softplus(z) = ln(1 + e^z), stable on both tails.
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn binary_labels(dataset: &Dataset) -> Result<Vec<u8>> {
    if dataset.n_classes() != 2 {
        return Err(Error::InvalidDataset(format!(
            "binomial estimator needs 2 classes, got {}",
            dataset.n_classes()
        )));
    }
    Ok(dataset.labels().iter().map(|&y| y as u8).collect())
}

/// Single-fit LOO estimate for the two-class logit model.
///
/// Builds `G = sum_mu q''_mu (x x^T)` on the active features plus
/// `lambda2 I`, projects its inverse onto each sample as the scalar
/// `c_mu`, and corrects the overlap by `c_mu / (1 - q''_mu c_mu) * q'_mu`.
/// A non-positive resolvent denominator flags the sample and falls back to
/// the additive correction.
pub fn acv_logit(dataset: &Dataset, fit: &LogitFit, lambda2: f64) -> Result<AcvResult> {
    let m = dataset.n_samples();
    if fit.weights.len() != dataset.n_features() {
        return Err(Error::DimensionMismatch(
            "logit weights do not match the dataset width".into(),
        ));
    }
    let y = binary_labels(dataset)?;
    let u = dataset.features().dot(&fit.weights);

    let active = fit.active_features();
    if active.is_empty() {
        let per_sample_nll =
            Array1::from_iter(u.iter().zip(&y).map(|(&ui, &yi)| logit_nll(ui, yi)));
        let looe = crate::model::mean_nll(&per_sample_nll);
        return Ok(AcvResult {
            looe,
            loo_overlaps: u.insert_axis(Axis(1)),
            per_sample_nll,
            zero_modes_removed: 0,
            ill_conditioned_samples: Vec::new(),
            op_count: 0,
        });
    }

    let mut d1 = Array1::<f64>::zeros(m);
    let mut d2 = Array1::<f64>::zeros(m);
    for mu in 0..m {
        let (a, b) = logit_derivatives(u[mu], y[mu]);
        d1[mu] = a;
        d2[mu] = b;
    }

    let xa = dataset.features().select(Axis(1), &active);
    let weighted = &xa * &d2.view().insert_axis(Axis(1));
    let mut g = xa.t().dot(&weighted);
    for d in 0..active.len() {
        g[[d, d]] += lambda2;
    }
    let (ginv, zero_modes_removed) = crate::acv::zero_mode_removed_inverse(&g, lambda2)?;

    // c_mu = x_A^T Ginv x_A, batched over samples.
    let z = xa.dot(&ginv);
    let mut ill = Vec::new();
    let mut loo = Array1::<f64>::zeros(m);
    for mu in 0..m {
        let c: f64 = z
            .row(mu)
            .iter()
            .zip(xa.row(mu).iter())
            .map(|(a, b)| a * b)
            .sum();
        let denom = 1.0 - d2[mu] * c;
        if denom <= 1e-12 || 1.0 / denom.abs() > SAMPLE_COND_LIMIT {
            ill.push(mu);
            loo[mu] = u[mu] + c * d1[mu];
        } else {
            loo[mu] = u[mu] + c / denom * d1[mu];
        }
    }

    let per_sample_nll =
        Array1::from_iter(loo.iter().zip(&y).map(|(&ui, &yi)| logit_nll(ui, yi)));
    let looe = crate::model::mean_nll(&per_sample_nll);
    let k = active.len() as u64;
    let op_count = k * k * k + m as u64 * (k * k + k + 1);
    Ok(AcvResult {
        looe,
        loo_overlaps: loo.insert_axis(Axis(1)),
        per_sample_nll,
        zero_modes_removed,
        ill_conditioned_samples: ill,
        op_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn derivatives_at_zero() {
        let (d1, d2) = logit_derivatives(0.0, 0);
        assert_abs_diff_eq!(d1, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d2, 0.25, epsilon = 1e-15);
        let (d1, d2) = logit_derivatives(0.0, 1);
        assert_abs_diff_eq!(d1, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d2, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn derivatives_saturate_without_overflow() {
        let (d1, d2) = logit_derivatives(1e4, 0);
        assert!(d1.is_finite() && d2.is_finite());
        assert_abs_diff_eq!(d1, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d2, 0.0, epsilon = 1e-12);
        let (d1, d2) = logit_derivatives(-1e4, 1);
        assert_abs_diff_eq!(d1, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d2, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_weights_give_ln2() {
        let x = array![[1.0, -2.0], [0.5, 0.25], [3.0, 1.0]];
        let d = Dataset::new(x, vec![0, 1, 1], 2).unwrap();
        let fit = LogitFit::new(Array1::zeros(2)).unwrap();
        let r = acv_logit(&d, &fit, 0.0).unwrap();
        assert_eq!(r.looe, 2.0f64.ln());
    }

    #[test]
    fn single_active_feature_matches_hand_expansion() {
        let x = array![[1.0, 0.3], [-2.0, 0.1], [0.5, -0.7]];
        let d = Dataset::new(x.clone(), vec![0, 1, 0], 2).unwrap();
        let w = array![0.8, 0.0];
        let fit = LogitFit::new(w.clone()).unwrap();
        let lambda2 = 0.2;
        let r = acv_logit(&d, &fit, lambda2).unwrap();

        // G is 1 x 1: sum_mu q''(u_mu) x_mu0^2 + lambda2.
        let mut g = lambda2;
        let mut u = [0.0; 3];
        for mu in 0..3 {
            u[mu] = x[[mu, 0]] * w[0];
            let (_, d2) = logit_derivatives(u[mu], d.labels()[mu] as u8);
            g += d2 * x[[mu, 0]] * x[[mu, 0]];
        }
        for mu in 0..3 {
            let (d1, d2) = logit_derivatives(u[mu], d.labels()[mu] as u8);
            let c = x[[mu, 0]] * x[[mu, 0]] / g;
            let expect = u[mu] + c / (1.0 - d2 * c) * d1;
            assert_abs_diff_eq!(r.loo_overlaps[[mu, 0]], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn hessian_positive_definite_with_ridge() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(21);
        for trial in 0..5 {
            let (m, n) = (20, 6);
            let x = ndarray::Array2::from_shape_fn((m, n), |_| rng.random::<f64>() - 0.5);
            let labels = (0..m).map(|_| rng.random_range(0..2)).collect();
            let d = Dataset::new(x.clone(), labels, 2).unwrap();
            let w = Array1::from_shape_fn(n, |_| {
                if rng.random::<f64>() < 0.7 {
                    rng.random::<f64>() - 0.5
                } else {
                    0.0
                }
            });
            let fit = LogitFit::new(w.clone()).unwrap();
            let lambda2 = 0.05;
            let active = fit.active_features();
            if active.is_empty() {
                continue;
            }
            let u = x.dot(&w);
            let xa = x.select(Axis(1), &active);
            let mut g = ndarray::Array2::<f64>::zeros((active.len(), active.len()));
            for mu in 0..m {
                let (_, d2) = logit_derivatives(u[mu], d.labels()[mu] as u8);
                for (r, _) in active.iter().enumerate() {
                    for (c, _) in active.iter().enumerate() {
                        g[[r, c]] += d2 * xa[[mu, r]] * xa[[mu, c]];
                    }
                }
            }
            for r in 0..active.len() {
                g[[r, r]] += lambda2;
            }
            let min_eig = crate::linalg::min_eigenvalue(&g).unwrap();
            assert!(min_eig > 0.0, "trial {trial}: min eig {min_eig}");
        }
    }

    #[test]
    fn rejects_multiclass_data() {
        let x = array![[1.0], [2.0], [3.0]];
        let d = Dataset::new(x, vec![0, 1, 2], 3).unwrap();
        let fit = LogitFit::new(array![1.0]).unwrap();
        assert!(acv_logit(&d, &fit, 0.0).is_err());
    }
}
