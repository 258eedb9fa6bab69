//! Leave-one-out error estimation from a single fit.
//!
//! The estimator perturbs the full-fit overlaps instead of refitting: with
//! `G` the active-set-restricted cost Hessian, each sample's LOO overlap is
//!
//! `u_loo_mu = u_mu + C_mu (I - F^mu C_mu)^{-1} b^mu`,
//!
//! where `C_mu` projects the (zero-mode-removed) inverse Hessian onto the
//! sample, and `b^mu`, `F^mu` are the per-sample gradient and Hessian
//! blocks. The mean negative log-likelihood at the corrected overlaps
//! estimates the LOO error. The softmax shift symmetry can leave zero modes
//! in `G` when no l2 term is present; those are removed spectrally before
//! inversion.

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, ActiveSet, Dataset, WeightMatrix};
use crate::solver::FitResult;

/// Relative eigenvalue cutoff defining a zero mode.
pub const EPS_ZERO: f64 = 1e-10;

/// l2 coefficients above this threshold guarantee a safely invertible
/// Hessian, so the spectral route is skipped.
pub const LAMBDA2_DENSE_THRESHOLD: f64 = 1e-6;

/// Condition-number limit for the per-sample `(I - F C)` solve; beyond it
/// the sample falls back to the additive correction and is flagged.
pub const SAMPLE_COND_LIMIT: f64 = 1e12;

/// Output of the single-fit estimators.
#[derive(Debug, Clone)]
pub struct AcvResult {
    /// Estimated LOO error: mean of `per_sample_nll`.
    pub looe: f64,
    pub per_sample_nll: Array1<f64>,
    /// Corrected overlaps, one row per sample.
    pub loo_overlaps: Array2<f64>,
    pub zero_modes_removed: usize,
    /// Samples whose resolvent solve was abandoned for conditioning
    /// reasons (additive fallback applied).
    pub ill_conditioned_samples: Vec<usize>,
    /// Deterministic work-model counter used for cost-scaling checks:
    /// one cube of the restricted Hessian size for the factorization plus
    /// the per-sample terms.
    pub op_count: u64,
}

/// Active set of a weight matrix: pairs `(a, i)` with `w_{a i} != 0`.
pub fn active_set(w: &WeightMatrix) -> ActiveSet {
    ActiveSet::from_weights(w)
}

/// Inverts a symmetric matrix, removing zero modes when the l2 term is too
/// small to lift them.
///
/// With `lambda2 >` [`LAMBDA2_DENSE_THRESHOLD`] the matrix is positive
/// definite by construction and a Cholesky inverse is returned with no
/// modes removed. Otherwise the matrix is eigendecomposed and modes with
/// eigenvalue `<= EPS_ZERO * max(eigenvalue, 0)` (and all non-positive
/// modes) are discarded from the pseudo-inverse. Discarding every mode is
/// an error: the Hessian carries no usable curvature and the caller must
/// mark the point as failed.
pub fn zero_mode_removed_inverse(g: &Array2<f64>, lambda2: f64) -> Result<(Array2<f64>, usize)> {
    let k = g.nrows();
    if k == 0 {
        return Err(Error::DegenerateHessian);
    }
    if lambda2 > LAMBDA2_DENSE_THRESHOLD {
        return Ok((linalg::spd_inverse(g)?, 0));
    }
    let (vals, vecs) = linalg::sym_eigh(g)?;
    let dmax = vals.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = EPS_ZERO * dmax;
    let kept: Vec<usize> = (0..k).filter(|&j| vals[j] > cutoff && vals[j] > 0.0).collect();
    if kept.is_empty() {
        return Err(Error::DegenerateHessian);
    }
    let removed = k - kept.len();
    let mut inv = Array2::<f64>::zeros((k, k));
    for &j in &kept {
        let v = vecs.column(j);
        let scale = 1.0 / vals[j];
        for r in 0..k {
            let vr = v[r] * scale;
            if vr == 0.0 {
                continue;
            }
            for c in 0..k {
                inv[[r, c]] += vr * v[c];
            }
        }
    }
    linalg::symmetrize(&mut inv);
    Ok((inv, removed))
}

/// Per-sample projection of the inverse Hessian:
/// `C_mu[a, b] = sum_{i in A_a} sum_{j in A_b} x_{mu i} ginv[(a,i),(b,j)] x_{mu j}`.
///
/// Rows and columns of classes with no active feature are zero.
pub fn cmu(x_row: ArrayView1<'_, f64>, ginv: &Array2<f64>, active: &ActiveSet) -> Array2<f64> {
    let l = active.n_classes();
    let mut c = Array2::<f64>::zeros((l, l));
    let pairs = active.pairs();
    for (r, &(a, i)) in pairs.iter().enumerate() {
        let xi = x_row[i];
        if xi == 0.0 {
            continue;
        }
        for (s, &(b, j)) in pairs.iter().enumerate() {
            c[[a, b]] += xi * ginv[[r, s]] * x_row[j];
        }
    }
    c
}

/// Batched `C_mu` for every sample, organized as an `M x L x L` array.
///
/// Works per class pair through dense matrix products over the active
/// columns so the repetition matrix is never materialized.
fn cmu_all(dataset: &Dataset, ginv: &Array2<f64>, active: &ActiveSet) -> Array3<f64> {
    let m = dataset.n_samples();
    let l = dataset.n_classes();
    let x = dataset.features();
    let by_class = active.by_class();
    let selected: Vec<Option<Array2<f64>>> = by_class
        .iter()
        .map(|(feats, _)| {
            if feats.is_empty() {
                None
            } else {
                Some(x.select(Axis(1), feats))
            }
        })
        .collect();

    let mut c = Array3::<f64>::zeros((m, l, l));
    for b in 0..l {
        let Some(xb) = selected[b].as_ref() else {
            continue;
        };
        let rows_b = &by_class[b].1;
        // z[mu, k] = sum_{j active in b} x_{mu j} ginv[(b, j), k]
        let ginv_b = ginv.select(Axis(0), rows_b);
        let z = xb.dot(&ginv_b); // M x |A|
        for a in 0..l {
            let Some(xa) = selected[a].as_ref() else {
                continue;
            };
            let cols_a = &by_class[a].1;
            let za = z.select(Axis(1), cols_a); // M x |A_a|
            for mu in 0..m {
                let mut acc = 0.0f64;
                let xr = xa.row(mu);
                let zr = za.row(mu);
                for t in 0..xr.len() {
                    acc += xr[t] * zr[t];
                }
                c[[mu, a, b]] = acc;
            }
        }
    }
    // The projection is symmetric in exact arithmetic.
    for mu in 0..m {
        for a in 0..l {
            for b in (a + 1)..l {
                let v = 0.5 * (c[[mu, a, b]] + c[[mu, b, a]]);
                c[[mu, a, b]] = v;
                c[[mu, b, a]] = v;
            }
        }
    }
    c
}

/// Applies the rank-L resolvent correction to one sample's overlap row:
/// solves `(I - F C) y = b` and returns `u + C y`, falling back to the
/// additive correction `u + C b` (with an ill-conditioning flag) when the
/// solve is unreliable.
pub fn loo_overlap_correction(
    u_row: ArrayView1<'_, f64>,
    b_row: ArrayView1<'_, f64>,
    f_mat: &Array2<f64>,
    c_mat: &Array2<f64>,
) -> (Array1<f64>, bool) {
    let l = u_row.len();
    let fc = f_mat.dot(c_mat);
    let mut a = Array2::<f64>::eye(l);
    a -= &fc;
    let (solution, cond) = linalg::solve_with_condition(a.view(), b_row);
    let (y, ill) = match solution {
        Some(y) if cond <= SAMPLE_COND_LIMIT => (y, false),
        _ => (b_row.to_owned(), true),
    };
    let corr = c_mat.dot(&y);
    (&u_row + &corr, ill)
}

/// Estimates the LOO error of a fit on its dataset from the fit alone.
///
/// An empty active set short-circuits: the weights are identically zero, so
/// every LOO overlap row is zero and the estimate is exactly `ln L`. A
/// degenerate Hessian (all modes removed) propagates as an error so the
/// caller can fail that lambda point.
pub fn acv(dataset: &Dataset, fit: &FitResult) -> Result<AcvResult> {
    let m = dataset.n_samples();
    let l = dataset.n_classes();
    let active = active_set(&fit.weights);

    let blocks = model::SampleBlocks::compute(dataset, &fit.weights)?;
    if active.is_empty() {
        let per_sample_nll = model::nll_from_overlaps(&blocks.u, dataset.labels());
        return Ok(AcvResult {
            looe: model::mean_nll(&per_sample_nll),
            per_sample_nll,
            loo_overlaps: blocks.u,
            zero_modes_removed: 0,
            ill_conditioned_samples: Vec::new(),
            op_count: 0,
        });
    }

    let lambda2 = fit.hyper.lambda2(m);
    let g = model::assemble_hessian(dataset, &blocks.p, &active, lambda2);
    let (ginv, zero_modes_removed) = zero_mode_removed_inverse(&g, lambda2)?;
    let c_all = cmu_all(dataset, &ginv, &active);

    let mut loo_overlaps = Array2::<f64>::zeros((m, l));
    let mut ill = Vec::new();
    for mu in 0..m {
        let f_mu = model::hessian_f(blocks.p.row(mu));
        let c_mu = c_all.index_axis(Axis(0), mu).to_owned();
        let (row, flagged) =
            loo_overlap_correction(blocks.u.row(mu), blocks.b.row(mu), &f_mu, &c_mu);
        if flagged {
            ill.push(mu);
        }
        loo_overlaps.row_mut(mu).assign(&row);
    }

    let per_sample_nll = model::nll_from_overlaps(&loo_overlaps, dataset.labels());
    let looe = model::mean_nll(&per_sample_nll);
    let op_count = acv_op_count(m, l, active.size());
    Ok(AcvResult {
        looe,
        per_sample_nll,
        loo_overlaps,
        zero_modes_removed,
        ill_conditioned_samples: ill,
        op_count,
    })
}

/// Work model for one estimator run: a cubic factorization of the
/// restricted Hessian plus per-sample terms.
pub fn acv_op_count(m: usize, l: usize, active_size: usize) -> u64 {
    let (m, l, k) = (m as u64, l as u64, active_size as u64);
    k * k * k + m * (l * k * k + l * l * k + l * l * l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{fit, FitOptions, HyperParams};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn zmr_identity_is_identity() {
        let g = Array2::<f64>::eye(3);
        let (inv, removed) = zero_mode_removed_inverse(&g, 0.0).unwrap();
        assert_eq!(removed, 0);
        for i in 0..3 {
            assert_abs_diff_eq!(inv[[i, i]], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zmr_drops_null_direction() {
        let g = array![[2.0, 0.0], [0.0, 0.0]];
        let (inv, removed) = zero_mode_removed_inverse(&g, 0.0).unwrap();
        assert_eq!(removed, 1);
        assert_abs_diff_eq!(inv[[0, 0]], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(inv[[1, 1]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zmr_all_zero_matrix_errors() {
        let g = Array2::<f64>::zeros((2, 2));
        assert!(matches!(
            zero_mode_removed_inverse(&g, 0.0),
            Err(Error::DegenerateHessian)
        ));
    }

    #[test]
    fn zmr_large_lambda2_uses_plain_inverse() {
        let g = array![[3.0, 1.0], [1.0, 2.0]];
        let (inv, removed) = zero_mode_removed_inverse(&g, 1.0).unwrap();
        assert_eq!(removed, 0);
        let prod = g.dot(&inv);
        assert_abs_diff_eq!(prod[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(prod[[1, 0]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cmu_empty_active_set_is_zero() {
        let w = WeightMatrix::zeros(3, 4);
        let active = active_set(&w);
        let ginv = Array2::<f64>::zeros((0, 0));
        let c = cmu(array![1.0, 2.0, 3.0, 4.0].view(), &ginv, &active);
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cmu_single_pair_scalar() {
        let mut wm = Array2::zeros((3, 4));
        wm[[1, 2]] = 0.7;
        let w = WeightMatrix::new(wm).unwrap();
        let active = active_set(&w);
        let ginv = array![[0.25]];
        let x = array![1.0, 2.0, 3.0, 4.0];
        let c = cmu(x.view(), &ginv, &active);
        assert_abs_diff_eq!(c[[1, 1]], 9.0 * 0.25, epsilon = 1e-14);
        assert_eq!(c[[0, 0]], 0.0);
        assert_eq!(c[[2, 2]], 0.0);
    }

    #[test]
    fn correction_vanishes_without_coupling() {
        let u = array![0.3, -0.2];
        let b = array![0.4, -0.4];
        let f = Array2::<f64>::eye(2) * 0.1;
        let c0 = Array2::<f64>::zeros((2, 2));
        let (row, ill) = loo_overlap_correction(u.view(), b.view(), &f, &c0);
        assert!(!ill);
        assert_abs_diff_eq!(row[0], 0.3, epsilon = 1e-15);

        let b0 = array![0.0, 0.0];
        let c = Array2::<f64>::eye(2);
        let (row, ill) = loo_overlap_correction(u.view(), b0.view(), &f, &c);
        assert!(!ill);
        assert_abs_diff_eq!(row[1], -0.2, epsilon = 1e-15);
    }

    #[test]
    fn acv_zero_fit_gives_exact_ln_l() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let feats = Array2::from_shape_fn((20, 5), |_| rng.random::<f64>() - 0.5);
        let labels = (0..20).map(|_| rng.random_range(0..4)).collect();
        let d = Dataset::new(feats, labels, 4).unwrap();
        let lmax = crate::solver::lambda_max(&d, 1.0).unwrap();
        let f = fit(
            &d,
            HyperParams::new(lmax * 2.0, 1.0).unwrap(),
            &FitOptions::default(),
            None,
        )
        .unwrap();
        assert_eq!(f.active_set_size(), 0);
        let r = acv(&d, &f).unwrap();
        assert_eq!(r.looe, 4.0f64.ln());
        assert_eq!(r.zero_modes_removed, 0);
    }

    #[test]
    fn acv_batched_cmu_matches_single_sample() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let feats = Array2::from_shape_fn((25, 6), |_| rng.random::<f64>() - 0.5);
        let labels = (0..25).map(|_| rng.random_range(0..3)).collect();
        let d = Dataset::new(feats, labels, 3).unwrap();
        let f = fit(
            &d,
            HyperParams::new(0.05, 0.5).unwrap(),
            &FitOptions::default(),
            None,
        )
        .unwrap();
        let active = active_set(&f.weights);
        assert!(!active.is_empty());
        let blocks = model::SampleBlocks::compute(&d, &f.weights).unwrap();
        let g = model::assemble_hessian(&d, &blocks.p, &active, f.hyper.lambda2(25));
        let (ginv, _) = zero_mode_removed_inverse(&g, f.hyper.lambda2(25)).unwrap();
        let all = cmu_all(&d, &ginv, &active);
        for mu in [0usize, 7, 24] {
            let single = cmu(d.sample(mu), &ginv, &active);
            let batch = all.index_axis(Axis(0), mu);
            for a in 0..3 {
                for b in 0..3 {
                    assert_abs_diff_eq!(single[[a, b]], batch[[a, b]], epsilon = 1e-10);
                }
            }
        }
    }
}
