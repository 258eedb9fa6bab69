//! Self-averaging LOO estimation with cost linear in the feature
//! dimensionality and the data size.
//!
//! Instead of a per-sample projection of the inverse Hessian, a single
//! global `L x L` correction matrix is obtained from a per-feature
//! susceptibility fixed point:
//!
//! `C = sx2 * sum_i chi_i`,
//! `R = lambda2 I + sx2 * sum_mu (I + F^mu C)^{-1} F^mu`,
//! `chi_i = inverse of R restricted to the active classes of feature i`,
//!
//! with `sx2` the mean squared feature entry. At the fixed point the
//! corrected overlap of every sample is `u_mu + C b^mu`; no resolvent
//! factor is applied because `C` already approximates the leave-one-out
//! projection. Features sharing the same active-class pattern share the
//! same susceptibility block, so each distinct pattern is inverted once per
//! sweep.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::acv::{AcvResult, EPS_ZERO, LAMBDA2_DENSE_THRESHOLD};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, ActiveSet, Dataset};
use crate::solver::FitResult;

/// Convergence threshold on the mean per-feature Frobenius update.
pub const THETA_DEFAULT: f64 = 1e-6;
pub const MAX_SWEEPS_DEFAULT: usize = 1_000;

/// State of the susceptibility fixed point at return.
#[derive(Debug, Clone)]
pub struct SaState {
    /// Per-feature `L x L` susceptibility, nonzero only on the active
    /// block of that feature.
    pub chi: Vec<Array2<f64>>,
    /// Global correction matrix `sx2 * sum_i chi_i`, recomputed from the
    /// final susceptibilities.
    pub c_sa: Array2<f64>,
    /// Mean squared feature entry over all samples and features.
    pub sigma_x2: f64,
    /// Completed sweeps.
    pub iterations: usize,
    pub converged: bool,
    /// Mean per-feature Frobenius change of the last sweep.
    pub final_residual: f64,
    /// Zero modes discarded across all restricted inversions.
    pub zero_modes_removed: usize,
    /// Work-model counter: per-sweep `(M + N) L^3`.
    pub op_count: u64,
}

fn mean_squared_entry(dataset: &Dataset) -> f64 {
    let m = dataset.n_samples() as f64;
    let n = dataset.n_features() as f64;
    dataset.features().iter().map(|v| v * v).sum::<f64>() / (m * n)
}

/// Inverts `R` restricted to one active-class pattern, spectrally removing
/// zero modes when the l2 term cannot lift them. Returns the compact block
/// and the number of removed modes.
fn restricted_inverse(
    r: &Array2<f64>,
    pattern: &[usize],
    lambda2: f64,
) -> Result<(Array2<f64>, usize)> {
    let k = pattern.len();
    let mut sub = Array2::<f64>::zeros((k, k));
    for (bi, &a) in pattern.iter().enumerate() {
        for (bj, &b) in pattern.iter().enumerate() {
            sub[[bi, bj]] = r[[a, b]];
        }
    }
    if lambda2 > LAMBDA2_DENSE_THRESHOLD {
        return Ok((linalg::spd_inverse(&sub)?, 0));
    }
    let (vals, vecs) = linalg::sym_eigh(&sub)?;
    let dmax = vals.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = EPS_ZERO * dmax;
    let kept: Vec<usize> = (0..k).filter(|&j| vals[j] > cutoff && vals[j] > 0.0).collect();
    if kept.is_empty() {
        return Err(Error::DegenerateHessian);
    }
    let mut inv = Array2::<f64>::zeros((k, k));
    for &j in &kept {
        let col = vecs.column(j);
        let scale = 1.0 / vals[j];
        for a in 0..k {
            for b in 0..k {
                inv[[a, b]] += col[a] * col[b] * scale;
            }
        }
    }
    Ok((inv, k - kept.len()))
}

/// Accumulates `R = lambda2 I + sx2 * sum_mu (I + F^mu C)^{-1} F^mu`.
/// A singular per-sample solve is reported as an error so the caller can
/// raise the damping and retry the sweep.
fn accumulate_r(
    p: &Array2<f64>,
    c_sa: &Array2<f64>,
    sigma_x2: f64,
    lambda2: f64,
) -> Result<Array2<f64>> {
    let (m, l) = p.dim();
    let mut r = Array2::<f64>::eye(l) * lambda2;
    for mu in 0..m {
        let f_mu = model::hessian_f(p.row(mu));
        let mut a = Array2::<f64>::eye(l);
        a += &f_mu.dot(c_sa);
        let y = match linalg::lu_inverse(&a) {
            Ok(inv) => inv.dot(&f_mu),
            Err(_) => {
                return Err(Error::FixedPoint(format!(
                    "(I + F C) singular at sample {mu}"
                )))
            }
        };
        r.scaled_add(sigma_x2, &y);
    }
    linalg::symmetrize(&mut r);
    Ok(r)
}

/// Solves the susceptibility fixed point by recursive substitution.
///
/// `theta` bounds the mean per-feature Frobenius change, `damping` is the
/// share of the previous iterate kept at each update (0 = plain
/// substitution). If the residual grows on two consecutive sweeps the
/// damping is raised to 0.5; a singular per-sample resolvent triggers one
/// damped retry of the sweep before failing. Exceeding `max_sweeps`
/// returns the last state with `converged = false`.
pub fn saacv_fixed_point(
    dataset: &Dataset,
    fit: &FitResult,
    theta: f64,
    max_sweeps: usize,
    damping: f64,
) -> Result<SaState> {
    if !(0.0..1.0).contains(&damping) {
        return Err(Error::InvalidArgument(format!(
            "damping must lie in [0, 1), got {damping}"
        )));
    }
    let m = dataset.n_samples();
    let n = dataset.n_features();
    let l = dataset.n_classes();
    let lambda2 = fit.hyper.lambda2(m);
    let sigma_x2 = mean_squared_entry(dataset);
    let active = ActiveSet::from_weights(&fit.weights);

    // Features sharing an active-class pattern share a susceptibility
    // block; count each distinct nonempty pattern once.
    let mut pattern_count: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for classes in active.per_feature() {
        if !classes.is_empty() {
            *pattern_count.entry(classes.clone()).or_insert(0) += 1;
        }
    }

    let expand = |blocks: &BTreeMap<Vec<usize>, Array2<f64>>| -> Vec<Array2<f64>> {
        active
            .per_feature()
            .iter()
            .map(|classes| {
                let mut full = Array2::<f64>::zeros((l, l));
                if let Some(block) = blocks.get(classes) {
                    for (bi, &a) in classes.iter().enumerate() {
                        for (bj, &b) in classes.iter().enumerate() {
                            full[[a, b]] = block[[bi, bj]];
                        }
                    }
                }
                full
            })
            .collect()
    };

    if pattern_count.is_empty() {
        return Ok(SaState {
            chi: vec![Array2::zeros((l, l)); n],
            c_sa: Array2::zeros((l, l)),
            sigma_x2,
            iterations: 0,
            converged: true,
            final_residual: 0.0,
            zero_modes_removed: 0,
            op_count: 0,
        });
    }

    let p = model::softmax_probs(&model::overlaps(dataset, &fit.weights)?);

    // chi^(0) = sx2^{-1} * I on each active block.
    let mut blocks: BTreeMap<Vec<usize>, Array2<f64>> = pattern_count
        .keys()
        .map(|pat| (pat.clone(), Array2::eye(pat.len()) / sigma_x2))
        .collect();

    let mut gamma = damping;
    let mut damping_raised = false;
    let mut residual_growth = 0usize;
    let mut prev_residual = f64::INFINITY;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    let mut sweeps = 0usize;
    let mut zero_modes_removed = 0usize;

    while sweeps < max_sweeps {
        let mut c_sa = Array2::<f64>::zeros((l, l));
        for (pat, block) in &blocks {
            let count = pattern_count[pat] as f64;
            for (bi, &a) in pat.iter().enumerate() {
                for (bj, &b) in pat.iter().enumerate() {
                    c_sa[[a, b]] += count * block[[bi, bj]];
                }
            }
        }
        c_sa *= sigma_x2;
        linalg::symmetrize(&mut c_sa);

        let r = match accumulate_r(&p, &c_sa, sigma_x2, lambda2) {
            Ok(r) => r,
            Err(e) => {
                if damping_raised {
                    return Err(e);
                }
                damping_raised = true;
                gamma = gamma.max(0.5);
                continue; // retry the sweep from the previous iterate
            }
        };

        let mut delta = 0.0f64;
        let mut next: BTreeMap<Vec<usize>, Array2<f64>> = BTreeMap::new();
        for (pat, old) in &blocks {
            let (fresh, removed) = restricted_inverse(&r, pat, lambda2)?;
            zero_modes_removed += removed;
            let updated = if gamma > 0.0 {
                &fresh * (1.0 - gamma) + old * gamma
            } else {
                fresh
            };
            delta += pattern_count[pat] as f64 * linalg::frobenius_diff(&updated, old);
            next.insert(pat.clone(), updated);
        }
        blocks = next;
        residual = delta / n as f64;
        sweeps += 1;

        if residual < theta {
            converged = true;
            break;
        }
        if residual > prev_residual {
            residual_growth += 1;
            if residual_growth >= 2 {
                gamma = gamma.max(0.5);
            }
        } else {
            residual_growth = 0;
        }
        prev_residual = residual;
    }

    let chi = expand(&blocks);
    let mut c_sa = Array2::<f64>::zeros((l, l));
    for block in &chi {
        c_sa += block;
    }
    c_sa *= sigma_x2;
    linalg::symmetrize(&mut c_sa);

    let op_count = sweeps as u64 * ((m as u64 + n as u64) * (l as u64).pow(3));
    Ok(SaState {
        chi,
        c_sa,
        sigma_x2,
        iterations: sweeps,
        converged,
        final_residual: residual,
        zero_modes_removed,
        op_count,
    })
}

/// LOO error estimate with the self-averaging correction: every sample gets
/// `u_looered = u + C b` with the same `C`. Fixed-point non-convergence is
/// carried in the returned state; the estimate is still best-effort.
pub fn saacv(
    dataset: &Dataset,
    fit: &FitResult,
    theta: f64,
    max_sweeps: usize,
    damping: f64,
) -> Result<(AcvResult, SaState)> {
    let state = saacv_fixed_point(dataset, fit, theta, max_sweeps, damping)?;
    let blocks = model::SampleBlocks::compute(dataset, &fit.weights)?;
    let corr = blocks.b.dot(&state.c_sa.t());
    let loo_overlaps = &blocks.u + &corr;
    let per_sample_nll = model::nll_from_overlaps(&loo_overlaps, dataset.labels());
    let looe = model::mean_nll(&per_sample_nll);
    let m = dataset.n_samples() as u64;
    let l = dataset.n_classes() as u64;
    let result = AcvResult {
        looe,
        per_sample_nll,
        loo_overlaps,
        zero_modes_removed: state.zero_modes_removed,
        ill_conditioned_samples: Vec::new(),
        op_count: state.op_count + m * l * l,
    };
    Ok((result, state))
}
