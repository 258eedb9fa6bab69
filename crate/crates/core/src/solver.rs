//! Elastic-net-regularized multinomial logistic regression fitter.
//!
//! The objective follows the per-sample parameterization
//!
//! `(1/M) sum_mu q_mu(W) + lt * (eta * |W|_1 + (1 - eta)/2 * |W|_2^2)`
//!
//! with `lt = lambda_tilde`. Equivalently, the unnormalized cost is
//! `sum_mu q_mu + lambda1 |W|_1 + (lambda2/2) |W|_2^2` with
//! `lambda1 = M * lt * eta` and `lambda2 = M * lt * (1 - eta)`.
//!
//! The algorithm is an outer proximal-Newton loop (local quadratic model of
//! the smooth loss built from the per-sample L x L Hessian blocks) with an
//! inner cyclic coordinate descent using soft thresholding, guarded by a
//! backtracking line search; a plain proximal-gradient step serves as a
//! fallback whenever the quadratic model fails to produce descent.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{self, Dataset, WeightMatrix};

/// Regularization strength in the per-sample parameterization.
///
/// `lambda_tilde > 0` and `eta` in `[0, 1]`; `eta = 1` is the pure l1
/// penalty, `eta = 0` pure ridge. The unnormalized coefficients are
/// `lambda1 = M * lambda_tilde * eta` and
/// `lambda2 = M * lambda_tilde * (1 - eta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    lambda_tilde: f64,
    eta: f64,
}

impl HyperParams {
    pub fn new(lambda_tilde: f64, eta: f64) -> Result<Self> {
        if !(lambda_tilde.is_finite() && lambda_tilde > 0.0) {
            return Err(Error::InvalidHyperParams(format!(
                "lambda_tilde must be positive and finite, got {lambda_tilde}"
            )));
        }
        if !(0.0..=1.0).contains(&eta) || !eta.is_finite() {
            return Err(Error::InvalidHyperParams(format!(
                "eta must lie in [0, 1], got {eta}"
            )));
        }
        Ok(Self { lambda_tilde, eta })
    }

    pub fn lambda_tilde(&self) -> f64 {
        self.lambda_tilde
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Per-sample l1 coefficient `lambda_tilde * eta`.
    pub fn l1_per_sample(&self) -> f64 {
        self.lambda_tilde * self.eta
    }

    /// Per-sample l2 coefficient `lambda_tilde * (1 - eta)`.
    pub fn l2_per_sample(&self) -> f64 {
        self.lambda_tilde * (1.0 - self.eta)
    }

    /// Unnormalized l1 coefficient `lambda1 = M * lambda_tilde * eta`.
    pub fn lambda1(&self, n_samples: usize) -> f64 {
        n_samples as f64 * self.l1_per_sample()
    }

    /// Unnormalized l2 coefficient `lambda2 = M * lambda_tilde * (1 - eta)`.
    pub fn lambda2(&self, n_samples: usize) -> f64 {
        n_samples as f64 * self.l2_per_sample()
    }
}

/// Solver controls. `tol_delta` bounds the inner coordinate updates (max
/// weight change per sweep); `tol_kkt` is the stationarity residual that
/// defines convergence; `max_sweeps` caps the total coordinate-descent
/// sweeps across the whole fit.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub tol_delta: f64,
    pub tol_kkt: f64,
    pub max_sweeps: usize,
    pub max_newton: usize,
    /// Fix this class's weight row at zero (zero gauge). Off by default:
    /// common implementations fit all `L` rows and the estimators handle
    /// the resulting Hessian zero modes spectrally.
    pub pin_class: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol_delta: 1e-8,
            tol_kkt: 1e-6,
            max_sweeps: 100_000,
            max_newton: 1_000,
            pin_class: None,
        }
    }
}

/// Converged weights plus diagnostics for one `(lambda_tilde, eta)` point.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub weights: WeightMatrix,
    pub hyper: HyperParams,
    /// Final value of the per-sample-scaled objective.
    pub objective: f64,
    pub converged: bool,
    /// Total coordinate-descent sweeps (fallback steps count as one each).
    pub iterations: usize,
    /// Max stationarity residual at the returned weights, reported whether
    /// or not the fit converged.
    pub kkt_violation: f64,
    /// Objective value at the start of each outer iteration.
    pub objective_trace: Vec<f64>,
}

impl FitResult {
    pub fn active_set_size(&self) -> usize {
        self.weights.nonzero_count()
    }
}

/// Soft-threshold operator; ties at the threshold resolve to exactly zero.
#[inline]
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Value of the per-sample-scaled objective at the given weights.
pub fn objective_value(dataset: &Dataset, w: &WeightMatrix, hyper: &HyperParams) -> Result<f64> {
    let u = model::overlaps(dataset, w)?;
    let q = model::nll_from_overlaps(&u, dataset.labels());
    Ok(model::mean_nll(&q) + penalty_value(w.as_array(), hyper))
}

fn penalty_value(w: &Array2<f64>, hyper: &HyperParams) -> f64 {
    let l1 = hyper.l1_per_sample();
    let l2 = hyper.l2_per_sample();
    let abs: f64 = w.iter().map(|v| v.abs()).sum();
    let sq: f64 = w.iter().map(|v| v * v).sum();
    l1 * abs + 0.5 * l2 * sq
}

/// Smallest `lambda_tilde` that keeps every weight at zero, computed from
/// the smooth gradient at `W = 0`. For grid construction `eta` is floored
/// at `1e-3` so a pure-ridge sweep still gets a finite anchor.
pub fn lambda_max(dataset: &Dataset, eta: f64) -> Result<f64> {
    let m = dataset.n_samples();
    let l = dataset.n_classes();
    let uniform = 1.0 / l as f64;
    let mut b0 = Array2::from_elem((m, l), uniform);
    for (mu, &y) in dataset.labels().iter().enumerate() {
        b0[[mu, y]] -= 1.0;
    }
    let g0 = b0.t().dot(dataset.features()) / m as f64;
    let gmax = g0.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if gmax == 0.0 {
        return Err(Error::InvalidDataset(
            "zero gradient at the origin; cannot anchor a lambda grid".into(),
        ));
    }
    Ok(gmax / eta.max(1e-3))
}

struct SmoothState {
    u: Array2<f64>,
    p: Array2<f64>,
    grad: Array2<f64>,
    objective: f64,
    kkt: f64,
}

fn evaluate_state(
    dataset: &Dataset,
    w: &Array2<f64>,
    hyper: &HyperParams,
    pin: Option<usize>,
) -> SmoothState {
    let m = dataset.n_samples();
    let u = dataset.features().dot(&w.t());
    let p = model::softmax_probs(&u);
    let b = model::grad_b(&p, dataset.labels());
    let grad = b.t().dot(dataset.features()) / m as f64;
    let q = model::nll_from_overlaps(&u, dataset.labels());
    let objective = model::mean_nll(&q) + penalty_value(w, hyper);

    let l1 = hyper.l1_per_sample();
    let l2 = hyper.l2_per_sample();
    let mut kkt = 0.0f64;
    for ((a, i), &g) in grad.indexed_iter() {
        if pin == Some(a) {
            continue;
        }
        let wv = w[[a, i]];
        let r = if wv != 0.0 {
            (g + l2 * wv + l1 * wv.signum()).abs()
        } else {
            (g.abs() - l1).max(0.0)
        };
        kkt = kkt.max(r);
    }
    SmoothState {
        u,
        p,
        grad,
        objective,
        kkt,
    }
}

/// Fits the elastic-net MLR objective. Non-convergence within the sweep
/// budget is reported through `FitResult::converged`, not as an error.
pub fn fit(
    dataset: &Dataset,
    hyper: HyperParams,
    opts: &FitOptions,
    warm_start: Option<&WeightMatrix>,
) -> Result<FitResult> {
    let m = dataset.n_samples();
    let n = dataset.n_features();
    let l = dataset.n_classes();
    if let Some(c) = opts.pin_class {
        if c >= l {
            return Err(Error::InvalidArgument(format!(
                "pinned class {c} out of range for {l} classes"
            )));
        }
    }

    let mut w: Array2<f64> = match warm_start {
        Some(ws) => {
            if ws.n_classes() != l || ws.n_features() != n {
                return Err(Error::DimensionMismatch(
                    "warm start shape does not match the dataset".into(),
                ));
            }
            ws.as_array().clone()
        }
        None => Array2::zeros((l, n)),
    };
    if let Some(c) = opts.pin_class {
        w.row_mut(c).fill(0.0);
    }

    // Feature-major copies keep the per-coordinate inner loops contiguous.
    let xt: Vec<Vec<f64>> = (0..n).map(|i| dataset.features().column(i).to_vec()).collect();
    let x_sq = dataset.features().mapv(|v| v * v);
    let inv_m = 1.0 / m as f64;
    let l1 = hyper.l1_per_sample();
    let l2 = hyper.l2_per_sample();

    let mut sweeps = 0usize;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut stalls = 0usize;

    for _newton in 0..opts.max_newton {
        let state = evaluate_state(dataset, &w, &hyper, opts.pin_class);
        trace.push(state.objective);
        if state.kkt <= opts.tol_kkt {
            converged = true;
            break;
        }
        if sweeps >= opts.max_sweeps {
            break;
        }

        // Quadratic model pieces held fixed for this outer iteration.
        let pt: Vec<Vec<f64>> = (0..l).map(|a| state.p.column(a).to_vec()).collect();
        let paux = state.p.mapv(|v| v * (1.0 - v)); // M x L
        let h = paux.t().dot(&x_sq) * inv_m; // L x N curvature diagonal
        let mut trial = w.clone();
        let mut dut: Vec<Vec<f64>> = vec![vec![0.0; m]; l]; // X * (trial - w), class-major
        let mut s = vec![0.0f64; m]; // s_mu = sum_b p_mu_b * du_mu_b

        let inner_tol = opts.tol_delta.max((1e-3 * state.kkt).min(1e-5));

        // One cyclic pass over the given coordinate list; returns the max
        // absolute coordinate change. The inner loops run on plain slices.
        let cd_sweep = |coords: &[(usize, usize)],
                        trial: &mut Array2<f64>,
                        dut: &mut Vec<Vec<f64>>,
                        s: &mut Vec<f64>|
         -> f64 {
            let mut max_delta = 0.0f64;
            for &(a, i) in coords {
                let hq = h[[a, i]];
                let denom = hq + l2;
                if denom <= 1e-12 {
                    continue;
                }
                let xrow = xt[i].as_slice();
                let prow = pt[a].as_slice();
                let mut acc = 0.0f64;
                {
                    let durow = dut[a].as_slice();
                    for (((&x, &p), &du), &sv) in
                        xrow.iter().zip(prow).zip(durow).zip(s.iter())
                    {
                        acc += x * p * (du - sv);
                    }
                }
                let grad_model = state.grad[[a, i]] + acc * inv_m;
                let v = trial[[a, i]];
                let target = soft_threshold(hq * v - grad_model, l1) / denom;
                let delta = target - v;
                if delta != 0.0 {
                    trial[[a, i]] = target;
                    let durow = dut[a].as_mut_slice();
                    for ((&x, &p), (du, sv)) in xrow
                        .iter()
                        .zip(prow)
                        .zip(durow.iter_mut().zip(s.iter_mut()))
                    {
                        let dx = delta * x;
                        *du += dx;
                        *sv += dx * p;
                    }
                    max_delta = max_delta.max(delta.abs());
                }
            }
            max_delta
        };

        let all_coords: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..l).map(move |a| (a, i)))
            .filter(|&(a, _)| opts.pin_class != Some(a))
            .collect();
        let mut working: Vec<(usize, usize)> = all_coords
            .iter()
            .copied()
            .filter(|&(a, i)| w[[a, i]] != 0.0)
            .collect();

        // Active-set inner loop: polish the working set, then one full pass
        // to admit violators; repeat until the full pass is quiet. The
        // subproblem is solved inexactly on purpose: relinearizing is
        // cheaper than polishing an ill-conditioned quadratic model, and
        // the outer stationarity check still gates convergence.
        'inner: for _round in 0..8 {
            for _ in 0..12 {
                if sweeps >= opts.max_sweeps {
                    break 'inner;
                }
                let d = cd_sweep(&working, &mut trial, &mut dut, &mut s);
                sweeps += 1;
                if d < inner_tol {
                    break;
                }
            }
            if sweeps >= opts.max_sweeps {
                break 'inner;
            }
            let d_full = cd_sweep(&all_coords, &mut trial, &mut dut, &mut s);
            sweeps += 1;
            if d_full < inner_tol {
                break 'inner;
            }
            working = all_coords
                .iter()
                .copied()
                .filter(|&(a, i)| trial[[a, i]] != 0.0)
                .collect();
        }

        // Proximal-Newton decrease measure for the Armijo test.
        let mut descent = 0.0f64;
        for ((a, i), &tv) in trial.indexed_iter() {
            let wv = w[[a, i]];
            let d = tv - wv;
            if d != 0.0 || tv != 0.0 || wv != 0.0 {
                descent += state.grad[[a, i]] * d;
                descent += l1 * (tv.abs() - wv.abs());
                descent += 0.5 * l2 * (tv * tv - wv * wv);
            }
        }

        let mut stepped = false;
        if descent < -1e-15 {
            let labels = dataset.labels();
            let mut t = 1.0f64;
            for _ in 0..40 {
                let mut smooth = 0.0f64;
                for mu in 0..m {
                    let mut maxv = f64::NEG_INFINITY;
                    for a in 0..l {
                        let v = state.u[[mu, a]] + t * dut[a][mu];
                        if v > maxv {
                            maxv = v;
                        }
                    }
                    let mut sum = 0.0f64;
                    for a in 0..l {
                        sum += (state.u[[mu, a]] + t * dut[a][mu] - maxv).exp();
                    }
                    let uy = state.u[[mu, labels[mu]]] + t * dut[labels[mu]][mu];
                    smooth += sum.ln() + maxv - uy;
                }
                smooth *= inv_m;
                let cand = if t == 1.0 {
                    trial.clone()
                } else {
                    &w + &((&trial - &w) * t)
                };
                let obj_t = smooth + penalty_value(&cand, &hyper);
                if obj_t <= state.objective + 1e-4 * t * descent {
                    let step_size = cand
                        .iter()
                        .zip(w.iter())
                        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
                    w = cand;
                    stepped = true;
                    if step_size < opts.tol_delta {
                        stalls += 1;
                    } else {
                        stalls = 0;
                    }
                    break;
                }
                t *= 0.5;
            }
        }

        if !stepped {
            // Quadratic model gave no usable descent: proximal-gradient
            // step with backtracking on the smooth-part majorization.
            let mut t = 1.0f64;
            let mut applied = false;
            for _ in 0..60 {
                let mut cand = Array2::zeros((l, n));
                for ((a, i), &wv) in w.indexed_iter() {
                    if opts.pin_class == Some(a) {
                        continue;
                    }
                    let gr = state.grad[[a, i]] + l2 * wv;
                    cand[[a, i]] = soft_threshold(wv - t * gr, t * l1);
                }
                let cand_w = WeightMatrix::new(cand.clone())?;
                let obj_t = objective_value(dataset, &cand_w, &hyper)?;
                let mut quad = 0.0f64;
                let mut lin = 0.0f64;
                let mut l1_diff = 0.0f64;
                for ((a, i), &cv) in cand.indexed_iter() {
                    let wv = w[[a, i]];
                    let d = cv - wv;
                    lin += (state.grad[[a, i]] + l2 * wv) * d;
                    quad += d * d;
                    l1_diff += l1 * (cv.abs() - wv.abs());
                }
                // Upper bound on the smooth+ridge part at cand must hold.
                let bound = state.objective + lin + quad / (2.0 * t) + l1_diff
                    - 0.5 * l2 * quad; // ridge curvature is already exact
                if obj_t <= bound + 1e-12 {
                    let step_size = cand
                        .iter()
                        .zip(w.iter())
                        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
                    w = cand;
                    sweeps += 1;
                    applied = true;
                    if step_size < 1e-2 * opts.tol_delta {
                        stalls += 2; // no usable progress from either step type
                    }
                    break;
                }
                t *= 0.5;
            }
            if !applied {
                break; // cannot descend at all; report current point
            }
        }

        if stalls >= 2 {
            break;
        }
    }

    let final_state = evaluate_state(dataset, &w, &hyper, opts.pin_class);
    trace.push(final_state.objective);
    if final_state.kkt <= opts.tol_kkt {
        converged = true;
    }
    Ok(FitResult {
        weights: WeightMatrix::new(w)?,
        hyper,
        objective: final_state.objective,
        converged,
        iterations: sweeps,
        kkt_violation: final_state.kkt,
        objective_trace: trace,
    })
}

/// Fits a strictly decreasing grid of `lambda_tilde` values with warm
/// starts from the previous solution. Per-point non-convergence is carried
/// in the individual results.
pub fn fit_path(
    dataset: &Dataset,
    lambda_grid: &[f64],
    eta: f64,
    opts: &FitOptions,
) -> Result<Vec<FitResult>> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    for pair in lambda_grid.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(Error::InvalidArgument(
                "lambda grid must be strictly decreasing".into(),
            ));
        }
    }
    let mut out = Vec::with_capacity(lambda_grid.len());
    let mut warm: Option<WeightMatrix> = None;
    for &lt in lambda_grid {
        let hyper = HyperParams::new(lt, eta)?;
        let fit_res = fit(dataset, hyper, opts, warm.as_ref())?;
        warm = Some(fit_res.weights.clone());
        out.push(fit_res);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_dataset(m: usize, n: usize, l: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let feats = Array2::from_shape_fn((m, n), |_| rng.random::<f64>() * 2.0 - 1.0);
        let labels = (0..m).map(|_| rng.random_range(0..l)).collect();
        Dataset::new(feats, labels, l).unwrap()
    }

    #[test]
    fn hyperparams_validation() {
        assert!(HyperParams::new(0.0, 1.0).is_err());
        assert!(HyperParams::new(-1.0, 1.0).is_err());
        assert!(HyperParams::new(0.1, 1.5).is_err());
        let h = HyperParams::new(0.5, 0.25).unwrap();
        assert_abs_diff_eq!(h.lambda1(10), 10.0 * 0.5 * 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(h.lambda2(10), 10.0 * 0.5 * 0.75, epsilon = 1e-15);
    }

    #[test]
    fn large_lambda_kills_all_weights() {
        let d = random_dataset(30, 4, 3, 1);
        let lmax = lambda_max(&d, 1.0).unwrap();
        let hyper = HyperParams::new(lmax * 1.5, 1.0).unwrap();
        let fit_res = fit(&d, hyper, &FitOptions::default(), None).unwrap();
        assert!(fit_res.converged);
        assert_eq!(fit_res.active_set_size(), 0);
        assert_abs_diff_eq!(fit_res.objective, 3.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn objective_never_increases() {
        let d = random_dataset(40, 6, 3, 2);
        let hyper = HyperParams::new(0.02, 0.9).unwrap();
        let fit_res = fit(&d, hyper, &FitOptions::default(), None).unwrap();
        assert!(fit_res.converged, "kkt = {}", fit_res.kkt_violation);
        for pair in fit_res.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "uphill step: {pair:?}");
        }
    }

    #[test]
    fn kkt_residual_small_at_convergence() {
        let d = random_dataset(50, 8, 4, 3);
        let hyper = HyperParams::new(0.01, 1.0).unwrap();
        let fit_res = fit(&d, hyper, &FitOptions::default(), None).unwrap();
        assert!(fit_res.converged);
        assert!(fit_res.kkt_violation <= 1e-6);
    }

    #[test]
    fn warm_start_matches_cold_start() {
        let d = random_dataset(35, 5, 3, 4);
        let opts = FitOptions::default();
        let h_hot = HyperParams::new(0.03, 1.0).unwrap();
        let neighbor = fit(&d, HyperParams::new(0.05, 1.0).unwrap(), &opts, None).unwrap();
        let warm = fit(&d, h_hot, &opts, Some(&neighbor.weights)).unwrap();
        let cold = fit(&d, h_hot, &opts, None).unwrap();
        assert_abs_diff_eq!(warm.objective, cold.objective, epsilon = 1e-8);
    }

    #[test]
    fn relabeling_classes_preserves_objective() {
        let d = random_dataset(40, 5, 3, 5);
        let perm = [2usize, 0, 1];
        let relabeled = Dataset::new(
            d.features().clone(),
            d.labels().iter().map(|&y| perm[y]).collect(),
            3,
        )
        .unwrap();
        let hyper = HyperParams::new(0.02, 0.8).unwrap();
        let opts = FitOptions::default();
        let f1 = fit(&d, hyper, &opts, None).unwrap();
        let f2 = fit(&relabeled, hyper, &opts, None).unwrap();
        assert_abs_diff_eq!(f1.objective, f2.objective, epsilon = 1e-10);
    }

    #[test]
    fn path_requires_decreasing_grid() {
        let d = random_dataset(20, 3, 2, 6);
        assert!(fit_path(&d, &[0.1, 0.2], 1.0, &FitOptions::default()).is_err());
        assert!(fit_path(&d, &[], 1.0, &FitOptions::default()).is_err());
        let single = fit_path(&d, &[0.1], 1.0, &FitOptions::default()).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn path_objectives_bounded_by_zero_solution() {
        let d = random_dataset(30, 4, 3, 7);
        let lmax = lambda_max(&d, 1.0).unwrap();
        let grid: Vec<f64> = (0..6).map(|k| lmax * 1.2 * 0.6f64.powi(k)).collect();
        let path = fit_path(&d, &grid, 1.0, &FitOptions::default()).unwrap();
        assert_eq!(path[0].active_set_size(), 0, "head of grid is above lambda_max");
        // Coming down from lambda_max the active set only grows at first.
        let sizes: Vec<usize> = path.iter().map(|f| f.active_set_size()).collect();
        for pair in sizes.windows(2).take(3) {
            assert!(pair[1] >= pair[0], "active set shrank near the head: {sizes:?}");
        }
        for f in &path {
            assert!(f.objective <= 3.0f64.ln() + 1e-12);
        }
    }

    #[test]
    fn pinned_class_row_stays_zero() {
        let d = random_dataset(40, 5, 2, 8);
        let opts = FitOptions {
            pin_class: Some(0),
            ..FitOptions::default()
        };
        let f = fit(&d, HyperParams::new(0.01, 1.0).unwrap(), &opts, None).unwrap();
        assert!(f.weights.as_array().row(0).iter().all(|&v| v == 0.0));
        assert!(f.converged);
    }
}
