//! Lambda-path sweeps combining the solver with the requested estimators,
//! producing a [`CvReport`]. This is the engine behind the CLI's `sweep`
//! command; tests drive it directly.

use std::time::Instant;

use crate::acv;
use crate::datagen;
use crate::error::{Error, Result};
use crate::io::dataset_digest;
use crate::literalcv::{self, CvFolds};
use crate::model::Dataset;
use crate::report::{ArgminSummary, CvReport, LambdaRecord, Provenance, StageTimes};
use crate::saacv;
use crate::solver::{self, FitOptions, HyperParams};

/// Which literal estimator to run alongside the approximations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiteralKind {
    /// Leave-one-out: `M` refits per lambda point.
    Loo,
    KFold(usize),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EstimatorSet {
    pub acv: bool,
    pub saacv: bool,
    pub literal: Option<LiteralKind>,
}

/// Log-spaced grid descending from `lambda_max` over `decades` decades.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub n_points: usize,
    pub decades: f64,
    /// Override for the grid anchor; computed from the gradient at zero
    /// weights when absent.
    pub lambda_max: Option<f64>,
    /// Explicit grid (descending); takes precedence when set.
    pub explicit: Option<Vec<f64>>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_points: 50,
            decades: 4.0,
            lambda_max: None,
            explicit: None,
        }
    }
}

impl GridSpec {
    pub fn build(&self, dataset: &Dataset, eta: f64) -> Result<Vec<f64>> {
        if let Some(grid) = &self.explicit {
            if grid.is_empty() {
                return Err(Error::InvalidArgument("empty lambda grid".into()));
            }
            if grid.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::InvalidArgument("lambda values must be positive".into()));
            }
            if grid.windows(2).any(|p| !(p[1] < p[0])) {
                return Err(Error::InvalidArgument(
                    "lambda grid must be strictly decreasing".into(),
                ));
            }
            return Ok(grid.clone());
        }
        if self.n_points == 0 || !(self.decades > 0.0) {
            return Err(Error::InvalidArgument(
                "grid needs a positive point count and decade span".into(),
            ));
        }
        let anchor = match self.lambda_max {
            Some(v) if v > 0.0 => v,
            Some(v) => {
                return Err(Error::InvalidArgument(format!(
                    "lambda_max must be positive, got {v}"
                )))
            }
            None => solver::lambda_max(dataset, eta)?,
        };
        let n = self.n_points;
        if n == 1 {
            return Ok(vec![anchor]);
        }
        let step = self.decades / (n - 1) as f64;
        Ok((0..n)
            .map(|k| anchor * 10f64.powf(-step * k as f64))
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub grid: GridSpec,
    pub eta: f64,
    pub estimators: EstimatorSet,
    pub seed: u64,
    pub fit_opts: FitOptions,
    /// SAACV fixed-point threshold.
    pub theta: f64,
    pub sa_max_sweeps: usize,
    pub sa_damping: f64,
    /// Apply per-class norm rescaling before fitting (realizes class-
    /// adaptive penalties on the original scale).
    pub rescale_by_class: bool,
    /// Refit folds from zero instead of the full-data solution.
    pub literal_cold_start: bool,
    pub stratified_folds: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            eta: 1.0,
            estimators: EstimatorSet {
                acv: true,
                saacv: true,
                literal: None,
            },
            seed: 0,
            fit_opts: FitOptions::default(),
            theta: saacv::THETA_DEFAULT,
            sa_max_sweeps: saacv::MAX_SWEEPS_DEFAULT,
            sa_damping: 0.0,
            rescale_by_class: false,
            literal_cold_start: false,
            stratified_folds: false,
        }
    }
}

/// Runs the sweep. Individual lambda-point failures (non-convergence,
/// degenerate Hessians, fixed-point trouble) are recorded as flags on the
/// affected record, never as errors; the report always covers the full
/// grid.
pub fn run_sweep(dataset: &Dataset, config: &SweepConfig) -> Result<CvReport> {
    let digest = dataset_digest(dataset);
    let mut notes = Vec::new();

    let working;
    let data: &Dataset = if config.rescale_by_class {
        let (rescaled, factors, empty) = datagen::rescale_by_class(dataset)?;
        let rendered: Vec<String> = factors.iter().map(|f| format!("{f}")).collect();
        notes.push(format!("rescale_by_class factors: [{}]", rendered.join(", ")));
        if !empty.is_empty() {
            notes.push(format!("rescale_by_class empty classes: {empty:?}"));
        }
        working = rescaled;
        &working
    } else {
        dataset
    };

    let m = data.n_samples();
    let grid = config.grid.build(data, config.eta)?;

    // Warm-started path fit, timed per point.
    let mut path = Vec::with_capacity(grid.len());
    let mut fit_times = Vec::with_capacity(grid.len());
    let mut warm = None;
    for &lt in &grid {
        let hyper = HyperParams::new(lt, config.eta)?;
        let t = Instant::now();
        let fit_res = solver::fit(data, hyper, &config.fit_opts, warm.as_ref())?;
        fit_times.push(t.elapsed().as_secs_f64());
        warm = Some(fit_res.weights.clone());
        path.push(fit_res);
    }

    let folds = match config.estimators.literal {
        Some(kind) => {
            let k = match kind {
                LiteralKind::Loo => m,
                LiteralKind::KFold(k) => k,
            };
            let folds = if config.stratified_folds {
                CvFolds::new_stratified(data.labels(), k, config.seed)?
            } else {
                CvFolds::new(m, k, config.seed)?
            };
            Some(folds)
        }
        None => None,
    };

    let mut records = Vec::with_capacity(grid.len());
    for (idx, fit_res) in path.iter().enumerate() {
        let mut flags = Vec::new();
        let mut wall = StageTimes {
            fit: fit_times[idx],
            ..StageTimes::default()
        };
        if !fit_res.converged {
            flags.push(format!(
                "fit_not_converged:kkt={:.3e}",
                fit_res.kkt_violation
            ));
        }

        let u = crate::model::overlaps(data, &fit_res.weights)?;
        let q = crate::model::nll_from_overlaps(&u, data.labels());
        let training_error = crate::model::mean_nll(&q);

        let mut eps_acv = None;
        let mut zero_modes_removed = 0usize;
        let mut acv_op_count = None;
        if config.estimators.acv {
            let t = Instant::now();
            match acv::acv(data, fit_res) {
                Ok(r) => {
                    eps_acv = Some(r.looe);
                    zero_modes_removed = r.zero_modes_removed;
                    acv_op_count = Some(r.op_count);
                    if !r.ill_conditioned_samples.is_empty() {
                        flags.push(format!(
                            "acv_ill_conditioned:{}",
                            r.ill_conditioned_samples.len()
                        ));
                    }
                }
                Err(e) => flags.push(format!("acv_failed:{e}")),
            }
            wall.acv = t.elapsed().as_secs_f64();
        }

        let mut eps_saacv = None;
        let mut saacv_op_count = None;
        if config.estimators.saacv {
            let t = Instant::now();
            match saacv::saacv(data, fit_res, config.theta, config.sa_max_sweeps, config.sa_damping)
            {
                Ok((r, state)) => {
                    eps_saacv = Some(r.looe);
                    saacv_op_count = Some(r.op_count);
                    if !state.converged {
                        flags.push(format!(
                            "saacv_not_converged:residual={:.3e}",
                            state.final_residual
                        ));
                    }
                    if state.zero_modes_removed > 0 {
                        flags.push(format!("saacv_zero_modes:{}", state.zero_modes_removed));
                    }
                }
                Err(e) => flags.push(format!("saacv_failed:{e}")),
            }
            wall.saacv = t.elapsed().as_secs_f64();
        }

        let mut eps_literal = None;
        if let Some(folds) = &folds {
            let t = Instant::now();
            let hyper = HyperParams::new(grid[idx], config.eta)?;
            match literalcv::literal_cv(
                data,
                hyper,
                folds,
                &config.fit_opts,
                Some(&fit_res.weights),
                config.literal_cold_start,
            ) {
                Ok(r) => {
                    eps_literal = Some(r.eps);
                    if !r.all_converged {
                        let bad = r.per_fold.iter().filter(|f| !f.converged).count();
                        flags.push(format!("literal_folds_not_converged:{bad}"));
                    }
                }
                Err(e) => flags.push(format!("literal_failed:{e}")),
            }
            wall.literal = t.elapsed().as_secs_f64();
        }

        let ned = |approx: Option<f64>| {
            approx.and_then(|a| {
                eps_literal.and_then(|l| literalcv::normalized_error_difference(a, l))
            })
        };

        records.push(LambdaRecord {
            lambda_tilde: grid[idx],
            converged: fit_res.converged,
            training_error,
            ned_acv: ned(eps_acv),
            ned_saacv: ned(eps_saacv),
            eps_acv,
            eps_saacv,
            eps_literal,
            active_set_size: fit_res.active_set_size(),
            zero_modes_removed,
            acv_op_count,
            saacv_op_count,
            flags,
            wall,
        });
    }

    let mut report = CvReport {
        version: crate::report::REPORT_VERSION,
        eta: config.eta,
        lambda_grid: grid,
        provenance: Provenance {
            seed: config.seed,
            dataset_digest: digest,
            tol_delta: config.fit_opts.tol_delta,
            tol_kkt: config.fit_opts.tol_kkt,
            theta: config.theta,
            notes,
        },
        records,
        argmin: ArgminSummary::default(),
    };
    report.compute_argmins();
    Ok(report)
}
