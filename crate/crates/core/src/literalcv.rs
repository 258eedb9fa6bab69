//! Ground-truth cross-validation by repeated refitting: k-fold for any
//! `k in [2, M]`, leave-one-out at `k = M`, and the normalized error
//! difference used to score the single-fit approximations against it.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::model::{self, Dataset, WeightMatrix};
use crate::solver::{fit, FitOptions, HyperParams};

/// A reproducible fold assignment: sample `mu` belongs to fold
/// `assignment[mu]`. Fold sizes differ by at most one.
#[derive(Debug, Clone)]
pub struct CvFolds {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl CvFolds {
    /// Shuffled round-robin assignment (not stratified by class).
    pub fn new(n_samples: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 || k > n_samples {
            return Err(Error::InvalidArgument(format!(
                "fold count {k} must lie in [2, {n_samples}]"
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n_samples).collect();
        order.shuffle(&mut rng);
        let mut assignment = vec![0usize; n_samples];
        for (slot, &mu) in order.iter().enumerate() {
            assignment[mu] = slot % k;
        }
        Ok(Self { k, assignment, seed })
    }

    /// Class-stratified variant: each class's samples are dealt round-robin
    /// across folds. Off by default in the sweep pipeline.
    pub fn new_stratified(labels: &[usize], k: usize, seed: u64) -> Result<Self> {
        let n_samples = labels.len();
        if k < 2 || k > n_samples {
            return Err(Error::InvalidArgument(format!(
                "fold count {k} must lie in [2, {n_samples}]"
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n_classes = labels.iter().max().map_or(0, |&y| y + 1);
        let mut assignment = vec![0usize; n_samples];
        let mut slot = 0usize;
        for class in 0..n_classes {
            let mut members: Vec<usize> =
                (0..n_samples).filter(|&mu| labels[mu] == class).collect();
            members.shuffle(&mut rng);
            for mu in members {
                assignment[mu] = slot % k;
                slot += 1;
            }
        }
        Ok(Self { k, assignment, seed })
    }

    pub fn fold_members(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&mu| self.assignment[mu] == fold)
            .collect()
    }
}

/// Per-fold fit and evaluation outcome.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub heldout: usize,
    pub mean_heldout_nll: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct LiteralCvResult {
    /// Sample-weighted mean held-out NLL; equals the LOO estimator when
    /// `k = M`.
    pub eps: f64,
    pub per_fold: Vec<FoldOutcome>,
    pub per_sample_nll: Array1<f64>,
    pub all_converged: bool,
}

/// Runs literal k-fold CV at fixed hyperparameters: each fold is refit on
/// the complement (warm-started from the full-data solution unless
/// `cold_start`) and scored on the held-out samples. Non-converged folds
/// are flagged, not fatal; the estimate still uses their best-effort fits.
pub fn literal_cv(
    dataset: &Dataset,
    hyper: HyperParams,
    folds: &CvFolds,
    opts: &FitOptions,
    warm: Option<&WeightMatrix>,
    cold_start: bool,
) -> Result<LiteralCvResult> {
    let m = dataset.n_samples();
    if folds.assignment.len() != m {
        return Err(Error::DimensionMismatch(
            "fold assignment does not match the dataset".into(),
        ));
    }
    let warm = if cold_start { None } else { warm };
    let mut per_sample = Array1::<f64>::zeros(m);
    let mut per_fold = Vec::with_capacity(folds.k);
    let mut all_converged = true;

    for fold in 0..folds.k {
        let test: Vec<usize> = folds.fold_members(fold);
        let train: Vec<usize> = (0..m).filter(|&mu| folds.assignment[mu] != fold).collect();
        let train_set = dataset.subset(&train)?;
        let fit_res = fit(&train_set, hyper, opts, warm)?;
        if !fit_res.converged {
            all_converged = false;
        }
        let test_set = dataset.subset(&test)?;
        let u = model::overlaps(&test_set, &fit_res.weights)?;
        let q = model::nll_from_overlaps(&u, test_set.labels());
        for (pos, &mu) in test.iter().enumerate() {
            per_sample[mu] = q[pos];
        }
        per_fold.push(FoldOutcome {
            fold,
            heldout: test.len(),
            mean_heldout_nll: model::mean_nll(&q),
            converged: fit_res.converged,
        });
    }
    let eps = model::mean_nll(&per_sample);
    Ok(LiteralCvResult {
        eps,
        per_fold,
        per_sample_nll: per_sample,
        all_converged,
    })
}

/// Normalized error difference `(approx - literal) / literal`; undefined
/// (`None`) for a non-positive literal estimate.
pub fn normalized_error_difference(approx: f64, literal: f64) -> Option<f64> {
    if literal > 0.0 {
        Some((approx - literal) / literal)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_dataset(m: usize, n: usize, l: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let feats = Array2::from_shape_fn((m, n), |_| rng.random::<f64>() - 0.5);
        let labels = (0..m).map(|_| rng.random_range(0..l)).collect();
        Dataset::new(feats, labels, l).unwrap()
    }

    #[test]
    fn folds_are_balanced_and_reproducible() {
        let f1 = CvFolds::new(23, 5, 42).unwrap();
        let f2 = CvFolds::new(23, 5, 42).unwrap();
        assert_eq!(f1.assignment, f2.assignment);
        let sizes: Vec<usize> = (0..5).map(|k| f1.fold_members(k).len()).collect();
        let min = sizes.iter().min().unwrap();
        let max = sizes.iter().max().unwrap();
        assert!(max - min <= 1);
        assert_eq!(sizes.iter().sum::<usize>(), 23);

        let f3 = CvFolds::new(23, 5, 43).unwrap();
        assert_ne!(f1.assignment, f3.assignment);
    }

    #[test]
    fn stratified_folds_spread_classes() {
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let f = CvFolds::new_stratified(&labels, 5, 1).unwrap();
        for fold in 0..5 {
            let members = f.fold_members(fold);
            let ones = members.iter().filter(|&&mu| labels[mu] == 1).count();
            assert_eq!(members.len(), 4);
            assert_eq!(ones, 2);
        }
    }

    #[test]
    fn fold_count_bounds() {
        assert!(CvFolds::new(10, 1, 0).is_err());
        assert!(CvFolds::new(10, 11, 0).is_err());
        assert!(CvFolds::new(10, 10, 0).is_ok());
    }

    #[test]
    fn loo_equals_manual_refit_loop() {
        let d = random_dataset(12, 3, 2, 3);
        let hyper = HyperParams::new(0.05, 1.0).unwrap();
        let opts = FitOptions::default();
        let full = fit(&d, hyper, &opts, None).unwrap();
        let folds = CvFolds::new(12, 12, 7).unwrap();
        let res = literal_cv(&d, hyper, &folds, &opts, Some(&full.weights), false).unwrap();

        for mu in 0..12 {
            let train: Vec<usize> = (0..12).filter(|&v| v != mu).collect();
            let sub = d.subset(&train).unwrap();
            let f = fit(&sub, hyper, &opts, Some(&full.weights)).unwrap();
            let u = model::overlaps(&d.subset(&[mu]).unwrap(), &f.weights).unwrap();
            let q = model::nll_from_overlaps(&u, &d.labels()[mu..=mu]);
            assert_abs_diff_eq!(res.per_sample_nll[mu], q[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn huge_lambda_gives_ln_l() {
        let d = random_dataset(20, 4, 3, 4);
        let lmax = crate::solver::lambda_max(&d, 1.0).unwrap();
        let hyper = HyperParams::new(lmax * 3.0, 1.0).unwrap();
        let folds = CvFolds::new(20, 5, 0).unwrap();
        let res = literal_cv(&d, hyper, &folds, &FitOptions::default(), None, false).unwrap();
        assert_eq!(res.eps, 3.0f64.ln());
        assert!(res.all_converged);
    }

    #[test]
    fn ned_basics() {
        assert_eq!(normalized_error_difference(1.0, 1.0), Some(0.0));
        assert_abs_diff_eq!(
            normalized_error_difference(1.1, 1.0).unwrap(),
            0.1,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            normalized_error_difference(0.5, 1.0).unwrap(),
            -0.5,
            epsilon = 1e-15
        );
        assert_eq!(normalized_error_difference(1.0, 0.0), None);
        assert_eq!(normalized_error_difference(1.0, -1.0), None);
    }
}
