//! Synthetic ensembles for verification and benchmarking: sparse
//! Bernoulli-Gaussian class centers observed through a linear process with
//! Gaussian noise, plus the stress variants (shared components across
//! classes, equicorrelated noise, per-class norm amplification) and the
//! per-class rescaling that undoes the latter.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::Dataset;

/// Structural variants layered on the plain generator.
#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    Plain,
    /// A fraction `r_common` of each class's nonzero components (positions
    /// and values) is copied from one shared master row.
    CommonComponents { r_common: f64 },
    /// Equicorrelated observation noise with pairwise coefficient `corr`.
    CorrelatedNoise { corr: f64 },
    /// Feature vectors of samples in `classes` (zero-based) are multiplied
    /// by `omega`.
    Amplified { classes: Vec<usize>, omega: f64 },
}

/// Generator parameters. `M = round(alpha * N)` samples of dimension `N`
/// over `L` classes; class centers are `rho0`-sparse Bernoulli-Gaussian
/// rows with conditional variance `1/rho0`; observation noise has variance
/// `sigma_xi2` per component.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n: usize,
    pub l: usize,
    pub alpha: f64,
    pub rho0: f64,
    pub sigma_xi2: f64,
    pub variant: Variant,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        if self.l < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) || self.n_samples() == 0 {
            return Err(Error::InvalidArgument(format!(
                "alpha = {} yields no samples",
                self.alpha
            )));
        }
        if !(self.rho0 > 0.0 && self.rho0 <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rho0 must lie in (0, 1], got {}",
                self.rho0
            )));
        }
        if !(self.sigma_xi2.is_finite() && self.sigma_xi2 >= 0.0) {
            return Err(Error::InvalidArgument("sigma_xi2 must be >= 0".into()));
        }
        match &self.variant {
            Variant::Plain => {}
            Variant::CommonComponents { r_common } => {
                if !(0.0..=1.0).contains(r_common) {
                    return Err(Error::InvalidArgument(format!(
                        "r_common must lie in [0, 1], got {r_common}"
                    )));
                }
            }
            Variant::CorrelatedNoise { corr } => {
                if !(0.0..=1.0).contains(corr) {
                    return Err(Error::InvalidArgument(format!(
                        "corr must lie in [0, 1], got {corr}"
                    )));
                }
            }
            Variant::Amplified { classes, omega } => {
                if !(omega.is_finite() && *omega > 0.0) {
                    return Err(Error::InvalidArgument("omega must be positive".into()));
                }
                if classes.iter().any(|&c| c >= self.l) {
                    return Err(Error::InvalidArgument(
                        "amplified class out of range".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.alpha * self.n as f64).round() as usize
    }
}

fn weights_rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn data_rng(seed: u64) -> ChaCha12Rng {
    // Distinct stream from the weight draw so the two stages are
    // independently reproducible.
    ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)
}

fn bernoulli_gaussian_row(rng: &mut ChaCha12Rng, n: usize, rho0: f64) -> Array1<f64> {
    let normal = Normal::new(0.0, (1.0 / rho0).sqrt()).expect("valid std");
    Array1::from_shape_fn(n, |_| {
        if rng.random::<f64>() < rho0 {
            normal.sample(rng)
        } else {
            0.0
        }
    })
}

/// Draws the L x N matrix of true class centers.
pub fn gen_true_weights(spec: &SynthSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let mut rng = weights_rng(spec.seed);
    let mut w = Array2::<f64>::zeros((spec.l, spec.n));

    match &spec.variant {
        Variant::CommonComponents { r_common } => {
            let master = bernoulli_gaussian_row(&mut rng, spec.n, spec.rho0);
            let master_support: Vec<usize> = (0..spec.n).filter(|&i| master[i] != 0.0).collect();
            for a in 0..spec.l {
                let mut row = bernoulli_gaussian_row(&mut rng, spec.n, spec.rho0);
                let own_support: Vec<usize> = (0..spec.n).filter(|&i| row[i] != 0.0).collect();
                let want = (r_common * own_support.len() as f64).round() as usize;
                let take = want.min(master_support.len());

                let mut drop_from = own_support.clone();
                drop_from.shuffle(&mut rng);
                for &i in drop_from.iter().take(take) {
                    row[i] = 0.0;
                }
                let mut copy_from = master_support.clone();
                copy_from.shuffle(&mut rng);
                for &i in copy_from.iter().take(take) {
                    row[i] = master[i];
                }
                w.row_mut(a).assign(&row);
            }
        }
        _ => {
            for a in 0..spec.l {
                let row = bernoulli_gaussian_row(&mut rng, spec.n, spec.rho0);
                w.row_mut(a).assign(&row);
            }
        }
    }
    Ok(w)
}

/// Observes `M` samples through `x_mu = w0[y_mu] / sqrt(N) + noise`,
/// applying the spec's noise structure and amplification.
pub fn gen_dataset(true_w: &Array2<f64>, spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    if true_w.dim() != (spec.l, spec.n) {
        return Err(Error::DimensionMismatch(
            "true weights do not match the spec shape".into(),
        ));
    }
    let m = spec.n_samples();
    let mut rng = data_rng(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid std");
    let sigma = spec.sigma_xi2.sqrt();
    let scale = 1.0 / (spec.n as f64).sqrt();

    let mut features = Array2::<f64>::zeros((m, spec.n));
    let mut labels = Vec::with_capacity(m);
    for mu in 0..m {
        let y = rng.random_range(0..spec.l);
        labels.push(y);
        let mut row = features.row_mut(mu);
        match &spec.variant {
            Variant::CorrelatedNoise { corr } => {
                let shared: f64 = std_normal.sample(&mut rng);
                let wc = corr.sqrt();
                let wi = (1.0 - corr).sqrt();
                for i in 0..spec.n {
                    let own: f64 = std_normal.sample(&mut rng);
                    row[i] = true_w[[y, i]] * scale + sigma * (wc * shared + wi * own);
                }
            }
            _ => {
                for i in 0..spec.n {
                    let noise: f64 = std_normal.sample(&mut rng);
                    row[i] = true_w[[y, i]] * scale + sigma * noise;
                }
            }
        }
        if let Variant::Amplified { classes, omega } = &spec.variant {
            if classes.contains(&y) {
                for i in 0..spec.n {
                    row[i] *= omega;
                }
            }
        }
    }
    Dataset::new(features, labels, spec.l)
}

/// Rescales each sample by a per-class factor chosen so every class's mean
/// feature-vector 2-norm equals the global mean norm. Returns the rescaled
/// dataset, the factors (indexable by class), and the classes that were
/// empty (factor kept at 1).
pub fn rescale_by_class(dataset: &Dataset) -> Result<(Dataset, Vec<f64>, Vec<usize>)> {
    let m = dataset.n_samples();
    let l = dataset.n_classes();
    let norms: Vec<f64> = (0..m)
        .map(|mu| dataset.sample(mu).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let global_mean = norms.iter().sum::<f64>() / m as f64;

    let mut factors = vec![1.0f64; l];
    let mut empty = Vec::new();
    for class in 0..l {
        let members: Vec<usize> = (0..m).filter(|&mu| dataset.labels()[mu] == class).collect();
        if members.is_empty() {
            empty.push(class);
            continue;
        }
        let mean = members.iter().map(|&mu| norms[mu]).sum::<f64>() / members.len() as f64;
        if mean > 0.0 {
            factors[class] = global_mean / mean;
        }
    }

    let mut features = dataset.features().clone();
    for mu in 0..m {
        let f = factors[dataset.labels()[mu]];
        if f != 1.0 {
            features.row_mut(mu).mapv_inplace(|v| v * f);
        }
    }
    let rescaled = dataset.with_features(features)?;
    Ok((rescaled, factors, empty))
}
