//! Core multinomial-logistic-regression mathematics shared by the solver and
//! every cross-validation estimator: overlaps, softmax probabilities,
//! per-sample negative log-likelihoods, the per-sample gradient/Hessian
//! blocks, and assembly of the active-set-restricted cost-function Hessian.
//!
//! The model has `L` weight vectors `w_a` of dimension `N`. For sample `mu`
//! with feature vector `x_mu`, the class-`a` overlap is `u_{mu a} = x_mu .
//! w_a`, class probabilities follow from the softmax of the overlap row, and
//! the per-sample loss is the negative log of the probability assigned to
//! the observed class.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logs in
/// [`nll_per_sample`]; exact zeros can appear in finite arithmetic even
/// though the model never produces them analytically.
pub const PROB_FLOOR: f64 = 1e-300;

/// A labelled classification dataset.
///
/// `features` is M x N (rows are samples); labels are zero-based class
/// indices in `0..n_classes`. File formats expose one-based labels; the IO
/// layer converts.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let (m, n) = features.dim();
        if m == 0 || n == 0 {
            return Err(Error::InvalidDataset(format!(
                "need at least one sample and one feature, got {m} x {n}"
            )));
        }
        if n_classes < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least two classes, got {n_classes}"
            )));
        }
        if labels.len() != m {
            return Err(Error::InvalidDataset(format!(
                "label count {} does not match sample count {m}",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidDataset(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, mu: usize) -> ArrayView1<'_, f64> {
        self.features.row(mu)
    }

    /// New dataset restricted to the given sample indices (rows copied).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidDataset("empty subset".into()));
        }
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(features, labels, self.n_classes)
    }

    /// Replaces the feature matrix, keeping labels. Used by per-class
    /// rescaling; shapes must match.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.dim() != self.features.dim() {
            return Err(Error::DimensionMismatch(
                "replacement features must keep the dataset shape".into(),
            ));
        }
        Dataset::new(features, self.labels.clone(), self.n_classes)
    }
}

/// The L x N coefficient matrix; row `a` is the weight vector of class `a`.
/// Exact zeros are meaningful: they define the active set.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: Array2<f64>,
}

impl WeightMatrix {
    pub fn new(w: Array2<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite weight".into()));
        }
        Ok(Self { w })
    }

    pub fn zeros(n_classes: usize, n_features: usize) -> Self {
        Self {
            w: Array2::zeros((n_classes, n_features)),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.w.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn into_array(self) -> Array2<f64> {
        self.w
    }

    pub fn nonzero_count(&self) -> usize {
        self.w.iter().filter(|v| **v != 0.0).count()
    }
}

/// Index pairs `(class a, feature i)` with nonzero fitted weight, plus the
/// per-feature view `A_i` (active classes at feature `i`).
///
/// Pairs are kept sorted by `(feature, class)`; that order defines the row
/// and column layout of the restricted Hessian.
#[derive(Debug, Clone)]
pub struct ActiveSet {
    pairs: Vec<(usize, usize)>,
    per_feature: Vec<Vec<usize>>,
    index: HashMap<(usize, usize), usize>,
    n_classes: usize,
}

impl ActiveSet {
    pub fn from_weights(w: &WeightMatrix) -> Self {
        let (l, n) = w.as_array().dim();
        let mut pairs = Vec::new();
        let mut per_feature = vec![Vec::new(); n];
        for i in 0..n {
            for a in 0..l {
                if w.as_array()[[a, i]] != 0.0 {
                    pairs.push((a, i));
                    per_feature[i].push(a);
                }
            }
        }
        let index = pairs
            .iter()
            .enumerate()
            .map(|(k, &p)| (p, k))
            .collect();
        Self {
            pairs,
            per_feature,
            index,
            n_classes: l,
        }
    }

    /// Number of active (class, feature) pairs, `|A|`.
    pub fn size(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs `(class, feature)` in `(feature, class)` order.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Active classes at feature `i`, sorted.
    pub fn classes_at(&self, i: usize) -> &[usize] {
        &self.per_feature[i]
    }

    pub fn per_feature(&self) -> &[Vec<usize>] {
        &self.per_feature
    }

    /// Position of pair `(a, i)` in the restricted index, if active.
    pub fn position(&self, a: usize, i: usize) -> Option<usize> {
        self.index.get(&(a, i)).copied()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// For each class `a`, the features active in `a` together with the
    /// positions of those pairs in the restricted index.
    pub fn by_class(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut out = vec![(Vec::new(), Vec::new()); self.n_classes];
        for (k, &(a, i)) in self.pairs.iter().enumerate() {
            out[a].0.push(i);
            out[a].1.push(k);
        }
        out
    }
}

/// Per-sample quantities at a given weight matrix: overlaps `U`, softmax
/// probabilities `P` and gradient rows `B` (all M x L). The L x L Hessian
/// block of sample `mu` is derived from row `mu` of `P` on demand via
/// [`hessian_f`].
#[derive(Debug, Clone)]
pub struct SampleBlocks {
    pub u: Array2<f64>,
    pub p: Array2<f64>,
    pub b: Array2<f64>,
}

impl SampleBlocks {
    pub fn compute(dataset: &Dataset, w: &WeightMatrix) -> Result<Self> {
        let u = overlaps(dataset, w)?;
        let p = softmax_probs(&u);
        let b = grad_b(&p, dataset.labels());
        Ok(Self { u, p, b })
    }
}

/// Overlap matrix `U`: entry `(mu, a)` is `x_mu . w_a`.
pub fn overlaps(dataset: &Dataset, w: &WeightMatrix) -> Result<Array2<f64>> {
    if w.n_features() != dataset.n_features() || w.n_classes() != dataset.n_classes() {
        return Err(Error::DimensionMismatch(format!(
            "weights are {} x {}, dataset needs {} x {}",
            w.n_classes(),
            w.n_features(),
            dataset.n_classes(),
            dataset.n_features()
        )));
    }
    Ok(dataset.features().dot(&w.as_array().t()))
}

/// Row-wise softmax with per-row max subtraction for overflow safety. The
/// subtraction is exact in the model because the softmax is invariant under
/// adding a constant to a row.
pub fn softmax_probs(u: &Array2<f64>) -> Array2<f64> {
    let mut p = u.clone();
    for mut row in p.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}

/// Per-sample negative log-likelihood `q_mu = -ln p_{y_mu|mu}` from a
/// probability matrix. Probabilities are floored at [`PROB_FLOOR`] before
/// the log; the second return value counts how many samples were clamped.
pub fn nll_per_sample(p: &Array2<f64>, labels: &[usize]) -> (Array1<f64>, usize) {
    let mut clamped = 0usize;
    let q = Array1::from_iter(labels.iter().enumerate().map(|(mu, &y)| {
        let mut v = p[[mu, y]];
        if v < PROB_FLOOR {
            v = PROB_FLOOR;
            clamped += 1;
        }
        -v.ln()
    }));
    (q, clamped)
}

/// Per-sample negative log-likelihood computed directly from overlaps via
/// log-sum-exp: `q_mu = ln(sum_b e^{u_b - max}) + max - u_y`.
///
/// Equivalent to `-ln p` but stable for extreme overlaps and exact for the
/// all-zero overlap row (`q = ln L`). The estimators evaluate their
/// corrected overlaps through this path.
pub fn nll_from_overlaps(u: &Array2<f64>, labels: &[usize]) -> Array1<f64> {
    Array1::from_iter(labels.iter().enumerate().map(|(mu, &y)| {
        let row = u.row(mu);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        sum.ln() + max - row[y]
    }))
}

/// Mean of a per-sample loss vector; the training error when applied to the
/// full-fit NLLs. Summation is centered at the first element, which keeps
/// the mean of identical values exact (a vector of `ln L` entries averages
/// to `ln L` bitwise).
pub fn mean_nll(q: &Array1<f64>) -> f64 {
    let n = q.len();
    if n == 0 {
        return 0.0;
    }
    let base = q[0];
    let shifted: f64 = q.iter().map(|&v| v - base).sum();
    base + shifted / n as f64
}

/// Gradient rows `b^mu`: entry `(mu, a)` is `p_{a|mu} - delta_{a, y_mu}`.
/// Each row sums to zero because the probabilities sum to one.
pub fn grad_b(p: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
    let mut b = p.clone();
    for (mu, &y) in labels.iter().enumerate() {
        b[[mu, y]] -= 1.0;
    }
    b
}

/// Per-sample Hessian block `F_{ab} = delta_{ab} p_a - p_a p_b` from one
/// probability row. Symmetric, positive semidefinite, rows sum to zero.
pub fn hessian_f(p_row: ArrayView1<'_, f64>) -> Array2<f64> {
    let l = p_row.len();
    let mut f = Array2::zeros((l, l));
    for a in 0..l {
        for b in 0..l {
            f[[a, b]] = if a == b {
                p_row[a] * (1.0 - p_row[a])
            } else {
                -p_row[a] * p_row[b]
            };
        }
    }
    f
}

/// Assembles the cost-function Hessian of the unnormalized objective
/// restricted to the active set:
///
/// `G[(a,i),(b,j)] = sum_mu x_{mu i} x_{mu j} F^mu_{ab} + lambda2 * delta`,
///
/// with rows/columns in the active set's `(feature, class)` order. The
/// repetition matrix `X^mu` is never materialized: the sum is accumulated
/// per class pair as `X_a^T diag(F_{ab,.}) X_b` over the columns active in
/// each class. Returns a 0 x 0 matrix for an empty active set; callers
/// short-circuit that case.
pub fn assemble_hessian(
    dataset: &Dataset,
    p: &Array2<f64>,
    active: &ActiveSet,
    lambda2: f64,
) -> Array2<f64> {
    let k = active.size();
    let mut g = Array2::<f64>::zeros((k, k));
    if k == 0 {
        return g;
    }
    let by_class = active.by_class();
    let x = dataset.features();
    let m = dataset.n_samples();
    let l = dataset.n_classes();

    // Select the active columns of X once per class.
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

    let mut fvec = Array1::<f64>::zeros(m);
    for a in 0..l {
        let Some(xa) = selected[a].as_ref() else {
            continue;
        };
        for b in a..l {
            let Some(xb) = selected[b].as_ref() else {
                continue;
            };
            for mu in 0..m {
                let pa = p[[mu, a]];
                let pb = p[[mu, b]];
                fvec[mu] = if a == b { pa * (1.0 - pa) } else { -pa * pb };
            }
            let xb_weighted = xb * &fvec.view().insert_axis(Axis(1));
            let block = xa.t().dot(&xb_weighted);
            let rows = &by_class[a].1;
            let cols = &by_class[b].1;
            for (bi, &gi) in rows.iter().enumerate() {
                for (bj, &gj) in cols.iter().enumerate() {
                    g[[gi, gj]] = block[[bi, bj]];
                    g[[gj, gi]] = block[[bi, bj]];
                }
            }
        }
    }
    for d in 0..k {
        g[[d, d]] += lambda2;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn toy_dataset() -> Dataset {
        let x = array![[1.0, 2.0], [0.5, -1.0], [0.0, 1.0]];
        Dataset::new(x, vec![0, 1, 0], 2).unwrap()
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        let x = array![[1.0, 2.0]];
        assert!(Dataset::new(x.clone(), vec![2], 2).is_err());
        assert!(Dataset::new(x.clone(), vec![0], 1).is_err());
        assert!(Dataset::new(array![[f64::NAN, 0.0]], vec![0], 2).is_err());
    }

    #[test]
    fn overlaps_zero_weights() {
        let d = toy_dataset();
        let w = WeightMatrix::zeros(2, 2);
        let u = overlaps(&d, &w).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn overlaps_direct_evaluation() {
        // x_1 = (1, 2), w_1 = (0.5, 0), w_2 = (0, -1) -> u_1 = (0.5, -2).
        let d = Dataset::new(array![[1.0, 2.0]], vec![0], 2).unwrap();
        let w = WeightMatrix::new(array![[0.5, 0.0], [0.0, -1.0]]).unwrap();
        let u = overlaps(&d, &w).unwrap();
        assert_abs_diff_eq!(u[[0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(u[[0, 1]], -2.0, epsilon = 1e-15);
    }

    #[test]
    fn overlaps_dimension_mismatch() {
        let d = toy_dataset();
        let w = WeightMatrix::zeros(2, 3);
        assert!(overlaps(&d, &w).is_err());
        let w = WeightMatrix::zeros(3, 2);
        assert!(overlaps(&d, &w).is_err());
    }

    #[test]
    fn softmax_uniform_for_constant_rows() {
        for c in [0.0, 3.5, -7.0] {
            let u = Array2::from_elem((2, 4), c);
            let p = softmax_probs(&u);
            for v in p.iter() {
                assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn softmax_survives_large_overlaps() {
        let u = array![[1000.0, 0.0]];
        let p = softmax_probs(&u);
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[[0, 1]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn nll_uniform_is_ln_l() {
        let p = Array2::from_elem((3, 4), 0.25);
        let (q, clamped) = nll_per_sample(&p, &[0, 1, 3]);
        assert_eq!(clamped, 0);
        for v in q.iter() {
            assert_abs_diff_eq!(*v, 4.0f64.ln(), epsilon = 1e-15);
        }
    }

    #[test]
    fn nll_one_hot_is_zero_and_half_is_ln2() {
        let p = array![[1.0, 0.0], [0.5, 0.5]];
        let (q, _) = nll_per_sample(&p, &[0, 1]);
        assert_eq!(q[0], 0.0);
        assert_abs_diff_eq!(q[1], 2.0f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn nll_clamps_exact_zero() {
        let p = array![[0.0, 1.0]];
        let (q, clamped) = nll_per_sample(&p, &[0]);
        assert_eq!(clamped, 1);
        assert!(q[0].is_finite());
    }

    #[test]
    fn nll_from_overlaps_zero_is_exactly_ln_l() {
        let u = Array2::zeros((2, 8));
        let q = nll_from_overlaps(&u, &[3, 7]);
        assert_eq!(q[0], 8.0f64.ln());
        assert_eq!(q[1], 8.0f64.ln());
    }

    #[test]
    fn grad_b_direct_and_row_sums() {
        let p = array![[0.7, 0.3]];
        let b = grad_b(&p, &[0]);
        assert_abs_diff_eq!(b[[0, 0]], -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(b[[0, 1]], 0.3, epsilon = 1e-15);

        let p = array![[1.0, 0.0]];
        let b = grad_b(&p, &[0]);
        assert!(b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hessian_f_half_half() {
        let f = hessian_f(array![0.5, 0.5].view());
        assert_abs_diff_eq!(f[[0, 0]], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(f[[0, 1]], -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(f[[1, 1]], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn hessian_f_one_hot_vanishes() {
        let f = hessian_f(array![0.0, 1.0, 0.0].view());
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn active_set_structure() {
        let mut w = Array2::zeros((3, 6));
        w[[1, 4]] = 2.0;
        let w = WeightMatrix::new(w).unwrap();
        let a = ActiveSet::from_weights(&w);
        assert_eq!(a.size(), 1);
        assert_eq!(a.pairs(), &[(1, 4)]);
        assert_eq!(a.classes_at(4), &[1]);
        assert_eq!(a.position(1, 4), Some(0));
        assert_eq!(a.position(0, 4), None);

        let zero = ActiveSet::from_weights(&WeightMatrix::zeros(3, 6));
        assert!(zero.is_empty());
    }

    #[test]
    fn assemble_hessian_single_pair() {
        // M = 1, one active pair (a, i): G = x_{1i}^2 F_{aa} + lambda2.
        let d = Dataset::new(array![[2.0, 1.0]], vec![0], 2).unwrap();
        let mut wm = Array2::zeros((2, 2));
        wm[[1, 0]] = 1.0;
        let w = WeightMatrix::new(wm).unwrap();
        let active = ActiveSet::from_weights(&w);
        let u = overlaps(&d, &w).unwrap();
        let p = softmax_probs(&u);
        let g = assemble_hessian(&d, &p, &active, 0.3);
        let faa = p[[0, 1]] * (1.0 - p[[0, 1]]);
        assert_abs_diff_eq!(g[[0, 0]], 4.0 * faa + 0.3, epsilon = 1e-14);
    }

    #[test]
    fn assemble_hessian_one_hot_rows_give_penalty_only() {
        let d = Dataset::new(array![[1.0, -1.0], [2.0, 0.5]], vec![0, 1], 2).unwrap();
        let mut wm = Array2::zeros((2, 2));
        wm[[0, 0]] = 1.0;
        wm[[1, 1]] = -1.0;
        let w = WeightMatrix::new(wm).unwrap();
        let active = ActiveSet::from_weights(&w);
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        let g = assemble_hessian(&d, &p, &active, 0.0);
        assert!(g.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn empty_active_set_gives_empty_hessian() {
        let d = toy_dataset();
        let w = WeightMatrix::zeros(2, 2);
        let active = ActiveSet::from_weights(&w);
        let p = softmax_probs(&overlaps(&d, &w).unwrap());
        let g = assemble_hessian(&d, &p, &active, 1.0);
        assert_eq!(g.dim(), (0, 0));
    }
}
