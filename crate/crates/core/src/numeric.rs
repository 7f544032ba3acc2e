//! Dense-matrix helpers: the data container, the logistic map, column
//! standardization and PCA projection.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pre-activations are clamped to this magnitude before the logistic.
pub const LOGISTIC_CLAMP: f64 = 30.0;

/// Above this feature count PCA switches to the N×N Gram matrix.
pub const PCA_GRAM_THRESHOLD: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    /// Values in `[0, 1]`, read as Bernoulli expectations.
    Binary,
}

/// N instances × D features, optionally with ground-truth labels.
///
/// Labels are 0-based and dense: every value in `0..num_classes()` occurs.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
    labels: Option<Vec<usize>>,
    kind: FeatureKind,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>, labels: Option<Vec<usize>>, kind: FeatureKind) -> Result<Self> {
        let (n, d) = values.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!("data matrix must be non-empty, got {n}x{d}")));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::invalid(format!("{} labels for {n} rows", l.len())));
            }
            let k = l.iter().max().map_or(0, |m| m + 1);
            let mut seen = vec![false; k];
            for &z in l {
                seen[z] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(Error::invalid(format!("label {missing} never occurs")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("data matrix contains non-finite values"));
        }
        if kind == FeatureKind::Binary && values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("binary features must lie in [0, 1]"));
        }
        Ok(Self { values, labels, kind })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    /// Same labels and kind, new values (row count must match).
    pub fn with_values(&self, values: Array2<f64>, kind: FeatureKind) -> Result<Self> {
        if values.nrows() != self.n_rows() {
            return Err(Error::invalid("row count changed"));
        }
        Self::new(values, self.labels.clone(), kind)
    }

    /// Rows selected by `indices`, labels re-densified in first-occurrence order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let values = self.values.select(Axis(0), indices);
        let labels = self.labels.as_ref().map(|l| {
            let picked: Vec<usize> = indices.iter().map(|&i| l[i]).collect();
            densify_labels(&picked)
        });
        Self::new(values, labels, self.kind)
    }
}

/// Remaps arbitrary label ids to `0..K` in order of first occurrence.
pub fn densify_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|z| {
            let next = map.len();
            *map.entry(*z).or_insert(next)
        })
        .collect()
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    let x = x.clamp(-LOGISTIC_CLAMP, LOGISTIC_CLAMP);
    1.0 / (1.0 + (-x).exp())
}

/// Element-wise logistic, with pre-activations clamped to ±[`LOGISTIC_CLAMP`]
/// so outputs stay strictly inside (0, 1).
pub fn logistic_map(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(logistic)
}

pub fn logistic_inplace(m: &mut Array2<f64>) {
    m.mapv_inplace(logistic);
}

/// Per-column mean and population standard deviation (divisor N).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
    /// Columns with stddev below [`Standardizer::DEGENERATE_STDDEV`]; centered only.
    pub degenerate: Vec<bool>,
}

impl Standardizer {
    pub const DEGENERATE_STDDEV: f64 = 1e-12;

    pub fn fit(x: &ArrayView2<f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::invalid(format!(
                "standardization needs at least 2 rows, got {n}"
            )));
        }
        let mut mean = Vec::with_capacity(x.ncols());
        let mut stddev = Vec::with_capacity(x.ncols());
        let mut degenerate = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let s = var.sqrt();
            mean.push(m);
            stddev.push(s);
            degenerate.push(s < Self::DEGENERATE_STDDEV);
        }
        Ok(Self {
            mean,
            stddev,
            degenerate,
        })
    }

    pub fn apply(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::invalid(format!(
                "standardizer fitted on {} columns, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s, flat) = (self.mean[j], self.stddev[j], self.degenerate[j]);
            col.mapv_inplace(|v| if flat { v - m } else { (v - m) / s });
        }
        Ok(out)
    }
}

pub fn standardize_columns(x: &DataMatrix) -> Result<(DataMatrix, Standardizer)> {
    let record = Standardizer::fit(&x.values.view())?;
    let values = record.apply(&x.values.view())?;
    Ok((x.with_values(values, FeatureKind::Continuous)?, record))
}

/// Orthonormal principal directions of a fitted data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Array1<f64>,
    /// D × k, columns ordered by descending explained variance.
    pub basis: Array2<f64>,
    pub explained_variance: Vec<f64>,
}

impl PcaBasis {
    pub fn project(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::invalid(format!(
                "PCA basis expects {} features, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        let centered = x - &self.mean.view().insert_axis(Axis(0));
        Ok(centered.dot(&self.basis))
    }

    pub fn reconstruct(&self, projected: &ArrayView2<f64>) -> Array2<f64> {
        projected.dot(&self.basis.t()) + self.mean.view().insert_axis(Axis(0))
    }
}

pub fn pca_project(x: &DataMatrix, target_dim: usize) -> Result<(DataMatrix, PcaBasis)> {
    let (n, d) = x.values.dim();
    if target_dim == 0 || target_dim > n.min(d) {
        return Err(Error::invalid(format!(
            "PCA target dimension {target_dim} outside 1..={}",
            n.min(d)
        )));
    }
    let mean = x.values.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x.values - &mean.view().insert_axis(Axis(0));

    let (eigvals, vectors) = if d <= PCA_GRAM_THRESHOLD {
        let cov = centered.t().dot(&centered) / n as f64;
        let (vals, vecs) = sorted_eigen(&cov);
        let basis = Array2::from_shape_fn((d, target_dim), |(r, c)| vecs[(r, c)]);
        (vals, basis)
    } else {
        // Gram trick: X Xᵀ u = μ u  ⇒  Xᵀu/√μ is a unit eigenvector of XᵀX.
        let gram = centered.dot(&centered.t());
        let (vals, vecs) = sorted_eigen(&gram);
        let u = Array2::from_shape_fn((n, target_dim), |(r, c)| vecs[(r, c)]);
        let mut basis = centered.t().dot(&u);
        for (c, mut col) in basis.columns_mut().into_iter().enumerate() {
            let mu = vals[c];
            if mu <= 0.0 {
                return Err(Error::invalid("PCA target dimension exceeds data rank"));
            }
            col.mapv_inplace(|v| v / mu.sqrt());
        }
        (vals.into_iter().map(|m| m / n as f64).collect(), basis)
    };

    let mut basis = vectors;
    for mut col in basis.columns_mut() {
        // sign convention: largest-magnitude component positive
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    let pca = PcaBasis {
        mean,
        basis,
        explained_variance: eigvals.into_iter().take(target_dim).map(|v| v.max(0.0)).collect(),
    };
    let projected = centered.dot(&pca.basis);
    Ok((x.with_values(projected, FeatureKind::Continuous)?, pca))
}

/// Eigenpairs of a symmetric matrix, descending by eigenvalue.
fn sorted_eigen(m: &Array2<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |r, c| m[[r, c]]);
    let eig = SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn dm(values: Array2<f64>) -> DataMatrix {
        DataMatrix::new(values, None, FeatureKind::Continuous).unwrap()
    }

    #[test]
    fn logistic_examples() {
        assert_eq!(logistic_map(&array![[0.0]])[[0, 0]], 0.5);
        for t in [0.3, 2.0, 17.0, 45.0] {
            let out = logistic_map(&array![[t, -t]]);
            assert!(close(out[[0, 0]] + out[[0, 1]], 1.0, 1e-15));
        }
        // 1 / (1 + 1/3)
        assert!(close(logistic(3f64.ln()), 0.75, 1e-15));
    }

    #[test]
    fn logistic_stays_open_interval() {
        for x in [-1e6, -800.0, -30.0, 0.0, 30.0, 800.0, 1e6] {
            let y = logistic(x);
            assert!(y > 0.0 && y < 1.0, "{x} -> {y}");
        }
    }

    #[test]
    fn standardize_two_points() {
        let (out, rec) = standardize_columns(&dm(array![[1.0], [3.0]])).unwrap();
        assert_eq!(rec.mean, vec![2.0]);
        assert_eq!(rec.stddev, vec![1.0]);
        assert_eq!(out.values(), &array![[-1.0], [1.0]]);
    }

    #[test]
    fn standardize_constant_column() {
        let (out, rec) = standardize_columns(&dm(array![[5.0], [5.0], [5.0]])).unwrap();
        assert!(rec.degenerate[0]);
        assert_eq!(out.values(), &array![[0.0], [0.0], [0.0]]);
    }

    #[test]
    fn standardize_population_moments() {
        let (out, rec) = standardize_columns(&dm(array![[0.0], [1.0], [2.0], [3.0]])).unwrap();
        // mean 1.5, population variance 1.25
        assert_eq!(rec.mean[0], 1.5);
        assert!(close(rec.stddev[0], 1.25f64.sqrt(), 1e-15));
        let expect = [-1.3416407865, -0.4472135955, 0.4472135955, 1.3416407865];
        for (v, e) in out.values().iter().zip(expect) {
            assert!(close(*v, e, 1e-9));
        }
    }

    #[test]
    fn standardize_needs_two_rows() {
        assert!(matches!(
            standardize_columns(&dm(array![[1.0, 2.0]])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn standardize_record_replays_bit_identically() {
        let mut rng = crate::rng::SeededRng::new(3);
        let x = Array2::from_shape_fn((20, 4), |_| rng.random::<f64>() * 10.0 - 3.0);
        let (out, rec) = standardize_columns(&dm(x.clone())).unwrap();
        assert_eq!(&rec.apply(&x.view()).unwrap(), out.values());
    }

    #[test]
    fn pca_rank_one_line() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i as f64) * if j == 0 { 1.0 } else { 2.0 });
        let (proj, basis) = pca_project(&dm(x.clone()), 1).unwrap();
        let total: f64 = {
            let m = x.mean_axis(Axis(0)).unwrap();
            x.rows()
                .into_iter()
                .map(|r| (&r - &m).mapv(|v| v * v).sum())
                .sum::<f64>()
                / 10.0
        };
        let pv = proj.values().column(0).mapv(|v| v * v).sum() / 10.0;
        assert!(close(pv, total, 1e-9));
        assert!(close(basis.explained_variance[0], total, 1e-9));
    }

    #[test]
    fn pca_full_rank_reconstructs() {
        let mut rng = crate::rng::SeededRng::new(11);
        let x = Array2::from_shape_fn((12, 5), |_| rng.random::<f64>());
        let (proj, basis) = pca_project(&dm(x.clone()), 5).unwrap();
        let back = basis.reconstruct(&proj.values().view());
        for (a, b) in back.iter().zip(x.iter()) {
            assert!(close(*a, *b, 1e-8));
        }
    }

    #[test]
    fn pca_rejects_bad_dim() {
        let x = dm(Array2::zeros((3, 5)) + 1.0);
        assert!(pca_project(&x, 0).is_err());
        assert!(pca_project(&x, 4).is_err());
    }

    #[test]
    fn pca_gram_path_matches_covariance_path() {
        let mut rng = crate::rng::SeededRng::new(5);
        let x = Array2::from_shape_fn((30, 8), |_| rng.random::<f64>());
        let (_, cov) = pca_project(&dm(x.clone()), 3).unwrap();
        // wide copy: append the same columns many times so D exceeds the threshold
        let reps = PCA_GRAM_THRESHOLD / 8 + 1;
        let wide = Array2::from_shape_fn((30, 8 * reps), |(i, j)| x[[i, j % 8]]);
        let (_, gram) = pca_project(&dm(wide), 3).unwrap();
        for c in 0..3 {
            let ratio = gram.explained_variance[c] / cov.explained_variance[c];
            assert!(close(ratio, reps as f64, 1e-6), "component {c}: ratio {ratio}");
        }
        let g = gram.basis.t().dot(&gram.basis);
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(g[[i, j]], if i == j { 1.0 } else { 0.0 }, 1e-10));
            }
        }
    }

    #[test]
    fn datamatrix_validates_labels() {
        let v = Array2::zeros((3, 1));
        assert!(DataMatrix::new(v.clone(), Some(vec![0, 2, 2]), FeatureKind::Continuous).is_err());
        assert!(DataMatrix::new(v.clone(), Some(vec![0, 1]), FeatureKind::Continuous).is_err());
        assert!(DataMatrix::new(v, Some(vec![1, 0, 1]), FeatureKind::Binary).is_ok());
        assert!(DataMatrix::new(array![[2.0]], None, FeatureKind::Binary).is_err());
    }

    #[test]
    fn densify_first_occurrence() {
        assert_eq!(densify_labels(&[7, 3, 7, 9, 3]), vec![0, 1, 0, 2, 1]);
    }
}
