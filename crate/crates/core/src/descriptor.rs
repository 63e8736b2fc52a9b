//! Global image descriptors and the distances defined on them.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense matrix type used for metrics.
pub type Matrix = DMatrix<f64>;

/// Tolerance for the symmetry check of a full metric matrix.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Smallest eigenvalue a metric matrix may have and still count as PSD.
pub const PSD_TOL: f64 = -1e-8;
/// Mahalanobis values in `[-CLAMP_TOL, 0)` are rounding noise and clamp to zero.
pub const CLAMP_TOL: f64 = 1e-9;

/// An L2-normalized global image descriptor.
///
/// Components are stored as `f32`; every distance is accumulated in `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Descriptor {
    values: Vec<f32>,
}

impl Descriptor {
    /// Normalizes `raw` to unit length.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        l2_normalize(raw)
    }

    /// Normalizes an `f32` vector to unit length.
    pub fn from_f32(raw: &[f32]) -> Result<Self> {
        let wide: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
        l2_normalize(&wide)
    }

    /// Wraps values that are already unit length.
    pub(crate) fn from_unit(values: Vec<f32>) -> Self {
        Descriptor { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

impl AsRef<[f32]> for Descriptor {
    fn as_ref(&self) -> &[f32] {
        &self.values
    }
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize(v: &[f64]) -> Result<Descriptor> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::param("vector contains non-finite values"));
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Normalization);
    }
    Ok(Descriptor { values: v.iter().map(|x| (x / n) as f32).collect() })
}

/// Squared Euclidean distance between two raw slices.
pub fn sq_euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: a, got: b });
    }
    Ok(())
}

pub fn euclidean_dist(a: &Descriptor, b: &Descriptor) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(sq_euclidean(a.as_slice(), b.as_slice()).sqrt())
}

/// Squared Mahalanobis distance `(a-b)ᵀ M (a-b)`.
pub fn mahalanobis_dist(a: &Descriptor, b: &Descriptor, m: &LearnedMetric) -> Result<f64> {
    m.distance(a.as_slice(), b.as_slice())
}

/// A positive semi-definite matrix defining a Mahalanobis distance.
///
/// The diagonal form is a compact encoding of a feature weighting.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnedMetric {
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

impl LearnedMetric {
    /// The Euclidean prior, in compact diagonal form.
    pub fn identity(dim: usize) -> Self {
        LearnedMetric::Diagonal(vec![1.0; dim])
    }

    pub fn full_identity(dim: usize) -> Self {
        LearnedMetric::Full(DMatrix::identity(dim, dim))
    }

    pub fn diagonal(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Metric("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Metric(format!("diagonal weight {w} is negative or non-finite")));
        }
        Ok(LearnedMetric::Diagonal(weights))
    }

    /// Wraps a full matrix after checking symmetry and positive semi-definiteness.
    pub fn full(m: DMatrix<f64>) -> Result<Self> {
        validate_full(&m)?;
        Ok(LearnedMetric::Full(m))
    }

    pub fn dim(&self) -> usize {
        match self {
            LearnedMetric::Diagonal(w) => w.len(),
            LearnedMetric::Full(m) => m.nrows(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            LearnedMetric::Diagonal(w) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(w)),
            LearnedMetric::Full(m) => m.clone(),
        }
    }

    /// Re-checks the metric invariants. Useful after deserialization.
    pub fn validate(&self) -> Result<()> {
        match self {
            LearnedMetric::Diagonal(w) => {
                if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::Metric("negative diagonal weight".into()));
                }
                Ok(())
            }
            LearnedMetric::Full(m) => validate_full(m),
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            LearnedMetric::Diagonal(w) => w.iter().all(|&v| v == 1.0),
            LearnedMetric::Full(m) => *m == DMatrix::identity(m.nrows(), m.ncols()),
        }
    }

    /// Squared distance between two raw slices under this metric.
    pub fn distance(&self, a: &[f32], b: &[f32]) -> Result<f64> {
        check_dims(a.len(), b.len())?;
        check_dims(self.dim(), a.len())?;
        let d = self.distance_unchecked(a, b);
        if d < -CLAMP_TOL {
            return Err(Error::Metric(format!("negative squared distance {d}")));
        }
        Ok(d.max(0.0))
    }

    /// Raw quadratic form with no dimension or sign checks.
    pub(crate) fn distance_unchecked(&self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            LearnedMetric::Diagonal(w) => a
                .iter()
                .zip(b)
                .zip(w)
                .map(|((&x, &y), &wk)| {
                    let d = x as f64 - y as f64;
                    wk * d * d
                })
                .sum(),
            LearnedMetric::Full(m) => {
                let diff: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x as f64 - y as f64).collect();
                quad_form(m, &diff)
            }
        }
    }

    /// A factor `L` with `M = LᵀL`.
    pub fn factor(&self) -> MetricFactor {
        match self {
            LearnedMetric::Diagonal(w) => MetricFactor::Diagonal(w.iter().map(|v| v.sqrt()).collect()),
            LearnedMetric::Full(m) => {
                let eig = SymmetricEigen::new(m.clone());
                let mut l = eig.eigenvectors.transpose();
                for (k, lam) in eig.eigenvalues.iter().enumerate() {
                    let s = lam.max(0.0).sqrt();
                    l.row_mut(k).iter_mut().for_each(|v| *v *= s);
                }
                MetricFactor::Full(l)
            }
        }
    }

    /// Maps `x` into the space where Euclidean distance equals this metric.
    pub fn transform(&self, x: &[f32]) -> Vec<f64> {
        self.factor().apply(x)
    }
}

/// Linear map `L` of a metric `M = LᵀL`.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricFactor {
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

impl MetricFactor {
    pub fn apply(&self, x: &[f32]) -> Vec<f64> {
        match self {
            MetricFactor::Diagonal(s) => x.iter().zip(s).map(|(&v, &sk)| v as f64 * sk).collect(),
            MetricFactor::Full(l) => {
                let n = l.nrows();
                let data = l.as_slice();
                let mut y = vec![0.0; n];
                for (j, &xj) in x.iter().enumerate() {
                    let xj = xj as f64;
                    if xj == 0.0 {
                        continue;
                    }
                    y.iter_mut().zip(&data[j * n..(j + 1) * n]).for_each(|(yi, &lij)| *yi += lij * xj);
                }
                y
            }
        }
    }
}

fn validate_full(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Metric(format!("matrix must be square and nonempty, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Metric("matrix has non-finite entries".into()));
    }
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::Metric(format!("matrix is not symmetric (max deviation {asym:e})")));
    }
    // M - PSD_TOL·I is positive definite iff the smallest eigenvalue exceeds PSD_TOL.
    let shifted = m + DMatrix::identity(m.nrows(), m.ncols()) * (-PSD_TOL);
    if nalgebra::Cholesky::new(shifted).is_none() {
        let min_eig = min_eigenvalue(m);
        return Err(Error::Metric(format!("matrix is not PSD (smallest eigenvalue {min_eig:e})")));
    }
    Ok(())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `vᵀ M v` for a symmetric column-major matrix.
pub(crate) fn quad_form(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let data = m.as_slice();
    let mut acc = 0.0;
    for (j, &vj) in v.iter().enumerate() {
        if vj == 0.0 {
            continue;
        }
        let col = &data[j * n..(j + 1) * n];
        let dot: f64 = col.iter().zip(v).map(|(a, b)| a * b).sum();
        acc += vj * dot;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn d(v: &[f64]) -> Descriptor {
        l2_normalize(v).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let x = d(&[3.0, 4.0]);
        assert_abs_diff_eq!(x.as_slice()[0] as f64, 0.6, epsilon = 1e-7);
        assert_abs_diff_eq!(x.as_slice()[1] as f64, 0.8, epsilon = 1e-7);
        assert_eq!(d(&[1.0, 0.0]).as_slice(), &[1.0, 0.0]);
        assert_eq!(l2_normalize(&[0.0, 0.0]), Err(Error::Normalization));
    }

    #[test]
    fn euclidean_examples() {
        let e = euclidean_dist(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap();
        assert_abs_diff_eq!(e, 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(euclidean_dist(&d(&[0.6, 0.8]), &d(&[0.6, 0.8])).unwrap(), 0.0);
        let e = euclidean_dist(&d(&[0.6, 0.8]), &d(&[1.0, 0.0])).unwrap();
        // sqrt(0.4^2 + 0.8^2)
        assert_abs_diff_eq!(e, 0.894427191, epsilon = 1e-7);
        assert!(matches!(euclidean_dist(&d(&[1.0, 0.0]), &d(&[1.0, 0.0, 0.0])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn mahalanobis_examples() {
        let i = LearnedMetric::full_identity(2);
        assert_abs_diff_eq!(i.distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0, epsilon = 1e-12);
        let w = LearnedMetric::diagonal(vec![2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(w.distance(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 2.0, epsilon = 1e-12);
        let m = LearnedMetric::full(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        // diff (1,-1): 2 - 1 - 1 + 2
        assert_abs_diff_eq!(m.distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_invalid_metrics() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(LearnedMetric::full(asym), Err(Error::Metric(_))));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(LearnedMetric::full(indefinite), Err(Error::Metric(_))));
        assert!(matches!(LearnedMetric::diagonal(vec![1.0, -0.1]), Err(Error::Metric(_))));
    }

    #[test]
    fn clamps_rounding_noise_but_not_real_negatives() {
        // Deliberately bypass validation to exercise the sign guard.
        let bad = LearnedMetric::Full(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]));
        assert!(matches!(bad.distance(&[1.0, 0.0], &[0.0, 0.0]), Err(Error::Metric(_))));
        let tiny = LearnedMetric::Full(DMatrix::from_row_slice(1, 1, &[-1e-12]));
        assert_eq!(tiny.distance(&[1.0], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn transform_matches_quadratic_form() {
        let m = LearnedMetric::full(DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 0.7]))
            .unwrap();
        let a = [0.3f32, -0.2, 0.9];
        let b = [0.1f32, 0.4, -0.3];
        let ta = m.transform(&a);
        let tb = m.transform(&b);
        let via_transform: f64 = ta.iter().zip(&tb).map(|(x, y)| (x - y) * (x - y)).sum();
        assert_abs_diff_eq!(via_transform, m.distance(&a, &b).unwrap(), epsilon = 1e-9);
    }
}
