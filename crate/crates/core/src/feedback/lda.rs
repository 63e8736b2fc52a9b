//! Exemplar-LDA: a linear classifier of the positive mean against corpus-wide
//! background statistics. Feedback negatives are not used.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::index::CorpusIndex;

use super::svm::LinearScorer;

/// Mean and covariance of the whole corpus, with a cached factorization of
/// `Σ + λI`.
#[derive(Debug, Clone)]
pub struct BackgroundStats {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    shrinkage: f64,
    factor: Cholesky<f64, Dyn>,
}

impl BackgroundStats {
    /// Builds from explicit statistics with ridge `shrinkage` (λ).
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>, shrinkage: f64) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::Dimension { expected: d, got: covariance.nrows() });
        }
        if (&covariance - covariance.transpose()).amax() > 1e-9 {
            return Err(Error::Conditioning("background covariance is not symmetric".into()));
        }
        let regularized = &covariance + DMatrix::identity(d, d) * shrinkage;
        let factor = Cholesky::new(regularized)
            .ok_or_else(|| Error::Conditioning(format!("Σ_bg + {shrinkage}·I is not positive definite")))?;
        Ok(BackgroundStats { mean: DVector::from_vec(mean), covariance, shrinkage, factor })
    }

    /// Corpus statistics with `λ = factor · trace(Σ) / D`.
    pub fn from_index(index: &CorpusIndex, shrinkage_factor: f64) -> Result<Self> {
        let n = index.len();
        let d = index.dim();
        if n == 0 {
            return Err(Error::EmptyIndex);
        }
        let x = DMatrix::from_row_iterator(n, d, index.raw_data().iter().map(|&v| v as f64));
        let mean: Vec<f64> = (0..d).map(|k| x.column(k).sum() / n as f64).collect();
        let mut centered = x;
        for (k, mu) in mean.iter().enumerate() {
            centered.column_mut(k).add_scalar_mut(-mu);
        }
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        let mut cov = centered.tr_mul(&centered) / denom;
        // Symmetrize away summation-order noise.
        cov = (&cov + cov.transpose()) * 0.5;
        let lambda = shrinkage_factor * cov.trace() / d as f64;
        Self::new(mean, cov, lambda)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }
}

/// `w = (Σ_bg + λI)⁻¹ (μ_pos − μ_bg)`, `score(x) = ⟨w, x⟩`.
pub fn exemplar_lda_fit(pos: &[&[f32]], bg: &BackgroundStats) -> Result<LinearScorer> {
    let d = bg.dim();
    if pos.is_empty() {
        return Err(Error::Feedback("Exemplar-LDA needs a relevant example".into()));
    }
    if let Some(bad) = pos.iter().find(|x| x.len() != d) {
        return Err(Error::Dimension { expected: d, got: bad.len() });
    }
    let mut diff = DVector::<f64>::zeros(d);
    for x in pos {
        diff.iter_mut().zip(x.iter()).for_each(|(a, &v)| *a += v as f64);
    }
    diff /= pos.len() as f64;
    diff -= &bg.mean;
    let w = bg.factor.solve(&diff);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Conditioning("Exemplar-LDA solve produced non-finite weights".into()));
    }
    Ok(LinearScorer { weights: w.as_slice().to_vec(), bias: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_background_gives_mean_difference() {
        let bg = BackgroundStats::new(vec![0.1, -0.2], DMatrix::identity(2, 2), 0.0).unwrap();
        let pos: Vec<&[f32]> = vec![&[1.0, 0.0], &[0.0, 1.0]];
        let s = exemplar_lda_fit(&pos, &bg).unwrap();
        assert_abs_diff_eq!(s.weights[0], 0.5 - 0.1, epsilon = 1e-7);
        assert_abs_diff_eq!(s.weights[1], 0.5 + 0.2, epsilon = 1e-7);
    }

    #[test]
    fn positive_mean_at_background_mean_is_flat() {
        let bg = BackgroundStats::new(vec![0.5, 0.5], DMatrix::identity(2, 2), 0.0).unwrap();
        let pos: Vec<&[f32]> = vec![&[0.5, 0.5]];
        let s = exemplar_lda_fit(&pos, &bg).unwrap();
        assert_eq!(s.decision(&[1.0, -3.0]), s.decision(&[0.2, 0.9]));
    }

    #[test]
    fn anisotropic_background_matches_direct_solve() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
        let bg = BackgroundStats::new(vec![0.0, 0.0], cov, 0.1).unwrap();
        let pos: Vec<&[f32]> = vec![&[1.0, 2.0]];
        let s = exemplar_lda_fit(&pos, &bg).unwrap();
        // [[2.1, 0.6], [0.6, 0.6]] w = [1, 2] by Cramer's rule
        let det = 2.1 * 0.6 - 0.6 * 0.6;
        let w0 = (1.0 * 0.6 - 0.6 * 2.0) / det;
        let w1 = (2.1 * 2.0 - 0.6 * 1.0) / det;
        assert_abs_diff_eq!(s.weights[0], w0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.weights[1], w1, epsilon = 1e-9);
    }

    #[test]
    fn singular_background_is_a_conditioning_error() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(BackgroundStats::new(vec![0.0, 0.0], cov, 0.0), Err(Error::Conditioning(_))));
    }
}
