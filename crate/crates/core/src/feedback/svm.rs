//! Linear SVMs solved in the dual.
//!
//! The two-class machine uses dual coordinate descent on the hinge loss with
//! the bias folded in as a constant feature. The one-class machine (ν form)
//! uses SMO-style pair updates that keep `Σα = 1`. Both sweep samples in input
//! order, so results are deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    /// Soft-margin constant of the two-class machine.
    pub c: f64,
    /// ν of the one-class machine.
    pub nu: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { c: 1.0, nu: 0.5, tolerance: 1e-9, max_iterations: 100_000 }
    }
}

/// `score(x) = ⟨w, x⟩ + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearScorer {
    pub fn decision(&self, x: &[f32]) -> f64 {
        self.weights.iter().zip(x).map(|(w, &v)| w * v as f64).sum::<f64>() + self.bias
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn check(pos: &[&[f32]], neg: &[&[f32]]) -> Result<usize> {
    let dim = pos.first().map(|p| p.len()).ok_or_else(|| Error::Feedback("SVM needs a relevant example".into()))?;
    if let Some(bad) = pos.iter().chain(neg).find(|x| x.len() != dim) {
        return Err(Error::Dimension { expected: dim, got: bad.len() });
    }
    Ok(dim)
}

/// Two-class SVM when negatives exist, one-class SVM otherwise.
pub fn svm_fit(pos: &[&[f32]], neg: &[&[f32]], cfg: &SvmConfig) -> Result<LinearScorer> {
    check(pos, neg)?;
    if neg.is_empty() {
        one_class_svm_fit(pos, cfg)
    } else {
        binary_svm_fit(pos, neg, cfg)
    }
}

/// Hinge-loss SVM: `min ½‖w‖² + C Σ max(0, 1 − yᵢ(⟨w,xᵢ⟩ + b))` with `b`
/// regularized as an extra weight.
pub fn binary_svm_fit(pos: &[&[f32]], neg: &[&[f32]], cfg: &SvmConfig) -> Result<LinearScorer> {
    let dim = check(pos, neg)?;
    if !(cfg.c > 0.0) {
        return Err(Error::param(format!("SVM C must be positive, got {}", cfg.c)));
    }
    let samples: Vec<(&[f32], f64)> =
        pos.iter().map(|x| (*x, 1.0)).chain(neg.iter().map(|x| (*x, -1.0))).collect();
    let diag: Vec<f64> = samples.iter().map(|(x, _)| dot(x, x) + 1.0).collect();
    let mut alpha = vec![0.0; samples.len()];
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    for _ in 0..cfg.max_iterations {
        let mut max_pg = 0.0f64;
        for (i, (x, y)) in samples.iter().enumerate() {
            let g = y * (w.iter().zip(x.iter()).map(|(wk, &v)| wk * v as f64).sum::<f64>() + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= cfg.c {
                g.max(0.0)
            } else {
                g
            };
            max_pg = max_pg.max(pg.abs());
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / diag[i]).clamp(0.0, cfg.c);
                let step = (alpha[i] - old) * y;
                w.iter_mut().zip(x.iter()).for_each(|(wk, &v)| *wk += step * v as f64);
                b += step;
            }
        }
        if max_pg < cfg.tolerance {
            break;
        }
    }
    Ok(LinearScorer { weights: w, bias: b })
}

/// Linear one-class SVM: `min ½‖w‖² + 1/(νn) Σξᵢ − ρ` s.t. `⟨w,xᵢ⟩ ≥ ρ − ξᵢ`.
/// The decision value is `⟨w,x⟩ − ρ`.
pub fn one_class_svm_fit(pos: &[&[f32]], cfg: &SvmConfig) -> Result<LinearScorer> {
    let dim = check(pos, &[])?;
    if !(cfg.nu > 0.0 && cfg.nu <= 1.0) {
        return Err(Error::param(format!("one-class ν must lie in (0, 1], got {}", cfg.nu)));
    }
    let n = pos.len();
    let ub = 1.0 / (cfg.nu * n as f64);
    let gram: Vec<Vec<f64>> = pos.iter().map(|a| pos.iter().map(|b| dot(a, b)).collect()).collect();

    // Feasible start: fill the first ⌊νn⌋ coefficients to the bound.
    let mut alpha = vec![0.0; n];
    let mut remaining = 1.0f64;
    for a in alpha.iter_mut() {
        let take = ub.min(remaining);
        *a = take;
        remaining -= take;
        if remaining <= 0.0 {
            break;
        }
    }
    let mut grad: Vec<f64> = (0..n).map(|i| (0..n).map(|j| gram[i][j] * alpha[j]).sum()).collect();

    for _ in 0..cfg.max_iterations {
        // i: may grow, smallest gradient; j: may shrink, largest gradient.
        let i = (0..n).filter(|&k| alpha[k] < ub).min_by(|&a, &b| grad[a].total_cmp(&grad[b]));
        let j = (0..n).filter(|&k| alpha[k] > 0.0).max_by(|&a, &b| grad[a].total_cmp(&grad[b]));
        let (Some(i), Some(j)) = (i, j) else { break };
        if grad[j] - grad[i] < cfg.tolerance {
            break;
        }
        let curvature = (gram[i][i] + gram[j][j] - 2.0 * gram[i][j]).max(1e-12);
        let delta = ((grad[j] - grad[i]) / curvature).min(ub - alpha[i]).min(alpha[j]);
        alpha[i] += delta;
        alpha[j] -= delta;
        for (k, g) in grad.iter_mut().enumerate() {
            *g += delta * (gram[k][i] - gram[k][j]);
        }
    }

    let mut w = vec![0.0; dim];
    for (a, x) in alpha.iter().zip(pos) {
        w.iter_mut().zip(x.iter()).for_each(|(wk, &v)| *wk += a * v as f64);
    }
    let free: Vec<f64> =
        (0..n).filter(|&k| alpha[k] > 1e-12 && alpha[k] < ub - 1e-12).map(|k| grad[k]).collect();
    let rho = if !free.is_empty() {
        free.iter().sum::<f64>() / free.len() as f64
    } else {
        let lo = (0..n).filter(|&k| alpha[k] < ub).map(|k| grad[k]).fold(f64::INFINITY, f64::min);
        let hi = (0..n).filter(|&k| alpha[k] > 0.0).map(|k| grad[k]).fold(f64::NEG_INFINITY, f64::max);
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo,
            (false, true) => hi,
            (false, false) => 0.0,
        }
    };
    Ok(LinearScorer { weights: w, bias: -rho })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn separable_training_points_get_correct_sign() {
        let pos: Vec<&[f32]> = vec![&[1.0, 1.0], &[2.0, 0.5], &[1.5, 2.0]];
        let neg: Vec<&[f32]> = vec![&[-1.0, -1.0], &[-2.0, 0.0], &[-0.5, -2.0]];
        let s = svm_fit(&pos, &neg, &SvmConfig::default()).unwrap();
        assert!(pos.iter().all(|x| s.decision(x) > 0.0));
        assert!(neg.iter().all(|x| s.decision(x) < 0.0));
    }

    #[test]
    fn symmetric_pair_gives_axis_normal() {
        let pos: Vec<&[f32]> = vec![&[1.0, 0.0]];
        let neg: Vec<&[f32]> = vec![&[-1.0, 0.0]];
        let s = svm_fit(&pos, &neg, &SvmConfig::default()).unwrap();
        assert!(s.weights[0] > 0.0);
        assert_abs_diff_eq!(s.weights[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.bias, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn one_class_prefers_the_cluster() {
        let pos: Vec<&[f32]> = vec![&[1.1, 0.9], &[0.9, 1.05], &[1.0, 1.1], &[1.05, 0.95]];
        let s = svm_fit(&pos, &[], &SvmConfig::default()).unwrap();
        assert!(s.decision(&[1.0, 1.0]) > s.decision(&[-1.0, -1.0]));
    }

    #[test]
    fn one_class_single_point() {
        let pos: Vec<&[f32]> = vec![&[0.6, 0.8]];
        let s = svm_fit(&pos, &[], &SvmConfig::default()).unwrap();
        assert_abs_diff_eq!(s.decision(&[0.6, 0.8]), 0.0, epsilon = 1e-9);
        assert!(s.decision(&[0.8, 0.6]) < 0.0);
    }

    #[test]
    fn empty_positives_rejected() {
        let neg: Vec<&[f32]> = vec![&[1.0]];
        assert!(matches!(svm_fit(&[], &neg, &SvmConfig::default()), Err(Error::Feedback(_))));
    }

    #[test]
    fn order_of_training_samples_does_not_matter() {
        let pos: Vec<&[f32]> = vec![&[0.9, 0.2], &[0.7, 0.5], &[0.4, 0.1]];
        let neg: Vec<&[f32]> = vec![&[0.1, 0.8], &[0.3, 0.9], &[0.5, 0.6]];
        let a = svm_fit(&pos, &neg, &SvmConfig::default()).unwrap();
        let pos_r: Vec<&[f32]> = pos.iter().rev().copied().collect();
        let neg_r: Vec<&[f32]> = neg.iter().rev().copied().collect();
        let b = svm_fit(&pos_r, &neg_r, &SvmConfig::default()).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(a.bias, b.bias, epsilon = 1e-6);
    }
}
