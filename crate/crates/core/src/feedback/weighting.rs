//! Diagonal metric learning: feature weighting and diagonal MMC.
//!
//! Both optimizers take normalized projected-gradient steps of length
//! `step · ‖w‖` for a fixed number of iterations and return the best iterate,
//! so the objective never ends above its starting value.

use serde::{Deserialize, Serialize};

use crate::descriptor::LearnedMetric;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub step: f64,
    pub iterations: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { step: 0.01, iterations: 500 }
    }
}

/// A fitted diagonal metric with objective values before and after.
#[derive(Debug, Clone)]
pub struct WeightFit {
    pub metric: LearnedMetric,
    pub initial_objective: f64,
    pub objective: f64,
}

impl WeightFit {
    pub fn weights(&self) -> &[f64] {
        match &self.metric {
            LearnedMetric::Diagonal(w) => w,
            LearnedMetric::Full(_) => unreachable!("weighting always yields a diagonal metric"),
        }
    }
}

fn sq_diff(a: &[f32], b: &[f32]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .collect()
}

/// Per-dimension squared differences of all pairs within `pos`.
fn similar_pairs(pos: &[&[f32]]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            out.push(sq_diff(pos[i], pos[j]));
        }
    }
    out
}

fn dissimilar_pairs(pos: &[&[f32]], neg: &[&[f32]]) -> Vec<Vec<f64>> {
    pos.iter().flat_map(|p| neg.iter().map(move |n| sq_diff(p, n))).collect()
}

fn column_sums(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for r in rows {
        acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
    }
    acc
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_dims(pos: &[&[f32]], neg: &[&[f32]]) -> Result<usize> {
    let dim = pos.first().or(neg.first()).map(|x| x.len()).ok_or_else(|| Error::Feedback("no feedback".into()))?;
    if let Some(bad) = pos.iter().chain(neg).find(|x| x.len() != dim) {
        return Err(Error::Dimension { expected: dim, got: bad.len() });
    }
    Ok(dim)
}

/// Sums of per-dimension squared differences over similar and dissimilar pairs.
#[derive(Debug, Clone)]
pub struct PairSums {
    pub similar: Vec<f64>,
    pub dissimilar: Option<Vec<f64>>,
}

impl PairSums {
    pub fn new(pos: &[&[f32]], neg: &[&[f32]]) -> Result<Self> {
        let dim = check_dims(pos, neg)?;
        let sim = similar_pairs(pos);
        let dis = dissimilar_pairs(pos, neg);
        if sim.is_empty() && dis.is_empty() {
            return Err(Error::Feedback("no similar or dissimilar pairs can be formed".into()));
        }
        Ok(PairSums {
            similar: column_sums(&sim, dim),
            dissimilar: (!dis.is_empty()).then(|| column_sums(&dis, dim)),
        })
    }

    /// `Σ_sim d_w / Σ_dis d_w`, or just `Σ_sim d_w` without dissimilar pairs.
    pub fn ratio(&self, w: &[f64]) -> f64 {
        let s = dot(w, &self.similar);
        match &self.dissimilar {
            Some(d) => s / dot(w, d).max(f64::MIN_POSITIVE),
            None => s,
        }
    }

    fn ratio_gradient(&self, w: &[f64]) -> Vec<f64> {
        match &self.dissimilar {
            None => self.similar.clone(),
            Some(d) => {
                let s = dot(w, &self.similar);
                let dn = dot(w, d).max(f64::MIN_POSITIVE);
                self.similar.iter().zip(d).map(|(sk, dk)| (sk * dn - s * dk) / (dn * dn)).collect()
            }
        }
    }
}

/// Feature weighting: minimizes the ratio of similar to dissimilar pair
/// distances over nonnegative weights with `Σw = D`, starting from `w = 1`.
pub fn feature_weighting_fit(pos: &[&[f32]], neg: &[&[f32]], cfg: &OptimizerConfig) -> Result<WeightFit> {
    let sums = PairSums::new(pos, neg)?;
    let dim = sums.similar.len();
    let target = dim as f64;
    let mut w = vec![1.0; dim];
    let initial = sums.ratio(&w);
    let mut best = (initial, w.clone());
    for _ in 0..cfg.iterations {
        let g = sums.ratio_gradient(&w);
        let gn = l2(&g);
        if gn == 0.0 || !gn.is_finite() {
            break;
        }
        let scale = cfg.step * l2(&w) / gn;
        let mut next: Vec<f64> = w.iter().zip(&g).map(|(wk, gk)| (wk - scale * gk).max(0.0)).collect();
        let total: f64 = next.iter().sum();
        if total <= 0.0 {
            break;
        }
        next.iter_mut().for_each(|v| *v *= target / total);
        w = next;
        let j = sums.ratio(&w);
        if j < best.0 {
            best = (j, w.clone());
        }
    }
    Ok(WeightFit { metric: LearnedMetric::diagonal(best.1)?, initial_objective: initial, objective: best.0 })
}

/// Sufficient statistics of the diagonal MMC problem.
#[derive(Debug, Clone)]
pub struct MmcProblem {
    similar: Vec<f64>,
    dissimilar: Vec<Vec<f64>>,
}

impl MmcProblem {
    pub fn new(pos: &[&[f32]], neg: &[&[f32]]) -> Result<Self> {
        let dim = check_dims(pos, neg)?;
        let dissimilar = dissimilar_pairs(pos, neg);
        if dissimilar.is_empty() {
            return Err(Error::Feedback("diagonal MMC needs at least one dissimilar pair".into()));
        }
        Ok(MmcProblem { similar: column_sums(&similar_pairs(pos), dim), dissimilar })
    }

    /// `Σ_sim d_w`.
    pub fn similar_spread(&self, w: &[f64]) -> f64 {
        dot(w, &self.similar)
    }

    /// `Σ_dis √d_w`; the constraint asks for this to be at least one.
    pub fn separation(&self, w: &[f64]) -> f64 {
        self.dissimilar.iter().map(|p| dot(w, p).max(0.0).sqrt()).sum()
    }

    /// Log-barrier form `Σ_sim d_w − ln Σ_dis √d_w`.
    pub fn objective(&self, w: &[f64]) -> f64 {
        self.similar_spread(w) - self.separation(w).ln()
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let c = self.separation(w);
        let mut g = self.similar.clone();
        for p in &self.dissimilar {
            let coef = 1.0 / (2.0 * c * (dot(w, p).max(0.0) + 1e-12).sqrt());
            g.iter_mut().zip(p).for_each(|(gk, pk)| *gk -= coef * pk);
        }
        g
    }
}

/// Diagonal MMC: minimize `Σ_sim d_w` subject to `Σ_dis √d_w ≥ 1`, `w ≥ 0`.
///
/// Solved on the equivalent log-barrier objective, then rescaled so the
/// separation constraint holds with equality.
pub fn mmc_diag_fit(pos: &[&[f32]], neg: &[&[f32]], cfg: &OptimizerConfig) -> Result<WeightFit> {
    let problem = MmcProblem::new(pos, neg)?;
    let dim = problem.similar.len();
    let ones = vec![1.0; dim];
    let c0 = problem.separation(&ones);
    if c0 <= 0.0 {
        return Err(Error::Feedback("dissimilar pairs coincide; separation is infeasible".into()));
    }
    // Start on the constraint boundary so the iteration is invariant to data scale.
    let mut w: Vec<f64> = ones.iter().map(|v| v / (c0 * c0)).collect();
    let initial = problem.similar_spread(&w);
    let mut best = (problem.objective(&w), w.clone());
    for _ in 0..cfg.iterations {
        let g = problem.gradient(&w);
        let gn = l2(&g);
        if gn == 0.0 || !gn.is_finite() {
            break;
        }
        let scale = cfg.step * l2(&w) / gn;
        let next: Vec<f64> = w.iter().zip(&g).map(|(wk, gk)| (wk - scale * gk).max(0.0)).collect();
        if problem.separation(&next) <= 0.0 {
            break;
        }
        w = next;
        let obj = problem.objective(&w);
        if obj < best.0 {
            best = (obj, w.clone());
        }
    }
    let mut w = best.1;
    let c = problem.separation(&w);
    w.iter_mut().for_each(|v| *v /= c * c);
    let objective = problem.similar_spread(&w);
    Ok(WeightFit { metric: LearnedMetric::diagonal(w)?, initial_objective: initial, objective })
}
