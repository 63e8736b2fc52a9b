//! Kernel density relevance model.
//!
//! Relevance probability is `p(x|R) / (p(x|R) + p(x|N))` with Gaussian kernel
//! densities over the positive and negative exemplars. Densities are kept in
//! log space so far-away points do not underflow to `0/0`.

use crate::descriptor::{LearnedMetric, MetricFactor};
use crate::error::{Error, Result};
use crate::index::CorpusIndex;

use super::median;

#[derive(Debug, Clone)]
pub struct KdeScorer {
    metric: Option<LearnedMetric>,
    factor: Option<MetricFactor>,
    positives: Vec<Vec<f64>>,
    negatives: Vec<Vec<f64>>,
    h_pos: f64,
    h_neg: f64,
    /// Log of the constant negative density used when no negatives exist.
    uniform_negative: Option<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn bandwidth(points: &[Vec<f64>], fallback: f64) -> f64 {
    if points.len() >= 2 {
        let mut d = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                d.push(sq_dist(&points[i], &points[j]).sqrt());
            }
        }
        let h = median(&mut d);
        if h > 0.0 {
            return h;
        }
    }
    fallback
}

fn log_sum_exp(vals: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = vals.collect();
    let peak = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return peak;
    }
    peak + vals.iter().map(|v| (v - peak).exp()).sum::<f64>().ln()
}

impl KdeScorer {
    /// Fits the two densities.
    ///
    /// Each density's bandwidth is the median pairwise distance among its
    /// exemplars, or `fallback_bandwidth` with fewer than two exemplars. With
    /// no negatives, call [`set_uniform_negative`](Self::set_uniform_negative)
    /// before scoring; until then the negative density is the kernel value at
    /// one bandwidth.
    pub fn fit(
        pos: &[&[f32]],
        neg: &[&[f32]],
        metric: Option<LearnedMetric>,
        fallback_bandwidth: f64,
    ) -> Result<Self> {
        if pos.is_empty() {
            return Err(Error::Feedback("KDE needs at least one relevant exemplar".into()));
        }
        if !(fallback_bandwidth > 0.0 && fallback_bandwidth.is_finite()) {
            return Err(Error::param(format!("KDE fallback bandwidth must be positive, got {fallback_bandwidth}")));
        }
        let dim = pos[0].len();
        if let Some(bad) = pos.iter().chain(neg).find(|x| x.len() != dim) {
            return Err(Error::Dimension { expected: dim, got: bad.len() });
        }
        if let Some(m) = &metric {
            if m.dim() != dim {
                return Err(Error::Dimension { expected: dim, got: m.dim() });
            }
        }
        let factor = metric.as_ref().map(LearnedMetric::factor);
        let map = |x: &[f32]| match &factor {
            Some(f) => f.apply(x),
            None => x.iter().map(|&v| v as f64).collect(),
        };
        let positives: Vec<Vec<f64>> = pos.iter().map(|x| map(x)).collect();
        let negatives: Vec<Vec<f64>> = neg.iter().map(|x| map(x)).collect();
        let h_pos = bandwidth(&positives, fallback_bandwidth);
        let h_neg = bandwidth(&negatives, fallback_bandwidth);
        Ok(KdeScorer { metric, factor, positives, negatives, h_pos, h_neg, uniform_negative: None })
    }

    pub fn metric(&self) -> Option<&LearnedMetric> {
        self.metric.as_ref()
    }

    pub fn bandwidths(&self) -> (f64, f64) {
        (self.h_pos, self.h_neg)
    }

    /// Sets the constant negative density (not its log) used without negatives.
    pub fn set_uniform_negative(&mut self, density: f64) {
        self.uniform_negative = Some(density.max(f64::MIN_POSITIVE).ln());
    }

    fn map(&self, x: &[f32]) -> Vec<f64> {
        match &self.factor {
            Some(f) => f.apply(x),
            None => x.iter().map(|&v| v as f64).collect(),
        }
    }

    fn log_density(points: &[Vec<f64>], h: f64, x: &[f64]) -> f64 {
        let inv = 1.0 / (2.0 * h * h);
        log_sum_exp(points.iter().map(|p| -sq_dist(p, x) * inv)) - (points.len() as f64).ln()
    }

    pub fn log_density_relevant(&self, x: &[f32]) -> f64 {
        Self::log_density(&self.positives, self.h_pos, &self.map(x))
    }

    fn log_odds_mapped(&self, y: &[f64]) -> f64 {
        let lr = Self::log_density(&self.positives, self.h_pos, y);
        let ln = if self.negatives.is_empty() {
            self.uniform_negative.unwrap_or(-0.5)
        } else {
            Self::log_density(&self.negatives, self.h_neg, y)
        };
        lr - ln
    }

    /// `ln p(x|R) - ln p(x|N)`.
    pub fn log_odds(&self, x: &[f32]) -> f64 {
        self.log_odds_mapped(&self.map(x))
    }

    pub fn probability_from_log_odds(&self, z: f64) -> f64 {
        if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        }
    }

    /// `P(relevant | x)` in `[0, 1]`.
    pub fn score(&self, x: &[f32]) -> f64 {
        self.probability_from_log_odds(self.log_odds(x))
    }

    /// Mean of the relevant density over the corpus, skipping `exclude`.
    pub fn mean_positive_density(&self, index: &CorpusIndex, exclude: Option<usize>) -> f64 {
        let logs = index.map_positions(|x| self.log_density_relevant(x));
        let kept: Vec<f64> =
            logs.into_iter().enumerate().filter(|(p, _)| Some(*p) != exclude).map(|(_, v)| v).collect();
        if kept.is_empty() {
            return 0.0;
        }
        (log_sum_exp(kept.iter().copied()) - (kept.len() as f64).ln()).exp()
    }
}
