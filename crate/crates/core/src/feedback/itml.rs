//! Information-theoretic metric learning by cyclic Bregman projections.
//!
//! Starting from the Euclidean prior `M₀ = I`, each projection is a rank-one
//! update `M ← M + β (Mv)(Mv)ᵀ` that moves one pair distance onto its bound.
//! Updates of this form keep `M` positive definite.
//!
//! Thresholds are per query and on squared distances:
//! similar pairs must satisfy `d_M ≤ u` with `u` half the squared distance
//! from the query to the first irrelevant baseline result, dissimilar pairs
//! `d_M ≥ l` with `l` the 95th percentile of squared query distances.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::{quad_form, LearnedMetric};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ItmlConfig {
    /// Slack trade-off γ. `None` enforces the constraints exactly.
    pub slack: Option<f64>,
    pub max_sweeps: usize,
    /// Convergence when the largest constraint violation drops below this.
    pub tolerance: f64,
    /// `u` as a fraction of the squared distance to the first irrelevant result.
    pub upper_fraction: f64,
    /// Percentile of squared query distances used for `l`.
    pub lower_percentile: f64,
}

impl Default for ItmlConfig {
    fn default() -> Self {
        ItmlConfig { slack: None, max_sweeps: 1000, tolerance: 1e-3, upper_fraction: 0.5, lower_percentile: 95.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItmlThresholds {
    pub upper: f64,
    pub lower: f64,
    /// Set when `u ≥ l` forced `u = 0.9·l`.
    pub adjusted: bool,
}

/// Linear-interpolation percentile (`p` in `[0, 100]`) of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(|a, b| a.total_cmp(b));
    let rank = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

impl ItmlThresholds {
    pub fn new(upper: f64, lower: f64) -> Self {
        if upper >= lower {
            ItmlThresholds { upper: 0.9 * lower, lower, adjusted: true }
        } else {
            ItmlThresholds { upper, lower, adjusted: false }
        }
    }

    /// Derives thresholds from a Euclidean baseline ranking `(position, distance)`.
    ///
    /// The reference for `u` is the first baseline result marked irrelevant;
    /// without negatives it is the first result not marked relevant.
    pub fn from_baseline(baseline: &[(usize, f64)], pos: &[usize], neg: &[usize], cfg: &ItmlConfig) -> Result<Self> {
        if baseline.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let first_irrelevant = baseline
            .iter()
            .find(|(p, _)| neg.contains(p))
            .or_else(|| baseline.iter().find(|(p, _)| !pos.contains(p)))
            .unwrap_or(&baseline[baseline.len() - 1]);
        let upper = cfg.upper_fraction * first_irrelevant.1 * first_irrelevant.1;
        let squared: Vec<f64> = baseline.iter().map(|(_, d)| d * d).collect();
        let lower = percentile(&squared, cfg.lower_percentile);
        Ok(Self::new(upper, lower))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Similar,
    Dissimilar,
}

#[derive(Debug, Clone)]
struct Constraint {
    a: usize,
    b: usize,
    kind: Kind,
    bound: f64,
    target: f64,
    dual: f64,
}

/// Seed of the projection order; fixed so fits are reproducible.
const ORDER_SEED: u64 = 0x1f3d_5b79;

#[derive(Debug, Clone)]
pub struct ItmlFit {
    pub metric: LearnedMetric,
    pub thresholds: ItmlThresholds,
    pub sweeps: usize,
    pub max_violation: f64,
    pub converged: bool,
}

/// ITML on explicit pairs of `points`.
pub fn itml_solve(
    points: &[&[f32]],
    similar: &[(usize, usize)],
    dissimilar: &[(usize, usize)],
    thresholds: ItmlThresholds,
    cfg: &ItmlConfig,
) -> Result<ItmlFit> {
    let dim = points.first().map(|p| p.len()).ok_or_else(|| Error::Feedback("no points".into()))?;
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::Dimension { expected: dim, got: bad.len() });
    }
    let mut constraints: Vec<Constraint> = similar
        .iter()
        .map(|&(a, b)| (a, b, Kind::Similar, thresholds.upper))
        .chain(dissimilar.iter().map(|&(a, b)| (a, b, Kind::Dissimilar, thresholds.lower)))
        .map(|(a, b, kind, bound)| Constraint { a, b, kind, bound, target: bound, dual: 0.0 })
        .collect();
    if let Some(c) = constraints.iter().find(|c| c.a >= points.len() || c.b >= points.len()) {
        return Err(Error::param(format!("pair ({}, {}) out of range", c.a, c.b)));
    }
    let pts: Vec<f64> = points.iter().flat_map(|p| p.iter().map(|&v| v as f64)).collect();
    let row = |i: usize| &pts[i * dim..(i + 1) * dim];
    // Coincident points give no direction to project along.
    let keep: Vec<bool> = constraints.iter().map(|c| row(c.a) != row(c.b)).collect();

    // Y holds M·xᵢ for every point, so M·(xₐ − x_b) costs O(D). M itself only
    // receives the rank-one updates in batches.
    let mut state = SweepState {
        dim,
        pts: &pts,
        y: pts.clone(),
        w: vec![0.0; dim],
        m: DMatrix::<f64>::identity(dim, dim),
        pending: Pending::new(dim),
        slack: cfg.slack,
    };

    // Constraints are visited in a fresh seeded order each sweep, which
    // converges in fewer sweeps than a fixed cycle.
    let mut order: Vec<usize> = (0..constraints.len()).filter(|&i| keep[i]).collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(ORDER_SEED);
    let mut sweeps = 0;
    let mut converged = false;
    for _ in 0..cfg.max_sweeps.max(1) {
        sweeps += 1;
        order.shuffle(&mut order_rng);
        let sweep_step = state.sweep(&mut constraints, &order);
        if cfg.slack.is_some() {
            if sweep_step < cfg.tolerance {
                converged = true;
                break;
            }
        } else if state.violation(&constraints, &order) < cfg.tolerance {
            // Confirm on M itself; `y` only tracks it up to rounding.
            state.pending.flush(&mut state.m);
            if current_violation(&state.m, &constraints, &pts, &keep) < cfg.tolerance {
                converged = true;
                break;
            }
        }
    }
    let SweepState { mut m, mut pending, .. } = state;
    pending.flush(&mut m);
    let m = (&m + m.transpose()) * 0.5;
    let max_violation = current_violation(&m, &constraints, &pts, &keep);
    let metric = LearnedMetric::full(m)?;
    Ok(ItmlFit { metric, thresholds, sweeps, max_violation, converged })
}

struct SweepState<'a> {
    dim: usize,
    /// Points, row-major.
    pts: &'a [f64],
    /// `M·xᵢ`, row-major.
    y: Vec<f64>,
    w: Vec<f64>,
    m: DMatrix<f64>,
    pending: Pending,
    slack: Option<f64>,
}

impl SweepState<'_> {
    /// One pass of Bregman projections over `order`. Returns the largest
    /// step taken.
    fn sweep(&mut self, constraints: &mut [Constraint], order: &[usize]) -> f64 {
        #[cfg(target_arch = "x86_64")]
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the CPU supports AVX2 and FMA, checked just above.
            return unsafe { self.sweep_avx2(constraints, order) };
        }
        self.sweep_body(constraints, order)
    }

    /// Same code compiled with wider vectors. Both paths use `mul_add`, so
    /// results match bit for bit.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn sweep_avx2(&mut self, constraints: &mut [Constraint], order: &[usize]) -> f64 {
        self.sweep_body(constraints, order)
    }

    /// Max violation of the current iterate, from the tracked `M·xᵢ`.
    fn violation(&self, constraints: &[Constraint], order: &[usize]) -> f64 {
        let dim = self.dim;
        order.iter().fold(0.0f64, |worst, &ci| {
            let c = &constraints[ci];
            let (ya, yb) = (&self.y[c.a * dim..(c.a + 1) * dim], &self.y[c.b * dim..(c.b + 1) * dim]);
            let (pa, pb) = (&self.pts[c.a * dim..(c.a + 1) * dim], &self.pts[c.b * dim..(c.b + 1) * dim]);
            let p: f64 = pa.iter().zip(pb).zip(ya.iter().zip(yb)).map(|((xa, xb), (a, b))| (xa - xb) * (a - b)).sum();
            worst.max(c.violation(p))
        })
    }

    #[inline(always)]
    fn sweep_body(&mut self, constraints: &mut [Constraint], order: &[usize]) -> f64 {
        let dim = self.dim;
        let gamma_proj = self.slack.map(|g| g / (g + 1.0)).unwrap_or(1.0);
        let mut sweep_step = 0.0f64;
        for &ci in order {
            let c = &mut constraints[ci];
            let (ya, yb) = (&self.y[c.a * dim..(c.a + 1) * dim], &self.y[c.b * dim..(c.b + 1) * dim]);
            self.w.iter_mut().zip(ya.iter().zip(yb)).for_each(|(o, (a, b))| *o = a - b);
            let pa = &self.pts[c.a * dim..(c.a + 1) * dim];
            let pb = &self.pts[c.b * dim..(c.b + 1) * dim];
            let p = dot(pa, &self.w) - dot(pb, &self.w);
            if p <= 1e-300 {
                continue;
            }
            let delta = c.kind.sign();
            let alpha = c.dual.min(delta * gamma_proj * (1.0 / p - 1.0 / c.target));
            if alpha == 0.0 {
                continue;
            }
            let beta = delta * alpha / (1.0 - delta * alpha * p);
            c.dual -= alpha;
            if let Some(g) = self.slack {
                c.target = g * c.target / (g + delta * alpha * c.target);
            }
            sweep_step = sweep_step.max((alpha * p).abs());
            for (yi, xi) in self.y.chunks_exact_mut(dim).zip(self.pts.chunks_exact(dim)) {
                let s = beta * dot(xi, &self.w);
                yi.iter_mut().zip(&self.w).for_each(|(a, b)| *a = s.mul_add(*b, *a));
            }
            self.pending.push(beta, &self.w, &mut self.m);
        }
        sweep_step
    }
}

impl Kind {
    fn sign(self) -> f64 {
        match self {
            Kind::Similar => 1.0,
            Kind::Dissimilar => -1.0,
        }
    }
}

impl Constraint {
    fn violation(&self, p: f64) -> f64 {
        match self.kind {
            Kind::Similar => p - self.bound,
            Kind::Dissimilar => self.bound - p,
        }
    }
}

/// Fused dot product with four independent accumulators.
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] = x[k].mul_add(y[k], acc[k]);
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Rank-one updates `β w wᵀ` waiting to be added to `M` as one product.
struct Pending {
    scaled: Vec<f64>,
    plain: Vec<f64>,
    dim: usize,
}

impl Pending {
    const BATCH: usize = 128;

    fn new(dim: usize) -> Self {
        Pending { scaled: Vec::new(), plain: Vec::new(), dim }
    }

    fn push(&mut self, beta: f64, w: &[f64], m: &mut DMatrix<f64>) {
        self.scaled.extend(w.iter().map(|v| beta * v));
        self.plain.extend_from_slice(w);
        if self.plain.len() >= Self::BATCH * self.dim {
            self.flush(m);
        }
    }

    fn flush(&mut self, m: &mut DMatrix<f64>) {
        if self.plain.is_empty() {
            return;
        }
        let cols = self.plain.len() / self.dim;
        let scaled = DMatrix::from_column_slice(self.dim, cols, &self.scaled);
        let plain = DMatrix::from_column_slice(self.dim, cols, &self.plain);
        m.gemm(1.0, &scaled, &plain.transpose(), 1.0);
        self.scaled.clear();
        self.plain.clear();
    }
}

fn current_violation(m: &DMatrix<f64>, constraints: &[Constraint], pts: &[f64], keep: &[bool]) -> f64 {
    let dim = m.nrows();
    let mut v = vec![0.0; dim];
    let mut worst = 0.0f64;
    for (c, _) in constraints.iter().zip(keep).filter(|(_, &k)| k) {
        let (pa, pb) = (&pts[c.a * dim..(c.a + 1) * dim], &pts[c.b * dim..(c.b + 1) * dim]);
        v.iter_mut().zip(pa.iter().zip(pb)).for_each(|(o, (x, y))| *o = x - y);
        worst = worst.max(c.violation(quad_form(m, &v)));
    }
    worst
}

/// ITML with similar pairs among `positives` and dissimilar pairs
/// `negatives × positives`. With no constraints the prior `I` is returned.
pub fn itml_pairs(
    positives: &[&[f32]],
    negatives: &[&[f32]],
    thresholds: ItmlThresholds,
    cfg: &ItmlConfig,
) -> Result<ItmlFit> {
    let np = positives.len();
    let points: Vec<&[f32]> = positives.iter().chain(negatives).copied().collect();
    let mut similar = Vec::new();
    for i in 0..np {
        for j in i + 1..np {
            similar.push((i, j));
        }
    }
    let dissimilar: Vec<(usize, usize)> =
        (0..negatives.len()).flat_map(|n| (0..np).map(move |p| (np + n, p))).collect();
    if points.is_empty() {
        return Err(Error::Feedback("ITML needs at least the query".into()));
    }
    itml_solve(&points, &similar, &dissimilar, thresholds, cfg)
}
