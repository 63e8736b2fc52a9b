//! Pooling of local convolutional activations into global descriptors.
//!
//! Every pooling function has a `*_raw` variant returning the per-channel
//! vector before L2 normalization; the plain variant normalizes it.

use serde::{Deserialize, Serialize};

use crate::descriptor::{l2_normalize, Descriptor};
use crate::error::{Error, Result};

/// An `H×W×C` grid of activations stored row-major in `(y, x, c)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::param(format!("feature map must be non-empty, got {height}x{width}x{channels}")));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::param(format!("expected {expected} activations, got {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("feature map contains non-finite activations"));
        }
        Ok(FeatureMap { height, width, channels, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Activation vector at spatial position `p = y·W + x`.
    #[inline]
    pub fn cell(&self, p: usize) -> &[f32] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    /// All activations of one channel, in position order.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.positions()).map(|p| self.cell(p)[c] as f64).collect()
    }
}

/// Aggregation function selector, used by the CLI and container tooling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Pooling {
    Avg,
    Max,
    Pmp { ratio: f64 },
    Gem { p: f64 },
    Adacow,
    Rmac { scales: usize },
}

impl Default for Pooling {
    fn default() -> Self {
        Pooling::Pmp { ratio: DEFAULT_PMP_RATIO }
    }
}

pub const DEFAULT_PMP_RATIO: f64 = 0.1;
pub const DEFAULT_GEM_P: f64 = 2.0;
pub const DEFAULT_RMAC_SCALES: usize = 3;

impl Pooling {
    pub fn pool_raw(&self, fm: &FeatureMap) -> Result<Vec<f64>> {
        match *self {
            Pooling::Avg => Ok(avg_pool_raw(fm)),
            Pooling::Max => Ok(max_pool_raw(fm)),
            Pooling::Pmp { ratio } => pmp_pool_raw(fm, ratio),
            Pooling::Gem { p } => gem_pool_raw(fm, p),
            Pooling::Adacow => adacow_pool_raw(fm),
            Pooling::Rmac { scales } => rmac_pool_raw(fm, scales),
        }
    }

    pub fn pool(&self, fm: &FeatureMap) -> Result<Descriptor> {
        l2_normalize(&self.pool_raw(fm)?)
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    /// Parses `avg`, `max`, `pmp[:ratio]`, `gem[:p]`, `adacow`, `rmac[:scales]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |default: f64| -> Result<f64> {
            arg.map(|a| a.parse::<f64>().map_err(|_| Error::param(format!("bad pooling argument {a:?}"))))
                .unwrap_or(Ok(default))
        };
        match name.to_ascii_lowercase().as_str() {
            "avg" => Ok(Pooling::Avg),
            "max" => Ok(Pooling::Max),
            "pmp" => Ok(Pooling::Pmp { ratio: num(DEFAULT_PMP_RATIO)? }),
            "gem" => Ok(Pooling::Gem { p: num(DEFAULT_GEM_P)? }),
            "adacow" => Ok(Pooling::Adacow),
            "rmac" => Ok(Pooling::Rmac { scales: num(DEFAULT_RMAC_SCALES as f64)? as usize }),
            other => Err(Error::param(format!("unknown pooling {other:?}"))),
        }
    }
}

pub fn avg_pool_raw(fm: &FeatureMap) -> Vec<f64> {
    let mut acc = vec![0.0f64; fm.channels];
    for p in 0..fm.positions() {
        for (a, &v) in acc.iter_mut().zip(fm.cell(p)) {
            *a += v as f64;
        }
    }
    let n = fm.positions() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

pub fn avg_pool(fm: &FeatureMap) -> Result<Descriptor> {
    l2_normalize(&avg_pool_raw(fm))
}

pub fn max_pool_raw(fm: &FeatureMap) -> Vec<f64> {
    region_max(fm, 0, 0, fm.height, fm.width)
}

pub fn max_pool(fm: &FeatureMap) -> Result<Descriptor> {
    l2_normalize(&max_pool_raw(fm))
}

/// Number of activations averaged per channel by partial mean pooling.
pub fn pmp_count(positions: usize, ratio: f64) -> usize {
    ((ratio * positions as f64).ceil() as usize).clamp(1, positions)
}

/// Partial mean pooling: mean of the top `⌈ratio·H·W⌉` activations per channel.
pub fn pmp_pool_raw(fm: &FeatureMap, ratio: f64) -> Result<Vec<f64>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::param(format!("PMP ratio must lie in (0, 1], got {ratio}")));
    }
    let k = pmp_count(fm.positions(), ratio);
    Ok((0..fm.channels)
        .map(|c| {
            let mut vals = fm.channel(c);
            vals.sort_unstable_by(|a, b| b.total_cmp(a));
            vals[..k].iter().sum::<f64>() / k as f64
        })
        .collect())
}

pub fn pmp_pool(fm: &FeatureMap, ratio: f64) -> Result<Descriptor> {
    l2_normalize(&pmp_pool_raw(fm, ratio)?)
}

/// Generalized mean pooling. Negative activations are clamped to zero.
pub fn gem_pool_raw(fm: &FeatureMap, p: f64) -> Result<Vec<f64>> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::param(format!("GeM exponent must be a finite value >= 1, got {p}")));
    }
    let n = fm.positions() as f64;
    Ok((0..fm.channels)
        .map(|c| {
            let vals = fm.channel(c);
            if p == 1.0 {
                return vals.iter().map(|v| v.max(0.0)).sum::<f64>() / n;
            }
            // Scale by the channel max so large exponents do not overflow.
            let peak = vals.iter().fold(0.0f64, |m, &v| m.max(v));
            if peak == 0.0 {
                return 0.0;
            }
            let mean = vals.iter().map(|&v| (v.max(0.0) / peak).powf(p)).sum::<f64>() / n;
            peak * mean.powf(1.0 / p)
        })
        .collect())
}

pub fn gem_pool(fm: &FeatureMap, p: f64) -> Result<Descriptor> {
    l2_normalize(&gem_pool_raw(fm, p)?)
}

/// Channel weights for adaptive co-weighting.
///
/// `n_c` counts positions where channel `c` is active; the weight
/// `ln(1 + Σn / (1 + n_c))` shrinks as a channel fires more often.
pub fn adacow_channel_weights(fm: &FeatureMap) -> Vec<f64> {
    let mut counts = vec![0usize; fm.channels];
    for p in 0..fm.positions() {
        for (n, &v) in counts.iter_mut().zip(fm.cell(p)) {
            if v > 0.0 {
                *n += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    counts.iter().map(|&n| (1.0 + total as f64 / (1.0 + n as f64)).ln()).collect()
}

/// Spatial weights for adaptive co-weighting: `√(Σ_c f_c)` per position, summing to one.
pub fn adacow_spatial_weights(fm: &FeatureMap) -> Result<Vec<f64>> {
    let raw: Vec<f64> = (0..fm.positions())
        .map(|p| fm.cell(p).iter().map(|&v| (v as f64).max(0.0)).sum::<f64>().sqrt())
        .collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return Err(Error::Normalization);
    }
    Ok(raw.into_iter().map(|s| s / total).collect())
}

pub fn adacow_pool_raw(fm: &FeatureMap) -> Result<Vec<f64>> {
    let spatial = adacow_spatial_weights(fm)?;
    let channel = adacow_channel_weights(fm);
    let mut acc = vec![0.0f64; fm.channels];
    for (p, &s) in spatial.iter().enumerate() {
        for ((a, &v), &w) in acc.iter_mut().zip(fm.cell(p)).zip(&channel) {
            *a += s * w * (v as f64).max(0.0);
        }
    }
    Ok(acc)
}

pub fn adacow_pool(fm: &FeatureMap) -> Result<Descriptor> {
    l2_normalize(&adacow_pool_raw(fm)?)
}

/// A square pooling region: top-left corner and side length, in cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub y: usize,
    pub x: usize,
    pub side: usize,
}

/// The R-MAC region grid for an `height × width` map.
///
/// Scale `l` uses squares of side `⌊2·min(H,W)/(l+1)⌋`. Along the longer
/// axis the number of regions is chosen so neighbours overlap by about 40%.
pub fn rmac_regions(height: usize, width: usize, scales: usize) -> Vec<Region> {
    const OVERLAP: f64 = 0.4;
    let short = height.min(width) as f64;
    let long = height.max(width) as f64;

    // Extra regions along the long axis: pick the step count whose overlap is
    // closest to the target.
    let mut best = (f64::INFINITY, 0usize);
    for (i, steps) in (2..=7).enumerate() {
        let b = (long - short) / (steps as f64 - 1.0);
        let err = ((short * short - short * b) / (short * short) - OVERLAP).abs();
        if err < best.0 {
            best = (err, i);
        }
    }
    let (extra_w, extra_h) = match height.cmp(&width) {
        std::cmp::Ordering::Less => (best.1 + 1, 0),
        std::cmp::Ordering::Greater => (0, best.1 + 1),
        std::cmp::Ordering::Equal => (0, 0),
    };

    let starts = |extent: usize, side: usize, l: usize, extra: usize| -> Vec<usize> {
        let count = l + extra;
        let half = (side as f64 / 2.0 - 1.0).floor();
        let step = if count == 1 { 0.0 } else { (extent - side) as f64 / (count - 1) as f64 };
        (0..count)
            .map(|i| {
                let s = (half + i as f64 * step).floor() - half;
                (s.max(0.0) as usize).min(extent - side)
            })
            .collect()
    };

    let mut regions = Vec::new();
    for l in 1..=scales {
        let side = ((2.0 * short / (l as f64 + 1.0)).floor() as usize).max(1);
        for y in starts(height, side, l, extra_h) {
            for x in starts(width, side, l, extra_w) {
                regions.push(Region { y, x, side });
            }
        }
    }
    regions
}

fn region_max(fm: &FeatureMap, y0: usize, x0: usize, h: usize, w: usize) -> Vec<f64> {
    let mut acc = vec![f64::NEG_INFINITY; fm.channels];
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            for (a, &v) in acc.iter_mut().zip(fm.cell(y * fm.width + x)) {
                *a = a.max(v as f64);
            }
        }
    }
    acc
}

/// Regional maximum activations: per-region max pooling, L2-normalized and summed.
pub fn rmac_pool_raw(fm: &FeatureMap, scales: usize) -> Result<Vec<f64>> {
    if scales == 0 {
        return Err(Error::param("R-MAC needs at least one scale"));
    }
    let mut acc = vec![0.0f64; fm.channels];
    for r in rmac_regions(fm.height, fm.width, scales) {
        let v = region_max(fm, r.y, r.x, r.side, r.side);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            acc.iter_mut().zip(&v).for_each(|(a, x)| *a += x / n);
        }
    }
    Ok(acc)
}

pub fn rmac_pool(fm: &FeatureMap, scales: usize) -> Result<Descriptor> {
    l2_normalize(&rmac_pool_raw(fm, scales)?)
}

/// Averages several unit descriptors of one image and re-normalizes.
pub fn multiscale_merge(descs: &[Descriptor]) -> Result<Descriptor> {
    let first = descs.first().ok_or_else(|| Error::param("no descriptors to merge"))?;
    let dim = first.dim();
    let mut acc = vec![0.0f64; dim];
    for d in descs {
        if d.dim() != dim {
            return Err(Error::Dimension { expected: dim, got: d.dim() });
        }
        acc.iter_mut().zip(d.as_slice()).for_each(|(a, &v)| *a += v as f64);
    }
    let n = descs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    l2_normalize(&acc)
}
