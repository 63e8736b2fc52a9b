//! Interactive browser demo.
//!
//! Three operations, each taking and returning JSON so the page stays plain
//! JavaScript:
//!
//! * [`pool_json`]: pool a small feature map with every aggregation.
//! * [`Demo2d`]: a feedback loop on 2-D points; returns the ranking and, for
//!   ITML, the learned metric so the page can draw its unit ellipse.
//! * [`ndcg_json`]: NDCG@k of a relevance list.
//!
//! The `web` module wraps them with `wasm-bindgen` when built for wasm32.

use std::collections::BTreeMap;

use cbir_core::aggregation::{FeatureMap, Pooling};
use cbir_core::eval::ndcg_at_k;
use cbir_core::feedback::itml::{itml_pairs, ItmlConfig, ItmlThresholds};
use cbir_core::feedback::svm::{svm_fit, SvmConfig};
use cbir_core::feedback::KdeScorer;
use cbir_core::synthetic::{generate, SyntheticConfig, RELEVANT_LABEL};
use cbir_core::LearnedMetric;
use serde::{Deserialize, Serialize};

#[cfg(target_arch = "wasm32")]
mod web;

type Result<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Debug, Deserialize)]
pub struct PoolRequest {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major `height × width × channels`.
    pub data: Vec<f32>,
    /// Pooling specs such as `"gem:3"`; all of them when empty.
    #[serde(default)]
    pub poolings: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct PoolResult {
    pub pooling: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<Vec<f32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

const ALL_POOLINGS: [&str; 6] = ["avg", "max", "pmp:0.1", "gem:3", "adacow", "rmac:2"];

pub fn pool_json(request: &str) -> Result<String> {
    let req: PoolRequest = serde_json::from_str(request).map_err(err)?;
    let fm = FeatureMap::new(req.height, req.width, req.channels, req.data).map_err(err)?;
    let specs: Vec<String> =
        if req.poolings.is_empty() { ALL_POOLINGS.iter().map(|s| s.to_string()).collect() } else { req.poolings };
    let out: Vec<PoolResult> = specs
        .into_iter()
        .map(|spec| match spec.parse::<Pooling>().and_then(|p| p.pool(&fm)) {
            Ok(d) => PoolResult { pooling: spec, descriptor: Some(d.into_vec()), error: None },
            Err(e) => PoolResult { pooling: spec, descriptor: None, error: Some(e.to_string()) },
        })
        .collect();
    serde_json::to_string(&out).map_err(err)
}

#[derive(Debug, Deserialize)]
pub struct NdcgRequest {
    pub relevant: Vec<bool>,
    /// `|R|`; defaults to the number of relevant entries in the list.
    #[serde(default)]
    pub total: Option<usize>,
    pub k: usize,
}

pub fn ndcg_json(request: &str) -> Result<String> {
    let req: NdcgRequest = serde_json::from_str(request).map_err(err)?;
    let total = req.total.unwrap_or_else(|| req.relevant.iter().filter(|&&r| r).count());
    let v = ndcg_at_k(&req.relevant, total, req.k).map_err(err)?;
    serde_json::to_string(&serde_json::json!({ "ndcg": v })).map_err(err)
}

#[derive(Debug, Clone, Serialize)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub target: bool,
}

#[derive(Debug, Serialize)]
pub struct Refinement {
    pub method: String,
    /// Point indices, best first; the query is left out.
    pub ranking: Vec<usize>,
    /// NDCG@20 against the generator's labels.
    pub ndcg: f64,
    /// Row-major 2×2 metric for ITML.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<[f64; 4]>,
}

/// Feedback loop over seeded 2-D points. Point 0 is the query and belongs
/// to the target class.
pub struct Demo2d {
    points: Vec<[f32; 2]>,
    target: Vec<bool>,
    marks: BTreeMap<usize, bool>,
}

pub const DEMO_K: usize = 20;

impl Demo2d {
    pub fn new(seed: u64, items: usize) -> Result<Self> {
        let cfg = SyntheticConfig {
            items,
            dim: 2,
            signal_dims: 1,
            clusters: 4,
            relevant_fraction: 0.15,
            within: 0.35,
            signal_offset: 1.5,
            seed,
            ..Default::default()
        };
        let corpus = generate(&cfg).map_err(err)?;
        let points = corpus.entries.iter().map(|e| [e.descriptor[0], e.descriptor[1]]).collect();
        let target = corpus.entries.iter().map(|e| e.labels.contains(RELEVANT_LABEL)).collect();
        Ok(Demo2d { points, target, marks: BTreeMap::new() })
    }

    pub fn points(&self) -> Vec<Point> {
        self.points.iter().zip(&self.target).map(|(p, &t)| Point { x: p[0], y: p[1], target: t }).collect()
    }

    /// Marking the query is ignored.
    pub fn mark(&mut self, i: usize, relevant: bool) -> Result<()> {
        if i >= self.points.len() {
            return Err(format!("no point {i}"));
        }
        if i != 0 {
            self.marks.insert(i, relevant);
        }
        Ok(())
    }

    pub fn unmark(&mut self, i: usize) {
        self.marks.remove(&i);
    }

    pub fn marks(&self) -> &BTreeMap<usize, bool> {
        &self.marks
    }

    /// Points by distance to the query (not squared), nearest first.
    fn distance_order(&self, metric: &LearnedMetric) -> Result<Vec<(usize, f64)>> {
        let q = &self.points[0];
        let mut v = (1..self.points.len())
            .map(|i| Ok((i, metric.distance(q, &self.points[i]).map_err(err)?.max(0.0).sqrt())))
            .collect::<Result<Vec<_>>>()?;
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Ok(v)
    }

    /// Refits `method` (`itml`, `kde` or `svm`) on the current marks.
    pub fn refine(&self, method: &str) -> Result<Refinement> {
        let pos_idx: Vec<usize> = self.marks.iter().filter(|(_, &r)| r).map(|(&i, _)| i).collect();
        let neg_idx: Vec<usize> = self.marks.iter().filter(|(_, &r)| !r).map(|(&i, _)| i).collect();
        let pos: Vec<&[f32]> =
            std::iter::once(0).chain(pos_idx.iter().copied()).map(|i| self.points[i].as_slice()).collect();
        let neg: Vec<&[f32]> = neg_idx.iter().map(|&i| self.points[i].as_slice()).collect();
        let baseline = self.distance_order(&LearnedMetric::identity(2))?;
        let (ranking, metric) = match method {
            "itml" => {
                let cfg = ItmlConfig::default();
                let th = ItmlThresholds::from_baseline(&baseline, &pos_idx, &neg_idx, &cfg).map_err(err)?;
                let m = itml_pairs(&pos, &neg, th, &cfg).map_err(err)?.metric;
                let ranking = self.distance_order(&m)?.into_iter().map(|(i, _)| i).collect();
                let mm = m.to_matrix();
                (ranking, Some([mm[(0, 0)], mm[(0, 1)], mm[(1, 0)], mm[(1, 1)]]))
            }
            "kde" => {
                let fallback = baseline[baseline.len() / 2].1.max(1e-6);
                let mut kde = KdeScorer::fit(&pos, &neg, None, fallback).map_err(err)?;
                if neg.is_empty() {
                    let n = self.points.len() as f64;
                    let level = self.points.iter().map(|p| kde.log_density_relevant(p).exp()).sum::<f64>() / n;
                    kde.set_uniform_negative(level);
                }
                (self.order_by(|x| kde.log_odds(x)), None)
            }
            "svm" => {
                let svm = svm_fit(&pos, &neg, &SvmConfig::default()).map_err(err)?;
                (self.order_by(|x| svm.decision(x)), None)
            }
            other => return Err(format!("unknown method {other:?}; use itml, kde or svm")),
        };
        let hits: Vec<bool> = ranking.iter().map(|&i| self.target[i]).collect();
        let total = self.target[1..].iter().filter(|&&t| t).count();
        let ndcg = ndcg_at_k(&hits, total, DEMO_K.min(hits.len())).map_err(err)?;
        Ok(Refinement { method: method.to_owned(), ranking, ndcg, metric })
    }

    fn order_by(&self, key: impl Fn(&[f32]) -> f64) -> Vec<usize> {
        let mut v: Vec<(usize, f64)> = (1..self.points.len()).map(|i| (i, key(&self.points[i]))).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v.into_iter().map(|(i, _)| i).collect()
    }
}
