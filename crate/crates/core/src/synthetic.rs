//! Seeded synthetic corpora with Gaussian cluster structure.
//!
//! Items live in `dim` dimensions split into a few *signal* dimensions and
//! many *nuisance* dimensions. Distractors form clusters with random centres
//! in all dimensions. Relevant items share a common centre on the signal
//! dimensions but borrow a distractor cluster's centre on the nuisance ones,
//! so the plain Euclidean ranking of a relevant query is crowded with
//! distractors from the same nuisance cluster. Reweighting the signal
//! dimensions recovers the relevant set.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::QuerySpec;
use crate::index::{CorpusIndex, IndexEntry};

pub const RELEVANT_LABEL: &str = "target";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub items: usize,
    pub dim: usize,
    pub relevant_fraction: f64,
    pub signal_dims: usize,
    pub clusters: usize,
    /// Spread of cluster centres on nuisance dimensions.
    pub nuisance_scale: f64,
    /// Spread of distractor centres on signal dimensions.
    pub signal_scale: f64,
    /// Offset of the relevant centre on each signal dimension.
    pub signal_offset: f64,
    /// Within-cluster standard deviation.
    pub within: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            items: 5000,
            dim: 64,
            relevant_fraction: 0.04,
            signal_dims: 8,
            clusters: 12,
            nuisance_scale: 1.0,
            signal_scale: 1.0,
            signal_offset: 1.0,
            within: 0.5,
            seed: 42,
        }
    }
}

pub struct SyntheticCorpus {
    pub entries: Vec<IndexEntry>,
    /// Ids of the relevant items, in generation order.
    pub relevant: Vec<String>,
}

impl SyntheticCorpus {
    pub fn index(&self) -> Result<CorpusIndex> {
        CorpusIndex::build(self.entries.clone())
    }

    /// The first `n` relevant items as queries for the relevant task.
    pub fn queries(&self, n: usize) -> Vec<QuerySpec> {
        self.relevant.iter().take(n).map(|id| QuerySpec::with_task(id.clone(), RELEVANT_LABEL)).collect()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * scale
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.items == 0 || cfg.dim == 0 || cfg.clusters == 0 {
        return Err(Error::param("synthetic corpus needs items, dimensions and clusters"));
    }
    if cfg.signal_dims > cfg.dim {
        return Err(Error::param(format!("signal_dims {} exceeds dim {}", cfg.signal_dims, cfg.dim)));
    }
    if !(0.0..=1.0).contains(&cfg.relevant_fraction) {
        return Err(Error::param(format!("relevant_fraction must lie in [0, 1], got {}", cfg.relevant_fraction)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s = cfg.signal_dims;
    let centres: Vec<Vec<f64>> = (0..cfg.clusters)
        .map(|_| {
            (0..cfg.dim)
                .map(|d| gaussian(&mut rng, if d < s { cfg.signal_scale } else { cfg.nuisance_scale }))
                .collect()
        })
        .collect();
    let n_rel = (cfg.relevant_fraction * cfg.items as f64).round() as usize;
    // Interleave relevant items so ids carry no rank information.
    let mut is_rel = vec![false; cfg.items];
    for k in 0..n_rel {
        is_rel[k * cfg.items / n_rel.max(1)] = true;
    }
    let mut entries = Vec::with_capacity(cfg.items);
    let mut relevant = Vec::with_capacity(n_rel);
    for (i, &rel) in is_rel.iter().enumerate() {
        // Drawn as u64 so 32-bit targets consume the same stream.
        let c = rng.gen_range(0..cfg.clusters as u64) as usize;
        let v: Vec<f32> = (0..cfg.dim)
            .map(|d| {
                let centre = if rel && d < s { cfg.signal_offset } else { centres[c][d] };
                (centre + gaussian(&mut rng, cfg.within)) as f32
            })
            .collect();
        let id = format!("img{i:05}");
        let entry = if rel {
            relevant.push(id.clone());
            IndexEntry::new(id, v).with_labels([RELEVANT_LABEL.to_owned(), format!("c{c}")])
        } else {
            IndexEntry::new(id, v).with_labels([format!("c{c}")])
        };
        entries.push(entry.with_uri(format!("synthetic://img{i:05}")));
    }
    Ok(SyntheticCorpus { entries, relevant })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SyntheticConfig { items: 500, ..Default::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.entries, b.entries);
        assert_eq!(a.entries.len(), 500);
        assert_eq!(a.relevant.len(), 20);
        assert!(a.entries.iter().all(|e| e.descriptor.len() == 64));
    }
}
