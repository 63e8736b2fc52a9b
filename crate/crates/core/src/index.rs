//! Immutable corpus index and exact nearest-neighbour ranking.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::descriptor::{sq_euclidean, Descriptor, LearnedMetric};
use crate::error::{Error, Result};

/// One corpus record before indexing. The descriptor need not be normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub descriptor: Vec<f32>,
    #[serde(default)]
    pub labels: BTreeSet<String>,
    #[serde(default)]
    pub image_uri: String,
}

impl IndexEntry {
    pub fn new(id: impl Into<String>, descriptor: Vec<f32>) -> Self {
        IndexEntry { id: id.into(), descriptor, labels: BTreeSet::new(), image_uri: String::new() }
    }

    pub fn with_labels<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.labels = labels.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_uri(mut self, uri: impl Into<String>) -> Self {
        self.image_uri = uri.into();
        self
    }
}

/// Read-only store of L2-normalized descriptors with metadata.
///
/// Descriptors live in one row-major `f32` buffer; items are addressed by
/// position internally and by id at the API edge.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    dim: usize,
    ids: Vec<String>,
    uris: Vec<String>,
    labels: Vec<BTreeSet<String>>,
    data: Vec<f32>,
    by_id: HashMap<String, usize>,
}

/// A ranked result: id plus distance (ascending is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
}

pub fn build_index(entries: Vec<IndexEntry>) -> Result<CorpusIndex> {
    CorpusIndex::build(entries)
}

impl CorpusIndex {
    pub fn build(entries: Vec<IndexEntry>) -> Result<Self> {
        let first = entries.first().ok_or_else(|| Error::ingest("no entries to index"))?;
        let dim = first.descriptor.len();
        if dim == 0 {
            return Err(Error::ingest("descriptors must have at least one dimension"));
        }
        let n = entries.len();
        let mut index = CorpusIndex {
            dim,
            ids: Vec::with_capacity(n),
            uris: Vec::with_capacity(n),
            labels: Vec::with_capacity(n),
            data: Vec::with_capacity(n * dim),
            by_id: HashMap::with_capacity(n),
        };
        for entry in entries {
            if entry.descriptor.len() != dim {
                return Err(Error::Dimension { expected: dim, got: entry.descriptor.len() });
            }
            if index.by_id.contains_key(&entry.id) {
                return Err(Error::ingest(format!("duplicate image id {:?}", entry.id)));
            }
            let desc = Descriptor::from_f32(&entry.descriptor).map_err(|e| match e {
                Error::Normalization => Error::ingest(format!("descriptor of {:?} is all zeros", entry.id)),
                other => other,
            })?;
            index.by_id.insert(entry.id.clone(), index.ids.len());
            index.ids.push(entry.id);
            index.uris.push(entry.image_uri);
            index.labels.push(entry.labels);
            index.data.extend_from_slice(desc.as_slice());
        }
        Ok(index)
    }

    /// A new index holding the items at `positions`, in that order.
    pub fn subset(&self, positions: &[usize]) -> Result<Self> {
        let entries = positions
            .iter()
            .map(|&p| IndexEntry {
                id: self.ids[p].clone(),
                descriptor: self.vector(p).to_vec(),
                labels: self.labels[p].clone(),
                image_uri: self.uris[p].clone(),
            })
            .collect();
        Self::build(entries)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn id(&self, pos: usize) -> &str {
        &self.ids[pos]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn uri(&self, pos: usize) -> &str {
        &self.uris[pos]
    }

    pub fn labels(&self, pos: usize) -> &BTreeSet<String> {
        &self.labels[pos]
    }

    pub fn vector(&self, pos: usize) -> &[f32] {
        &self.data[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn descriptor(&self, pos: usize) -> Descriptor {
        Descriptor::from_unit(self.vector(pos).to_vec())
    }

    pub fn vectors(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn raw_data(&self) -> &[f32] {
        &self.data
    }

    /// Scores every item with `f` (in parallel when enabled) in position order.
    pub(crate) fn map_positions<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&[f32]) -> f64 + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            self.data.par_chunks_exact(self.dim).map(f).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.data.chunks_exact(self.dim).map(f).collect()
        }
    }

    /// Full ascending ranking of positions by distance to `query`.
    ///
    /// Without a metric the distance is Euclidean; with one it is the squared
    /// Mahalanobis form. `exclude` drops one position (the query item itself).
    pub fn rank_positions(
        &self,
        query: &[f32],
        metric: Option<&LearnedMetric>,
        exclude: Option<usize>,
    ) -> Result<Vec<(usize, f64)>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if query.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: query.len() });
        }
        let dists = match metric {
            None => self.map_positions(|x| sq_euclidean(query, x).sqrt()),
            Some(m) => {
                if m.dim() != self.dim {
                    return Err(Error::Dimension { expected: self.dim, got: m.dim() });
                }
                self.map_positions(|x| m.distance_unchecked(query, x))
            }
        };
        let mut ranked = Vec::with_capacity(dists.len());
        for (pos, d) in dists.into_iter().enumerate() {
            if Some(pos) == exclude {
                continue;
            }
            if metric.is_some() && d < -crate::descriptor::CLAMP_TOL {
                return Err(Error::Metric(format!("negative squared distance {d}")));
            }
            ranked.push((pos, d.max(0.0)));
        }
        self.sort_ascending(&mut ranked);
        Ok(ranked)
    }

    /// Sorts by value ascending, ties broken by image id.
    pub(crate) fn sort_ascending(&self, items: &mut [(usize, f64)]) {
        items.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| self.ids[a.0].cmp(&self.ids[b.0])));
    }

    /// Sorts by value descending, ties broken by image id.
    pub(crate) fn sort_descending(&self, items: &mut [(usize, f64)]) {
        items.sort_by(|a, b| match b.1.total_cmp(&a.1) {
            Ordering::Equal => self.ids[a.0].cmp(&self.ids[b.0]),
            other => other,
        });
    }
}

/// The `k` nearest corpus items to `query`.
pub fn knn_query(
    index: &CorpusIndex,
    query: &Descriptor,
    k: usize,
    metric: Option<&LearnedMetric>,
) -> Result<Vec<Neighbor>> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let ranked = index.rank_positions(query.as_slice(), metric, None)?;
    Ok(ranked
        .into_iter()
        .take(k)
        .map(|(pos, distance)| Neighbor { id: index.id(pos).to_owned(), distance })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::l2_normalize;

    fn entry(id: &str, v: &[f32]) -> IndexEntry {
        IndexEntry::new(id, v.to_vec())
    }

    #[test]
    fn build_examples() {
        let idx = build_index(vec![entry("a", &[1.0, 0.0]), entry("b", &[0.0, 2.0]), entry("c", &[1.0, 1.0])]).unwrap();
        assert_eq!(idx.len(), 3);
        assert!((crate::descriptor::norm(idx.vector(1)) - 1.0).abs() < 1e-6);

        let dup = build_index(vec![entry("a", &[1.0, 0.0]), entry("a", &[0.0, 1.0])]);
        assert!(matches!(dup, Err(Error::Ingest { .. })));

        let mixed = build_index(vec![entry("a", &[1.0; 512]), entry("b", &[1.0; 256])]);
        assert_eq!(mixed.unwrap_err(), Error::Dimension { expected: 512, got: 256 });

        assert!(matches!(build_index(vec![]), Err(Error::Ingest { .. })));
    }

    #[test]
    fn query_hits_itself_first() {
        let idx = build_index(vec![entry("a", &[1.0, 0.0]), entry("b", &[0.0, 1.0]), entry("c", &[1.0, 1.0])]).unwrap();
        let q = l2_normalize(&[1.0, 1.0]).unwrap();
        let res = knn_query(&idx, &q, 2, None).unwrap();
        assert_eq!(res[0].id, "c");
        assert!(res[0].distance < 1e-7);
        assert_eq!(knn_query(&idx, &q, 10, None).unwrap().len(), 3);
        assert!(matches!(knn_query(&idx, &q, 0, None), Err(Error::Parameter(_))));
    }

    #[test]
    fn ties_break_by_id() {
        let idx = build_index(vec![entry("z", &[1.0, 0.0]), entry("m", &[0.0, 1.0]), entry("a", &[0.0, -1.0])]).unwrap();
        let q = l2_normalize(&[-1.0, 0.0]).unwrap();
        let res = knn_query(&idx, &q, 3, None).unwrap();
        let ids: Vec<_> = res.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["a", "m", "z"]);
    }

    #[test]
    fn knn_matches_exhaustive_sort() {
        // Ten points on the unit circle at irregular angles.
        let angles = [0.1f64, 0.7, 1.3, 2.0, 2.2, 3.0, 3.9, 4.4, 5.1, 6.0];
        let entries: Vec<_> = angles
            .iter()
            .enumerate()
            .map(|(i, a)| entry(&format!("p{i}"), &[a.cos() as f32, a.sin() as f32]))
            .collect();
        let idx = build_index(entries).unwrap();
        let q = l2_normalize(&[1.5f64.cos(), 1.5f64.sin()]).unwrap();

        let mut oracle: Vec<(f64, String)> = (0..idx.len())
            .map(|p| {
                let v = idx.vector(p);
                let qs = q.as_slice();
                let d = ((v[0] as f64 - qs[0] as f64).powi(2) + (v[1] as f64 - qs[1] as f64).powi(2)).sqrt();
                (d, idx.id(p).to_owned())
            })
            .collect();
        oracle.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        let got = knn_query(&idx, &q, 3, None).unwrap();
        let ids: Vec<_> = got.iter().map(|n| n.id.clone()).collect();
        let want: Vec<_> = oracle.iter().take(3).map(|o| o.1.clone()).collect();
        assert_eq!(ids, want);
        assert_eq!(ids, ["p2", "p3", "p4"]);
    }
}
