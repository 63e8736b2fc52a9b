//! Dataset manifests, metadata sidecars and the in-memory registry.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use cbir_core::feedback::BackgroundStats;
use cbir_core::io::decode_descriptors;
use cbir_core::{CorpusIndex, Error, IndexEntry, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Shrinkage used for the cached Exemplar-LDA background statistics.
pub const BACKGROUND_SHRINKAGE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub descriptor_file: PathBuf,
    pub metadata_file: PathBuf,
    pub dim: usize,
    pub count: usize,
}

impl DatasetManifest {
    /// Reads a JSON manifest; relative paths are taken relative to its folder.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::ingest(format!("manifest {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.descriptor_file = base.join(&manifest.descriptor_file);
        manifest.metadata_file = base.join(&manifest.metadata_file);
        Ok(manifest)
    }
}

/// One line of the metadata sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub id: String,
    #[serde(default)]
    pub image_uri: String,
    #[serde(default)]
    pub labels: Vec<String>,
}

/// Parses line-delimited JSON records. Blank lines are skipped.
pub fn parse_metadata(bytes: &[u8]) -> Result<Vec<MetadataRecord>> {
    let mut records = Vec::new();
    let mut offset = 0u64;
    for line in bytes.split_inclusive(|&b| b == b'\n') {
        let text = std::str::from_utf8(line)
            .map_err(|_| Error::ingest_at("metadata is not valid UTF-8", offset))?
            .trim();
        if !text.is_empty() {
            let record: MetadataRecord = serde_json::from_str(text)
                .map_err(|e| Error::ingest_at(format!("metadata record {}: {e}", records.len() + 1), offset))?;
            records.push(record);
        }
        offset += line.len() as u64;
    }
    Ok(records)
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub handle: String,
    pub name: String,
    pub count: usize,
    pub dim: usize,
    pub labeled: usize,
}

pub struct Dataset {
    pub handle: String,
    pub name: String,
    pub index: CorpusIndex,
    pub background: BackgroundStats,
}

impl Dataset {
    pub fn info(&self) -> DatasetInfo {
        DatasetInfo {
            handle: self.handle.clone(),
            name: self.name.clone(),
            count: self.index.len(),
            dim: self.index.dim(),
            labeled: (0..self.index.len()).filter(|&p| !self.index.labels(p).is_empty()).count(),
        }
    }

    /// Builds a dataset from descriptor container and metadata bytes.
    pub fn from_bytes(manifest: &DatasetManifest, descriptors: &[u8], metadata: &[u8]) -> Result<Self> {
        let block = decode_descriptors(descriptors)?;
        if block.dim != manifest.dim {
            return Err(Error::ingest(format!("manifest dim {} but container dim {}", manifest.dim, block.dim)));
        }
        if block.count() != manifest.count {
            return Err(Error::ingest(format!(
                "manifest count {} but container holds {} descriptors",
                manifest.count,
                block.count()
            )));
        }
        let records = parse_metadata(metadata)?;
        if records.len() != block.count() {
            return Err(Error::ingest(format!(
                "{} metadata records for {} descriptors",
                records.len(),
                block.count()
            )));
        }
        let entries = records
            .into_iter()
            .zip(block.rows())
            .map(|(r, v)| IndexEntry::new(r.id, v.to_vec()).with_labels(r.labels).with_uri(r.image_uri))
            .collect();
        let index = CorpusIndex::build(entries)?;
        let background = BackgroundStats::from_index(&index, BACKGROUND_SHRINKAGE)?;
        Ok(Dataset { handle: content_handle(&manifest.name, descriptors, metadata), name: manifest.name.clone(), index, background })
    }

    pub fn ingest(manifest: &DatasetManifest) -> Result<Self> {
        let read = |p: &Path| std::fs::read(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())));
        let descriptors = read(&manifest.descriptor_file)?;
        let metadata = read(&manifest.metadata_file)?;
        Self::from_bytes(manifest, &descriptors, &metadata)
    }
}

/// `ds-` plus the first 16 hex digits of SHA-256 over name and both files.
pub fn content_handle(name: &str, descriptors: &[u8], metadata: &[u8]) -> String {
    let mut h = Sha256::new();
    for part in [name.as_bytes(), descriptors, metadata] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    let digest = h.finalize();
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("ds-{hex}")
}

#[derive(Default)]
pub struct DatasetRegistry {
    datasets: RwLock<BTreeMap<String, Arc<Dataset>>>,
}

impl DatasetRegistry {
    /// Registers a dataset; re-ingesting identical content returns the
    /// existing handle. The flag tells whether the dataset is new.
    pub fn insert(&self, dataset: Dataset) -> (Arc<Dataset>, bool) {
        let mut map = self.datasets.write().expect("dataset registry poisoned");
        if let Some(existing) = map.get(&dataset.handle) {
            return (existing.clone(), false);
        }
        let ds = Arc::new(dataset);
        map.insert(ds.handle.clone(), ds.clone());
        (ds, true)
    }

    pub fn ingest(&self, manifest: &DatasetManifest) -> Result<(Arc<Dataset>, bool)> {
        Ok(self.insert(Dataset::ingest(manifest)?))
    }

    /// Looks up by handle, then by name.
    pub fn get(&self, key: &str) -> Result<Arc<Dataset>> {
        let map = self.datasets.read().expect("dataset registry poisoned");
        map.get(key)
            .or_else(|| map.values().find(|d| d.name == key))
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("dataset {key:?}")))
    }

    pub fn list(&self) -> Vec<DatasetInfo> {
        self.datasets.read().expect("dataset registry poisoned").values().map(|d| d.info()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cbir_core::io::{encode_descriptors, DescriptorBlock};

    fn manifest(count: usize) -> DatasetManifest {
        DatasetManifest {
            name: "toy".into(),
            descriptor_file: "d.bin".into(),
            metadata_file: "m.jsonl".into(),
            dim: 2,
            count,
        }
    }

    fn files(n: usize, records: usize) -> (Vec<u8>, Vec<u8>) {
        let data: Vec<f32> = (0..n).flat_map(|i| [1.0, i as f32]).collect();
        let desc = encode_descriptors(&DescriptorBlock::new(2, data).unwrap());
        let meta: String = (0..records)
            .map(|i| format!("{{\"id\":\"im{i}\",\"image_uri\":\"file:///im{i}.jpg\",\"labels\":[]}}\n"))
            .collect();
        (desc, meta.into_bytes())
    }

    #[test]
    fn valid_dataset() {
        let (d, m) = files(100, 100);
        let ds = Dataset::from_bytes(&manifest(100), &d, &m).unwrap();
        assert_eq!(ds.info().count, 100);
        assert!(ds.handle.starts_with("ds-"));
    }

    #[test]
    fn record_count_mismatch() {
        let (d, m) = files(100, 99);
        assert!(matches!(Dataset::from_bytes(&manifest(100), &d, &m), Err(Error::Ingest { .. })));
    }

    #[test]
    fn corrupt_magic_names_expected_magic() {
        let (mut d, m) = files(3, 3);
        d[0] = b'X';
        let err = Dataset::from_bytes(&manifest(3), &d, &m).err().unwrap();
        assert!(matches!(err, Error::Ingest { .. }));
        assert!(err.to_string().contains("DESC0001"), "{err}");
    }

    #[test]
    fn malformed_record_reports_offset() {
        let text = b"{\"id\":\"a\"}\nnot json\n";
        match parse_metadata(text) {
            Err(Error::Ingest { offset: Some(11), .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identical_content_is_idempotent() {
        let (d, m) = files(4, 4);
        let reg = DatasetRegistry::default();
        let (a, new_a) = reg.insert(Dataset::from_bytes(&manifest(4), &d, &m).unwrap());
        let (b, new_b) = reg.insert(Dataset::from_bytes(&manifest(4), &d, &m).unwrap());
        assert!(new_a && !new_b);
        assert_eq!(a.handle, b.handle);
        assert_eq!(reg.list().len(), 1);
        assert_eq!(reg.get("toy").unwrap().handle, a.handle);
    }
}
