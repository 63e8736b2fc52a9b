//! TOML configuration for `serve` and `simulate`.

use std::path::{Path, PathBuf};

use cbir_core::eval::{QuerySpec, SimulationConfig};
use cbir_core::feedback::{FeedbackConfig, Method};
use cbir_core::synthetic::SyntheticConfig;
use cbir_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Only the listen address may come from the environment.
pub const LISTEN_ENV: &str = "CBIR_LISTEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    /// Where session snapshots go; none disables snapshots.
    pub snapshot_dir: Option<PathBuf>,
    /// Manifests ingested at startup.
    pub datasets: Vec<PathBuf>,
    pub default_method: Method,
    pub feedback: FeedbackConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            snapshot_dir: None,
            datasets: Vec::new(),
            default_method: Method::ITML,
            feedback: FeedbackConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: ServiceConfig = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.datasets = cfg.datasets.iter().map(|p| base.join(p)).collect();
        cfg.snapshot_dir = cfg.snapshot_dir.map(|p| base.join(p));
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Manifest of an ingested-format dataset. Exactly one of `dataset`
    /// and `synthetic` must be given.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub queries: QuerySelection,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub output: OutputPaths,
}

fn all_methods() -> Vec<Method> {
    Method::all()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySelection {
    /// Explicit query ids.
    pub ids: Vec<String>,
    /// Take this many queries: for a synthetic corpus the first relevant
    /// items, otherwise the first items carrying `task`.
    pub count: Option<usize>,
    /// Relevance label; without it relevance is label overlap with the query.
    pub task: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

impl SimulateConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: SimulateConfig = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset = cfg.dataset.map(|p| base.join(p));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_some() == self.synthetic.is_some() {
            return Err(Error::Validation("give exactly one of `dataset` and `[synthetic]`".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Validation("`methods` is empty".into()));
        }
        self.simulation.validate()
    }

    /// Resolves the query list against the loaded corpus.
    pub fn query_specs(&self, index: &cbir_core::CorpusIndex, synthetic_relevant: Option<&[String]>) -> Result<Vec<QuerySpec>> {
        let q = &self.queries;
        let make = |id: &str| match &q.task {
            Some(t) => QuerySpec::with_task(id, t.clone()),
            None => QuerySpec::new(id),
        };
        if !q.ids.is_empty() {
            return Ok(q.ids.iter().map(|id| make(id)).collect());
        }
        let count = q.count.unwrap_or(20);
        if let Some(rel) = synthetic_relevant {
            let task = q.task.clone().unwrap_or_else(|| cbir_core::synthetic::RELEVANT_LABEL.to_owned());
            return Ok(rel.iter().take(count).map(|id| QuerySpec::with_task(id.clone(), task.clone())).collect());
        }
        let Some(task) = &q.task else {
            return Err(Error::Validation("a dataset simulation needs `queries.ids` or `queries.task`".into()));
        };
        Ok((0..index.len())
            .filter(|&p| index.labels(p).contains(task))
            .take(count)
            .map(|p| make(index.id(p)))
            .collect())
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn service_defaults_and_overrides() {
        let cfg: ServiceConfig = toml::from_str("default_method = \"kde\"\n[feedback.svm]\nc = 2.0\n").unwrap();
        assert_eq!(cfg.default_method, Method::KDE);
        assert_eq!(cfg.feedback.svm.c, 2.0);
        assert_eq!(cfg.listen, "127.0.0.1:8080");
    }

    #[test]
    fn simulate_needs_one_source() {
        let cfg: SimulateConfig = toml::from_str("methods = [\"itml\"]").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: SimulateConfig =
            toml::from_str("methods = [\"itml\", \"svm\"]\n[synthetic]\nitems = 200\n[simulation]\nrounds = 3\n").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.simulation.rounds, 3);
        assert_eq!(cfg.synthetic.unwrap().items, 200);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<ServiceConfig>("lissen = \"x\"").is_err());
    }
}
