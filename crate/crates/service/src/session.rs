//! Interactive feedback sessions.
//!
//! A session owns its marks and the current ranking. Every submission
//! appends one history entry; replaying those entries against a fresh
//! session reproduces the ranking exactly, which is also how snapshots are
//! restored.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use cbir_core::eval::ndcg_of_ranking;
use cbir_core::feedback::{refine_positions, FeedbackConfig, FeedbackContext, FeedbackState, Method};
use cbir_core::{Descriptor, Error, Result};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetRegistry, BACKGROUND_SHRINKAGE};

/// Depth of the ranking prefix kept per round and used for NDCG.
pub const HISTORY_DEPTH: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryInput {
    Item { query_id: String },
    Descriptor { descriptor: Vec<f32> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mark {
    pub id: String,
    pub relevant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub round: usize,
    pub method: Method,
    pub marks: Vec<Mark>,
    /// Why the refit failed; the previous ranking was kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// NDCG@100 of the ranking after this round, when the query has labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndcg: Option<f64>,
    pub top: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultItem {
    pub rank: usize,
    pub id: String,
    pub score: f64,
    pub image_uri: String,
    /// `"relevant"`, `"irrelevant"` or absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marked: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Page {
    pub session_id: String,
    pub round: usize,
    pub total: usize,
    pub offset: usize,
    pub items: Vec<ResultItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub dataset: String,
    pub method: Method,
    pub round: usize,
    pub total: usize,
    pub positives: usize,
    pub negatives: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_ndcg: Option<f64>,
}

/// What is persisted: enough to replay the session, never the rankings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub dataset: String,
    pub query: QueryInput,
    pub method: Method,
    pub config: FeedbackConfig,
    pub rounds: Vec<SnapshotRound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRound {
    pub method: Method,
    pub marks: Vec<Mark>,
}

pub struct Session {
    id: String,
    dataset: Arc<Dataset>,
    query: QueryInput,
    query_vec: Vec<f32>,
    query_pos: Option<usize>,
    initial_method: Method,
    method: Method,
    config: FeedbackConfig,
    state: FeedbackState,
    ranking: Vec<(usize, f64)>,
    history: Vec<HistoryEntry>,
    /// Relevance mask and `|R|` derived from the query item's labels.
    relevance: Option<(Vec<bool>, usize)>,
    baseline_ndcg: Option<f64>,
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        dataset: Arc<Dataset>,
        query: QueryInput,
        method: Method,
        config: FeedbackConfig,
    ) -> Result<Self> {
        let index = &dataset.index;
        let (query_vec, query_pos, query_id) = match &query {
            QueryInput::Item { query_id } => {
                let pos = index.position(query_id).ok_or_else(|| Error::NotFound(format!("query image {query_id:?}")))?;
                (index.vector(pos).to_vec(), Some(pos), query_id.clone())
            }
            QueryInput::Descriptor { descriptor } => {
                if descriptor.len() != index.dim() {
                    return Err(Error::Dimension { expected: index.dim(), got: descriptor.len() });
                }
                (Descriptor::from_f32(descriptor)?.into_vec(), None, String::new())
            }
        };
        let relevance = query_pos.and_then(|qpos| {
            let labels = index.labels(qpos);
            if labels.is_empty() {
                return None;
            }
            let mask: Vec<bool> = (0..index.len()).map(|p| p != qpos && !index.labels(p).is_disjoint(labels)).collect();
            let total = mask.iter().filter(|&&r| r).count();
            (total > 0).then_some((mask, total))
        });
        let mut session = Session {
            id: id.into(),
            dataset,
            query,
            query_vec,
            query_pos,
            initial_method: method,
            method,
            config,
            state: FeedbackState::new(query_id),
            ranking: Vec::new(),
            history: Vec::new(),
            relevance,
            baseline_ndcg: None,
        };
        session.ranking = session.context()?.baseline;
        session.baseline_ndcg = session.ndcg();
        Ok(session)
    }

    fn context(&self) -> Result<FeedbackContext<'_>> {
        let ctx = FeedbackContext::new(&self.dataset.index, &self.query_vec, self.query_pos, &self.config)?;
        Ok(if self.config.lda_shrinkage == BACKGROUND_SHRINKAGE { ctx.with_background(&self.dataset.background) } else { ctx })
    }

    fn ndcg(&self) -> Option<f64> {
        let (mask, total) = self.relevance.as_ref()?;
        let order: Vec<usize> = self.ranking.iter().map(|&(p, _)| p).collect();
        ndcg_of_ranking(&order, mask, *total, HISTORY_DEPTH).ok()
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn round(&self) -> usize {
        self.state.round()
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn state(&self) -> &FeedbackState {
        &self.state
    }

    /// Current ranking as image ids, best first.
    pub fn ranking_ids(&self) -> Vec<&str> {
        self.ranking.iter().map(|&(p, _)| self.dataset.index.id(p)).collect()
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.id.clone(),
            dataset: self.dataset.handle.clone(),
            method: self.method,
            round: self.state.round(),
            total: self.ranking.len(),
            positives: self.state.positives().len(),
            negatives: self.state.negatives().len(),
            baseline_ndcg: self.baseline_ndcg,
        }
    }

    /// Applies one round of marks, refits and re-ranks.
    ///
    /// Marks are validated as a whole before anything changes. A switched
    /// `method` takes effect in this round. A failing refit is recorded in
    /// the history and the previous ranking is kept.
    pub fn submit_feedback(&mut self, marks: &[Mark], method: Option<Method>) -> Result<&HistoryEntry> {
        let mut seen: BTreeMap<&str, bool> = BTreeMap::new();
        for m in marks {
            if let Some(prev) = seen.insert(&m.id, m.relevant) {
                if prev != m.relevant {
                    return Err(Error::Validation(format!("image {:?} marked both relevant and irrelevant", m.id)));
                }
            }
            if self.dataset.index.position(&m.id).is_none() {
                return Err(Error::NotFound(format!("image {:?}", m.id)));
            }
        }
        let mut state = self.state.clone();
        for m in marks {
            state.mark(&m.id, m.relevant)?;
        }
        state.advance_round();
        self.state = state;

        let method = method.unwrap_or(self.method);
        let changed = method != self.method;
        self.method = method;
        let mut error = None;
        if !marks.is_empty() || changed {
            match self.refit() {
                Ok(r) => self.ranking = r,
                Err(e) => error = Some(e.to_string()),
            }
        }
        let entry = HistoryEntry {
            round: self.state.round(),
            method,
            marks: marks.to_vec(),
            error,
            ndcg: self.ndcg(),
            top: self.ranking.iter().take(HISTORY_DEPTH).map(|&(p, _)| self.dataset.index.id(p).to_owned()).collect(),
        };
        self.history.push(entry);
        Ok(self.history.last().expect("history entry just pushed"))
    }

    fn refit(&self) -> Result<Vec<(usize, f64)>> {
        let ctx = self.context()?;
        let pos = ctx.positions_of(self.state.positives())?;
        let neg = ctx.positions_of(self.state.negatives())?;
        refine_positions(&ctx, &pos, &neg, self.method)
    }

    /// Stable page over the current ranking; past the end it is empty.
    pub fn results(&self, offset: usize, limit: usize) -> Page {
        let index = &self.dataset.index;
        let items = self
            .ranking
            .iter()
            .enumerate()
            .skip(offset)
            .take(limit)
            .map(|(i, &(p, score))| {
                let id = index.id(p);
                ResultItem {
                    rank: i + 1,
                    id: id.to_owned(),
                    score,
                    image_uri: index.uri(p).to_owned(),
                    marked: self.state.mark_of(id).map(|r| if r { "relevant" } else { "irrelevant" }),
                }
            })
            .collect();
        Page { session_id: self.id.clone(), round: self.state.round(), total: self.ranking.len(), offset, items }
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            session_id: self.id.clone(),
            dataset: self.dataset.handle.clone(),
            query: self.query.clone(),
            method: self.initial_method,
            config: self.config.clone(),
            rounds: self.history.iter().map(|h| SnapshotRound { method: h.method, marks: h.marks.clone() }).collect(),
        }
    }

    /// Rebuilds a session by replaying its rounds.
    pub fn replay(snapshot: &SessionSnapshot, dataset: Arc<Dataset>) -> Result<Self> {
        let mut s =
            Session::new(&snapshot.session_id, dataset, snapshot.query.clone(), snapshot.method, snapshot.config.clone())?;
        for round in &snapshot.rounds {
            s.submit_feedback(&round.marks, Some(round.method))?;
        }
        Ok(s)
    }
}

pub type SharedSession = Arc<tokio::sync::Mutex<Session>>;

/// All live sessions. Each session sits behind its own fair async mutex, so
/// submissions to one session run one at a time in arrival order.
pub struct SessionStore {
    sessions: RwLock<HashMap<String, SharedSession>>,
    next: AtomicU64,
    snapshot_dir: Option<PathBuf>,
}

impl SessionStore {
    pub fn new(snapshot_dir: Option<PathBuf>) -> Self {
        SessionStore { sessions: RwLock::new(HashMap::new()), next: AtomicU64::new(1), snapshot_dir }
    }

    pub fn next_id(&self) -> String {
        loop {
            let id = format!("s{:06}", self.next.fetch_add(1, Ordering::Relaxed));
            if !self.sessions.read().expect("session store poisoned").contains_key(&id) {
                return id;
            }
        }
    }

    pub fn insert(&self, session: Session) -> SharedSession {
        let id = session.id().to_owned();
        let shared = Arc::new(tokio::sync::Mutex::new(session));
        self.sessions.write().expect("session store poisoned").insert(id, shared.clone());
        shared
    }

    pub fn get(&self, id: &str) -> Result<SharedSession> {
        self.sessions
            .read()
            .expect("session store poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session {id:?}")))
    }

    pub fn remove(&self, id: &str) -> Result<()> {
        self.sessions
            .write()
            .expect("session store poisoned")
            .remove(id)
            .ok_or_else(|| Error::NotFound(format!("session {id:?}")))?;
        if let Some(dir) = &self.snapshot_dir {
            let _ = std::fs::remove_file(snapshot_path(dir, id));
        }
        Ok(())
    }

    /// Writes the session's snapshot if a snapshot directory is configured.
    pub fn persist(&self, session: &Session) -> Result<()> {
        let Some(dir) = &self.snapshot_dir else { return Ok(()) };
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_vec_pretty(&session.snapshot()).map_err(|e| Error::Io(e.to_string()))?;
        let path = snapshot_path(dir, session.id());
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Replays every snapshot in the directory. Snapshots whose dataset is
    /// not loaded are skipped and reported.
    pub fn restore(&self, registry: &DatasetRegistry) -> Result<Vec<String>> {
        let Some(dir) = &self.snapshot_dir else { return Ok(Vec::new()) };
        let Ok(entries) = std::fs::read_dir(dir) else { return Ok(Vec::new()) };
        let mut paths: Vec<PathBuf> =
            entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "json")).collect();
        paths.sort();
        let mut skipped = Vec::new();
        for path in paths {
            let text = std::fs::read_to_string(&path)?;
            let snap: SessionSnapshot = serde_json::from_str(&text)
                .map_err(|e| Error::Validation(format!("snapshot {}: {e}", path.display())))?;
            match registry.get(&snap.dataset) {
                Ok(ds) => {
                    self.insert(Session::replay(&snap, ds)?);
                }
                Err(_) => skipped.push(snap.session_id),
            }
        }
        Ok(skipped)
    }
}

fn snapshot_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.json"))
}
