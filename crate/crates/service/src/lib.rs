//! Dataset ingestion, interactive feedback sessions and their HTTP interface.

pub mod api;
pub mod config;
pub mod dataset;
pub mod session;

pub use api::{router, AppState};
pub use config::ServiceConfig;
pub use dataset::{Dataset, DatasetInfo, DatasetManifest, DatasetRegistry};
pub use session::{HistoryEntry, Mark, Page, QueryInput, Session, SessionSnapshot, SessionStore};
