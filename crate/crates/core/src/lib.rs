//! Content-based image retrieval with relevance feedback.
//!
//! The crate is organised bottom-up:
//!
//! - [`descriptor`] and [`index`]: global descriptors, Euclidean / Mahalanobis
//!   distances and exact nearest-neighbour ranking over an immutable corpus.
//! - [`aggregation`]: pooling of convolutional feature maps into descriptors.
//! - [`feedback`]: relevance-feedback methods (KDE, feature weighting,
//!   diagonal MMC, ITML, SVM / one-class SVM, Exemplar-LDA) and re-ranking.
//! - [`eval`]: NDCG@k, the feedback simulation protocol, repeated benchmarks
//!   and paired t-tests.
//! - [`io`]: the binary descriptor and feature-map containers.
//! - [`synthetic`]: seeded synthetic corpora for tests and demos.

pub mod aggregation;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod feedback;
pub mod index;
pub mod io;
pub mod synthetic;

pub use descriptor::{euclidean_dist, l2_normalize, mahalanobis_dist, Descriptor, LearnedMetric};
pub use error::{Error, Result};
pub use index::{build_index, knn_query, CorpusIndex, IndexEntry, Neighbor};
