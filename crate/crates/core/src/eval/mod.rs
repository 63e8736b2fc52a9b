//! Ranking quality, the feedback simulation protocol and significance tests.

pub mod ndcg;
pub mod sim;
pub mod stats;

pub use ndcg::{ndcg_at_k, ndcg_of_ranking};
pub use sim::{
    run_benchmark, simulate_feedback_session, simulate_with, BenchmarkReport, MethodCurve, PairwiseTest, QuerySpec,
    SessionError, SessionTrace, SimulationConfig,
};
pub use stats::{paired_t_test, TTest};
