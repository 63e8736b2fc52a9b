//! Simulated feedback sessions and repeated, subsampled benchmarks.
//!
//! A session starts from the Euclidean ranking of a corpus item. Each round,
//! a few unmarked items from the top of the current ranking are marked
//! according to their labels, the method is refit and the corpus re-ranked.
//!
//! Random streams: the marks of a session come from a ChaCha8 generator keyed
//! by `(rng_seed, query id)` with one stream per round; the subsample of a
//! repetition is keyed by `(rng_seed, repetition)`. Nothing depends on thread
//! scheduling or on the order in which queries are listed.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{refine_positions, BackgroundStats, FeedbackConfig, FeedbackContext, Method, MethodKind};
use crate::index::CorpusIndex;

use super::ndcg::ndcg_of_ranking;
use super::stats::{paired_t_test, TTest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub rounds: usize,
    pub marks_per_round: usize,
    pub pool_depth: usize,
    pub eval_k: usize,
    pub repetitions: usize,
    pub subsample_fraction: f64,
    pub rng_seed: u64,
    pub feedback: FeedbackConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            rounds: 10,
            marks_per_round: 10,
            pool_depth: 100,
            eval_k: 100,
            repetitions: 10,
            subsample_fraction: 0.75,
            rng_seed: 0,
            feedback: FeedbackConfig::default(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.marks_per_round > self.pool_depth {
            return Err(Error::param(format!(
                "marks_per_round ({}) exceeds pool_depth ({})",
                self.marks_per_round, self.pool_depth
            )));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::param(format!("subsample_fraction must lie in (0, 1], got {}", self.subsample_fraction)));
        }
        if self.eval_k == 0 {
            return Err(Error::param("eval_k must be at least 1"));
        }
        if self.repetitions == 0 {
            return Err(Error::param("repetitions must be at least 1"));
        }
        Ok(())
    }
}

/// A simulated query: a corpus item and the label that defines relevance.
///
/// Without a task, every item sharing a label with the query is relevant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub id: String,
    #[serde(default)]
    pub task: Option<String>,
}

impl QuerySpec {
    pub fn new(id: impl Into<String>) -> Self {
        QuerySpec { id: id.into(), task: None }
    }

    pub fn with_task(id: impl Into<String>, task: impl Into<String>) -> Self {
        QuerySpec { id: id.into(), task: Some(task.into()) }
    }

    /// Relevance mask over the index; the query item itself is never relevant.
    pub fn relevance(&self, index: &CorpusIndex) -> Result<(usize, Vec<bool>)> {
        let qpos = index.position(&self.id).ok_or_else(|| Error::NotFound(format!("query {:?}", self.id)))?;
        let wanted: BTreeSet<String> = match &self.task {
            Some(t) => std::iter::once(t.clone()).collect(),
            None => index.labels(qpos).clone(),
        };
        let mask = (0..index.len()).map(|p| p != qpos && !index.labels(p).is_disjoint(&wanted)).collect();
        Ok((qpos, mask))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionError {
    pub round: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    /// NDCG after each round; element 0 is the baseline.
    pub ndcg: Vec<f64>,
    pub errors: Vec<SessionError>,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed of the marking stream of one query.
pub fn session_seed(rng_seed: u64, query_id: &str) -> u64 {
    mix(mix(rng_seed) ^ fnv1a(query_id))
}

fn subsample_seed(rng_seed: u64, repetition: usize) -> u64 {
    mix(mix(rng_seed ^ 0x5eed_0000_0000_0000) ^ repetition as u64)
}

/// Runs the simulation loop with an arbitrary re-ranker.
///
/// `rerank(pos, neg)` returns the full ranking (best first, query excluded)
/// given the marked positions. A failing re-rank is recorded and the previous
/// ranking is kept for that round.
pub fn simulate_with<F>(
    baseline: &[usize],
    relevant: &[bool],
    cfg: &SimulationConfig,
    seed: u64,
    mut rerank: F,
) -> Result<SessionTrace>
where
    F: FnMut(&[usize], &[usize]) -> Result<Vec<usize>>,
{
    cfg.validate()?;
    let total: usize = baseline.iter().filter(|&&p| relevant[p]).count();
    let mut ranking = baseline.to_vec();
    let mut ndcg = Vec::with_capacity(cfg.rounds + 1);
    ndcg.push(ndcg_of_ranking(&ranking, relevant, total, cfg.eval_k)?);
    let mut marked = vec![false; relevant.len()];
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    let mut errors = Vec::new();
    for round in 1..=cfg.rounds {
        let pool: Vec<usize> = ranking.iter().take(cfg.pool_depth).copied().filter(|&p| !marked[p]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(round as u64);
        let take = cfg.marks_per_round.min(pool.len());
        for i in sample(&mut rng, pool.len(), take).into_iter() {
            let p = pool[i];
            marked[p] = true;
            if relevant[p] {
                pos.push(p);
            } else {
                neg.push(p);
            }
        }
        match rerank(&pos, &neg) {
            Ok(r) => ranking = r,
            Err(e) => errors.push(SessionError { round, message: e.to_string() }),
        }
        ndcg.push(ndcg_of_ranking(&ranking, relevant, total, cfg.eval_k)?);
    }
    Ok(SessionTrace { ndcg, errors })
}

fn session_on(
    index: &CorpusIndex,
    query: &QuerySpec,
    method: Method,
    cfg: &SimulationConfig,
    background: Option<&BackgroundStats>,
) -> Result<SessionTrace> {
    let (qpos, relevant) = query.relevance(index)?;
    let mut ctx = FeedbackContext::for_item(index, qpos, &cfg.feedback)?;
    if let Some(bg) = background {
        ctx = ctx.with_background(bg);
    }
    let baseline: Vec<usize> = ctx.baseline.iter().map(|&(p, _)| p).collect();
    simulate_with(&baseline, &relevant, cfg, session_seed(cfg.rng_seed, &query.id), |pos, neg| {
        Ok(refine_positions(&ctx, pos, neg, method)?.into_iter().map(|(p, _)| p).collect())
    })
}

/// One simulated feedback session on the full index.
pub fn simulate_feedback_session(
    index: &CorpusIndex,
    query: &QuerySpec,
    method: Method,
    cfg: &SimulationConfig,
) -> Result<SessionTrace> {
    let bg = needs_background(&[method])
        .then(|| BackgroundStats::from_index(index, cfg.feedback.lda_shrinkage))
        .transpose()?;
    session_on(index, query, method, cfg, bg.as_ref())
}

fn needs_background(methods: &[Method]) -> bool {
    methods.iter().any(|m| m.kind() == MethodKind::ExemplarLda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCurve {
    pub method: Method,
    /// Mean over repetitions of the per-repetition query-averaged NDCG.
    pub mean: Vec<f64>,
    /// Sample standard deviation over repetitions (0 for one repetition).
    pub std: Vec<f64>,
    /// `per_repetition[r][round]`.
    pub per_repetition: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: Method,
    pub b: Method,
    pub round: usize,
    #[serde(flatten)]
    pub test: TTest,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkError {
    pub repetition: usize,
    pub query: String,
    pub method: Method,
    #[serde(flatten)]
    pub error: SessionError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: SimulationConfig,
    pub queries: Vec<String>,
    pub curves: Vec<MethodCurve>,
    /// Paired over repetitions, for every method pair and round.
    pub t_tests: Vec<PairwiseTest>,
    /// `p_values[round][i][j]` for methods `i`, `j` in curve order; `None` on
    /// the diagonal.
    pub p_values: Vec<Vec<Vec<Option<f64>>>>,
    pub errors: Vec<BenchmarkError>,
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Positions of a repetition's subsample: all queries plus a uniform draw of
/// the rest, in index order.
fn subsample(index: &CorpusIndex, query_pos: &BTreeSet<usize>, cfg: &SimulationConfig, rep: usize) -> Vec<usize> {
    let n = index.len();
    let target = ((cfg.subsample_fraction * n as f64).floor() as usize).max(query_pos.len());
    if target >= n {
        return (0..n).collect();
    }
    let others: Vec<usize> = (0..n).filter(|p| !query_pos.contains(p)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(subsample_seed(cfg.rng_seed, rep));
    let mut keep: Vec<usize> = sample(&mut rng, others.len(), target - query_pos.len())
        .into_iter()
        .map(|i| others[i])
        .chain(query_pos.iter().copied())
        .collect();
    keep.sort_unstable();
    keep
}

#[cfg(feature = "parallel")]
fn run_jobs<T, F>(jobs: &[T], f: F) -> Vec<Result<SessionTrace>>
where
    T: Sync,
    F: Fn(&T) -> Result<SessionTrace> + Sync + Send,
{
    use rayon::prelude::*;
    jobs.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_jobs<T, F>(jobs: &[T], f: F) -> Vec<Result<SessionTrace>>
where
    F: Fn(&T) -> Result<SessionTrace>,
{
    jobs.iter().map(f).collect()
}

/// Repeated, subsampled simulation of every method on every query.
pub fn run_benchmark(
    index: &CorpusIndex,
    queries: &[QuerySpec],
    methods: &[Method],
    cfg: &SimulationConfig,
) -> Result<BenchmarkReport> {
    cfg.validate()?;
    if queries.is_empty() {
        return Err(Error::param("the benchmark needs at least one query"));
    }
    if methods.is_empty() {
        return Err(Error::param("the benchmark needs at least one method"));
    }
    // Sort queries by id so summation order does not depend on input order.
    let mut queries: Vec<QuerySpec> = queries.to_vec();
    queries.sort_by(|a, b| a.id.cmp(&b.id).then_with(|| a.task.cmp(&b.task)));
    let mut query_pos = BTreeSet::new();
    for q in &queries {
        let (qpos, mask) = q.relevance(index)?;
        if !mask.iter().any(|&r| r) {
            return Err(Error::param(format!("query {:?} has no relevant items", q.id)));
        }
        query_pos.insert(qpos);
    }

    let mut sums = vec![vec![vec![0.0; cfg.rounds + 1]; cfg.repetitions]; methods.len()];
    let mut errors = Vec::new();
    for rep in 0..cfg.repetitions {
        let keep = subsample(index, &query_pos, cfg, rep);
        let owned;
        let sub = if keep.len() == index.len() {
            index
        } else {
            owned = index.subset(&keep)?;
            &owned
        };
        let bg = needs_background(methods)
            .then(|| BackgroundStats::from_index(sub, cfg.feedback.lda_shrinkage))
            .transpose()?;
        let jobs: Vec<(usize, usize)> =
            (0..methods.len()).flat_map(|m| (0..queries.len()).map(move |q| (m, q))).collect();
        let traces = run_jobs(&jobs, |&(m, q)| session_on(sub, &queries[q], methods[m], cfg, bg.as_ref()));
        for (&(m, q), trace) in jobs.iter().zip(traces) {
            let trace = trace?;
            for (acc, v) in sums[m][rep].iter_mut().zip(&trace.ndcg) {
                *acc += v;
            }
            errors.extend(trace.errors.into_iter().map(|error| BenchmarkError {
                repetition: rep,
                query: queries[q].id.clone(),
                method: methods[m],
                error,
            }));
        }
    }

    let nq = queries.len() as f64;
    let curves: Vec<MethodCurve> = methods
        .iter()
        .zip(sums)
        .map(|(&method, per_rep)| {
            let per_repetition: Vec<Vec<f64>> =
                per_rep.into_iter().map(|r| r.into_iter().map(|s| s / nq).collect()).collect();
            let (mean, std) = (0..=cfg.rounds)
                .map(|round| mean_std(&per_repetition.iter().map(|r| r[round]).collect::<Vec<_>>()))
                .unzip();
            MethodCurve { method, mean, std, per_repetition }
        })
        .collect();

    let mut t_tests = Vec::new();
    let mut p_values = vec![vec![vec![None; methods.len()]; methods.len()]; cfg.rounds + 1];
    if methods.len() > 1 && cfg.repetitions > 1 {
        for round in 0..=cfg.rounds {
            for i in 0..curves.len() {
                for j in i + 1..curves.len() {
                    let a: Vec<f64> = curves[i].per_repetition.iter().map(|r| r[round]).collect();
                    let b: Vec<f64> = curves[j].per_repetition.iter().map(|r| r[round]).collect();
                    let test = paired_t_test(&a, &b)?;
                    p_values[round][i][j] = Some(test.p);
                    p_values[round][j][i] = Some(test.p);
                    t_tests.push(PairwiseTest {
                        a: curves[i].method,
                        b: curves[j].method,
                        round,
                        test,
                        significant: test.p < SIGNIFICANCE_LEVEL,
                    });
                }
            }
        }
    }

    Ok(BenchmarkReport {
        config: cfg.clone(),
        queries: queries.into_iter().map(|q| q.id).collect(),
        curves,
        t_tests,
        p_values,
        errors,
    })
}

impl BenchmarkReport {
    /// `method,round,mean_ndcg,std,n` with one row per method and round.
    ///
    /// Numbers use the shortest decimal that round-trips to the same `f64`;
    /// `n` is the number of repetitions. Lines end in `\n`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,round,mean_ndcg,std,n\n");
        for c in &self.curves {
            for (round, (m, s)) in c.mean.iter().zip(&c.std).enumerate() {
                let _ = writeln!(out, "{},{},{:?},{:?},{}", c.method, round, m, s, c.per_repetition.len());
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Validation(format!("malformed benchmark report: {e}")))
    }

    pub fn curve(&self, method: Method) -> Option<&MethodCurve> {
        self.curves.iter().find(|c| c.method == method)
    }

    /// Tests between the same method in two reports, per round, paired over
    /// repetitions.
    pub fn compare(&self, other: &BenchmarkReport, method: Method) -> Result<Vec<TTest>> {
        let a = self.curve(method).ok_or_else(|| Error::NotFound(format!("method {method} in first report")))?;
        let b = other.curve(method).ok_or_else(|| Error::NotFound(format!("method {method} in second report")))?;
        let rounds = a.mean.len().min(b.mean.len());
        (0..rounds)
            .map(|round| {
                let xa: Vec<f64> = a.per_repetition.iter().map(|r| r[round]).collect();
                let xb: Vec<f64> = b.per_repetition.iter().map(|r| r[round]).collect();
                paired_t_test(&xa, &xb)
            })
            .collect()
    }
}
