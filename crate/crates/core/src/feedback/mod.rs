//! Relevance feedback: turn relevant / irrelevant marks into a refined ranking.
//!
//! Methods fall into three families:
//!
//! - probabilistic: [`kde`] scores `P(relevant | x)` from kernel densities;
//! - classification: [`svm`] (falling back to a one-class SVM without
//!   negatives) and Exemplar-LDA in [`lda`];
//! - metric learning: feature weighting and diagonal MMC in [`weighting`],
//!   full-matrix ITML in [`itml`]. These rank by learned distance to the query
//!   and can be combined with KDE (`<method>+kde`).
//!
//! The query is always treated as a known relevant exemplar.

pub mod itml;
pub mod kde;
pub mod lda;
pub mod svm;
pub mod weighting;

use std::fmt;
use std::str::FromStr;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::descriptor::LearnedMetric;
use crate::error::{Error, Result};
use crate::index::CorpusIndex;

pub use itml::{ItmlConfig, ItmlFit, ItmlThresholds};
pub use kde::KdeScorer;
pub use lda::BackgroundStats;
pub use svm::{LinearScorer, SvmConfig};
pub use weighting::{OptimizerConfig, WeightFit};

/// Relevance marks accumulated over the rounds of one search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackState {
    query_id: String,
    positives: IndexSet<String>,
    negatives: IndexSet<String>,
    round: usize,
}

impl FeedbackState {
    pub fn new(query_id: impl Into<String>) -> Self {
        FeedbackState {
            query_id: query_id.into(),
            positives: IndexSet::new(),
            negatives: IndexSet::new(),
            round: 0,
        }
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn positives(&self) -> &IndexSet<String> {
        &self.positives
    }

    pub fn negatives(&self) -> &IndexSet<String> {
        &self.negatives
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }

    /// Marks `id`; a later mark overrides an earlier one.
    ///
    /// The query itself is implicitly relevant: marking it relevant is a no-op
    /// and marking it irrelevant is rejected.
    pub fn mark(&mut self, id: &str, relevant: bool) -> Result<()> {
        if id == self.query_id {
            if relevant {
                return Ok(());
            }
            return Err(Error::Validation(format!("query {id:?} cannot be marked irrelevant")));
        }
        if relevant {
            self.negatives.shift_remove(id);
            self.positives.insert(id.to_owned());
        } else {
            self.positives.shift_remove(id);
            self.negatives.insert(id.to_owned());
        }
        Ok(())
    }

    /// `None` for unmarked items.
    pub fn mark_of(&self, id: &str) -> Option<bool> {
        if self.positives.contains(id) {
            Some(true)
        } else if self.negatives.contains(id) {
            Some(false)
        } else {
            None
        }
    }

    pub fn is_marked(&self, id: &str) -> bool {
        self.mark_of(id).is_some()
    }

    pub fn advance_round(&mut self) {
        self.round += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodKind {
    Kde,
    FeatureWeighting,
    MmcDiag,
    Itml,
    Svm,
    ExemplarLda,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Kde => "kde",
            MethodKind::FeatureWeighting => "feature-weighting",
            MethodKind::MmcDiag => "mmc-diag",
            MethodKind::Itml => "itml",
            MethodKind::Svm => "svm",
            MethodKind::ExemplarLda => "exemplar-lda",
        }
    }

    pub fn is_metric(self) -> bool {
        matches!(self, MethodKind::FeatureWeighting | MethodKind::MmcDiag | MethodKind::Itml)
    }
}

/// A feedback method: one of the base kinds, optionally with KDE on top of a
/// learned metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Method {
    kind: MethodKind,
    with_kde: bool,
}

impl Method {
    pub const KDE: Method = Method { kind: MethodKind::Kde, with_kde: false };
    pub const FEATURE_WEIGHTING: Method = Method { kind: MethodKind::FeatureWeighting, with_kde: false };
    pub const MMC_DIAG: Method = Method { kind: MethodKind::MmcDiag, with_kde: false };
    pub const ITML: Method = Method { kind: MethodKind::Itml, with_kde: false };
    pub const SVM: Method = Method { kind: MethodKind::Svm, with_kde: false };
    pub const EXEMPLAR_LDA: Method = Method { kind: MethodKind::ExemplarLda, with_kde: false };

    pub fn new(kind: MethodKind, with_kde: bool) -> Result<Self> {
        if with_kde && !kind.is_metric() {
            return Err(Error::param(format!("{} cannot be combined with kde", kind.name())));
        }
        Ok(Method { kind, with_kde })
    }

    pub fn kind(self) -> MethodKind {
        self.kind
    }

    pub fn with_kde(self) -> bool {
        self.with_kde
    }

    /// All nine method variants.
    pub fn all() -> Vec<Method> {
        use MethodKind::*;
        let mut out = vec![Method::KDE];
        for k in [FeatureWeighting, MmcDiag, Itml] {
            out.push(Method { kind: k, with_kde: false });
            out.push(Method { kind: k, with_kde: true });
        }
        out.push(Method::SVM);
        out.push(Method::EXEMPLAR_LDA);
        out
    }
}

impl Default for Method {
    fn default() -> Self {
        Method::ITML
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.name())?;
        if self.with_kde {
            f.write_str("+kde")?;
        }
        Ok(())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (base, with_kde) = match s.strip_suffix("+kde") {
            Some(b) => (b, true),
            None => (s.as_str(), false),
        };
        let kind = match base {
            "kde" => MethodKind::Kde,
            "feature-weighting" | "fw" => MethodKind::FeatureWeighting,
            "mmc-diag" | "mmc" => MethodKind::MmcDiag,
            "itml" => MethodKind::Itml,
            "svm" => MethodKind::Svm,
            "exemplar-lda" | "lda" | "elda" => MethodKind::ExemplarLda,
            other => return Err(Error::param(format!("unknown feedback method {other:?}"))),
        };
        Method::new(kind, with_kde)
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Hyperparameters of every feedback method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackConfig {
    pub optimizer: OptimizerConfig,
    pub itml: ItmlConfig,
    pub svm: SvmConfig,
    /// Exemplar-LDA ridge: `λ = factor · trace(Σ_bg) / D`.
    pub lda_shrinkage: f64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig {
            optimizer: OptimizerConfig::default(),
            itml: ItmlConfig::default(),
            svm: SvmConfig::default(),
            lda_shrinkage: 0.01,
        }
    }
}

/// Everything a method needs to know about the query besides the marks.
pub struct FeedbackContext<'a> {
    pub index: &'a CorpusIndex,
    pub query: Vec<f32>,
    /// Position of the query inside the index, if it is a corpus item.
    pub query_pos: Option<usize>,
    /// Euclidean baseline ranking (query item excluded).
    pub baseline: Vec<(usize, f64)>,
    pub background: Option<&'a BackgroundStats>,
    pub config: &'a FeedbackConfig,
}

impl<'a> FeedbackContext<'a> {
    pub fn new(
        index: &'a CorpusIndex,
        query: &[f32],
        query_pos: Option<usize>,
        config: &'a FeedbackConfig,
    ) -> Result<Self> {
        let baseline = index.rank_positions(query, None, query_pos)?;
        Ok(FeedbackContext { index, query: query.to_vec(), query_pos, baseline, background: None, config })
    }

    /// Context for a query that is an item of the index.
    pub fn for_item(index: &'a CorpusIndex, query_pos: usize, config: &'a FeedbackConfig) -> Result<Self> {
        let q = index.vector(query_pos).to_vec();
        Self::new(index, &q, Some(query_pos), config)
    }

    pub fn with_background(mut self, bg: &'a BackgroundStats) -> Self {
        self.background = Some(bg);
        self
    }

    /// The query followed by the vectors at `pos`, skipping the query item.
    fn positive_vectors(&self, pos: &[usize]) -> Vec<&[f32]> {
        std::iter::once(self.query.as_slice())
            .chain(pos.iter().filter(|&&p| Some(p) != self.query_pos).map(|&p| self.index.vector(p)))
            .collect()
    }

    fn vectors(&self, pos: &[usize]) -> Vec<&[f32]> {
        pos.iter().map(|&p| self.index.vector(p)).collect()
    }

    /// Median distance from the query to the corpus under `metric`.
    pub fn median_query_distance(&self, metric: Option<&LearnedMetric>) -> f64 {
        let mut d: Vec<f64> = match metric {
            None => self.baseline.iter().map(|&(_, d)| d).collect(),
            Some(m) => self
                .index
                .map_positions(|x| m.distance_unchecked(&self.query, x).max(0.0).sqrt())
                .into_iter()
                .enumerate()
                .filter(|(p, _)| Some(*p) != self.query_pos)
                .map(|(_, d)| d)
                .collect(),
        };
        median(&mut d)
    }

    /// Resolves feedback ids to positions, rejecting unknown ids.
    pub fn positions_of<'s>(&self, ids: impl IntoIterator<Item = &'s String>) -> Result<Vec<usize>> {
        ids.into_iter()
            .map(|id| self.index.position(id).ok_or_else(|| Error::NotFound(format!("image {id:?}"))))
            .collect()
    }
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// A fitted relevance model; higher scores mean more relevant.
#[derive(Debug, Clone)]
pub enum RelevanceScorer {
    Kde(KdeScorer),
    Linear(LinearScorer),
    /// Negated learned distance to the query.
    Distance { metric: LearnedMetric, query: Vec<f32> },
}

impl RelevanceScorer {
    pub fn score(&self, x: &[f32]) -> f64 {
        match self {
            RelevanceScorer::Kde(k) => k.score(x),
            RelevanceScorer::Linear(l) => l.decision(x),
            RelevanceScorer::Distance { metric, query } => -metric.distance_unchecked(query, x).max(0.0),
        }
    }

    /// Monotone in [`score`](Self::score) but free of saturation; used for sorting.
    pub fn rank_key(&self, x: &[f32]) -> f64 {
        match self {
            RelevanceScorer::Kde(k) => k.log_odds(x),
            _ => self.score(x),
        }
    }

    pub fn metric(&self) -> Option<&LearnedMetric> {
        match self {
            RelevanceScorer::Kde(k) => k.metric(),
            RelevanceScorer::Distance { metric, .. } => Some(metric),
            RelevanceScorer::Linear(_) => None,
        }
    }
}

/// Builds a KDE scorer from the context: bandwidth fallback and the uniform
/// negative level both come from the corpus.
pub fn kde_fit(
    ctx: &FeedbackContext<'_>,
    pos: &[usize],
    neg: &[usize],
    metric: Option<&LearnedMetric>,
) -> Result<KdeScorer> {
    let positives = ctx.positive_vectors(pos);
    let negatives = ctx.vectors(neg);
    let fallback = ctx.median_query_distance(metric);
    let mut scorer = KdeScorer::fit(&positives, &negatives, metric.cloned(), fallback)?;
    if negatives.is_empty() {
        let level = scorer.mean_positive_density(ctx.index, ctx.query_pos);
        scorer.set_uniform_negative(level);
    }
    Ok(scorer)
}

/// KDE whose kernel distances are measured under `base`.
pub fn combine_with_kde(
    ctx: &FeedbackContext<'_>,
    base: &LearnedMetric,
    pos: &[usize],
    neg: &[usize],
) -> Result<RelevanceScorer> {
    base.validate()?;
    Ok(RelevanceScorer::Kde(kde_fit(ctx, pos, neg, Some(base))?))
}

/// ITML with the per-query thresholds derived from the baseline ranking.
pub fn itml_fit(ctx: &FeedbackContext<'_>, pos: &[usize], neg: &[usize]) -> Result<ItmlFit> {
    let positives = ctx.positive_vectors(pos);
    let negatives = ctx.vectors(neg);
    let thresholds = ItmlThresholds::from_baseline(&ctx.baseline, pos, neg, &ctx.config.itml)?;
    itml::itml_pairs(&positives, &negatives, thresholds, &ctx.config.itml)
}

fn fit_metric(ctx: &FeedbackContext<'_>, pos: &[usize], neg: &[usize], kind: MethodKind) -> Result<LearnedMetric> {
    let own_pos: Vec<usize> = pos.iter().copied().filter(|&p| Some(p) != ctx.query_pos).collect();
    if own_pos.is_empty() && neg.is_empty() {
        return Ok(match kind {
            MethodKind::Itml => LearnedMetric::full_identity(ctx.index.dim()),
            _ => LearnedMetric::identity(ctx.index.dim()),
        });
    }
    let positives = ctx.positive_vectors(pos);
    let negatives = ctx.vectors(neg);
    match kind {
        MethodKind::FeatureWeighting => {
            Ok(weighting::feature_weighting_fit(&positives, &negatives, &ctx.config.optimizer)?.metric)
        }
        MethodKind::MmcDiag => Ok(weighting::mmc_diag_fit(&positives, &negatives, &ctx.config.optimizer)?.metric),
        MethodKind::Itml => Ok(itml_fit(ctx, pos, neg)?.metric),
        other => Err(Error::param(format!("{} is not a metric learning method", other.name()))),
    }
}

/// Fits `method` on marked positions.
pub fn fit_scorer(ctx: &FeedbackContext<'_>, pos: &[usize], neg: &[usize], method: Method) -> Result<RelevanceScorer> {
    match method.kind() {
        MethodKind::Kde => Ok(RelevanceScorer::Kde(kde_fit(ctx, pos, neg, None)?)),
        MethodKind::Svm => {
            let positives = ctx.positive_vectors(pos);
            let negatives = ctx.vectors(neg);
            Ok(RelevanceScorer::Linear(svm::svm_fit(&positives, &negatives, &ctx.config.svm)?))
        }
        MethodKind::ExemplarLda => {
            let positives = ctx.positive_vectors(pos);
            let owned;
            let bg = match ctx.background {
                Some(bg) => bg,
                None => {
                    owned = BackgroundStats::from_index(ctx.index, ctx.config.lda_shrinkage)?;
                    &owned
                }
            };
            Ok(RelevanceScorer::Linear(lda::exemplar_lda_fit(&positives, bg)?))
        }
        kind => {
            let metric = fit_metric(ctx, pos, neg, kind)?;
            if method.with_kde() {
                combine_with_kde(ctx, &metric, pos, neg)
            } else {
                Ok(RelevanceScorer::Distance { metric, query: ctx.query.clone() })
            }
        }
    }
}

/// Scores and sorts the whole corpus (query item excluded), best first.
pub fn rank_with(ctx: &FeedbackContext<'_>, scorer: &RelevanceScorer) -> Result<Vec<(usize, f64)>> {
    if let RelevanceScorer::Distance { metric, query } = scorer {
        let ranked = ctx.index.rank_positions(query, Some(metric), ctx.query_pos)?;
        return Ok(ranked.into_iter().map(|(p, d)| (p, -d)).collect());
    }
    let keys = ctx.index.map_positions(|x| scorer.rank_key(x));
    let mut ranked: Vec<(usize, f64)> =
        keys.into_iter().enumerate().filter(|(p, _)| Some(*p) != ctx.query_pos).collect();
    ctx.index.sort_descending(&mut ranked);
    if let RelevanceScorer::Kde(k) = scorer {
        for (_, key) in ranked.iter_mut() {
            *key = k.probability_from_log_odds(*key);
        }
    }
    Ok(ranked)
}

/// Fit and rank in one step, on positions.
pub fn refine_positions(
    ctx: &FeedbackContext<'_>,
    pos: &[usize],
    neg: &[usize],
    method: Method,
) -> Result<Vec<(usize, f64)>> {
    let scorer = fit_scorer(ctx, pos, neg, method)?;
    rank_with(ctx, &scorer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub id: String,
    pub score: f64,
}

/// Refined top-`k` for a feedback state. Marked items keep their scored place.
pub fn refine_ranking(
    ctx: &FeedbackContext<'_>,
    state: &FeedbackState,
    method: Method,
    k: usize,
) -> Result<Vec<RankedItem>> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let pos = ctx.positions_of(state.positives())?;
    let neg = ctx.positions_of(state.negatives())?;
    let ranked = refine_positions(ctx, &pos, &neg, method)?;
    Ok(ranked
        .into_iter()
        .take(k)
        .map(|(p, score)| RankedItem { id: ctx.index.id(p).to_owned(), score })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marks_have_set_semantics() {
        let mut s = FeedbackState::new("q");
        s.mark("a", true).unwrap();
        s.mark("a", true).unwrap();
        s.mark("b", false).unwrap();
        s.mark("a", false).unwrap();
        assert!(s.positives().is_empty());
        assert_eq!(s.negatives().iter().collect::<Vec<_>>(), ["b", "a"]);
        s.mark("q", true).unwrap();
        assert!(!s.positives().contains("q"));
        assert!(matches!(s.mark("q", false), Err(Error::Validation(_))));
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::all() {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!(Method::all().len(), 9);
        assert!("svm+kde".parse::<Method>().is_err());
        assert!("rocchio".parse::<Method>().is_err());
        assert_eq!(Method::default(), Method::ITML);
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&mut []), 0.0);
    }
}
