use crate::error::{Error, Result};

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// NDCG@k of a binary relevance list.
///
/// `relevance[i]` is whether the item at rank `i + 1` is relevant and
/// `total_relevant` is `|R(q)|`, the number of relevant items in the whole
/// corpus (which bounds the ideal DCG).
pub fn ndcg_at_k(relevance: &[bool], total_relevant: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::param("NDCG cut-off k must be at least 1"));
    }
    if k > relevance.len() {
        return Err(Error::param(format!("NDCG cut-off k={k} exceeds ranking length {}", relevance.len())));
    }
    let hits = relevance[..k].iter().filter(|&&r| r).count();
    if hits > total_relevant {
        return Err(Error::param(format!(
            "{hits} relevant items in the top {k} but total_relevant is {total_relevant}"
        )));
    }
    if total_relevant == 0 {
        return Ok(0.0);
    }
    let dcg: f64 = relevance[..k].iter().enumerate().filter(|(_, &r)| r).map(|(i, _)| discount(i + 1)).sum();
    let ideal: f64 = (1..=k.min(total_relevant)).map(discount).sum();
    Ok(dcg / ideal)
}

/// NDCG@k of a ranking of positions against a relevance mask.
///
/// Rankings shorter than `k` are evaluated at their full length.
pub fn ndcg_of_ranking(ranking: &[usize], relevant: &[bool], total_relevant: usize, k: usize) -> Result<f64> {
    let flags: Vec<bool> = ranking.iter().take(k).map(|&p| relevant[p]).collect();
    if flags.is_empty() {
        return Err(Error::EmptyIndex);
    }
    ndcg_at_k(&flags, total_relevant, k.min(flags.len()))
}
