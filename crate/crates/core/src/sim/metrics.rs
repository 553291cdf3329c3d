//! Binary-relevance ranking metrics.

use std::collections::HashSet;

use crate::error::{Error, Result};

fn positive_set<S: AsRef<str>>(positives: &[S]) -> Result<HashSet<&str>> {
    let set: HashSet<&str> = positives.iter().map(AsRef::as_ref).collect();
    if set.is_empty() {
        return Err(Error::Empty("positives"));
    }
    Ok(set)
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be ≥ 1".into()));
    }
    Ok(())
}

/// `|positives ∩ top-k| / |positives|`
pub fn recall_at_k<S: AsRef<str>, P: AsRef<str>>(ranking: &[S], positives: &[P], k: usize) -> Result<f64> {
    check_k(k)?;
    let pos = positive_set(positives)?;
    let hits = ranking.iter().take(k).filter(|id| pos.contains(id.as_ref())).count();
    Ok(hits as f64 / pos.len() as f64)
}

/// Binary-gain NDCG with `1 / log2(i + 1)` discounts, 1-based `i`.
pub fn ndcg_at_k<S: AsRef<str>, P: AsRef<str>>(ranking: &[S], positives: &[P], k: usize) -> Result<f64> {
    check_k(k)?;
    let pos = positive_set(positives)?;
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| pos.contains(id.as_ref()))
        .map(|(i, _)| discount(i))
        .sum();
    let ideal: f64 = (0..pos.len().min(k)).map(discount).sum();
    Ok(dcg / ideal)
}

/// `1 / rank` of the first positive; 0 when none is ranked.
pub fn reciprocal_rank<S: AsRef<str>, P: AsRef<str>>(ranking: &[S], positives: &[P]) -> Result<f64> {
    let pos = positive_set(positives)?;
    Ok(ranking
        .iter()
        .position(|id| pos.contains(id.as_ref()))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64))
}

/// Mean over all positives of the precision at each positive's rank; an
/// unranked positive contributes 0.
pub fn average_precision<S: AsRef<str>, P: AsRef<str>>(ranking: &[S], positives: &[P]) -> Result<f64> {
    let pos = positive_set(positives)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranking.iter().enumerate() {
        if pos.contains(id.as_ref()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / pos.len() as f64)
}
