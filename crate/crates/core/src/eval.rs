//! Ranking and precision-recall metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{GroundAtom, KnowledgeBase};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no positive labels")]
    NoPositives,
    #[error("score for {0} is not finite")]
    NonFiniteScore(String),
    #[error("ranking needs a binary predicate, got arity {0}")]
    NotBinary(usize),
    #[error("no rank results")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredQuery {
    pub atom: GroundAtom,
    pub score: f64,
    pub label: bool,
}

/// Average precision: items sorted by descending score (ties keep input
/// order), summing precision at each positive and dividing by the number of
/// positives.
pub fn auc_pr(items: &[ScoredQuery]) -> Result<f64, EvalError> {
    let positives = items.iter().filter(|i| i.label).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    if let Some(bad) = items.iter().find(|i| !i.score.is_finite()) {
        return Err(EvalError::NonFiniteScore(format!("{:?}", bad.atom)));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[b].score.total_cmp(&items[a].score));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        if items[i].label {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    /// first argument replaced
    Head,
    /// second argument replaced
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankResult {
    pub query: GroundAtom,
    pub side: Corruption,
    /// 1-based
    pub rank: usize,
    /// candidates after filtering, the query included
    pub candidates: usize,
}

/// True in the facts or in a labeled split.
pub fn known_true(kb: &KnowledgeBase, atom: &GroundAtom) -> bool {
    kb.observed_value(atom) == Some(true) || kb.split_entry(atom).and_then(|e| e.label) == Some(true)
}

/// Ranks a binary query against its head and tail corruptions. With
/// `filtered`, corruptions known to be true anywhere in `kb` are dropped.
/// Ties count against the query.
pub fn rank_candidates(
    query: &GroundAtom,
    scorer: &dyn Fn(&GroundAtom) -> f64,
    kb: &KnowledgeBase,
    filtered: bool,
) -> Result<[RankResult; 2], EvalError> {
    if query.arity() != 2 {
        return Err(EvalError::NotBinary(query.arity()));
    }
    let own = scorer(query);
    if !own.is_finite() {
        return Err(EvalError::NonFiniteScore(kb.display_atom(query)));
    }
    let mut out = [Corruption::Head, Corruption::Tail].map(|side| RankResult {
        query: *query,
        side,
        rank: 1,
        candidates: 1,
    });
    for (pos, result) in out.iter_mut().enumerate() {
        for e in kb.entities() {
            let cand = query.with_arg(pos, e);
            if cand == *query || (filtered && known_true(kb, &cand)) {
                continue;
            }
            let s = scorer(&cand);
            if !s.is_finite() {
                return Err(EvalError::NonFiniteScore(kb.display_atom(&cand)));
            }
            result.candidates += 1;
            if s >= own {
                result.rank += 1;
            }
        }
    }
    Ok(out)
}

/// Mean reciprocal rank and the fraction of ranks ≤ k.
pub fn mrr_hits(results: &[RankResult], k: usize) -> Result<(f64, f64), EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = results.len() as f64;
    let mrr = results.iter().map(|r| 1.0 / r.rank as f64).sum::<f64>() / n;
    let hits = results.iter().filter(|r| r.rank <= k).count() as f64 / n;
    Ok((mrr, hits))
}
