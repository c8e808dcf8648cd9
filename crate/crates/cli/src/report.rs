//! Query metrics and the predictions file.

use std::path::Path;

use logicnet::eval::{auc_pr, mrr_hits, rank_candidates, RankResult, ScoredQuery};
use logicnet::gnn::InferenceNet;
use logicnet::kb::{GroundAtom, KgFactorGraph, KnowledgeBase, Split};
use serde_json::json;

use crate::CliError;

pub const HITS_AT: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub queries: usize,
    pub labeled: usize,
    pub auc_pr: Option<f64>,
    /// filtered ranking over true binary queries: (mrr, hits@10, ranked)
    pub ranking: Option<(f64, f64, usize)>,
}

impl Metrics {
    pub fn to_tsv(&self) -> String {
        let mut out = format!("queries\t{}\nlabeled\t{}\n", self.queries, self.labeled);
        if let Some(v) = self.auc_pr {
            out += &format!("auc_pr\t{v}\n");
        }
        if let Some((mrr, hits, n)) = self.ranking {
            out += &format!("ranked\t{n}\nmrr\t{mrr}\nhits@{HITS_AT}\t{hits}\n");
        }
        out
    }
}

/// Query posteriors in the knowledge base's query order.
pub fn query_posteriors(
    kb: &KnowledgeBase,
    net: &InferenceNet,
    graph: &KgFactorGraph,
) -> Result<Vec<(GroundAtom, f64)>, CliError> {
    let atoms: Vec<GroundAtom> = kb.queries().collect();
    let pass = net.forward(graph).map_err(CliError::runtime)?;
    let q = net.posteriors(&pass, &atoms).map_err(CliError::runtime)?;
    Ok(atoms.into_iter().zip(q).collect())
}

/// Scores labeled queries. Test-split labels are used when there are any,
/// otherwise every labeled query.
pub fn compute_metrics(
    kb: &KnowledgeBase,
    net: &InferenceNet,
    graph: &KgFactorGraph,
    posteriors: &[(GroundAtom, f64)],
) -> Result<Metrics, CliError> {
    let labeled: Vec<(ScoredQuery, Split)> = posteriors
        .iter()
        .filter_map(|(a, q)| {
            let e = kb.split_entry(a)?;
            e.label.map(|label| {
                (
                    ScoredQuery {
                        atom: *a,
                        score: *q,
                        label,
                    },
                    e.split,
                )
            })
        })
        .collect();
    let has_test = labeled.iter().any(|(_, s)| *s == Split::Test);
    let scored: Vec<ScoredQuery> = labeled
        .iter()
        .filter(|(_, s)| !has_test || *s == Split::Test)
        .map(|(q, _)| *q)
        .collect();
    let auc = if scored.iter().any(|s| s.label) {
        Some(auc_pr(&scored).map_err(CliError::runtime)?)
    } else {
        None
    };

    let targets: Vec<GroundAtom> = scored
        .iter()
        .filter(|s| s.label && s.atom.arity() == 2)
        .map(|s| s.atom)
        .collect();
    let ranking = if targets.is_empty() {
        None
    } else {
        let pass = net.forward(graph).map_err(CliError::runtime)?;
        let scorer = |a: &GroundAtom| net.posterior_prob(&pass, a).unwrap_or(f64::NAN);
        let mut results: Vec<RankResult> = Vec::with_capacity(2 * targets.len());
        for t in &targets {
            results.extend(rank_candidates(t, &scorer, kb, true).map_err(CliError::runtime)?);
        }
        let (mrr, hits) = mrr_hits(&results, HITS_AT).map_err(CliError::runtime)?;
        Some((mrr, hits, results.len()))
    };
    Ok(Metrics {
        queries: posteriors.len(),
        labeled: labeled.len(),
        auc_pr: auc,
        ranking,
    })
}

pub fn write_predictions(path: &Path, kb: &KnowledgeBase, posteriors: &[(GroundAtom, f64)]) -> Result<(), CliError> {
    let rows: Vec<serde_json::Value> = posteriors
        .iter()
        .map(|(a, q)| {
            let entry = kb.split_entry(a);
            json!({
                "atom": kb.display_atom(a),
                "q": q,
                "split": entry.map(|e| match e.split {
                    Split::Train => "train",
                    Split::Valid => "valid",
                    Split::Test => "test",
                }),
                "label": entry.and_then(|e| e.label),
            })
        })
        .collect();
    let text = serde_json::to_string_pretty(&rows).map_err(CliError::runtime)?;
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
