#![allow(dead_code)]

use logicnet::datasets::{generate_kinship, KinshipSpec};
use logicnet::eval::{auc_pr, ScoredQuery};
use logicnet::gnn::{Aggregator, GnnConfig, InferenceNet};
use logicnet::kb::{GroundAtom, KgFactorGraph, KnowledgeBase};
use logicnet::nnet::AdamState;
use logicnet::trainer::{run_inference, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Small network and schedule that converge on oracle-sized instances.
pub fn oracle_gnn() -> GnnConfig {
    GnnConfig {
        gnn_dim: 8,
        tune_dim: 8,
        steps: 1,
        aggregator: Aggregator::Mean,
        hidden: 16,
        pred_dim: 4,
        head_hidden: 16,
    }
}

pub fn oracle_schedule(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 0.003,
        lr_patience: 5,
        epochs: 100,
        steps_per_epoch: 25,
        exhaustive_cap: 10_000,
        seed,
        ..TrainConfig::default()
    }
}

pub fn net_for(kb: &KnowledgeBase, cfg: GnnConfig, seed: u64) -> InferenceNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    InferenceNet::new(cfg, kb, &mut rng, seed).unwrap()
}

/// Mean binary cross-entropy of the posterior against `targets`.
pub fn cross_entropy(net: &InferenceNet, graph: &KgFactorGraph, targets: &[(GroundAtom, bool)]) -> f64 {
    let pass = net.forward(graph).unwrap();
    let total: f64 = targets
        .iter()
        .map(|(a, y)| {
            let q = net.posterior_prob(&pass, a).unwrap();
            if *y {
                -q.ln()
            } else {
                -(1.0 - q).ln()
            }
        })
        .sum();
    total / targets.len() as f64
}

/// Trains every network parameter on cross-entropy against `targets` and
/// returns the final loss.
pub fn fit_posterior(
    net: &mut InferenceNet,
    graph: &KgFactorGraph,
    targets: &[(GroundAtom, bool)],
    iterations: usize,
    lr: f64,
) -> f64 {
    let mut opt = AdamState::new(net.num_params());
    let n = targets.len() as f64;
    for _ in 0..iterations {
        let pass = net.forward(graph).unwrap();
        let heads: Vec<_> = targets
            .iter()
            .map(|(a, _)| net.head_forward(&pass, a).unwrap())
            .collect();
        let dq: Vec<f64> = heads
            .iter()
            .zip(targets)
            .map(|(h, (_, y))| if *y { -1.0 / (h.q * n) } else { 1.0 / ((1.0 - h.q) * n) })
            .collect();
        let mut grads = vec![0.0; net.num_params()];
        net.backward(&pass, &heads, &dq, &mut grads);
        opt.step(net.params_mut(), &grads, lr);
    }
    cross_entropy(net, graph, targets)
}

/// AUC-PR of the gender queries after inference on a generated kinship
/// dataset.
pub fn kinship_auc(n_entities: usize, seed: u64, gnn_dim: usize, tune_dim: usize) -> f64 {
    let data = generate_kinship(&KinshipSpec {
        n_entities,
        seed,
        ..KinshipSpec::default()
    })
    .unwrap();
    let cfg = GnnConfig {
        gnn_dim,
        tune_dim,
        steps: if gnn_dim == 0 { 0 } else { GnnConfig::default().steps },
        ..GnnConfig::default()
    };
    let mut net = net_for(&data.kb, cfg, seed);
    let tc = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let q = run_inference(&data.kb, &data.model, &mut net, &tc, &mut |_| {}).unwrap();
    let items: Vec<ScoredQuery> = q
        .iter()
        .map(|(a, &score)| ScoredQuery {
            atom: *a,
            score,
            label: data.kb.split_entry(a).and_then(|e| e.label).unwrap(),
        })
        .collect();
    auc_pr(&items).unwrap()
}

/// Entities A, C, D with Friend(A,C), Friend(A,D) and Smoke(A) observed;
/// Smoke(C) and Smoke(D) are queries.
pub fn smoker_kb() -> KnowledgeBase {
    let mut kb = KnowledgeBase::new();
    kb.add_predicate("F", 2).unwrap();
    kb.add_predicate("S", 1).unwrap();
    for e in ["A", "C", "D"] {
        kb.add_entity(e).unwrap();
    }
    for (p, args) in [("F", &["A", "C"][..]), ("S", &["A"][..]), ("F", &["A", "D"][..])] {
        let atom = kb.atom(p, args).unwrap();
        kb.assert_fact(atom, true).unwrap();
    }
    for e in ["C", "D"] {
        let atom = kb.atom("S", &[e]).unwrap();
        kb.add_query(atom).unwrap();
    }
    kb
}

/// The four-entity 0-1-0-1 friendship loop: F(A,E)=1, F(B,E)=0, F(B,G)=1,
/// F(A,G)=0, with Like as the latent predicate.
pub fn loop_kb() -> KnowledgeBase {
    let mut kb = KnowledgeBase::new();
    kb.add_predicate("F", 2).unwrap();
    kb.add_predicate("L", 2).unwrap();
    for e in ["A", "B", "E", "G"] {
        kb.add_entity(e).unwrap();
    }
    for (a, b, v) in [("A", "E", true), ("B", "E", false), ("B", "G", true), ("A", "G", false)] {
        let atom = kb.atom("F", &[a, b]).unwrap();
        kb.assert_fact(atom, v).unwrap();
    }
    for (a, b) in [("A", "E"), ("B", "E"), ("A", "G"), ("B", "G")] {
        let atom = kb.atom("L", &[a, b]).unwrap();
        kb.add_query(atom).unwrap();
    }
    kb
}
