//! Finite-difference checks of every hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gnn::{Aggregator, GnnConfig, InferenceNet};
use crate::kb::{build_factor_graph, GroundAtom, KgFactorGraph, KnowledgeBase};
use crate::mln::MlnModel;
use crate::nnet::{grad_check, ParamStore};
use crate::trainer::{estep_loss_and_grad, exhaustive_batch};

pub const CHECK_STEP: f64 = 1e-4;
pub const CHECK_TOLERANCE: f64 = 1e-4;

/// Outcome of one finite-difference check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckResult {
    /// worst relative error over the compared coordinates
    pub max_rel_error: f64,
    pub checked: usize,
    /// coordinates whose ±h probe flips a ReLU and so has no valid central difference
    pub skipped: usize,
}

impl CheckResult {
    /// Within tolerance, with at most one coordinate in twenty skipped.
    pub fn passes(&self) -> bool {
        self.max_rel_error <= CHECK_TOLERANCE && self.skipped * 20 <= self.checked + self.skipped
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradSuite {
    pub mlp: CheckResult,
    pub head: CheckResult,
    pub estep: CheckResult,
}

impl GradSuite {
    pub fn max(&self) -> f64 {
        self.mlp
            .max_rel_error
            .max(self.head.max_rel_error)
            .max(self.estep.max_rel_error)
    }

    pub fn passes(&self) -> bool {
        self.mlp.passes() && self.head.passes() && self.estep.passes()
    }
}

/// [`grad_check`] restricted to coordinates where perturbing by ±h leaves
/// `pattern` unchanged.
pub fn kink_aware_check<F, P>(f: F, pattern: P, params: &[f64], h: f64) -> CheckResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    P: Fn(&[f64]) -> Vec<bool>,
{
    let base = pattern(params);
    let mut theta = params.to_vec();
    let mut smooth = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let up = pattern(&theta) == base;
        theta[i] = orig - h;
        let down = pattern(&theta) == base;
        theta[i] = orig;
        if up && down {
            smooth.push(i);
        }
    }
    CheckResult {
        max_rel_error: grad_check(f, params, h, Some(&smooth)),
        checked: smooth.len(),
        skipped: params.len() - smooth.len(),
    }
}

fn small_gnn(tune_dim: usize) -> GnnConfig {
    GnnConfig {
        gnn_dim: 4,
        tune_dim,
        steps: 2,
        aggregator: Aggregator::Mean,
        hidden: 5,
        pred_dim: 3,
        head_hidden: 6,
    }
}

/// Random two-layer perceptron with a random linear read-out.
pub fn check_mlp(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_in, n_hidden, n_out) = (rng.gen_range(2..7), rng.gen_range(2..9), rng.gen_range(1..4));
    let mut store = ParamStore::new();
    let mlp = store
        .add_mlp2("mlp", n_in, n_hidden, n_out, &mut rng)
        .expect("fresh name");
    let x: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let readout: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = |p: &[f64]| {
        let (y, tape) = mlp.forward(p, &x).expect("dims");
        let v = y.iter().zip(&readout).map(|(a, b)| a * b).sum();
        let mut g = vec![0.0; p.len()];
        mlp.backward(p, &tape, &readout, &mut g);
        (v, g)
    };
    let pattern = |p: &[f64]| {
        let (_, tape) = mlp.forward(p, &x).expect("dims");
        tape.pre.iter().map(|&v| v > 0.0).collect()
    };
    kink_aware_check(f, pattern, store.values(), CHECK_STEP)
}

/// Five entities with mixed-polarity facts over a binary and a unary predicate.
pub fn five_entity_kb() -> KnowledgeBase {
    let mut kb = KnowledgeBase::new();
    kb.add_predicate("Friends", 2).expect("fresh");
    kb.add_predicate("Smokes", 1).expect("fresh");
    kb.add_predicate("Cancer", 1).expect("fresh");
    for e in ["A", "B", "C", "D", "E"] {
        kb.add_entity(e).expect("fresh");
    }
    let facts = [
        ("Friends", &["A", "B"][..], true),
        ("Friends", &["B", "C"][..], true),
        ("Friends", &["C", "A"][..], false),
        ("Friends", &["D", "E"][..], true),
        ("Smokes", &["A"][..], true),
        ("Smokes", &["D"][..], false),
        ("Cancer", &["E"][..], true),
    ];
    for (p, args, v) in facts {
        let atom = kb.atom(p, args).expect("known names");
        kb.assert_fact(atom, v).expect("consistent");
    }
    for (p, args) in [
        ("Smokes", &["B"][..]),
        ("Cancer", &["A"][..]),
        ("Friends", &["E", "C"][..]),
    ] {
        let atom = kb.atom(p, args).expect("known names");
        kb.add_query(atom).expect("latent");
    }
    kb
}

fn net_pattern(net: &InferenceNet, graph: &KgFactorGraph, atoms: &[GroundAtom], p: &[f64]) -> Vec<bool> {
    let mut n = net.clone();
    n.params_mut().copy_from_slice(p);
    let pass = n.forward(graph).expect("forward");
    let mut out = pass.relu_pattern();
    for a in atoms {
        out.extend(n.head_forward(&pass, a).expect("head").relu_pattern());
    }
    out
}

/// Weighted sum of posteriors through a two-step message-passing pass on
/// [`five_entity_kb`].
pub fn check_head(seed: u64) -> CheckResult {
    let kb = five_entity_kb();
    let graph = build_factor_graph(&kb);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = InferenceNet::new(small_gnn(2), &kb, &mut rng, seed).expect("valid config");
    let atoms: Vec<(GroundAtom, f64)> = [
        ("Smokes", &["B"][..]),
        ("Cancer", &["A"][..]),
        ("Friends", &["E", "C"][..]),
        ("Friends", &["B", "D"][..]),
    ]
    .iter()
    .map(|(p, args)| (kb.atom(p, args).expect("known"), rng.gen_range(-1.0..1.0)))
    .collect();
    let f = |p: &[f64]| {
        let mut n = net.clone();
        n.params_mut().copy_from_slice(p);
        let pass = n.forward(&graph).expect("forward");
        let heads: Vec<_> = atoms
            .iter()
            .map(|(a, _)| n.head_forward(&pass, a).expect("head"))
            .collect();
        let dq: Vec<f64> = atoms.iter().map(|(_, c)| *c).collect();
        let v = heads.iter().zip(&dq).map(|(h, c)| h.q * c).sum();
        let mut g = vec![0.0; p.len()];
        n.backward(&pass, &heads, &dq, &mut g);
        (v, g)
    };
    let targets: Vec<GroundAtom> = atoms.iter().map(|(a, _)| *a).collect();
    kink_aware_check(f, |p| net_pattern(&net, &graph, &targets, p), net.params(), CHECK_STEP)
}

/// Full E-step loss (potential, entropy and supervised terms) over every
/// grounding of two rules on [`five_entity_kb`].
pub fn check_estep(seed: u64) -> CheckResult {
    let kb = five_entity_kb();
    let graph = build_factor_graph(&kb);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MlnModel::new();
    for rule in ["!Smokes(X) | Cancer(X)", "!Friends(X,Y) | !Smokes(X) | Smokes(Y)"] {
        let clause = crate::logic::parse_clause(rule, &kb).expect("rule parses");
        model.add_clause(clause, rng.gen_range(-2.0..2.0)).expect("finite");
    }
    let lambda = 0.5;
    let batch = exhaustive_batch(&kb, &model, 1_000, lambda).expect("small grounding set");
    let net = InferenceNet::new(small_gnn(2), &kb, &mut rng, seed).expect("valid config");
    let f = |p: &[f64]| {
        let mut n = net.clone();
        n.params_mut().copy_from_slice(p);
        let (loss, g) = estep_loss_and_grad(&kb, &model, &n, &graph, &batch, lambda).expect("loss");
        (loss.total, g)
    };
    let mut targets: Vec<GroundAtom> = batch.supervised.iter().map(|(a, _)| *a).collect();
    for gc in &batch.groundings {
        targets.extend(gc.literals.iter().map(|l| l.atom).filter(|a| kb.is_latent(a)));
    }
    kink_aware_check(f, |p| net_pattern(&net, &graph, &targets, p), net.params(), CHECK_STEP)
}

pub fn gradient_suite(seed: u64) -> GradSuite {
    GradSuite {
        mlp: check_mlp(seed),
        head: check_head(seed),
        estep: check_estep(seed),
    }
}
