mod common;

use std::collections::HashMap;

use logicnet::eval::{auc_pr, rank_candidates, ScoredQuery};
use logicnet::gnn::{GnnConfig, InferenceNet};
use logicnet::kb::{build_factor_graph, EntityId, GroundAtom, KnowledgeBase};
use logicnet::logic::{evaluate, parse_clause, Clause, GroundClause, GroundLiteral};
use logicnet::mln::{
    collect_determining_groundings, expected_clause_value_grad, pseudo_log_likelihood, pseudo_log_likelihood_grad,
};
use logicnet::nnet::grad_check;
use logicnet::oracles::{random_instance, GroundMarkovNet, MAX_EXACT_ATOMS};
use logicnet::trainer::{estep_loss, exhaustive_batch};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn schema_kb(entities: usize) -> KnowledgeBase {
    let mut kb = KnowledgeBase::new();
    kb.add_predicate("P", 1).unwrap();
    kb.add_predicate("Q", 1).unwrap();
    kb.add_predicate("R", 2).unwrap();
    for i in 0..entities {
        kb.add_entity(&format!("e{i}")).unwrap();
    }
    kb
}

fn literal_text() -> impl Strategy<Value = String> {
    let term = prop_oneof![
        Just("X".to_string()),
        Just("Y".to_string()),
        Just("Z".to_string()),
        Just("\"e0\"".to_string()),
        Just("\"e1\"".to_string()),
    ];
    (any::<bool>(), 0..3usize, term.clone(), term).prop_map(|(neg, p, a, b)| {
        let bang = if neg { "!" } else { "" };
        match p {
            0 => format!("{bang}P({a})"),
            1 => format!("{bang}Q({a})"),
            _ => format!("{bang}R({a},{b})"),
        }
    })
}

fn ground_literals(n: usize) -> impl Strategy<Value = Vec<(usize, bool)>> {
    prop::collection::vec((0..n, any::<bool>()), 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clause_text_round_trips(lits in prop::collection::vec(literal_text(), 1..5)) {
        let kb = schema_kb(3);
        let clause = parse_clause(&format!("Q(X) | {}", lits.join(" | ")), &kb).unwrap();
        let again = parse_clause(&clause.display(&kb).to_string(), &kb).unwrap();
        prop_assert_eq!(clause, again);
    }

    #[test]
    fn implication_matches_boolean_semantics(na in any::<bool>(), nb in any::<bool>(), nc in any::<bool>()) {
        let kb = {
            let mut kb = KnowledgeBase::new();
            for p in ["A", "B", "C"] {
                kb.add_predicate(p, 1).unwrap();
            }
            kb.add_entity("x").unwrap();
            kb
        };
        let bang = |n: bool| if n { "!" } else { "" };
        let text = format!("{}A(X) & {}B(X) => {}C(X)", bang(na), bang(nb), bang(nc));
        let gc = parse_clause(&text, &kb).unwrap().ground_with(&[EntityId(0)]).unwrap();
        let atoms = ["A", "B", "C"].map(|p| kb.atom(p, &["x"]).unwrap());
        for world in 0..8u32 {
            let v = |i: usize| world >> i & 1 == 1;
            let lit = |i: usize, neg: bool| v(i) != neg;
            let expected = !(lit(0, na) && lit(1, nb)) || lit(2, nc);
            let got = evaluate(&gc, |a: &GroundAtom| atoms.iter().position(|b| b == a).map(v)).unwrap();
            prop_assert_eq!(got, expected, "world {:03b}", world);
        }
    }

    /// Brute-force expectation over every assignment of the latent atoms.
    #[test]
    fn expected_clause_value_matches_enumeration(
        lits in ground_literals(6),
        probs in prop::collection::vec(0.01f64..0.99, 4),
        observed_false in any::<bool>(),
    ) {
        // atoms 0..4 latent, atom 4 observed (true or false), atom 5 observed false
        let mut kb = schema_kb(6);
        let p = kb.predicate("P").unwrap();
        let atom = |i: usize| GroundAtom::new(p, &[EntityId(i as u32)]);
        kb.assert_fact(atom(4), !observed_false).unwrap();
        kb.assert_fact(atom(5), false).unwrap();
        let gc = GroundClause {
            clause: 0,
            binding: vec![],
            literals: lits.iter().map(|&(i, negated)| GroundLiteral { atom: atom(i), negated }).collect(),
        };
        let q: HashMap<GroundAtom, f64> = (0..4).map(|i| (atom(i), probs[i])).collect();
        let (value, grads) = expected_clause_value_grad(&gc, &q, &kb).unwrap();

        let brute = |probs: &[f64]| {
            let mut total = 0.0;
            for world in 0..16u32 {
                let mut weight = 1.0;
                for (i, &pi) in probs.iter().enumerate() {
                    weight *= if world >> i & 1 == 1 { pi } else { 1.0 - pi };
                }
                let truth = |a: &GroundAtom| {
                    let i = a.args()[0].index();
                    Some(if i < 4 { world >> i & 1 == 1 } else { kb.observed_value(a).unwrap() })
                };
                if evaluate(&gc, truth).unwrap() {
                    total += weight;
                }
            }
            total
        };
        prop_assert!((value - brute(&probs)).abs() < 1e-12);
        for i in 0..4 {
            let g = grads.iter().find(|(a, _)| *a == atom(i)).map(|(_, g)| *g).unwrap_or(0.0);
            let h = 1e-6;
            let mut up = probs.clone();
            up[i] += h;
            let mut down = probs.clone();
            down[i] -= h;
            let numeric = (brute(&up) - brute(&down)) / (2.0 * h);
            prop_assert!((g - numeric).abs() < 1e-7, "atom {}: {} vs {}", i, g, numeric);
        }
    }

    #[test]
    fn exact_marginals_and_complements_sum_to_one(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Some((kb, model)) = random_instance(&mut rng, 10) else { return Err(TestCaseError::reject("no instance")) };
        let exact = GroundMarkovNet::build(&kb, &model, MAX_EXACT_ATOMS).unwrap().exact(&model).unwrap();
        for (a, p) in &exact.marginals {
            prop_assert!((p + exact.complements[a] - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(p));
        }
    }

    #[test]
    fn zero_weight_clause_changes_nothing(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Some((kb, model)) = random_instance(&mut rng, 10) else { return Err(TestCaseError::reject("no instance")) };
        let before = GroundMarkovNet::build(&kb, &model, MAX_EXACT_ATOMS).unwrap().exact(&model).unwrap();
        let clause = model.clause(pick.index(model.len())).clone();
        let mut padded = model.clone();
        padded.add_clause(clause, 0.0).unwrap();
        let after = GroundMarkovNet::build(&kb, &padded, MAX_EXACT_ATOMS).unwrap().exact(&padded).unwrap();
        prop_assert_eq!(before.marginals.len(), after.marginals.len());
        for (a, p) in &before.marginals {
            prop_assert!((p - after.marginals[a]).abs() < 1e-12);
        }
        // the E-step loss is unchanged as well
        let net = common::net_for(&kb, common::oracle_gnn(), seed);
        let graph = build_factor_graph(&kb);
        let b1 = exhaustive_batch(&kb, &model, 10_000, 0.0).unwrap();
        let b2 = exhaustive_batch(&kb, &padded, 10_000, 0.0).unwrap();
        let l1 = estep_loss(&kb, &model, &net, &graph, &b1, 0.0).unwrap();
        let l2 = estep_loss(&kb, &padded, &net, &graph, &b2, 0.0).unwrap();
        prop_assert!((l1.total - l2.total).abs() < 1e-12);
        prop_assert!((l1.entropy - l2.entropy).abs() < 1e-12);
    }

    #[test]
    fn pseudo_likelihood_gradient_matches_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Some((kb, model)) = random_instance(&mut rng, 12) else { return Err(TestCaseError::reject("no instance")) };
        let samples = collect_determining_groundings(&model, &kb, Default::default(), &mut rng, 64);
        prop_assume!(!samples.is_empty());
        let q: HashMap<GroundAtom, f64> = samples.iter().map(|s| (s.center, 0.2 + 0.6 * (s.center.args()[0].index() as f64 / 3.0))).collect();
        let f = |w: &[f64]| {
            let mut m = model.clone();
            m.weights_mut().copy_from_slice(w);
            (
                pseudo_log_likelihood(&m, &samples, &kb, &q).unwrap(),
                pseudo_log_likelihood_grad(&m, &samples, &kb, &q).unwrap(),
            )
        };
        let err = grad_check(f, model.weights(), 1e-4, None);
        prop_assert!(err < 1e-6, "{}", err);
    }

    #[test]
    fn average_precision_ignores_monotone_rescaling(
        items in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..30),
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        prop_assume!(items.iter().any(|(_, l)| *l));
        let atom = GroundAtom::new(logicnet::kb::PredicateId(0), &[EntityId(0)]);
        let make = |f: &dyn Fn(f64) -> f64| -> Vec<ScoredQuery> {
            items.iter().map(|&(s, label)| ScoredQuery { atom, score: f(s), label }).collect()
        };
        let base = auc_pr(&make(&|s| s)).unwrap();
        let moved = auc_pr(&make(&|s| scale * s + shift)).unwrap();
        let squashed = auc_pr(&make(&|s| s.powi(3))).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert_eq!(base, moved);
        prop_assert_eq!(base, squashed);
    }

    #[test]
    fn ranking_is_antitone_and_filtering_never_hurts(
        scores in prop::collection::vec(0.0f64..1.0, 25),
        facts in prop::collection::vec((0..5u32, 0..5u32), 0..8),
        bump in 0.0f64..0.5,
    ) {
        let mut kb = schema_kb(5);
        let r = kb.predicate("R").unwrap();
        for &(a, b) in &facts {
            kb.assert_fact(GroundAtom::new(r, &[EntityId(a), EntityId(b)]), true).unwrap();
        }
        let query = GroundAtom::new(r, &[EntityId(0), EntityId(1)]);
        prop_assume!(kb.observed_value(&query).is_none());
        kb.add_query(query).unwrap();
        let score = |a: &GroundAtom, extra: f64| {
            let i = a.args()[0].index() * 5 + a.args()[1].index();
            scores[i] + if *a == query { extra } else { 0.0 }
        };
        let base = rank_candidates(&query, &|a| score(a, 0.0), &kb, true).unwrap();
        let raised = rank_candidates(&query, &|a| score(a, bump), &kb, true).unwrap();
        let raw = rank_candidates(&query, &|a| score(a, 0.0), &kb, false).unwrap();
        for side in 0..2 {
            prop_assert!(raised[side].rank <= base[side].rank);
            prop_assert!(base[side].rank <= raw[side].rank);
            prop_assert!(base[side].candidates <= raw[side].candidates);
            prop_assert!(base[side].rank >= 1 && base[side].rank <= base[side].candidates);
        }
    }
}

/// Random facts over P/1 and R/2 among `n` entities.
fn random_facts() -> impl Strategy<Value = (usize, Vec<(bool, u32, u32, bool)>)> {
    (3..6usize).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec((any::<bool>(), 0..n as u32, 0..n as u32, any::<bool>()), 0..10),
        )
    })
}

fn build_kb(n: usize, facts: &[(bool, u32, u32, bool)], perm: &[usize]) -> KnowledgeBase {
    // entity named `e{i}` gets id perm[i]
    let mut kb = schema_kb(0);
    let mut names = vec![String::new(); n];
    for (i, &p) in perm.iter().enumerate() {
        names[p] = format!("e{i}");
    }
    for name in &names {
        kb.add_entity(name).unwrap();
    }
    for &(binary, a, b, v) in facts {
        let (an, bn) = (format!("e{a}"), format!("e{b}"));
        let atom = if binary {
            kb.atom("R", &[&an, &bn]).unwrap()
        } else {
            kb.atom("P", &[&an]).unwrap()
        };
        if kb.observed_value(&atom).is_none() {
            kb.assert_fact(atom, v).unwrap();
        }
    }
    kb
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Relabeling entities relabels embeddings and posteriors bit for bit
    /// when there are no per-entity parameters.
    #[test]
    fn posteriors_follow_entity_relabeling(
        (n, facts) in random_facts(),
        perm_seed in any::<u64>(),
        net_seed in 0..1000u64,
    ) {
        use rand::seq::SliceRandom;
        let identity: Vec<usize> = (0..n).collect();
        let mut perm = identity.clone();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let kb1 = build_kb(n, &facts, &identity);
        let kb2 = build_kb(n, &facts, &perm);
        let cfg = GnnConfig { tune_dim: 0, ..common::oracle_gnn() };
        let arities = [1, 1, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(net_seed);
        let net = InferenceNet::with_schema(GnnConfig { steps: 2, ..cfg }, &arities, n, &mut rng, net_seed).unwrap();
        let p1 = net.forward(&build_factor_graph(&kb1)).unwrap();
        let p2 = net.forward(&build_factor_graph(&kb2)).unwrap();
        let d = net.config().gnn_dim;
        for i in 0..n {
            let a = kb1.entity(&format!("e{i}")).unwrap();
            let b = kb2.entity(&format!("e{i}")).unwrap();
            prop_assert_eq!(p1.embedding(a, d), p2.embedding(b, d));
        }
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (format!("e{i}"), format!("e{j}"));
                let q1 = net.posterior_prob(&p1, &kb1.atom("R", &[&x, &y]).unwrap()).unwrap();
                let q2 = net.posterior_prob(&p2, &kb2.atom("R", &[&x, &y]).unwrap()).unwrap();
                prop_assert_eq!(q1.to_bits(), q2.to_bits());
            }
        }
    }

    #[test]
    fn exact_marginals_ignore_atom_order(seed in any::<u64>(), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Some((kb, model)) = random_instance(&mut rng, 10) else { return Err(TestCaseError::reject("no instance")) };
        let gmn = GroundMarkovNet::build(&kb, &model, MAX_EXACT_ATOMS).unwrap();
        let mut perm: Vec<usize> = (0..gmn.num_latent()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let a = gmn.exact(&model).unwrap();
        let b = gmn.permuted(&perm).exact(&model).unwrap();
        prop_assert!((a.log_z - b.log_z).abs() < 1e-10);
        for (atom, p) in &a.marginals {
            prop_assert!((p - b.marginals[atom]).abs() < 1e-12);
        }
    }
}

#[test]
fn clause_struct_is_what_round_trip_compares() {
    // guards the round-trip property against a vacuous Clause equality
    let kb = schema_kb(2);
    let a: Clause = parse_clause("P(X) | !R(X,Y)", &kb).unwrap();
    let b: Clause = parse_clause("P(X) | R(X,Y)", &kb).unwrap();
    assert_ne!(a, b);
}
