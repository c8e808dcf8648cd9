mod common;

use logicnet::datasets::{generate_kinship, KinshipSpec};
use logicnet::gnn::{GnnConfig, InferenceNet};
use logicnet::kb::{GroundAtom, KnowledgeBase};
use logicnet::logic::{parse_clause, sample_grounding, GroundingStrategy};
use logicnet::mln::MlnModel;
use logicnet::oracles::{random_instance, GroundMarkovNet, MAX_EXACT_ATOMS};
use logicnet::trainer::{run_em, run_inference, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_kinship() -> (KnowledgeBase, MlnModel) {
    let data = generate_kinship(&KinshipSpec {
        n_entities: 30,
        seed: 3,
        ..KinshipSpec::default()
    })
    .unwrap();
    (data.kb, data.model)
}

fn small_net(kb: &KnowledgeBase, seed: u64) -> InferenceNet {
    let cfg = GnnConfig {
        gnn_dim: 8,
        tune_dim: 4,
        steps: 1,
        hidden: 8,
        pred_dim: 4,
        head_hidden: 8,
        ..GnnConfig::default()
    };
    common::net_for(kb, cfg, seed)
}

fn schedule(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 0.005,
        epochs: 6,
        steps_per_epoch: 10,
        batch_formulae: 32,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn anchored_sampling_binds_the_single_observed_atom() {
    let mut kb = KnowledgeBase::new();
    kb.add_predicate("P", 1).unwrap();
    kb.add_predicate("Q", 1).unwrap();
    kb.add_predicate("R", 2).unwrap();
    for i in 0..20 {
        kb.add_entity(&format!("e{i}")).unwrap();
    }
    let p3 = kb.atom("P", &["e3"]).unwrap();
    kb.assert_fact(p3, true).unwrap();
    for i in 0..20 {
        let name = format!("e{i}");
        kb.add_query(kb.atom("Q", &[&name]).unwrap()).unwrap();
        kb.add_query(kb.atom("R", &[&name, "e0"]).unwrap()).unwrap();
    }
    let clause = parse_clause("!P(X) | Q(Y) | R(X,Y)", &kb).unwrap();
    let n = 10_000;
    let count = |strategy| {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..n)
            .filter(|_| {
                let gc = sample_grounding(&clause, &kb, strategy, &mut rng).unwrap();
                gc.literals[0].atom == p3
            })
            .count() as f64
            / n as f64
    };
    let p = 1.0 / 3.0;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    let anchored = count(GroundingStrategy::Anchored);
    assert!(anchored >= p - 3.0 * sigma, "anchored fraction {anchored}");
    let uniform = count(GroundingStrategy::Uniform);
    assert!(
        (uniform - 0.05).abs() < 4.0 * (0.05f64 * 0.95 / n as f64).sqrt(),
        "uniform fraction {uniform}"
    );
}

#[test]
fn inference_is_identical_across_thread_counts() {
    let (kb, model) = small_kinship();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut net = small_net(&kb, 5);
            let mut losses = Vec::new();
            let q = run_inference(&kb, &model, &mut net, &schedule(5), &mut |m| losses.push(m.e_loss)).unwrap();
            (q.values().map(|v| v.to_bits()).collect::<Vec<_>>(), losses)
        })
    };
    let (q1, l1) = run(1);
    let (q4, l4) = run(4);
    assert_eq!(q1, q4);
    assert_eq!(l1, l4);
}

#[test]
fn e_step_loss_trends_down() {
    let (kb, model) = small_kinship();
    let mut net = small_net(&kb, 1);
    let mut losses = Vec::new();
    let cfg = TrainConfig {
        epochs: 12,
        ..schedule(1)
    };
    run_inference(&kb, &model, &mut net, &cfg, &mut |m| losses.push(m.e_loss)).unwrap();
    let head: f64 = losses[..3].iter().sum::<f64>() / 3.0;
    let tail: f64 = losses[losses.len() - 3..].iter().sum::<f64>() / 3.0;
    assert!(tail < head, "{losses:?}");
}

#[test]
fn em_keeps_the_best_validation_state() {
    let (kb, mut model) = small_kinship();
    let mut net = small_net(&kb, 2);
    let cfg = TrainConfig {
        lambda: 1.0,
        ..schedule(2)
    };
    let report = run_em(&kb, &mut model, &mut net, &cfg, &mut |_| {}).unwrap();
    let lowest = report
        .history
        .iter()
        .map(|m| m.valid_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(report.best_valid, lowest);
    let epoch = report.best_epoch.unwrap();
    assert_eq!(report.history[epoch].valid_loss, lowest);
    // a fresh trainer rebuilds the same validation batch from the seed
    let trainer = Trainer::new(&kb, &model, cfg).unwrap();
    assert_eq!(trainer.validation_loss(&model, &net).unwrap(), lowest);
}

#[test]
fn inference_restores_the_best_validation_network() {
    let (kb, model) = small_kinship();
    let mut net = small_net(&kb, 4);
    let mut valid = Vec::new();
    let cfg = schedule(4);
    run_inference(&kb, &model, &mut net, &cfg, &mut |m| valid.push(m.valid_loss)).unwrap();
    let trainer = Trainer::new(&kb, &model, cfg).unwrap();
    let lowest = valid.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(trainer.validation_loss(&model, &net).unwrap(), lowest);
}

#[test]
fn gibbs_error_shrinks_with_more_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    while checked < 5 {
        let Some((kb, model)) = random_instance(&mut rng, 8) else {
            continue;
        };
        let gmn = GroundMarkovNet::build(&kb, &model, MAX_EXACT_ATOMS).unwrap();
        let exact = gmn.exact(&model).unwrap();
        let err = |n: usize, seed: u64| {
            let g = gmn
                .gibbs(&model, 1000, n, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap();
            g.iter()
                .map(|(a, p)| (p - exact.marginals[a]).abs())
                .fold(0.0, f64::max)
        };
        // 3σ of a Bernoulli mean is at most 1.5/√n before autocorrelation
        assert!(err(40_000, checked) < 0.03);
        assert!(err(40_000, checked) <= err(200, checked) + 0.03);
        checked += 1;
    }
}

#[test]
fn fixed_weights_are_untouched_by_inference() {
    let (kb, model) = small_kinship();
    let before = model.weights().to_vec();
    let mut net = small_net(&kb, 6);
    let q = run_inference(&kb, &model, &mut net, &schedule(6), &mut |_| {}).unwrap();
    assert_eq!(model.weights(), &before[..]);
    let queries: Vec<GroundAtom> = kb.queries().collect();
    assert_eq!(q.keys().copied().collect::<Vec<_>>(), queries);
    assert!(q.values().all(|v| *v > 0.0 && *v < 1.0));
}
