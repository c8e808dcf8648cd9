//! Mean-field posterior network: message passing over the entity–fact graph,
//! per-entity tunable embeddings and a per-arity posterior head.

use std::cmp::Ordering;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{EntityId, GroundAtom, KgFactorGraph, KnowledgeBase, MAX_ARITY};
use crate::nnet::{sigmoid, squash_prob, Mlp2, Mlp2Tape, NamedTensor, NnetError, ParamStore, PROB_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Mean,
    Sum,
}

impl std::str::FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(Aggregator::Mean),
            "sum" => Ok(Aggregator::Sum),
            other => Err(format!("unknown aggregator {other:?} (expected mean or sum)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    /// Width of the message-passing embedding.
    pub gnn_dim: usize,
    /// Width of the free per-entity embedding.
    pub tune_dim: usize,
    /// Message-passing rounds.
    pub steps: usize,
    pub aggregator: Aggregator,
    /// Hidden width of message and update networks.
    pub hidden: usize,
    /// Width of a predicate embedding.
    pub pred_dim: usize,
    /// Hidden width of the posterior head.
    pub head_hidden: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            gnn_dim: 64,
            tune_dim: 64,
            steps: 2,
            aggregator: Aggregator::Mean,
            hidden: 64,
            pred_dim: 16,
            head_hidden: 64,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        if self.gnn_dim + self.tune_dim == 0 {
            return Err(GnnError::InvalidConfig("gnn_dim + tune_dim must be at least 1".into()));
        }
        if self.gnn_dim == 0 && self.steps > 0 {
            return Err(GnnError::InvalidConfig(
                "message passing needs gnn_dim > 0 (set steps to 0)".into(),
            ));
        }
        if self.head_hidden == 0 || (self.steps > 0 && self.hidden == 0) {
            return Err(GnnError::InvalidConfig("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Width of an entity's head input `[μ_c, ω_c]`.
    pub fn entity_dim(&self) -> usize {
        self.gnn_dim + self.tune_dim
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GnnError {
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("entity {0:?} has no embedding")]
    UnknownEntity(EntityId),
    #[error("predicate index {0} is not in the network schema")]
    UnknownPredicate(usize),
    #[error("graph has {found} entities, network was built for {expected}")]
    EntityCount { expected: usize, found: usize },
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Trainable scalars split by what they scale with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    /// Message, update and head networks plus the shared initial embedding.
    pub network: usize,
    /// Tunable embeddings: `tune_dim` per entity.
    pub per_entity: usize,
    /// Predicate embeddings.
    pub predicate: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.network + self.per_entity + self.predicate
    }
}

/// Predicate-embedding slot for an observed false fact, a true fact, and the
/// head's query context.
const SLOT_FALSE: usize = 0;
const SLOT_TRUE: usize = 1;
const SLOT_QUERY: usize = 2;

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    mu0: usize,
    pred_emb: usize,
    omega: usize,
    /// `msg[step][msg_base[pred] + i * arity + j]`
    msg: Vec<Vec<Mlp2>>,
    msg_base: Vec<usize>,
    update: Vec<Mlp2>,
    head: [Option<Mlp2>; MAX_ARITY],
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceNet {
    cfg: GnnConfig,
    arities: Vec<usize>,
    num_entities: usize,
    seed: u64,
    store: ParamStore,
    layout: Layout,
}

/// One message `src -> dst` through an observed fact.
#[derive(Debug, Clone)]
struct MessageRecord {
    src: usize,
    dst: usize,
    net: Mlp2,
    pred: usize,
    slot: usize,
    out: Vec<f64>,
    tape: Mlp2Tape,
}

#[derive(Debug, Clone)]
struct StepTape {
    messages: Vec<MessageRecord>,
    /// Message indices per destination entity, in summation order.
    incoming: Vec<Vec<usize>>,
    updates: Vec<Mlp2Tape>,
}

/// Result of message passing, with everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct GnnPass {
    /// Embeddings after each round, `steps + 1` flat `M × d` blocks.
    pub mu: Vec<Vec<f64>>,
    steps: Vec<StepTape>,
}

impl GnnPass {
    /// Final message-passing embedding of entity `c`.
    pub fn embedding(&self, c: EntityId, d: usize) -> &[f64] {
        let last = self.mu.last().expect("at least the initial layer");
        &last[c.index() * d..(c.index() + 1) * d]
    }

    /// Sign of every hidden pre-activation, in a fixed order. Finite
    /// differences are only meaningful between points with equal patterns.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for step in &self.steps {
            for rec in &step.messages {
                out.extend(rec.tape.pre.iter().map(|&v| v > 0.0));
            }
            for tape in &step.updates {
                out.extend(tape.pre.iter().map(|&v| v > 0.0));
            }
        }
        out
    }
}

/// Posterior evaluation for one atom.
#[derive(Debug, Clone)]
pub struct HeadRecord {
    pub atom: GroundAtom,
    pub logit: f64,
    pub q: f64,
    tape: Mlp2Tape,
}

impl HeadRecord {
    pub fn relu_pattern(&self) -> impl Iterator<Item = bool> + '_ {
        self.tape.pre.iter().map(|&v| v > 0.0)
    }
}

impl InferenceNet {
    /// Builds a network for the schema and entity set of `kb`.
    pub fn new<R: Rng + ?Sized>(cfg: GnnConfig, kb: &KnowledgeBase, rng: &mut R, seed: u64) -> Result<Self, GnnError> {
        let arities: Vec<usize> = kb.predicates().iter().map(|p| p.arity).collect();
        Self::with_schema(cfg, &arities, kb.num_entities(), rng, seed)
    }

    pub fn with_schema<R: Rng + ?Sized>(
        cfg: GnnConfig,
        arities: &[usize],
        num_entities: usize,
        rng: &mut R,
        seed: u64,
    ) -> Result<Self, GnnError> {
        cfg.validate()?;
        let d = cfg.gnn_dim;
        let k = cfg.tune_dim;
        let pd = cfg.pred_dim;
        let mut store = ParamStore::new();
        let emb_bound = |n: usize| (6.0 / (n + 1) as f64).sqrt();
        let mu0 = store.add_uniform("mu0", &[d], emb_bound(d), rng)?;
        let pred_emb = store.add_uniform("predicate_embedding", &[arities.len(), 3, pd], emb_bound(pd), rng)?;
        let omega = store.add_uniform("tunable_embedding", &[num_entities, k], emb_bound(k), rng)?;
        let mut msg_base = Vec::with_capacity(arities.len());
        let mut keys = 0;
        for &a in arities {
            msg_base.push(keys);
            keys += a * a;
        }
        let mut msg = Vec::with_capacity(cfg.steps);
        let mut update = Vec::with_capacity(cfg.steps);
        for t in 0..cfg.steps {
            let mut nets = Vec::with_capacity(keys);
            for (p, &a) in arities.iter().enumerate() {
                for i in 0..a {
                    for j in 0..a {
                        nets.push(store.add_mlp2(
                            &format!("step{t}.message.p{p}.{i}{j}"),
                            d + pd,
                            cfg.hidden,
                            d,
                            rng,
                        )?);
                    }
                }
            }
            msg.push(nets);
            update.push(store.add_mlp2(&format!("step{t}.update"), 2 * d, cfg.hidden, d, rng)?);
        }
        let mut head = [None; MAX_ARITY];
        for n in 1..=MAX_ARITY {
            if arities.contains(&n) {
                head[n - 1] =
                    Some(store.add_mlp2(&format!("head.arity{n}"), n * (d + k) + pd, cfg.head_hidden, 1, rng)?);
            }
        }
        Ok(InferenceNet {
            cfg,
            arities: arities.to_vec(),
            num_entities,
            seed,
            store,
            layout: Layout {
                mu0,
                pred_emb,
                omega,
                msg,
                msg_base,
                update,
                head,
            },
        })
    }

    pub fn config(&self) -> &GnnConfig {
        &self.cfg
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        self.store.values()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.store.values_mut()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.len()
    }

    pub fn param_counts(&self) -> ParamCounts {
        let per_entity = self.num_entities * self.cfg.tune_dim;
        let predicate = self.arities.len() * 3 * self.cfg.pred_dim;
        ParamCounts {
            network: self.store.len() - per_entity - predicate,
            per_entity,
            predicate,
        }
    }

    /// Offset of entity `c`'s tunable embedding.
    pub fn omega_range(&self, c: EntityId) -> std::ops::Range<usize> {
        let k = self.cfg.tune_dim;
        let s = self.layout.omega + c.index() * k;
        s..s + k
    }

    fn pred_slot_offset(&self, pred: usize, slot: usize) -> usize {
        self.layout.pred_emb + (pred * 3 + slot) * self.cfg.pred_dim
    }

    /// Runs all message-passing rounds over `graph`.
    pub fn forward(&self, graph: &KgFactorGraph) -> Result<GnnPass, GnnError> {
        if graph.num_entities() != self.num_entities {
            return Err(GnnError::EntityCount {
                expected: self.num_entities,
                found: graph.num_entities(),
            });
        }
        let d = self.cfg.gnn_dim;
        let m = self.num_entities;
        let params = self.store.values();
        let mu0 = &params[self.layout.mu0..self.layout.mu0 + d];
        let mut mu = Vec::with_capacity(self.cfg.steps + 1);
        mu.push(mu0.repeat(m));

        // (src, dst, net key, pred, slot) for every ordered pair of argument positions
        let mut plan = Vec::new();
        for (atom, value) in graph.facts() {
            let p = atom.predicate().index();
            if p >= self.arities.len() {
                return Err(GnnError::UnknownPredicate(p));
            }
            let a = atom.arity();
            let slot = if *value { SLOT_TRUE } else { SLOT_FALSE };
            for i in 0..a {
                for j in 0..a {
                    let key = self.layout.msg_base[p] + i * a + j;
                    plan.push((atom.args()[i].index(), atom.args()[j].index(), key, p, slot));
                }
            }
        }

        let mut steps = Vec::with_capacity(self.cfg.steps);
        for t in 0..self.cfg.steps {
            let prev = &mu[t];
            let messages: Vec<MessageRecord> = plan
                .par_iter()
                .map(|&(src, dst, key, pred, slot)| {
                    let net = self.layout.msg[t][key];
                    let off = self.pred_slot_offset(pred, slot);
                    let mut x = Vec::with_capacity(d + self.cfg.pred_dim);
                    x.extend_from_slice(&prev[src * d..(src + 1) * d]);
                    x.extend_from_slice(&params[off..off + self.cfg.pred_dim]);
                    let (out, tape) = net.forward(params, &x).expect("layout dims");
                    MessageRecord {
                        src,
                        dst,
                        net,
                        pred,
                        slot,
                        out,
                        tape,
                    }
                })
                .collect();
            let mut incoming = vec![Vec::new(); m];
            for (idx, rec) in messages.iter().enumerate() {
                incoming[rec.dst].push(idx);
            }
            // a canonical order makes the float sum depend only on the multiset
            for list in &mut incoming {
                list.sort_by(|&a, &b| lex_cmp(&messages[a].out, &messages[b].out));
            }
            let net = self.layout.update[t];
            let results: Vec<(Vec<f64>, Mlp2Tape)> = (0..m)
                .into_par_iter()
                .map(|c| {
                    let mut agg = vec![0.0; d];
                    for &idx in &incoming[c] {
                        for (a, v) in agg.iter_mut().zip(&messages[idx].out) {
                            *a += v;
                        }
                    }
                    if self.cfg.aggregator == Aggregator::Mean && !incoming[c].is_empty() {
                        let n = incoming[c].len() as f64;
                        agg.iter_mut().for_each(|a| *a /= n);
                    }
                    let mut x = Vec::with_capacity(2 * d);
                    x.extend_from_slice(&prev[c * d..(c + 1) * d]);
                    x.extend_from_slice(&agg);
                    net.forward(params, &x).expect("layout dims")
                })
                .collect();
            let mut next = Vec::with_capacity(m * d);
            let mut updates = Vec::with_capacity(m);
            for (y, tape) in results {
                next.extend_from_slice(&y);
                updates.push(tape);
            }
            mu.push(next);
            steps.push(StepTape {
                messages,
                incoming,
                updates,
            });
        }
        Ok(GnnPass { mu, steps })
    }

    /// Head input `[μ_c1, ω_c1, …, μ_cn, ω_cn, e(pred, query)]`.
    fn head_input(&self, pass: &GnnPass, atom: &GroundAtom) -> Result<(Mlp2, Vec<f64>), GnnError> {
        let p = atom.predicate().index();
        if p >= self.arities.len() {
            return Err(GnnError::UnknownPredicate(p));
        }
        let net = self.layout.head[atom.arity() - 1].ok_or(GnnError::UnknownPredicate(p))?;
        let params = self.store.values();
        let d = self.cfg.gnn_dim;
        let mut x = Vec::with_capacity(net.in_dim());
        for &c in atom.args() {
            if c.index() >= self.num_entities {
                return Err(GnnError::UnknownEntity(c));
            }
            x.extend_from_slice(pass.embedding(c, d));
            x.extend_from_slice(&params[self.omega_range(c)]);
        }
        let off = self.pred_slot_offset(p, SLOT_QUERY);
        x.extend_from_slice(&params[off..off + self.cfg.pred_dim]);
        Ok((net, x))
    }

    /// Posterior probability of `atom`, inside `[PROB_EPS, 1 − PROB_EPS]`.
    pub fn head_forward(&self, pass: &GnnPass, atom: &GroundAtom) -> Result<HeadRecord, GnnError> {
        let (net, x) = self.head_input(pass, atom)?;
        let (y, tape) = net.forward(self.store.values(), &x)?;
        let logit = y[0];
        Ok(HeadRecord {
            atom: *atom,
            logit,
            q: squash_prob(logit),
            tape,
        })
    }

    pub fn posterior_prob(&self, pass: &GnnPass, atom: &GroundAtom) -> Result<f64, GnnError> {
        self.head_forward(pass, atom).map(|h| h.q)
    }

    /// Posteriors for many atoms, evaluated in parallel.
    pub fn posteriors(&self, pass: &GnnPass, atoms: &[GroundAtom]) -> Result<Vec<f64>, GnnError> {
        atoms.par_iter().map(|a| self.posterior_prob(pass, a)).collect()
    }

    /// Bernoulli draw from the posterior of `atom`.
    pub fn sample_atom<R: Rng + ?Sized>(
        &self,
        pass: &GnnPass,
        atom: &GroundAtom,
        rng: &mut R,
    ) -> Result<bool, GnnError> {
        let q = self.posterior_prob(pass, atom)?;
        Ok(rng.gen::<f64>() < q)
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative with
    /// respect to `heads[i].q` is `dq[i]`, through the head, every
    /// message-passing round, the embeddings and `mu0`.
    pub fn backward(&self, pass: &GnnPass, heads: &[HeadRecord], dq: &[f64], grads: &mut [f64]) {
        assert_eq!(heads.len(), dq.len());
        assert_eq!(grads.len(), self.store.len());
        let params = self.store.values();
        let d = self.cfg.gnn_dim;
        let k = self.cfg.tune_dim;
        let pd = self.cfg.pred_dim;
        let m = self.num_entities;
        let mut dmu = vec![0.0; m * d];
        let mut any = false;
        for (h, &g) in heads.iter().zip(dq) {
            if g == 0.0 {
                continue;
            }
            let s = sigmoid(h.logit);
            let dz = g * (1.0 - 2.0 * PROB_EPS) * s * (1.0 - s);
            let net = self.layout.head[h.atom.arity() - 1].expect("head exists for evaluated atom");
            let dx = net.backward(params, &h.tape, &[dz], grads);
            let mut off = 0;
            for &c in h.atom.args() {
                let ci = c.index();
                for (a, v) in dmu[ci * d..(ci + 1) * d].iter_mut().zip(&dx[off..off + d]) {
                    *a += v;
                }
                off += d;
                let om = self.omega_range(c);
                for (a, v) in grads[om].iter_mut().zip(&dx[off..off + k]) {
                    *a += v;
                }
                off += k;
            }
            let po = self.pred_slot_offset(h.atom.predicate().index(), SLOT_QUERY);
            for (a, v) in grads[po..po + pd].iter_mut().zip(&dx[off..off + pd]) {
                *a += v;
            }
            any = true;
        }
        if !any || d == 0 {
            return;
        }
        for t in (0..self.cfg.steps).rev() {
            let tape = &pass.steps[t];
            let net = self.layout.update[t];
            let mut dprev = vec![0.0; m * d];
            for c in 0..m {
                let dy = &dmu[c * d..(c + 1) * d];
                if dy.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let dx = net.backward(params, &tape.updates[c], dy, grads);
                for (a, v) in dprev[c * d..(c + 1) * d].iter_mut().zip(&dx[..d]) {
                    *a += v;
                }
                let incoming = &tape.incoming[c];
                if incoming.is_empty() {
                    continue;
                }
                let scale = match self.cfg.aggregator {
                    Aggregator::Mean => 1.0 / incoming.len() as f64,
                    Aggregator::Sum => 1.0,
                };
                let dm: Vec<f64> = dx[d..].iter().map(|v| v * scale).collect();
                for &idx in incoming {
                    let rec = &tape.messages[idx];
                    let dxm = rec.net.backward(params, &rec.tape, &dm, grads);
                    for (a, v) in dprev[rec.src * d..(rec.src + 1) * d].iter_mut().zip(&dxm[..d]) {
                        *a += v;
                    }
                    let po = self.pred_slot_offset(rec.pred, rec.slot);
                    for (a, v) in grads[po..po + pd].iter_mut().zip(&dxm[d..]) {
                        *a += v;
                    }
                }
            }
            dmu = dprev;
        }
        let g0 = &mut grads[self.layout.mu0..self.layout.mu0 + d];
        for c in 0..m {
            for (a, v) in g0.iter_mut().zip(&dmu[c * d..(c + 1) * d]) {
                *a += v;
            }
        }
    }

    pub fn to_checkpoint(&self, rule_weights: &[f64]) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            seed: self.seed,
            config: self.cfg.clone(),
            arities: self.arities.clone(),
            num_entities: self.num_entities,
            rule_weights: rule_weights.to_vec(),
            tensors: self.store.to_named(),
        }
    }

    /// Rebuilds a network with the checkpoint's configuration and values.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, GnnError> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(GnnError::Checkpoint(format!("unsupported format {:?}", ck.format)));
        }
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut net = Self::with_schema(ck.config.clone(), &ck.arities, ck.num_entities, &mut rng, ck.seed)?;
        net.store.load_named(&ck.tensors)?;
        Ok(net)
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

const CHECKPOINT_FORMAT: &str = "logicnet-checkpoint/1";

/// Every named parameter tensor with its shape, the network configuration,
/// the seed and the clause weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub seed: u64,
    pub config: GnnConfig,
    pub arities: Vec<usize>,
    pub num_entities: usize,
    pub rule_weights: Vec<f64>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::build_factor_graph;
    use crate::nnet::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn loop_kb() -> KnowledgeBase {
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
        kb
    }

    fn small_cfg(k: usize) -> GnnConfig {
        GnnConfig {
            gnn_dim: 4,
            tune_dim: k,
            steps: 2,
            aggregator: Aggregator::Mean,
            hidden: 5,
            pred_dim: 3,
            head_hidden: 6,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = small_cfg(0);
        c.gnn_dim = 0;
        assert!(c.validate().is_err());
        c.tune_dim = 2;
        assert!(c.validate().is_err());
        c.steps = 0;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn zero_steps_keep_initial_embedding() {
        let kb = loop_kb();
        let mut cfg = small_cfg(0);
        cfg.steps = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = InferenceNet::new(cfg, &kb, &mut rng, 1).unwrap();
        let pass = net.forward(&build_factor_graph(&kb)).unwrap();
        let mu0 = net.store().slice("mu0").unwrap();
        for c in kb.entities() {
            assert_eq!(pass.embedding(c, 4), mu0);
        }
    }

    #[test]
    fn automorphic_entities_share_embeddings() {
        let kb = loop_kb();
        let g = build_factor_graph(&kb);
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = InferenceNet::new(small_cfg(0), &kb, &mut rng, seed).unwrap();
            let pass = net.forward(&g).unwrap();
            let a = kb.entity("A").unwrap();
            let b = kb.entity("B").unwrap();
            assert_eq!(pass.embedding(a, 4), pass.embedding(b, 4));
            let lae = kb.atom("L", &["A", "E"]).unwrap();
            let lbe = kb.atom("L", &["B", "G"]).unwrap();
            assert_eq!(
                net.posterior_prob(&pass, &lae).unwrap().to_bits(),
                net.posterior_prob(&pass, &lbe).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn empty_graph_gives_equal_embeddings() {
        let mut kb = KnowledgeBase::new();
        kb.add_predicate("P", 1).unwrap();
        for e in ["A", "B", "C"] {
            kb.add_entity(e).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = InferenceNet::new(small_cfg(0), &kb, &mut rng, 2).unwrap();
        let pass = net.forward(&build_factor_graph(&kb)).unwrap();
        let e0 = pass.embedding(EntityId(0), 4).to_vec();
        assert_eq!(pass.embedding(EntityId(2), 4), &e0[..]);
    }

    #[test]
    fn zeroed_head_gives_one_half() {
        let kb = loop_kb();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = InferenceNet::new(small_cfg(2), &kb, &mut rng, 3).unwrap();
        for name in [
            "head.arity2.l1.w",
            "head.arity2.l1.b",
            "head.arity2.l2.w",
            "head.arity2.l2.b",
        ] {
            net.store.slice_mut(name).unwrap().iter_mut().for_each(|v| *v = 0.0);
        }
        let pass = net.forward(&build_factor_graph(&kb)).unwrap();
        let lae = kb.atom("L", &["A", "E"]).unwrap();
        assert_eq!(net.posterior_prob(&pass, &lae).unwrap(), 0.5);
    }

    #[test]
    fn tunable_embeddings_break_symmetry() {
        let kb = loop_kb();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = InferenceNet::new(small_cfg(2), &kb, &mut rng, 4).unwrap();
        let pass = net.forward(&build_factor_graph(&kb)).unwrap();
        let qa = net.posterior_prob(&pass, &kb.atom("L", &["A", "E"]).unwrap()).unwrap();
        let qb = net.posterior_prob(&pass, &kb.atom("L", &["B", "G"]).unwrap()).unwrap();
        assert_ne!(qa, qb);
    }

    fn sum_q_loss(net: &InferenceNet, g: &KgFactorGraph, atoms: &[GroundAtom], p: &[f64]) -> (f64, Vec<f64>) {
        let mut n = net.clone();
        n.params_mut().copy_from_slice(p);
        let pass = n.forward(g).unwrap();
        let heads: Vec<_> = atoms.iter().map(|a| n.head_forward(&pass, a).unwrap()).collect();
        let v = heads.iter().map(|h| h.q).sum();
        let mut grads = vec![0.0; p.len()];
        n.backward(&pass, &heads, &vec![1.0; heads.len()], &mut grads);
        (v, grads)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut kb = loop_kb();
        kb.add_predicate("S", 1).unwrap();
        let s = kb.atom("S", &["E"]).unwrap();
        kb.assert_fact(s, true).unwrap();
        let g = build_factor_graph(&kb);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = InferenceNet::new(small_cfg(2), &kb, &mut rng, 5).unwrap();
        let atoms = vec![
            kb.atom("L", &["A", "E"]).unwrap(),
            kb.atom("L", &["G", "B"]).unwrap(),
            kb.atom("S", &["A"]).unwrap(),
        ];
        let err = grad_check(|p| sum_q_loss(&net, &g, &atoms, p), net.params(), 1e-4, None);
        assert!(err <= 1e-4, "relative error {err}");
    }

    #[test]
    fn zero_upstream_and_absent_entities_get_zero_gradient() {
        let kb = loop_kb();
        let g = build_factor_graph(&kb);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = InferenceNet::new(small_cfg(3), &kb, &mut rng, 6).unwrap();
        let pass = net.forward(&g).unwrap();
        let h = net.head_forward(&pass, &kb.atom("L", &["A", "E"]).unwrap()).unwrap();
        let mut grads = vec![0.0; net.num_params()];
        net.backward(&pass, std::slice::from_ref(&h), &[0.0], &mut grads);
        assert!(grads.iter().all(|&v| v == 0.0));
        net.backward(&pass, &[h], &[1.0], &mut grads);
        let b = kb.entity("B").unwrap();
        assert!(grads[net.omega_range(b)].iter().all(|&v| v == 0.0));
        let a = kb.entity("A").unwrap();
        assert!(grads[net.omega_range(a)].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn parameter_counts_split_by_entity() {
        let arities = [2, 2, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = small_cfg(3);
        let small = InferenceNet::with_schema(cfg.clone(), &arities, 10, &mut rng, 7).unwrap();
        let large = InferenceNet::with_schema(cfg, &arities, 100, &mut rng, 7).unwrap();
        let (cs, cl) = (small.param_counts(), large.param_counts());
        assert_eq!(cs.network, cl.network);
        assert_eq!(cs.per_entity, 30);
        assert_eq!(cl.per_entity, 300);
        assert_eq!(cl.total(), large.num_params());
    }

    #[test]
    fn sampling_is_reproducible() {
        let kb = loop_kb();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = InferenceNet::new(small_cfg(1), &kb, &mut rng, 8).unwrap();
        let pass = net.forward(&build_factor_graph(&kb)).unwrap();
        let atom = kb.atom("L", &["A", "E"]).unwrap();
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| net.sample_atom(&pass, &atom, &mut r).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let kb = loop_kb();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = InferenceNet::new(small_cfg(2), &kb, &mut rng, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        net.to_checkpoint(&[1.0, -0.3]).save(&path).unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        let back = InferenceNet::from_checkpoint(&ck).unwrap();
        assert_eq!(back, net);
        assert_eq!(ck.rule_weights, vec![1.0, -0.3]);
    }
}
