//! Stochastic variational EM: E-steps fit the posterior network to the
//! clause model, M-steps fit clause weights by pseudo-likelihood.

use std::collections::HashMap;

use indexmap::{IndexMap, IndexSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::{GnnError, GnnPass, HeadRecord, InferenceNet};
use crate::kb::{build_factor_graph, GroundAtom, KgFactorGraph, KnowledgeBase};
use crate::logic::{self, GroundClause, GroundingStrategy};
use crate::mln::{self, MlnError, MlnModel};
use crate::nnet::{bernoulli_entropy, bernoulli_entropy_grad, AdamState};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("knowledge base has no query atoms")]
    NoQueries,
    #[error("model has no clauses")]
    NoClauses,
    #[error("knowledge base has no entities")]
    NoEntities,
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Mln(#[from] MlnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Epochs without validation improvement before the learning rate halves.
    pub lr_patience: usize,
    /// Ground clauses per E-step batch.
    pub batch_formulae: usize,
    /// Weight of the supervised term.
    pub lambda: f64,
    pub epochs: usize,
    /// Optimizer steps per E-step epoch.
    pub steps_per_epoch: usize,
    /// E-step epochs per EM round.
    pub epochs_e: usize,
    /// M-step epochs per EM round.
    pub epochs_m: usize,
    /// Blanket samples collected per M-step epoch.
    pub mstep_budget: usize,
    /// Optimizer steps per M-step epoch.
    pub mstep_steps: usize,
    pub strategy: GroundingStrategy,
    /// When the model has at most this many groundings in total, every batch
    /// is the full grounding set and the E-step objective is exact.
    pub exhaustive_cap: u128,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.0005,
            lr_patience: 10,
            batch_formulae: 64,
            lambda: 0.0,
            epochs: 20,
            steps_per_epoch: 50,
            epochs_e: 1,
            epochs_m: 1,
            mstep_budget: 256,
            mstep_steps: 5,
            strategy: GroundingStrategy::Anchored,
            exhaustive_cap: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig("lr must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(TrainError::InvalidConfig("lambda must be non-negative".into()));
        }
        if self.batch_formulae == 0 {
            return Err(TrainError::InvalidConfig("batch_formulae must be at least 1".into()));
        }
        if self.epochs_e + self.epochs_m == 0 {
            return Err(TrainError::InvalidConfig("epochs_e + epochs_m must be positive".into()));
        }
        Ok(())
    }
}

/// Terms of the E-step batch objective. `total = −potential − entropy − supervised`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EStepBatchLoss {
    /// Σ w_f · E_Q[φ_f] over the batch's ground clauses.
    pub potential: f64,
    /// Σ H(q) over distinct latent atoms of the batch.
    pub entropy: f64,
    /// λ · Σ log q(observed value) over the supervised atoms.
    pub supervised: f64,
    pub total: f64,
}

/// Ground clauses and supervised atoms for one E-step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EStepBatch {
    pub groundings: Vec<GroundClause>,
    pub supervised: Vec<(GroundAtom, bool)>,
}

/// Samples an E-step batch: `batch_formulae` ground clauses over uniformly
/// chosen clauses, plus as many observed atoms when λ > 0.
pub fn sample_estep_batch<R: Rng + ?Sized>(
    kb: &KnowledgeBase,
    model: &MlnModel,
    cfg: &TrainConfig,
    rng: &mut R,
) -> EStepBatch {
    let mut batch = EStepBatch::default();
    if model.is_empty() || kb.num_entities() == 0 {
        return batch;
    }
    for _ in 0..cfg.batch_formulae {
        let ci = rng.gen_range(0..model.len());
        let gc = logic::sample_grounding(model.clause(ci), kb, cfg.strategy, rng).expect("kb has entities");
        batch.groundings.push(gc);
    }
    if cfg.lambda > 0.0 && kb.num_observed() > 0 {
        for _ in 0..cfg.batch_formulae {
            batch
                .supervised
                .push(kb.observed_at(rng.gen_range(0..kb.num_observed())));
        }
    }
    batch
}

/// Every grounding of every clause and every observed atom, if the total
/// count is within `cap`.
pub fn exhaustive_batch(kb: &KnowledgeBase, model: &MlnModel, cap: u128, lambda: f64) -> Option<EStepBatch> {
    let total: u128 = model.clauses().iter().map(|c| logic::grounding_count(c, kb)).sum();
    if total > cap || kb.num_entities() == 0 {
        return None;
    }
    let mut batch = EStepBatch::default();
    for c in model.clauses() {
        batch.groundings.extend(logic::enumerate_groundings(c, kb, cap).ok()?);
    }
    if lambda > 0.0 {
        batch.supervised = kb.observed().collect();
    }
    Some(batch)
}

/// Loss of a fixed batch and its gradient with respect to all network
/// parameters.
pub fn estep_loss_and_grad(
    kb: &KnowledgeBase,
    model: &MlnModel,
    net: &InferenceNet,
    graph: &KgFactorGraph,
    batch: &EStepBatch,
    lambda: f64,
) -> Result<(EStepBatchLoss, Vec<f64>), TrainError> {
    let pass = net.forward(graph)?;
    let (loss, heads, dq) = estep_terms(kb, model, net, &pass, batch, lambda)?;
    let mut grads = vec![0.0; net.num_params()];
    net.backward(&pass, &heads, &dq, &mut grads);
    Ok((loss, grads))
}

/// Loss of a fixed batch without gradients.
pub fn estep_loss(
    kb: &KnowledgeBase,
    model: &MlnModel,
    net: &InferenceNet,
    graph: &KgFactorGraph,
    batch: &EStepBatch,
    lambda: f64,
) -> Result<EStepBatchLoss, TrainError> {
    let pass = net.forward(graph)?;
    estep_terms(kb, model, net, &pass, batch, lambda).map(|(l, _, _)| l)
}

type Terms = (EStepBatchLoss, Vec<HeadRecord>, Vec<f64>);

fn estep_terms(
    kb: &KnowledgeBase,
    model: &MlnModel,
    net: &InferenceNet,
    pass: &GnnPass,
    batch: &EStepBatch,
    lambda: f64,
) -> Result<Terms, TrainError> {
    let mut latent: IndexSet<GroundAtom> = IndexSet::new();
    for gc in &batch.groundings {
        for lit in &gc.literals {
            if kb.is_latent(&lit.atom) {
                latent.insert(lit.atom);
            }
        }
    }
    let n_latent = latent.len();
    let mut atoms: Vec<GroundAtom> = latent.into_iter().collect();
    if lambda > 0.0 {
        atoms.extend(batch.supervised.iter().map(|(a, _)| *a));
    }
    let heads: Vec<HeadRecord> = atoms
        .par_iter()
        .map(|a| net.head_forward(pass, a))
        .collect::<Result<_, _>>()?;
    let q: HashMap<GroundAtom, f64> = heads[..n_latent].iter().map(|h| (h.atom, h.q)).collect();
    let slot: HashMap<GroundAtom, usize> = heads[..n_latent].iter().enumerate().map(|(i, h)| (h.atom, i)).collect();
    let mut dq = vec![0.0; heads.len()];
    let mut loss = EStepBatchLoss::default();
    for gc in &batch.groundings {
        let w = model.weights()[gc.clause];
        let (e, grads) = mln::expected_clause_value_grad(gc, &q, kb)?;
        loss.potential += w * e;
        for (atom, g) in grads {
            dq[slot[&atom]] -= w * g;
        }
    }
    for (i, h) in heads[..n_latent].iter().enumerate() {
        loss.entropy += bernoulli_entropy(h.q);
        dq[i] -= bernoulli_entropy_grad(h.q);
    }
    if lambda > 0.0 {
        for (i, h) in heads[n_latent..].iter().enumerate() {
            let y = batch.supervised[i].1;
            let j = n_latent + i;
            if y {
                loss.supervised += lambda * h.q.ln();
                dq[j] -= lambda / h.q;
            } else {
                loss.supervised += lambda * (1.0 - h.q).ln();
                dq[j] += lambda / (1.0 - h.q);
            }
        }
    }
    loss.total = -loss.potential - loss.entropy - loss.supervised;
    Ok((loss, heads, dq))
}

/// Posteriors for `atoms` from a fresh forward pass.
pub fn posterior_table(
    net: &InferenceNet,
    graph: &KgFactorGraph,
    atoms: &[GroundAtom],
) -> Result<IndexMap<GroundAtom, f64>, TrainError> {
    let pass = net.forward(graph)?;
    let q = net.posteriors(&pass, atoms)?;
    Ok(atoms.iter().copied().zip(q).collect())
}

/// One line of the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean E-step batch loss over the epoch (NaN without E-steps).
    pub e_loss: f64,
    /// Pseudo-log-likelihood of the last M-step sample set (NaN without M-steps).
    pub pll: f64,
    pub lr: f64,
    pub valid_loss: f64,
}

impl EpochMetrics {
    pub const TSV_HEADER: &'static str = "epoch\te_loss\tpll\tlr\tvalid_loss";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.epoch, self.e_loss, self.pll, self.lr, self.valid_loss
        )
    }
}

/// Owns the optimizer state and randomness of one training run.
pub struct Trainer<'a> {
    kb: &'a KnowledgeBase,
    graph: KgFactorGraph,
    cfg: TrainConfig,
    rng: ChaCha8Rng,
    net_opt: Option<AdamState>,
    weight_opt: Option<AdamState>,
    lr: f64,
    best_valid: f64,
    stagnant: usize,
    valid_batch: EStepBatch,
    exhaustive: Option<EStepBatch>,
    /// E-step batch losses in order.
    pub loss_trace: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(kb: &'a KnowledgeBase, model: &MlnModel, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        if kb.num_entities() == 0 {
            return Err(TrainError::NoEntities);
        }
        let exhaustive = if cfg.exhaustive_cap > 0 {
            exhaustive_batch(kb, model, cfg.exhaustive_cap, cfg.lambda)
        } else {
            None
        };
        let valid_batch = match &exhaustive {
            Some(b) => b.clone(),
            None => {
                let mut vr = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x05ee_d0f7_a11d);
                let mut vc = cfg.clone();
                vc.batch_formulae = cfg.batch_formulae.max(256);
                sample_estep_batch(kb, model, &vc, &mut vr)
            }
        };
        Ok(Trainer {
            kb,
            graph: build_factor_graph(kb),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            lr: cfg.lr,
            cfg,
            net_opt: None,
            weight_opt: None,
            best_valid: f64::INFINITY,
            stagnant: 0,
            valid_batch,
            exhaustive,
            loss_trace: Vec::new(),
        })
    }

    pub fn graph(&self) -> &KgFactorGraph {
        &self.graph
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Samples a batch and takes one optimizer step on the network.
    pub fn estep_batch(&mut self, model: &MlnModel, net: &mut InferenceNet) -> Result<EStepBatchLoss, TrainError> {
        let batch = match &self.exhaustive {
            Some(b) => b.clone(),
            None => sample_estep_batch(self.kb, model, &self.cfg, &mut self.rng),
        };
        let (loss, grads) = estep_loss_and_grad(self.kb, model, net, &self.graph, &batch, self.cfg.lambda)?;
        let opt = self.net_opt.get_or_insert_with(|| AdamState::new(net.num_params()));
        opt.step(net.params_mut(), &grads, self.lr);
        self.loss_trace.push(loss.total);
        Ok(loss)
    }

    /// Mean batch loss over `steps_per_epoch` E-steps.
    pub fn estep_epoch(&mut self, model: &MlnModel, net: &mut InferenceNet) -> Result<f64, TrainError> {
        let mut total = 0.0;
        for _ in 0..self.cfg.steps_per_epoch {
            total += self.estep_batch(model, net)?.total;
        }
        Ok(total / self.cfg.steps_per_epoch.max(1) as f64)
    }

    /// Collects determining groundings and takes `mstep_steps` ascent steps
    /// on their pseudo-log-likelihood. Returns the value before the update,
    /// or `None` when no sample was found.
    pub fn mstep_epoch(&mut self, model: &mut MlnModel, net: &InferenceNet) -> Result<Option<f64>, TrainError> {
        if model.is_empty() {
            return Err(TrainError::NoClauses);
        }
        let samples = mln::collect_determining_groundings(
            model,
            self.kb,
            self.cfg.strategy,
            &mut self.rng,
            self.cfg.mstep_budget,
        );
        if samples.is_empty() {
            return Ok(None);
        }
        let centers: IndexSet<GroundAtom> = samples.iter().map(|s| s.center).collect();
        let centers: Vec<GroundAtom> = centers.into_iter().collect();
        let q: HashMap<GroundAtom, f64> = posterior_table(net, &self.graph, &centers)?.into_iter().collect();
        let before = mln::pseudo_log_likelihood(model, &samples, self.kb, &q)?;
        let opt = self.weight_opt.get_or_insert_with(|| AdamState::new(model.len()));
        for _ in 0..self.cfg.mstep_steps {
            let grad = mln::pseudo_log_likelihood_grad(model, &samples, self.kb, &q)?;
            let descent: Vec<f64> = grad.iter().map(|g| -g).collect();
            opt.step(model.weights_mut(), &descent, self.lr);
        }
        Ok(Some(before))
    }

    /// E-step loss on the fixed validation batch.
    pub fn validation_loss(&self, model: &MlnModel, net: &InferenceNet) -> Result<f64, TrainError> {
        Ok(estep_loss(self.kb, model, net, &self.graph, &self.valid_batch, self.cfg.lambda)?.total)
    }

    /// Updates the plateau counter; halves the learning rate after
    /// `lr_patience` epochs without improvement. Returns true on improvement.
    fn track_validation(&mut self, valid: f64) -> bool {
        if valid < self.best_valid {
            self.best_valid = valid;
            self.stagnant = 0;
            true
        } else {
            self.stagnant += 1;
            if self.stagnant >= self.cfg.lr_patience {
                self.lr *= 0.5;
                self.stagnant = 0;
            }
            false
        }
    }
}

/// Trains the posterior with clause weights held fixed, leaves `net` at the
/// epoch with the lowest validation loss and returns posteriors for every
/// query atom.
pub fn run_inference(
    kb: &KnowledgeBase,
    model: &MlnModel,
    net: &mut InferenceNet,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochMetrics),
) -> Result<IndexMap<GroundAtom, f64>, TrainError> {
    let queries: Vec<GroundAtom> = kb.queries().collect();
    if queries.is_empty() {
        return Err(TrainError::NoQueries);
    }
    let mut trainer = Trainer::new(kb, model, cfg.clone())?;
    let mut best: Option<InferenceNet> = None;
    for epoch in 0..cfg.epochs {
        let e_loss = trainer.estep_epoch(model, net)?;
        let valid = trainer.validation_loss(model, net)?;
        if trainer.track_validation(valid) {
            best = Some(net.clone());
        }
        observer(&EpochMetrics {
            epoch,
            e_loss,
            pll: f64::NAN,
            lr: trainer.lr(),
            valid_loss: valid,
        });
    }
    if let Some(n) = best {
        *net = n;
    }
    posterior_table(net, trainer.graph(), &queries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmReport {
    pub best_epoch: Option<usize>,
    pub best_valid: f64,
    pub history: Vec<EpochMetrics>,
}

/// Alternates `epochs_e` E-step epochs and `epochs_m` M-step epochs for
/// `epochs` rounds, leaving `model` and `net` at the round with the lowest
/// validation loss.
pub fn run_em(
    kb: &KnowledgeBase,
    model: &mut MlnModel,
    net: &mut InferenceNet,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochMetrics),
) -> Result<EmReport, TrainError> {
    let mut trainer = Trainer::new(kb, model, cfg.clone())?;
    let mut best: Option<(MlnModel, InferenceNet)> = None;
    let mut report = EmReport {
        best_epoch: None,
        best_valid: f64::INFINITY,
        history: Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        let mut e_total = 0.0;
        for _ in 0..cfg.epochs_e {
            e_total += trainer.estep_epoch(model, net)?;
        }
        let mut pll = f64::NAN;
        for _ in 0..cfg.epochs_m {
            if let Some(v) = trainer.mstep_epoch(model, net)? {
                pll = v;
            }
        }
        let valid = trainer.validation_loss(model, net)?;
        if trainer.track_validation(valid) {
            report.best_epoch = Some(epoch);
            report.best_valid = valid;
            best = Some((model.clone(), net.clone()));
        }
        let metrics = EpochMetrics {
            epoch,
            e_loss: if cfg.epochs_e > 0 {
                e_total / cfg.epochs_e as f64
            } else {
                f64::NAN
            },
            pll,
            lr: trainer.lr(),
            valid_loss: valid,
        };
        observer(&metrics);
        report.history.push(metrics);
    }
    if let Some((m, n)) = best {
        *model = m;
        *net = n;
    }
    Ok(report)
}
