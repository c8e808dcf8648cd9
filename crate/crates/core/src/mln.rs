//! The weighted clause model: expected potentials under a factorized
//! posterior, Markov-blanket conditionals and the pseudo-likelihood gradient
//! used to learn clause weights.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::kb::{GroundAtom, KnowledgeBase, TruthValue};
use crate::logic::{self, Clause, GroundClause, GroundingStrategy, ParseError};
use crate::nnet::{clamp_prob, sigmoid};

#[derive(Debug, Error, PartialEq)]
pub enum MlnError {
    #[error("no posterior probability for latent atom {0:?}")]
    MissingPosterior(GroundAtom),
    #[error("blanket world does not assign atom {0:?}")]
    IncompleteBlanket(GroundAtom),
    #[error("ground clause does not contain the center atom")]
    CenterNotInClause,
    #[error("no samples")]
    NoSamples,
    #[error("weight must be finite")]
    NonFiniteWeight,
}

/// Source of mean-field probabilities for latent atoms.
pub trait Posterior {
    fn prob(&self, atom: &GroundAtom) -> Option<f64>;
}

impl Posterior for HashMap<GroundAtom, f64> {
    fn prob(&self, atom: &GroundAtom) -> Option<f64> {
        self.get(atom).copied()
    }
}

/// The same probability for every atom.
#[derive(Debug, Clone, Copy)]
pub struct UniformPosterior(pub f64);

impl Posterior for UniformPosterior {
    fn prob(&self, _atom: &GroundAtom) -> Option<f64> {
        Some(self.0)
    }
}

/// Clauses with one real weight each. The partition function is never formed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MlnModel {
    clauses: Vec<Clause>,
    weights: Vec<f64>,
}

impl MlnModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a clause, assigning its weight slot. Returns the slot.
    pub fn add_clause(&mut self, mut clause: Clause, weight: f64) -> Result<usize, MlnError> {
        if !weight.is_finite() {
            return Err(MlnError::NonFiniteWeight);
        }
        let slot = self.clauses.len();
        clause.weight_slot = slot;
        self.clauses.push(clause);
        self.weights.push(weight);
        Ok(slot)
    }

    pub fn from_rules(text: &str, kb: &KnowledgeBase) -> Result<Self, ParseError> {
        let mut model = MlnModel::new();
        for (w, c) in logic::parse_rules(text, kb)? {
            model.add_clause(c, w).expect("parser rejects non-finite weights");
        }
        Ok(model)
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn clause(&self, i: usize) -> &Clause {
        &self.clauses[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn set_weights(&mut self, w: f64) {
        self.weights.iter_mut().for_each(|x| *x = w);
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    /// Rule-file text with the current weights.
    pub fn to_rules_text(&self, kb: &KnowledgeBase) -> String {
        self.clauses
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| format!("{w}\t{}\n", c.display(kb)))
            .collect()
    }
}

/// Expected truth of a ground clause when latent atoms are independent
/// Bernoulli variables with probabilities from `q`.
pub fn expected_clause_value(gc: &GroundClause, q: &dyn Posterior, kb: &KnowledgeBase) -> Result<f64, MlnError> {
    expected_clause_value_grad(gc, q, kb).map(|(v, _)| v)
}

/// [`expected_clause_value`] together with its derivative with respect to
/// each distinct latent atom's probability.
///
/// Literals over the same atom are grouped, so an atom repeated with one
/// polarity counts once and an atom with both polarities makes the clause a
/// tautology. This is the exact expectation of the disjunction.
pub fn expected_clause_value_grad(
    gc: &GroundClause,
    q: &dyn Posterior,
    kb: &KnowledgeBase,
) -> Result<(f64, Vec<(GroundAtom, f64)>), MlnError> {
    // (atom, appears positive, appears negative)
    let mut latent: Vec<(GroundAtom, bool, bool)> = Vec::new();
    for lit in &gc.literals {
        match kb.truth_of(&lit.atom) {
            TruthValue::Unknown => match latent.iter_mut().find(|(a, _, _)| *a == lit.atom) {
                Some(entry) => {
                    if lit.negated {
                        entry.2 = true
                    } else {
                        entry.1 = true
                    }
                }
                None => latent.push((lit.atom, !lit.negated, lit.negated)),
            },
            v => {
                if lit.satisfied_by(v == TruthValue::True) {
                    return Ok((1.0, Vec::new()));
                }
            }
        }
    }
    if latent.iter().any(|&(_, p, n)| p && n) {
        return Ok((1.0, Vec::new()));
    }
    // probability that all literals on the atom are false, and its slope in q
    let mut fals = Vec::with_capacity(latent.len());
    let mut slope = Vec::with_capacity(latent.len());
    for &(atom, positive, _) in &latent {
        let p = q.prob(&atom).ok_or(MlnError::MissingPosterior(atom))?;
        if positive {
            fals.push(1.0 - p);
            slope.push(-1.0);
        } else {
            fals.push(p);
            slope.push(1.0);
        }
    }
    let n = fals.len();
    let mut prefix = vec![1.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] * fals[i];
    }
    let mut grads = Vec::with_capacity(n);
    let mut suffix = 1.0;
    for i in (0..n).rev() {
        grads.push((latent[i].0, -slope[i] * prefix[i] * suffix));
        suffix *= fals[i];
    }
    grads.reverse();
    Ok((1.0 - prefix[n], grads))
}

/// A latent atom together with ground clauses it appears in and the values
/// of every other atom in those clauses.
#[derive(Debug, Clone, PartialEq)]
pub struct BlanketSample {
    pub center: GroundAtom,
    pub groundings: Vec<GroundClause>,
    pub world: HashMap<GroundAtom, bool>,
}

impl BlanketSample {
    pub fn new(
        center: GroundAtom,
        groundings: Vec<GroundClause>,
        world: HashMap<GroundAtom, bool>,
    ) -> Result<Self, MlnError> {
        for gc in &groundings {
            if !gc.literals.iter().any(|l| l.atom == center) {
                return Err(MlnError::CenterNotInClause);
            }
            for l in &gc.literals {
                if l.atom != center && !world.contains_key(&l.atom) {
                    return Err(MlnError::IncompleteBlanket(l.atom));
                }
            }
        }
        Ok(BlanketSample {
            center,
            groundings,
            world,
        })
    }

    /// φ(center = 1) − φ(center = 0) for one of the sample's groundings.
    pub fn delta_phi(&self, gc: &GroundClause) -> f64 {
        let eval = |x: bool| {
            gc.literals.iter().any(|l| {
                let v = if l.atom == self.center { x } else { self.world[&l.atom] };
                l.satisfied_by(v)
            })
        };
        (eval(true) as u8 as f64) - (eval(false) as u8 as f64)
    }

    /// Σ_i w_i · (φ_i(1) − φ_i(0)): the log-odds of the center given its blanket.
    pub fn log_odds(&self, model: &MlnModel) -> f64 {
        self.groundings
            .iter()
            .map(|gc| model.weights()[gc.clause] * self.delta_phi(gc))
            .sum()
    }
}

/// P_w(center = 1 | Markov blanket).
pub fn conditional_prob(bs: &BlanketSample, model: &MlnModel) -> f64 {
    sigmoid(bs.log_odds(model))
}

/// P_w(center = value | Markov blanket).
pub fn conditional_prob_of(bs: &BlanketSample, model: &MlnModel, value: bool) -> f64 {
    let s = bs.log_odds(model);
    if value {
        sigmoid(s)
    } else {
        sigmoid(-s)
    }
}

/// Gradient of `y·log P + (1−y)·log(1−P)` with respect to each clause weight
/// touched by the sample, as `(clause index, value)` sorted by index.
pub fn mstep_gradient(bs: &BlanketSample, model: &MlnModel, y: f64) -> Vec<(usize, f64)> {
    let p = conditional_prob(bs, model);
    let mut acc: Vec<(usize, f64)> = Vec::new();
    for gc in &bs.groundings {
        let g = (y - p) * bs.delta_phi(gc);
        match acc.iter_mut().find(|(c, _)| *c == gc.clause) {
            Some(entry) => entry.1 += g,
            None => acc.push((gc.clause, g)),
        }
    }
    acc.sort_by_key(|(c, _)| *c);
    acc
}

/// Target for the center: its observed value, or its posterior probability.
pub fn center_target(center: &GroundAtom, kb: &KnowledgeBase, q: &dyn Posterior) -> Result<f64, MlnError> {
    match kb.truth_of(center).as_bool() {
        Some(v) => Ok(v as u8 as f64),
        None => q.prob(center).ok_or(MlnError::MissingPosterior(*center)),
    }
}

/// Samples ground clauses with exactly one latent atom whose value decides
/// the clause (every other literal is observed false). Each hit becomes a
/// one-clause blanket sample centered on that atom.
///
/// At most `budget` samples are returned; sampling gives up after
/// `50 · budget` draws.
pub fn collect_determining_groundings<R: Rng + ?Sized>(
    model: &MlnModel,
    kb: &KnowledgeBase,
    strategy: GroundingStrategy,
    rng: &mut R,
    budget: usize,
) -> Vec<BlanketSample> {
    let mut out = Vec::new();
    if budget == 0 || model.is_empty() || kb.num_entities() == 0 || !kb.has_latent_atoms() {
        return out;
    }
    let attempts = budget.saturating_mul(50);
    for _ in 0..attempts {
        if out.len() >= budget {
            break;
        }
        let ci = rng.gen_range(0..model.len());
        let gc = logic::sample_grounding(model.clause(ci), kb, strategy, rng).expect("kb has entities");
        if let Some(bs) = determining_sample(&gc, kb) {
            out.push(bs);
        }
    }
    out
}

/// Builds a blanket sample if `gc` has exactly one latent atom and that atom
/// decides its truth.
pub fn determining_sample(gc: &GroundClause, kb: &KnowledgeBase) -> Option<BlanketSample> {
    let mut center: Option<GroundAtom> = None;
    let mut polarity: Option<bool> = None;
    let mut world = HashMap::new();
    for lit in &gc.literals {
        match kb.truth_of(&lit.atom).as_bool() {
            None => {
                match center {
                    Some(c) if c != lit.atom => return None,
                    _ => center = Some(lit.atom),
                }
                match polarity {
                    Some(p) if p != lit.negated => return None,
                    _ => polarity = Some(lit.negated),
                }
            }
            Some(v) => {
                if lit.satisfied_by(v) {
                    return None;
                }
                world.insert(lit.atom, v);
            }
        }
    }
    let center = center?;
    Some(BlanketSample {
        center,
        groundings: vec![gc.clone()],
        world,
    })
}

/// Mean over samples of `y·log P + (1−y)·log(1−P)` with P clamped away from
/// {0, 1}.
pub fn pseudo_log_likelihood(
    model: &MlnModel,
    samples: &[BlanketSample],
    kb: &KnowledgeBase,
    q: &dyn Posterior,
) -> Result<f64, MlnError> {
    if samples.is_empty() {
        return Err(MlnError::NoSamples);
    }
    let mut total = 0.0;
    for bs in samples {
        let y = center_target(&bs.center, kb, q)?;
        let p = clamp_prob(conditional_prob(bs, model));
        total += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / samples.len() as f64)
}

/// Dense gradient of [`pseudo_log_likelihood`] with respect to all weights.
pub fn pseudo_log_likelihood_grad(
    model: &MlnModel,
    samples: &[BlanketSample],
    kb: &KnowledgeBase,
    q: &dyn Posterior,
) -> Result<Vec<f64>, MlnError> {
    if samples.is_empty() {
        return Err(MlnError::NoSamples);
    }
    let mut grad = vec![0.0; model.len()];
    let scale = 1.0 / samples.len() as f64;
    for bs in samples {
        let y = center_target(&bs.center, kb, q)?;
        for (c, g) in mstep_gradient(bs, model, y) {
            grad[c] += g * scale;
        }
    }
    Ok(grad)
}
