//! Reference answers for small instances: exact marginals by enumerating
//! every latent assignment, a Gibbs sampler, and direct mean-field
//! coordinate ascent.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::kb::{GroundAtom, KnowledgeBase, TruthValue};
use crate::logic::{self, parse_clause, LogicError};
use crate::mln::MlnModel;
use crate::nnet::{bernoulli_entropy, sigmoid};

/// Enumeration is refused above this many latent atoms.
pub const MAX_EXACT_ATOMS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("{count} latent atoms exceed the cap of {cap}")]
    TooManyAtoms { count: usize, cap: usize },
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error("need at least one sample")]
    NoSamples,
    #[error("atom sets differ")]
    AtomMismatch,
}

/// A ground clause restricted to its latent atoms.
#[derive(Debug, Clone, PartialEq)]
struct LatentClause {
    clause: usize,
    /// (latent index, negated); one entry per distinct atom
    lits: Vec<(usize, bool)>,
}

impl LatentClause {
    fn satisfied(&self, x: u64) -> bool {
        self.lits.iter().any(|&(i, neg)| ((x >> i) & 1 == 1) != neg)
    }

    fn satisfied_in(&self, x: &[bool]) -> bool {
        self.lits.iter().any(|&(i, neg)| x[i] != neg)
    }

    /// E[φ] under independent Bernoulli(q).
    fn expected(&self, q: &[f64]) -> f64 {
        1.0 - self
            .lits
            .iter()
            .map(|&(i, neg)| if neg { q[i] } else { 1.0 - q[i] })
            .product::<f64>()
    }
}

/// The explicit ground network over a capped set of latent atoms: every
/// grounding whose truth still depends on them, with observed literals
/// folded in.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundMarkovNet {
    latent: Vec<GroundAtom>,
    clauses: Vec<LatentClause>,
    touching: Vec<Vec<usize>>,
}

/// Exact marginals with the normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior {
    /// P(atom = 1)
    pub marginals: IndexMap<GroundAtom, f64>,
    /// P(atom = 0), accumulated separately from `marginals`
    pub complements: IndexMap<GroundAtom, f64>,
    /// log Σ_x exp(Σ_g w_g φ_g(x)) over non-constant groundings
    pub log_z: f64,
}

impl GroundMarkovNet {
    /// Grounds every clause exhaustively. Latent atoms are those of
    /// non-constant groundings, followed by any query atoms not yet listed.
    pub fn build(kb: &KnowledgeBase, model: &MlnModel, max_latent: usize) -> Result<Self, OracleError> {
        let mut index: IndexMap<GroundAtom, ()> = IndexMap::new();
        let mut clauses = Vec::new();
        for (ci, clause) in model.clauses().iter().enumerate() {
            'ground: for gc in logic::enumerate_groundings(clause, kb, 10_000_000)? {
                let mut lits: Vec<(GroundAtom, bool)> = Vec::new();
                for lit in &gc.literals {
                    match kb.truth_of(&lit.atom) {
                        TruthValue::Unknown => match lits.iter().find(|(a, _)| *a == lit.atom) {
                            Some(&(_, neg)) if neg != lit.negated => continue 'ground,
                            Some(_) => {}
                            None => lits.push((lit.atom, lit.negated)),
                        },
                        v => {
                            if lit.satisfied_by(v == TruthValue::True) {
                                continue 'ground;
                            }
                        }
                    }
                }
                if lits.is_empty() {
                    continue;
                }
                let lits = lits
                    .into_iter()
                    .map(|(a, neg)| (index.insert_full(a, ()).0, neg))
                    .collect();
                clauses.push(LatentClause { clause: ci, lits });
            }
        }
        for q in kb.queries() {
            index.insert(q, ());
        }
        if index.len() > max_latent {
            return Err(OracleError::TooManyAtoms {
                count: index.len(),
                cap: max_latent,
            });
        }
        let latent: Vec<GroundAtom> = index.into_keys().collect();
        Ok(Self::assemble(latent, clauses))
    }

    fn assemble(latent: Vec<GroundAtom>, clauses: Vec<LatentClause>) -> Self {
        let mut touching = vec![Vec::new(); latent.len()];
        for (g, c) in clauses.iter().enumerate() {
            for &(i, _) in &c.lits {
                touching[i].push(g);
            }
        }
        GroundMarkovNet {
            latent,
            clauses,
            touching,
        }
    }

    pub fn latent_atoms(&self) -> &[GroundAtom] {
        &self.latent
    }

    pub fn num_latent(&self) -> usize {
        self.latent.len()
    }

    pub fn num_clauses(&self) -> usize {
        self.clauses.len()
    }

    /// The same network with latent atoms listed in a different order:
    /// new position `i` holds old atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.latent.len());
        let mut new_of_old = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            new_of_old[old] = new;
        }
        let latent = perm.iter().map(|&o| self.latent[o]).collect();
        let clauses = self
            .clauses
            .iter()
            .map(|c| LatentClause {
                clause: c.clause,
                lits: c.lits.iter().map(|&(i, n)| (new_of_old[i], n)).collect(),
            })
            .collect();
        Self::assemble(latent, clauses)
    }

    fn score(&self, w: &[f64], x: u64) -> f64 {
        self.clauses
            .iter()
            .filter(|c| c.satisfied(x))
            .map(|c| w[c.clause])
            .sum()
    }

    /// Exact posterior by enumerating all 2^n latent assignments in log space.
    pub fn exact(&self, model: &MlnModel) -> Result<ExactPosterior, OracleError> {
        let n = self.latent.len();
        if n > MAX_EXACT_ATOMS {
            return Err(OracleError::TooManyAtoms {
                count: n,
                cap: MAX_EXACT_ATOMS,
            });
        }
        let w = model.weights();
        let total: u64 = 1 << n;
        let block: u64 = 1 << 12;
        let blocks: Vec<u64> = (0..total.div_ceil(block)).collect();
        let max = blocks
            .par_iter()
            .map(|&b| {
                (b * block..((b + 1) * block).min(total))
                    .map(|x| self.score(w, x))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .reduce(|| f64::NEG_INFINITY, f64::max);
        // per block: (Σ e, Σ e·[x_i = 1], Σ e·[x_i = 0])
        let partial: Vec<(f64, Vec<f64>, Vec<f64>)> = blocks
            .par_iter()
            .map(|&b| {
                let mut z = 0.0;
                let mut on = vec![0.0; n];
                let mut off = vec![0.0; n];
                for x in b * block..((b + 1) * block).min(total) {
                    let e = (self.score(w, x) - max).exp();
                    z += e;
                    for i in 0..n {
                        if (x >> i) & 1 == 1 {
                            on[i] += e;
                        } else {
                            off[i] += e;
                        }
                    }
                }
                (z, on, off)
            })
            .collect();
        let mut z = 0.0;
        let mut on = vec![0.0; n];
        let mut off = vec![0.0; n];
        for (pz, pon, poff) in partial {
            z += pz;
            for i in 0..n {
                on[i] += pon[i];
                off[i] += poff[i];
            }
        }
        Ok(ExactPosterior {
            marginals: self.latent.iter().zip(&on).map(|(a, v)| (*a, v / z)).collect(),
            complements: self.latent.iter().zip(&off).map(|(a, v)| (*a, v / z)).collect(),
            log_z: max + z.ln(),
        })
    }

    /// Exact P(atom = 1) for every latent atom.
    pub fn exact_marginals(&self, model: &MlnModel) -> Result<IndexMap<GroundAtom, f64>, OracleError> {
        self.exact(model).map(|e| e.marginals)
    }

    fn log_odds(&self, w: &[f64], x: &mut [bool], i: usize) -> f64 {
        let keep = x[i];
        let mut s = 0.0;
        for &g in &self.touching[i] {
            let c = &self.clauses[g];
            x[i] = true;
            let on = c.satisfied_in(x);
            x[i] = false;
            let off = c.satisfied_in(x);
            s += w[c.clause] * ((on as u8 as f64) - (off as u8 as f64));
        }
        x[i] = keep;
        s
    }

    /// Systematic-scan Gibbs sampling. Returns the fraction of the
    /// `n_samples` post-burn-in sweeps in which each atom was true.
    pub fn gibbs<R: Rng + ?Sized>(
        &self,
        model: &MlnModel,
        burn_in: usize,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<IndexMap<GroundAtom, f64>, OracleError> {
        if n_samples == 0 {
            return Err(OracleError::NoSamples);
        }
        let w = model.weights();
        let n = self.latent.len();
        let mut x: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
        let mut counts = vec![0u64; n];
        for sweep in 0..burn_in + n_samples {
            for i in 0..n {
                let p = sigmoid(self.log_odds(w, &mut x, i));
                x[i] = rng.gen::<f64>() < p;
            }
            if sweep >= burn_in {
                for i in 0..n {
                    counts[i] += x[i] as u64;
                }
            }
        }
        Ok(self
            .latent
            .iter()
            .zip(counts)
            .map(|(a, c)| (*a, c as f64 / n_samples as f64))
            .collect())
    }

    /// Σ_g w_g E_Q[φ_g] for independent Bernoulli probabilities `q`
    /// (indexed like [`Self::latent_atoms`]).
    pub fn expected_score(&self, model: &MlnModel, q: &[f64]) -> f64 {
        let w = model.weights();
        self.clauses.iter().map(|c| w[c.clause] * c.expected(q)).sum()
    }

    /// KL(Q ‖ P) = log Z − Σ w E_Q[φ] − Σ H(q).
    pub fn mean_field_kl(&self, model: &MlnModel, q: &[f64], log_z: f64) -> f64 {
        let h: f64 = q.iter().map(|&p| bernoulli_entropy(p)).sum();
        log_z - self.expected_score(model, q) - h
    }

    /// Mean-field fixed-point iteration, one atom at a time, until no
    /// probability moves more than `tol` or `max_sweeps` is reached.
    pub fn coordinate_ascent(&self, model: &MlnModel, mut q: Vec<f64>, max_sweeps: usize, tol: f64) -> Vec<f64> {
        let w = model.weights();
        for _ in 0..max_sweeps {
            let mut moved: f64 = 0.0;
            for i in 0..q.len() {
                let keep = q[i];
                let mut s = 0.0;
                for &g in &self.touching[i] {
                    let c = &self.clauses[g];
                    q[i] = 1.0;
                    let on = c.expected(&q);
                    q[i] = 0.0;
                    let off = c.expected(&q);
                    s += w[c.clause] * (on - off);
                }
                q[i] = sigmoid(s);
                moved = moved.max((q[i] - keep).abs());
            }
            if moved < tol {
                break;
            }
        }
        q
    }

    /// Lowest KL(Q ‖ P) over `restarts` coordinate-ascent runs from uniform
    /// random starting points.
    pub fn best_mean_field<R: Rng + ?Sized>(
        &self,
        model: &MlnModel,
        restarts: usize,
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64), OracleError> {
        let log_z = self.exact(model)?.log_z;
        let mut best: Option<(Vec<f64>, f64)> = None;
        for _ in 0..restarts.max(1) {
            let init: Vec<f64> = (0..self.latent.len()).map(|_| rng.gen_range(0.01..0.99)).collect();
            let q = self.coordinate_ascent(model, init, 10_000, 1e-12);
            let kl = self.mean_field_kl(model, &q, log_z);
            if best.as_ref().is_none_or(|(_, b)| kl < *b) {
                best = Some((q, kl));
            }
        }
        Ok(best.expect("at least one restart"))
    }
}

/// Per-atom |q − p| with summaries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TvReport {
    pub per_atom: Vec<(GroundAtom, f64)>,
    pub max: f64,
    pub mean: f64,
}

/// Total-variation distance between two Bernoulli marginal tables over the
/// same atoms.
pub fn mean_field_tv(
    q: &IndexMap<GroundAtom, f64>,
    exact: &IndexMap<GroundAtom, f64>,
) -> Result<TvReport, OracleError> {
    if q.len() != exact.len() {
        return Err(OracleError::AtomMismatch);
    }
    let mut report = TvReport::default();
    for (atom, p) in exact {
        let v = q.get(atom).ok_or(OracleError::AtomMismatch)?;
        let d = (v - p).abs();
        report.per_atom.push((*atom, d));
        report.max = report.max.max(d);
        report.mean += d;
    }
    if !report.per_atom.is_empty() {
        report.mean /= report.per_atom.len() as f64;
    }
    Ok(report)
}

/// A small random instance for checking inference against the oracles:
/// two or three entities, unary and binary predicates, a few observed facts
/// and two to four random clauses with weights in [−2, 2]. Every latent atom
/// of the ground network is registered as a query. Returns `None` when the
/// draw has no latent atoms or more than `max_latent`.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, max_latent: usize) -> Option<(KnowledgeBase, MlnModel)> {
    let mut kb = KnowledgeBase::new();
    let m = rng.gen_range(2..=3);
    for i in 0..m {
        kb.add_entity(&format!("E{i}")).unwrap();
    }
    let unary = rng.gen_range(1..=2);
    let mut preds: Vec<(String, usize)> = (0..unary).map(|i| (format!("P{i}"), 1)).collect();
    if rng.gen_bool(0.7) {
        preds.push(("R".to_string(), 2));
    }
    for (name, arity) in &preds {
        kb.add_predicate(name, *arity).unwrap();
    }
    // observe a random subset of atoms
    let mut all = Vec::new();
    for (p, schema) in kb.predicates().iter().enumerate() {
        let pid = crate::kb::PredicateId(p as u32);
        if schema.arity == 1 {
            for c in kb.entities() {
                all.push(kb.make_atom(pid, &[c]).unwrap());
            }
        } else {
            for a in kb.entities() {
                for b in kb.entities() {
                    all.push(kb.make_atom(pid, &[a, b]).unwrap());
                }
            }
        }
    }
    for atom in all {
        if rng.gen_bool(0.35) {
            kb.assert_fact(atom, rng.gen_bool(0.6)).unwrap();
        }
    }
    let vars = ["X", "Y"];
    let mut model = MlnModel::new();
    let n_clauses = rng.gen_range(2..=4);
    while model.len() < n_clauses {
        let n_lits = rng.gen_range(1..=3);
        let mut lits = Vec::new();
        for _ in 0..n_lits {
            let (name, arity) = &preds[rng.gen_range(0..preds.len())];
            let args: Vec<&str> = (0..*arity).map(|_| vars[rng.gen_range(0..2)]).collect();
            let neg = if rng.gen_bool(0.5) { "!" } else { "" };
            lits.push(format!("{neg}{name}({})", args.join(",")));
        }
        let clause = parse_clause(&lits.join(" | "), &kb).expect("generated rule parses");
        let w = rng.gen_range(-2.0..=2.0);
        model.add_clause(clause, w).expect("finite weight");
    }
    let gmn = GroundMarkovNet::build(&kb, &model, usize::MAX).ok()?;
    if gmn.num_latent() == 0 || gmn.num_latent() > max_latent {
        return None;
    }
    for atom in gmn.latent_atoms() {
        kb.add_query(*atom).ok()?;
    }
    Some((kb, model))
}

/// Exact marginals keyed by atom, convenience for callers holding a kb.
pub fn exact_marginals(kb: &KnowledgeBase, model: &MlnModel) -> Result<IndexMap<GroundAtom, f64>, OracleError> {
    GroundMarkovNet::build(kb, model, MAX_EXACT_ATOMS)?.exact_marginals(model)
}

/// Looks up `q` for each latent atom of `gmn`.
pub fn aligned(gmn: &GroundMarkovNet, q: &HashMap<GroundAtom, f64>) -> Option<Vec<f64>> {
    gmn.latent_atoms().iter().map(|a| q.get(a).copied()).collect()
}
