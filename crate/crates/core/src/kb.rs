//! Knowledge base storage: entities, predicate schemas, observed facts and
//! query atoms, plus the bipartite entity/fact factor graph built over them.

use std::collections::HashMap;
use std::fmt;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest predicate arity the engine supports.
pub const MAX_ARITY: usize = 3;

/// Dense entity index, contiguous in `0..num_entities`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PredicateId(pub u32);

impl PredicateId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateSchema {
    pub name: String,
    pub arity: usize,
}

/// A predicate applied to concrete entities. Argument order is significant.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroundAtom {
    pred: PredicateId,
    arity: u8,
    args: [EntityId; MAX_ARITY],
}

impl GroundAtom {
    /// Builds an atom without consulting a schema. Use
    /// [`KnowledgeBase::make_atom`] for validated construction.
    ///
    /// Panics if more than [`MAX_ARITY`] arguments are given.
    pub fn new(pred: PredicateId, args: &[EntityId]) -> Self {
        assert!(
            !args.is_empty() && args.len() <= MAX_ARITY,
            "atom arity must be in 1..={MAX_ARITY}"
        );
        let mut slots = [EntityId(0); MAX_ARITY];
        slots[..args.len()].copy_from_slice(args);
        GroundAtom {
            pred,
            arity: args.len() as u8,
            args: slots,
        }
    }

    pub fn predicate(&self) -> PredicateId {
        self.pred
    }

    pub fn args(&self) -> &[EntityId] {
        &self.args[..self.arity as usize]
    }

    pub fn arity(&self) -> usize {
        self.arity as usize
    }

    /// Same atom with one argument replaced.
    pub fn with_arg(&self, position: usize, entity: EntityId) -> Self {
        let mut out = *self;
        out.args[position] = entity;
        out
    }
}

impl fmt::Debug for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}(", self.pred.0)?;
        for (i, a) in self.args().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "e{}", a.0)?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TruthValue {
    True,
    False,
    Unknown,
}

impl TruthValue {
    pub fn from_bool(value: bool) -> Self {
        if value {
            TruthValue::True
        } else {
            TruthValue::False
        }
    }

    pub fn as_bool(self) -> Option<bool> {
        match self {
            TruthValue::True => Some(true),
            TruthValue::False => Some(false),
            TruthValue::Unknown => None,
        }
    }
}

/// How unobserved atoms are interpreted. Query atoms stay open in both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WorldMode {
    #[default]
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }
}

/// A labeled atom from one of the train/valid/test splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitEntry {
    pub split: Split,
    pub label: Option<bool>,
}

#[derive(Debug, Error, PartialEq)]
pub enum KbError {
    #[error("entity `{0}` already registered")]
    DuplicateEntity(String),
    #[error("predicate `{0}` already registered")]
    DuplicatePredicate(String),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("entity id {0} out of range")]
    EntityOutOfRange(u32),
    #[error("predicate `{predicate}` takes {expected} argument(s), got {found}")]
    ArityMismatch {
        predicate: String,
        expected: usize,
        found: usize,
    },
    #[error("predicate `{name}` has unsupported arity {arity} (supported: 1..={max})", max = MAX_ARITY)]
    UnsupportedArity { name: String, arity: usize },
    #[error("fact {0} asserted with conflicting truth values")]
    ConflictingFact(String),
    #[error("atom {0} is a query and cannot be observed")]
    QueryObserved(String),
    #[error("atom {0} is observed and cannot be a query")]
    ObservedQuery(String),
    #[error("atom {0} appears twice in the {1:?} split")]
    DuplicateSplitAtom(String, Split),
    #[error("malformed atom `{0}`")]
    MalformedAtom(String),
}

/// Entities, predicates, observed facts and query atoms.
///
/// Construction is single-threaded; once built the structure is only read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeBase {
    entity_names: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    predicates: Vec<PredicateSchema>,
    predicate_index: HashMap<String, PredicateId>,
    observed: IndexMap<GroundAtom, bool>,
    queries: IndexSet<GroundAtom>,
    splits: IndexMap<GroundAtom, SplitEntry>,
    world_mode: WorldMode,
    // observed-or-query atoms per predicate, in insertion order
    anchors: Vec<Vec<GroundAtom>>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_entity(&mut self, name: &str) -> Result<EntityId, KbError> {
        if self.entity_index.contains_key(name) {
            return Err(KbError::DuplicateEntity(name.to_string()));
        }
        let id = EntityId(self.entity_names.len() as u32);
        self.entity_names.push(name.to_string());
        self.entity_index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Returns the id of `name`, registering it first if needed.
    pub fn entity_or_insert(&mut self, name: &str) -> EntityId {
        match self.entity_index.get(name) {
            Some(&id) => id,
            None => self.add_entity(name).expect("name checked absent"),
        }
    }

    pub fn entity(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entity_names[id.index()]
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> {
        (0..self.entity_names.len() as u32).map(EntityId)
    }

    pub fn add_predicate(&mut self, name: &str, arity: usize) -> Result<PredicateId, KbError> {
        if !(1..=MAX_ARITY).contains(&arity) {
            return Err(KbError::UnsupportedArity {
                name: name.to_string(),
                arity,
            });
        }
        if self.predicate_index.contains_key(name) {
            return Err(KbError::DuplicatePredicate(name.to_string()));
        }
        let id = PredicateId(self.predicates.len() as u32);
        self.predicates.push(PredicateSchema {
            name: name.to_string(),
            arity,
        });
        self.predicate_index.insert(name.to_string(), id);
        self.anchors.push(Vec::new());
        Ok(id)
    }

    pub fn predicate(&self, name: &str) -> Option<PredicateId> {
        self.predicate_index.get(name).copied()
    }

    pub fn schema(&self, id: PredicateId) -> &PredicateSchema {
        &self.predicates[id.index()]
    }

    pub fn predicates(&self) -> &[PredicateSchema] {
        &self.predicates
    }

    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    /// Validated atom construction.
    pub fn make_atom(&self, pred: PredicateId, args: &[EntityId]) -> Result<GroundAtom, KbError> {
        let schema = self
            .predicates
            .get(pred.index())
            .ok_or_else(|| KbError::UnknownPredicate(format!("#{}", pred.0)))?;
        if schema.arity != args.len() {
            return Err(KbError::ArityMismatch {
                predicate: schema.name.clone(),
                expected: schema.arity,
                found: args.len(),
            });
        }
        if let Some(bad) = args.iter().find(|a| a.index() >= self.num_entities()) {
            return Err(KbError::EntityOutOfRange(bad.0));
        }
        Ok(GroundAtom::new(pred, args))
    }

    /// Atom lookup by names; every name must already be registered.
    pub fn atom(&self, pred: &str, args: &[&str]) -> Result<GroundAtom, KbError> {
        let p = self
            .predicate(pred)
            .ok_or_else(|| KbError::UnknownPredicate(pred.to_string()))?;
        let ids = args
            .iter()
            .map(|a| self.entity(a).ok_or_else(|| KbError::UnknownEntity(a.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        self.make_atom(p, &ids)
    }

    /// Parses `Pred(a,b)` against registered names.
    pub fn parse_atom(&self, text: &str) -> Result<GroundAtom, KbError> {
        let (pred, args) = split_atom_text(text)?;
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        self.atom(&pred, &refs)
    }

    pub fn assert_fact(&mut self, atom: GroundAtom, value: bool) -> Result<(), KbError> {
        self.make_atom(atom.predicate(), atom.args())?;
        if self.queries.contains(&atom) {
            return Err(KbError::QueryObserved(self.display_atom(&atom)));
        }
        match self.observed.get(&atom) {
            Some(&old) if old == value => Ok(()),
            Some(_) => Err(KbError::ConflictingFact(self.display_atom(&atom))),
            None => {
                self.observed.insert(atom, value);
                self.anchors[atom.predicate().index()].push(atom);
                Ok(())
            }
        }
    }

    pub fn add_query(&mut self, atom: GroundAtom) -> Result<(), KbError> {
        self.make_atom(atom.predicate(), atom.args())?;
        if self.observed.contains_key(&atom) {
            return Err(KbError::ObservedQuery(self.display_atom(&atom)));
        }
        if self.queries.insert(atom) {
            self.anchors[atom.predicate().index()].push(atom);
        }
        Ok(())
    }

    /// Records a labeled split atom. Train atoms with a label become observed
    /// facts; valid and test atoms become queries.
    pub fn add_split_atom(&mut self, atom: GroundAtom, split: Split, label: Option<bool>) -> Result<(), KbError> {
        if self.splits.contains_key(&atom) {
            return Err(KbError::DuplicateSplitAtom(self.display_atom(&atom), split));
        }
        match (split, label) {
            (Split::Train, Some(v)) => self.assert_fact(atom, v)?,
            _ => self.add_query(atom)?,
        }
        self.splits.insert(atom, SplitEntry { split, label });
        Ok(())
    }

    pub fn truth_of(&self, atom: &GroundAtom) -> TruthValue {
        if let Some(&v) = self.observed.get(atom) {
            return TruthValue::from_bool(v);
        }
        if self.queries.contains(atom) {
            return TruthValue::Unknown;
        }
        match self.world_mode {
            WorldMode::Open => TruthValue::Unknown,
            WorldMode::Closed => TruthValue::False,
        }
    }

    pub fn is_latent(&self, atom: &GroundAtom) -> bool {
        self.truth_of(atom) == TruthValue::Unknown
    }

    pub fn world_mode(&self) -> WorldMode {
        self.world_mode
    }

    pub fn set_world_mode(&mut self, mode: WorldMode) {
        self.world_mode = mode;
    }

    pub fn observed(&self) -> impl Iterator<Item = (GroundAtom, bool)> + '_ {
        self.observed.iter().map(|(a, v)| (*a, *v))
    }

    pub fn observed_value(&self, atom: &GroundAtom) -> Option<bool> {
        self.observed.get(atom).copied()
    }

    pub fn observed_at(&self, index: usize) -> (GroundAtom, bool) {
        let (a, v) = self.observed.get_index(index).expect("index in range");
        (*a, *v)
    }

    pub fn num_observed(&self) -> usize {
        self.observed.len()
    }

    pub fn queries(&self) -> impl Iterator<Item = GroundAtom> + '_ {
        self.queries.iter().copied()
    }

    pub fn is_query(&self, atom: &GroundAtom) -> bool {
        self.queries.contains(atom)
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn split_entries(&self) -> impl Iterator<Item = (GroundAtom, SplitEntry)> + '_ {
        self.splits.iter().map(|(a, e)| (*a, *e))
    }

    pub fn split_entry(&self, atom: &GroundAtom) -> Option<SplitEntry> {
        self.splits.get(atom).copied()
    }

    /// Observed and query atoms of one predicate, in insertion order.
    pub fn anchor_atoms(&self, pred: PredicateId) -> &[GroundAtom] {
        &self.anchors[pred.index()]
    }

    /// Number of possible groundings of `pred` (M^arity).
    pub fn num_ground_atoms(&self, pred: PredicateId) -> u128 {
        (self.num_entities() as u128).pow(self.schema(pred).arity as u32)
    }

    /// Whether any atom of the knowledge base is latent.
    pub fn has_latent_atoms(&self) -> bool {
        if !self.queries.is_empty() {
            return true;
        }
        match self.world_mode {
            WorldMode::Closed => false,
            WorldMode::Open => {
                let total: u128 = (0..self.predicates.len() as u32)
                    .map(|p| self.num_ground_atoms(PredicateId(p)))
                    .sum();
                total > self.observed.len() as u128
            }
        }
    }

    pub fn display_atom(&self, atom: &GroundAtom) -> String {
        let mut out = String::new();
        out.push_str(
            self.predicates
                .get(atom.predicate().index())
                .map(|s| s.name.as_str())
                .unwrap_or("?"),
        );
        out.push('(');
        for (i, a) in atom.args().iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(self.entity_names.get(a.index()).map(String::as_str).unwrap_or("?"));
        }
        out.push(')');
        out
    }
}

/// Splits `Pred(a, b)` into its name and argument names. Arguments may be
/// double-quoted.
pub fn split_atom_text(text: &str) -> Result<(String, Vec<String>), KbError> {
    let malformed = || KbError::MalformedAtom(text.to_string());
    let text = text.trim();
    let open = text.find('(').ok_or_else(malformed)?;
    if !text.ends_with(')') {
        return Err(malformed());
    }
    let name = text[..open].trim();
    if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_') {
        return Err(malformed());
    }
    let inner = &text[open + 1..text.len() - 1];
    let args: Vec<String> = inner
        .split(',')
        .map(|a| {
            let a = a.trim();
            a.strip_prefix('"')
                .and_then(|s| s.strip_suffix('"'))
                .unwrap_or(a)
                .to_string()
        })
        .collect();
    if args.iter().any(|a| a.is_empty() || a.contains(['(', ')', '"'])) {
        return Err(malformed());
    }
    Ok((name.to_string(), args))
}

/// One entity/fact edge: `fact`'s atom holds `entity` at `position`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FactEdge {
    pub entity: EntityId,
    pub fact: usize,
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub atom: GroundAtom,
    pub position: usize,
    pub value: bool,
}

/// Bipartite graph with entities on one side and observed facts on the other.
#[derive(Debug, Clone)]
pub struct KgFactorGraph {
    num_entities: usize,
    facts: Vec<(GroundAtom, bool)>,
    edges: Vec<FactEdge>,
    incident: Vec<Vec<usize>>,
}

impl KgFactorGraph {
    pub fn build(kb: &KnowledgeBase) -> Self {
        let num_entities = kb.num_entities();
        let facts: Vec<(GroundAtom, bool)> = kb.observed().collect();
        let mut edges = Vec::new();
        let mut incident = vec![Vec::new(); num_entities];
        for (fi, (atom, _)) in facts.iter().enumerate() {
            for (position, &entity) in atom.args().iter().enumerate() {
                incident[entity.index()].push(edges.len());
                edges.push(FactEdge {
                    entity,
                    fact: fi,
                    position,
                });
            }
        }
        KgFactorGraph {
            num_entities,
            facts,
            edges,
            incident,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn facts(&self) -> &[(GroundAtom, bool)] {
        &self.facts
    }

    pub fn edges(&self) -> &[FactEdge] {
        &self.edges
    }

    /// Facts incident to `entity`, ordered by fact then position.
    pub fn neighbors(&self, entity: EntityId) -> Vec<Neighbor> {
        self.incident[entity.index()]
            .iter()
            .map(|&e| {
                let edge = self.edges[e];
                let (atom, value) = self.facts[edge.fact];
                Neighbor {
                    atom,
                    position: edge.position,
                    value,
                }
            })
            .collect()
    }

    pub fn degree(&self, entity: EntityId) -> usize {
        self.incident[entity.index()].len()
    }
}

/// Convenience alias for [`KgFactorGraph::build`].
pub fn build_factor_graph(kb: &KnowledgeBase) -> KgFactorGraph {
    KgFactorGraph::build(kb)
}
