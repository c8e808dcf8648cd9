//! First-order clauses: parsing from rule text, grounding against a
//! knowledge base, truth evaluation and grounding samplers.
//!
//! Rules are written in a small ASCII grammar:
//!
//! ```text
//! rule    := disj | conj "=>" disj
//! conj    := literal ("&" literal)*
//! disj    := literal ("|" literal)*
//! literal := "!"? Name "(" term ("," term)* ")"
//! term    := Variable | "quoted constant" | lowercase_constant
//! ```
//!
//! Identifiers starting with an uppercase letter are variables. Implications
//! are rewritten to a single disjunctive clause, so `A & B => C` becomes
//! `!A | !B | C`.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::kb::{EntityId, GroundAtom, KnowledgeBase, PredicateId, TruthValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    /// Index into the owning clause's variable table.
    Var(usize),
    Const(EntityId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Literal {
    pub predicate: PredicateId,
    pub negated: bool,
    pub args: Vec<Term>,
}

/// A disjunction of literals. `weight_slot` indexes the owning model's weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub literals: Vec<Literal>,
    pub variables: Vec<String>,
    pub weight_slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroundLiteral {
    pub atom: GroundAtom,
    pub negated: bool,
}

impl GroundLiteral {
    /// Whether the literal holds when its atom has truth value `value`.
    pub fn satisfied_by(&self, value: bool) -> bool {
        value != self.negated
    }
}

/// A clause with every variable bound to an entity.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroundClause {
    pub clause: usize,
    pub binding: Vec<EntityId>,
    pub literals: Vec<GroundLiteral>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogicError {
    #[error("binding does not cover variable `{0}`")]
    PartialBinding(String),
    #[error("binding has {found} entities for {expected} variables")]
    BindingLength { expected: usize, found: usize },
    #[error("world does not assign atom {0:?}")]
    MissingAtom(GroundAtom),
    #[error("{count} groundings exceed the cap of {cap}; use grounding sampling instead")]
    TooManyGroundings { count: u128, cap: u128 },
    #[error("knowledge base has no entities")]
    NoEntities,
}

impl Clause {
    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    /// Grounds the clause with one entity per variable, in variable order.
    pub fn ground_with(&self, binding: &[EntityId]) -> Result<GroundClause, LogicError> {
        if binding.len() != self.variables.len() {
            return Err(LogicError::BindingLength {
                expected: self.variables.len(),
                found: binding.len(),
            });
        }
        let literals = self
            .literals
            .iter()
            .map(|lit| {
                let mut args = [EntityId(0); crate::kb::MAX_ARITY];
                for (slot, t) in args.iter_mut().zip(&lit.args) {
                    *slot = match *t {
                        Term::Var(v) => binding[v],
                        Term::Const(c) => c,
                    };
                }
                GroundLiteral {
                    atom: GroundAtom::new(lit.predicate, &args[..lit.args.len()]),
                    negated: lit.negated,
                }
            })
            .collect();
        Ok(GroundClause {
            clause: self.weight_slot,
            binding: binding.to_vec(),
            literals,
        })
    }

    /// Renders the clause in disjunctive form.
    pub fn display<'a>(&'a self, kb: &'a KnowledgeBase) -> ClauseDisplay<'a> {
        ClauseDisplay { clause: self, kb }
    }
}

pub struct ClauseDisplay<'a> {
    clause: &'a Clause,
    kb: &'a KnowledgeBase,
}

impl fmt::Display for ClauseDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, lit) in self.clause.literals.iter().enumerate() {
            if i > 0 {
                write!(f, " | ")?;
            }
            if lit.negated {
                write!(f, "!")?;
            }
            write!(f, "{}(", self.kb.schema(lit.predicate).name)?;
            for (j, t) in lit.args.iter().enumerate() {
                if j > 0 {
                    write!(f, ",")?;
                }
                match *t {
                    Term::Var(v) => write!(f, "{}", self.clause.variables[v])?,
                    Term::Const(c) => write!(f, "\"{}\"", self.kb.entity_name(c))?,
                }
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// Grounds `clause` from a name-keyed binding.
pub fn ground(clause: &Clause, binding: &HashMap<String, EntityId>) -> Result<GroundClause, LogicError> {
    let ids = clause
        .variables
        .iter()
        .map(|v| {
            binding
                .get(v)
                .copied()
                .ok_or_else(|| LogicError::PartialBinding(v.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    clause.ground_with(&ids)
}

/// Truth value of a ground clause in `world`.
pub fn evaluate<W>(gc: &GroundClause, world: W) -> Result<bool, LogicError>
where
    W: Fn(&GroundAtom) -> Option<bool>,
{
    let mut any = false;
    for lit in &gc.literals {
        let v = world(&lit.atom).ok_or(LogicError::MissingAtom(lit.atom))?;
        any |= lit.satisfied_by(v);
    }
    Ok(any)
}

/// Literals of `gc` whose atoms are latent in `kb`, in literal order.
pub fn latent_literals(gc: &GroundClause, kb: &KnowledgeBase) -> Vec<(usize, GroundAtom)> {
    gc.literals
        .iter()
        .enumerate()
        .filter(|(_, l)| kb.truth_of(&l.atom) == TruthValue::Unknown)
        .map(|(i, l)| (i, l.atom))
        .collect()
}

/// Distinct latent atoms of `gc`, in first-occurrence order.
pub fn distinct_latent_atoms(gc: &GroundClause, kb: &KnowledgeBase) -> Vec<GroundAtom> {
    let mut out: Vec<GroundAtom> = Vec::new();
    for l in &gc.literals {
        if kb.is_latent(&l.atom) && !out.contains(&l.atom) {
            out.push(l.atom);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundingStrategy {
    /// Every variable bound uniformly and independently.
    Uniform,
    /// One literal bound through a known (observed or query) atom of its
    /// predicate; the rest uniform.
    #[default]
    Anchored,
}

/// Draws one grounding of `clause`.
pub fn sample_grounding<R: Rng + ?Sized>(
    clause: &Clause,
    kb: &KnowledgeBase,
    strategy: GroundingStrategy,
    rng: &mut R,
) -> Result<GroundClause, LogicError> {
    let m = kb.num_entities();
    if m == 0 {
        return Err(LogicError::NoEntities);
    }
    let mut binding: Vec<Option<EntityId>> = vec![None; clause.variables.len()];
    if strategy == GroundingStrategy::Anchored {
        anchor_binding(clause, kb, rng, &mut binding);
    }
    let ids: Vec<EntityId> = binding
        .into_iter()
        .map(|b| b.unwrap_or_else(|| EntityId(rng.gen_range(0..m) as u32)))
        .collect();
    clause.ground_with(&ids)
}

fn anchor_binding<R: Rng + ?Sized>(clause: &Clause, kb: &KnowledgeBase, rng: &mut R, binding: &mut [Option<EntityId>]) {
    let n = clause.literals.len();
    let mut li = rng.gen_range(0..n);
    if kb.anchor_atoms(clause.literals[li].predicate).is_empty() {
        let candidates: Vec<usize> = (0..n)
            .filter(|&i| !kb.anchor_atoms(clause.literals[i].predicate).is_empty())
            .collect();
        if candidates.is_empty() {
            return;
        }
        li = candidates[rng.gen_range(0..candidates.len())];
    }
    let lit = &clause.literals[li];
    let anchors = kb.anchor_atoms(lit.predicate);
    let pick = anchors[rng.gen_range(0..anchors.len())];
    let chosen = if compatible(lit, &pick) {
        Some(pick)
    } else {
        let ok: Vec<&GroundAtom> = anchors.iter().filter(|a| compatible(lit, a)).collect();
        if ok.is_empty() {
            None
        } else {
            Some(*ok[rng.gen_range(0..ok.len())])
        }
    };
    if let Some(atom) = chosen {
        for (t, &e) in lit.args.iter().zip(atom.args()) {
            if let Term::Var(v) = *t {
                binding[v] = Some(e);
            }
        }
    }
}

// constants must match and repeated variables must bind the same entity
fn compatible(lit: &Literal, atom: &GroundAtom) -> bool {
    let args = atom.args();
    lit.args.iter().enumerate().all(|(i, t)| match *t {
        Term::Const(c) => args[i] == c,
        Term::Var(v) => lit
            .args
            .iter()
            .enumerate()
            .all(|(j, u)| *u != Term::Var(v) || args[j] == args[i]),
    })
}

/// Number of groundings of `clause` over `kb` (M^#vars).
pub fn grounding_count(clause: &Clause, kb: &KnowledgeBase) -> u128 {
    (kb.num_entities() as u128).saturating_pow(clause.variables.len() as u32)
}

/// All groundings in lexicographic binding order (first variable slowest).
pub fn enumerate_groundings<'a>(
    clause: &'a Clause,
    kb: &KnowledgeBase,
    cap: u128,
) -> Result<impl Iterator<Item = GroundClause> + 'a, LogicError> {
    let count = grounding_count(clause, kb);
    if count > cap {
        return Err(LogicError::TooManyGroundings { count, cap });
    }
    let m = kb.num_entities() as u128;
    let vars = clause.variables.len();
    Ok((0..count).map(move |mut code| {
        let mut ids = vec![EntityId(0); vars];
        for slot in ids.iter_mut().rev() {
            *slot = EntityId((code % m) as u32);
            code /= m;
        }
        clause.ground_with(&ids).expect("binding length matches")
    }))
}

// ---------------------------------------------------------------- parsing

/// Separator tokens with their positions.
type Separators = Vec<(Tok, usize)>;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Quoted(String),
    LParen,
    RParen,
    Comma,
    Not,
    And,
    Or,
    Implies,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    column: usize,
}

fn lex(text: &str, line: usize) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |column: usize, message: String| ParseError { line, column, message };
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '!' | '¬' => Some(Tok::Not),
            '&' | '∧' => Some(Tok::And),
            '|' | '∨' => Some(Tok::Or),
            '⇒' => Some(Tok::Implies),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Spanned { tok, column });
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else if c == '=' {
            if chars.get(i + 1) == Some(&'>') {
                out.push(Spanned {
                    tok: Tok::Implies,
                    column,
                });
                i += 2;
            } else {
                return Err(err(column, "expected `=>`".into()));
            }
        } else if c == '"' {
            let start = i + 1;
            let mut j = start;
            while j < chars.len() && chars[j] != '"' {
                j += 1;
            }
            if j >= chars.len() {
                return Err(err(column, "unterminated quoted constant".into()));
            }
            out.push(Spanned {
                tok: Tok::Quoted(chars[start..j].iter().collect()),
                column,
            });
            i = j + 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Spanned {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                column,
            });
        } else {
            return Err(err(column, format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    line: usize,
    end_column: usize,
    kb: &'a KnowledgeBase,
    variables: Vec<String>,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> ParseError {
        let column = self.toks.get(self.pos).map(|t| t.column).unwrap_or(self.end_column);
        ParseError {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        let mut negated = false;
        while self.peek() == Some(&Tok::Not) {
            negated = !negated;
            self.pos += 1;
        }
        let name = match self.peek() {
            Some(Tok::Ident(n)) => n.clone(),
            _ => return Err(self.error("expected predicate name")),
        };
        let name_pos = self.pos;
        let predicate = self
            .kb
            .predicate(&name)
            .ok_or_else(|| self.error(format!("unknown predicate `{name}`")))?;
        self.pos += 1;
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        loop {
            let term = match self.peek() {
                Some(Tok::Ident(id)) if id.starts_with(|c: char| c.is_ascii_uppercase()) => {
                    let v = match self.variables.iter().position(|x| x == id) {
                        Some(v) => v,
                        None => {
                            self.variables.push(id.clone());
                            self.variables.len() - 1
                        }
                    };
                    Term::Var(v)
                }
                Some(Tok::Ident(id)) | Some(Tok::Quoted(id)) => {
                    let c = self
                        .kb
                        .entity(id)
                        .ok_or_else(|| self.error(format!("unknown constant `{id}`")))?;
                    Term::Const(c)
                }
                _ => return Err(self.error("expected variable or constant")),
            };
            args.push(term);
            self.pos += 1;
            match self.peek() {
                Some(Tok::Comma) => self.pos += 1,
                Some(Tok::RParen) => {
                    self.pos += 1;
                    break;
                }
                _ => return Err(self.error("expected `,` or `)`")),
            }
        }
        let arity = self.kb.schema(predicate).arity;
        if arity != args.len() {
            let mut e = self.error(format!(
                "predicate `{name}` takes {arity} argument(s), got {}",
                args.len()
            ));
            e.column = self.toks[name_pos].column;
            return Err(e);
        }
        Ok(Literal {
            predicate,
            negated,
            args,
        })
    }

    /// Literals joined by one kind of separator; returns the separators seen.
    fn sequence(&mut self) -> Result<(Vec<Literal>, Separators), ParseError> {
        let mut lits = vec![self.literal()?];
        let mut seps = Vec::new();
        while let Some(t @ (Tok::And | Tok::Or)) = self.peek().cloned() {
            seps.push((t, self.pos));
            self.pos += 1;
            lits.push(self.literal()?);
        }
        Ok((lits, seps))
    }

    fn rule(&mut self) -> Result<Vec<Literal>, ParseError> {
        let (body, body_seps) = self.sequence()?;
        if self.peek() == Some(&Tok::Implies) {
            if let Some((_, p)) = body_seps.iter().find(|(t, _)| *t == Tok::Or) {
                self.pos = *p;
                return Err(self.error("`|` is not allowed left of `=>`"));
            }
            self.pos += 1;
            let (head, head_seps) = self.sequence()?;
            if let Some((_, p)) = head_seps.iter().find(|(t, _)| *t == Tok::And) {
                self.pos = *p;
                return Err(self.error("`&` is only allowed left of `=>`"));
            }
            let mut lits: Vec<Literal> = body
                .into_iter()
                .map(|mut l| {
                    l.negated = !l.negated;
                    l
                })
                .collect();
            lits.extend(head);
            self.finish()?;
            Ok(lits)
        } else {
            if let Some((_, p)) = body_seps.iter().find(|(t, _)| *t == Tok::And) {
                self.pos = *p;
                return Err(self.error("`&` is only allowed left of `=>`"));
            }
            self.finish()?;
            Ok(body)
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.pos < self.toks.len() {
            Err(self.error("unexpected trailing input"))
        } else {
            Ok(())
        }
    }
}

fn parse_clause_at(text: &str, kb: &KnowledgeBase, line: usize) -> Result<Clause, ParseError> {
    let toks = lex(text, line)?;
    let mut p = Parser {
        toks,
        pos: 0,
        line,
        end_column: text.chars().count() + 1,
        kb,
        variables: Vec::new(),
    };
    if p.toks.is_empty() {
        return Err(p.error("empty rule"));
    }
    let literals = p.rule()?;
    if p.variables.is_empty() {
        return Err(ParseError {
            line,
            column: 1,
            message: "clause has no variables".into(),
        });
    }
    Ok(Clause {
        literals,
        variables: p.variables,
        weight_slot: 0,
    })
}

/// Parses one rule into a clause. Predicates must already be registered.
pub fn parse_clause(text: &str, kb: &KnowledgeBase) -> Result<Clause, ParseError> {
    parse_clause_at(text, kb, 1)
}

/// Parses a rules file: one `weight<TAB>rule` per line, `#` comments.
pub fn parse_rules(text: &str, kb: &KnowledgeBase) -> Result<Vec<(f64, Clause)>, ParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (w, rule) = raw.split_once('\t').ok_or_else(|| ParseError {
            line,
            column: 1,
            message: "expected `weight<TAB>rule`".into(),
        })?;
        let weight: f64 = w.trim().parse().map_err(|_| ParseError {
            line,
            column: 1,
            message: format!("invalid weight `{}`", w.trim()),
        })?;
        if !weight.is_finite() {
            return Err(ParseError {
                line,
                column: 1,
                message: "weight must be finite".into(),
            });
        }
        let offset = w.chars().count() + 1;
        let clause = parse_clause_at(rule, kb, line).map_err(|mut e| {
            e.column += offset;
            e
        })?;
        out.push((weight, clause));
    }
    Ok(out)
}

/// Predicate names and arities used in rule text, in order of first use.
/// Used to register schemas for predicates that have no facts.
pub fn scan_predicates(text: &str) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for raw in text.lines() {
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let rule = t.split_once('\t').map(|(_, r)| r).unwrap_or(t);
        let Ok(toks) = lex(rule, 0) else { continue };
        let mut i = 0;
        while i + 1 < toks.len() {
            if let (Tok::Ident(name), Tok::LParen) = (&toks[i].tok, &toks[i + 1].tok) {
                let mut j = i + 2;
                let mut arity = 1;
                while j < toks.len() && toks[j].tok != Tok::RParen {
                    if toks[j].tok == Tok::Comma {
                        arity += 1;
                    }
                    j += 1;
                }
                if !out.iter().any(|(n, _)| n == name) {
                    out.push((name.clone(), arity));
                }
                i = j;
            }
            i += 1;
        }
    }
    out
}
