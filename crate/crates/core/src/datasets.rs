//! Synthetic kinship generation and the on-disk dataset layout.
//!
//! A dataset directory holds:
//!
//! - `facts.txt`: `value<TAB>Atom` per line, the observed facts
//! - `train.txt`, `valid.txt`, `test.txt`: `Atom` or `value<TAB>Atom`;
//!   labeled train atoms are observed, valid and test atoms are queries
//! - `rules.txt`: `weight<TAB>rule` per line
//! - optionally `entities.txt` and `predicates.txt` (`Name<TAB>arity`),
//!   which fix id order, and `meta.json` with summary counts
//!
//! `#` starts a comment line in every text file.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{split_atom_text, EntityId, GroundAtom, KbError, KnowledgeBase, PredicateId, Split, WorldMode};
use crate::mln::MlnModel;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Rule {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Knobs of the kinship generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinshipSpec {
    pub n_entities: usize,
    pub seed: u64,
    /// Sibling groups have between `subgroup_min` and `subgroup_max` members.
    pub subgroup_min: usize,
    pub subgroup_max: usize,
    /// Fraction of the possible first-generation couples that are formed.
    pub couple_fraction: f64,
}

impl Default for KinshipSpec {
    fn default() -> Self {
        KinshipSpec {
            n_entities: 62,
            seed: 0,
            subgroup_min: 1,
            subgroup_max: 2,
            couple_fraction: 0.5,
        }
    }
}

impl KinshipSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_entities < 4 {
            return Err(DatasetError::Invalid("kinship needs at least 4 entities".into()));
        }
        if self.subgroup_min == 0 || self.subgroup_min > self.subgroup_max {
            return Err(DatasetError::Invalid("need 1 <= subgroup_min <= subgroup_max".into()));
        }
        if !(0.0..=1.0).contains(&self.couple_fraction) {
            return Err(DatasetError::Invalid("couple_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// The kinship relations, in schema order. Gender predicates come last.
pub const KINSHIP_PREDICATES: [(&str, usize); 15] = [
    ("Father", 2),
    ("Mother", 2),
    ("Son", 2),
    ("Daughter", 2),
    ("Husband", 2),
    ("Wife", 2),
    ("Brother", 2),
    ("Sister", 2),
    ("BrotherInLaw", 2),
    ("SisterInLaw", 2),
    ("Uncle", 2),
    ("Aunt", 2),
    ("Cousin", 2),
    ("Male", 1),
    ("Female", 1),
];

/// Rules shipped with generated kinship datasets. All hold in every
/// generated family.
pub const KINSHIP_RULES: &str = "\
# kinship rules, weight<TAB>rule
1\tFather(X,Z) & Mother(Y,Z) => Husband(X,Y)
1\tFather(X,Z) & Husband(X,Y) => Mother(Y,Z)
1\tHusband(X,Y) => Wife(Y,X)
1\tSon(Y,X) => Father(X,Y) | Mother(X,Y)
1\tDaughter(Y,X) => Father(X,Y) | Mother(X,Y)
1\tWife(X,Y) => Husband(Y,X)
1\tFather(X,Y) => Male(X)
1\tMother(X,Y) => Female(X)
1\tHusband(X,Y) => Male(X)
1\tWife(X,Y) => Female(X)
1\tSon(X,Y) => Male(X)
1\tDaughter(X,Y) => Female(X)
1\tBrother(X,Y) => Male(X)
1\tSister(X,Y) => Female(X)
1\tBrotherInLaw(X,Y) => Male(X)
1\tSisterInLaw(X,Y) => Female(X)
1\tUncle(X,Y) => Male(X)
1\tAunt(X,Y) => Female(X)
1\tFather(X,Y) & Male(Y) => Son(Y,X)
1\tMother(X,Y) & Female(Y) => Daughter(Y,X)
1\tMale(X) => !Female(X)
1\tMale(X) | Female(X)
";

/// A generated family forest.
#[derive(Debug, Clone, PartialEq)]
pub struct KinshipData {
    /// Facts observed, gender atoms as labeled test queries.
    pub kb: KnowledgeBase,
    pub model: MlnModel,
    /// Whether each entity is male, indexed by entity id.
    pub male: Vec<bool>,
    /// Every true relation, gender included.
    pub complete: Vec<GroundAtom>,
}

/// Builds a two-generation family forest: each generation is cut into
/// sibling groups, first-generation people from different groups are
/// paired into couples, and each couple receives one second-generation group
/// as children. Every relation of the forest is a fact except gender, whose
/// atoms become the labeled test queries.
#[allow(clippy::needless_range_loop)]
pub fn generate_kinship(spec: &KinshipSpec) -> Result<KinshipData, DatasetError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_entities;
    let mut kb = KnowledgeBase::new();
    for i in 0..n {
        kb.add_entity(&format!("person{i}")).expect("fresh names");
    }
    for (name, arity) in KINSHIP_PREDICATES {
        kb.add_predicate(name, arity).expect("fresh names");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (first, second) = order.split_at(n / 2);
    // each generation is half men, half women (odd sizes decided by a coin)
    let mut male = vec![false; n];
    for gen in [first, second] {
        let mut men = gen.len() / 2;
        if gen.len() % 2 == 1 && rng.gen_bool(0.5) {
            men += 1;
        }
        let mut people = gen.to_vec();
        people.shuffle(&mut rng);
        for &p in &people[..men] {
            male[p] = true;
        }
    }

    let cut = |people: &[usize], rng: &mut ChaCha8Rng| {
        let mut groups = Vec::new();
        let mut rest = people;
        while !rest.is_empty() {
            let s = rng.gen_range(spec.subgroup_min..=spec.subgroup_max).min(rest.len());
            groups.push(rest[..s].to_vec());
            rest = &rest[s..];
        }
        groups
    };
    let mut gen1 = cut(first, &mut rng);
    let mut gen2 = cut(second, &mut rng);
    gen1.shuffle(&mut rng);
    gen2.shuffle(&mut rng);

    let mut group_of = vec![usize::MAX; n];
    let mut siblings: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (gi, g) in gen1.iter().chain(gen2.iter()).enumerate() {
        for &a in g {
            group_of[a] = gi;
            siblings[a] = g.iter().copied().filter(|&b| b != a).collect();
        }
    }

    // pair men and women from different first-generation groups
    let mut men: Vec<usize> = first.iter().copied().filter(|&p| male[p]).collect();
    let mut women: Vec<usize> = first.iter().copied().filter(|&p| !male[p]).collect();
    men.shuffle(&mut rng);
    women.shuffle(&mut rng);
    let mut taken = vec![false; women.len()];
    let mut couples: Vec<(usize, usize)> = Vec::new();
    for &h in &men {
        if let Some(j) = (0..women.len()).find(|&j| !taken[j] && group_of[women[j]] != group_of[h]) {
            taken[j] = true;
            couples.push((h, women[j]));
        }
    }
    let keep = (couples.len() as f64 * spec.couple_fraction).round() as usize;
    couples.truncate(keep);

    let mut spouse = vec![None; n];
    let mut parents: Vec<Option<(usize, usize)>> = vec![None; n];
    for (i, &(h, w)) in couples.iter().enumerate() {
        spouse[h] = Some(w);
        spouse[w] = Some(h);
        if let Some(kids) = gen2.get(i) {
            for &c in kids {
                parents[c] = Some((h, w));
            }
        }
    }

    let mut complete: Vec<GroundAtom> = Vec::new();
    let schema: Vec<(&str, PredicateId)> = KINSHIP_PREDICATES
        .iter()
        .map(|(name, _)| (*name, kb.predicate(name).expect("kinship schema")))
        .collect();
    let pid = |name: &str| schema.iter().find(|(n, _)| *n == name).expect("kinship schema").1;
    let e = |i: usize| EntityId(i as u32);
    let mut rel = |name: &str, a: usize, b: usize| {
        complete.push(GroundAtom::new(pid(name), &[e(a), e(b)]));
    };
    for c in 0..n {
        if let Some((f, m)) = parents[c] {
            rel("Father", f, c);
            rel("Mother", m, c);
            let child = if male[c] { "Son" } else { "Daughter" };
            rel(child, c, f);
            rel(child, c, m);
        }
    }
    for &(h, w) in &couples {
        rel("Husband", h, w);
        rel("Wife", w, h);
    }
    for a in 0..n {
        for &b in &siblings[a] {
            rel(if male[a] { "Brother" } else { "Sister" }, a, b);
        }
    }
    // a is a sibling of b's spouse, or the spouse of b's sibling
    for a in 0..n {
        let mut inlaw: Vec<usize> = Vec::new();
        for b in 0..n {
            if a == b {
                continue;
            }
            let via_spouse = spouse[b].is_some_and(|s| siblings[s].contains(&a));
            let via_sibling = siblings[b].iter().any(|&s| spouse[s] == Some(a));
            if via_spouse || via_sibling {
                inlaw.push(b);
            }
        }
        for b in inlaw {
            rel(if male[a] { "BrotherInLaw" } else { "SisterInLaw" }, a, b);
        }
    }
    // a is a sibling of c's parent, or the spouse of such a sibling
    for c in 0..n {
        let Some((f, m)) = parents[c] else { continue };
        let mut elders: Vec<usize> = Vec::new();
        for p in [f, m] {
            for &s in &siblings[p] {
                elders.push(s);
                if let Some(t) = spouse[s] {
                    elders.push(t);
                }
            }
        }
        elders.sort_unstable();
        elders.dedup();
        for a in elders {
            if a != f && a != m {
                rel(if male[a] { "Uncle" } else { "Aunt" }, a, c);
            }
        }
    }
    // children of siblings
    for a in 0..n {
        let Some((fa, ma)) = parents[a] else { continue };
        for b in 0..n {
            let Some((fb, mb)) = parents[b] else { continue };
            if a != b
                && (fa, ma) != (fb, mb)
                && [fa, ma]
                    .iter()
                    .any(|&x| [fb, mb].iter().any(|&y| siblings[x].contains(&y)))
            {
                rel("Cousin", a, b);
            }
        }
    }
    for atom in &complete {
        kb.assert_fact(*atom, true).expect("facts are consistent");
    }
    let (male_p, female_p) = (pid("Male"), pid("Female"));
    for i in 0..n {
        for (p, label) in [(male_p, male[i]), (female_p, !male[i])] {
            let atom = GroundAtom::new(p, &[e(i)]);
            complete.push(atom);
            kb.add_split_atom(atom, Split::Test, Some(label)).expect("fresh query");
        }
    }
    complete.retain(|a| {
        !(a.predicate() == male_p && !male[a.args()[0].index()]
            || a.predicate() == female_p && male[a.args()[0].index()])
    });
    let model = MlnModel::from_rules(KINSHIP_RULES, &kb).expect("shipped rules parse");
    Ok(KinshipData {
        kb,
        model,
        male,
        complete,
    })
}

/// Summary counts written as `meta.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub entities: usize,
    pub relations: usize,
    pub facts: usize,
    pub queries: usize,
    pub rules: usize,
}

pub fn dataset_meta(kb: &KnowledgeBase, model: &MlnModel) -> DatasetMeta {
    let train_facts = kb
        .split_entries()
        .filter(|(_, e)| e.split == Split::Train && e.label.is_some())
        .count();
    DatasetMeta {
        entities: kb.num_entities(),
        relations: kb.num_predicates(),
        facts: kb.num_observed() - train_facts,
        queries: kb.num_queries(),
        rules: model.len(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), DatasetError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Writes `kb` and `model` in the dataset layout, creating `dir` if needed.
pub fn save_dataset(dir: &Path, kb: &KnowledgeBase, model: &MlnModel) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entities = String::new();
    for c in kb.entities() {
        entities.push_str(kb.entity_name(c));
        entities.push('\n');
    }
    write_file(&dir.join("entities.txt"), &entities)?;
    let mut preds = String::new();
    for p in kb.predicates() {
        preds.push_str(&format!("{}\t{}\n", p.name, p.arity));
    }
    write_file(&dir.join("predicates.txt"), &preds)?;

    let mut facts = String::new();
    for (atom, v) in kb.observed() {
        if kb.split_entry(&atom).is_some() {
            continue;
        }
        facts.push_str(&format!("{}\t{}\n", v as u8, kb.display_atom(&atom)));
    }
    write_file(&dir.join("facts.txt"), &facts)?;
    for split in [Split::Train, Split::Valid, Split::Test] {
        let mut text = String::new();
        for (atom, entry) in kb.split_entries() {
            if entry.split != split {
                continue;
            }
            match entry.label {
                Some(v) => text.push_str(&format!("{}\t{}\n", v as u8, kb.display_atom(&atom))),
                None => text.push_str(&format!("{}\n", kb.display_atom(&atom))),
            }
        }
        write_file(&dir.join(split.file_name()), &text)?;
    }
    // queries outside the splits go to test.txt without a label
    let loose: Vec<GroundAtom> = kb.queries().filter(|q| kb.split_entry(q).is_none()).collect();
    if !loose.is_empty() {
        let path = dir.join(Split::Test.file_name());
        let mut text = fs::read_to_string(&path).map_err(io_err(&path))?;
        for q in loose {
            text.push_str(&kb.display_atom(&q));
            text.push('\n');
        }
        write_file(&path, &text)?;
    }
    write_file(&dir.join("rules.txt"), &model.to_rules_text(kb))?;
    let meta = serde_json::to_string_pretty(&dataset_meta(kb, model)).expect("plain struct");
    write_file(&dir.join("meta.json"), &(meta + "\n"))
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn read_optional(path: &Path) -> Result<Option<String>, DatasetError> {
    match fs::read_to_string(path) {
        Ok(t) => Ok(Some(t)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

/// Splits `value<TAB>Atom` or `Atom` into its parts.
fn split_value(line: &str) -> Result<(Option<bool>, &str), String> {
    match line.split_once('\t') {
        Some((v, atom)) => match v.trim() {
            "1" => Ok((Some(true), atom.trim())),
            "0" => Ok((Some(false), atom.trim())),
            other => Err(format!("truth value must be 0 or 1, got {other:?}")),
        },
        None => Ok((None, line)),
    }
}

/// Resolves atom text, registering unknown entities and predicates unless
/// `entities.txt` / `predicates.txt` fixed them.
fn resolve_atom(
    kb: &mut KnowledgeBase,
    text: &str,
    open_entities: bool,
    open_predicates: bool,
) -> Result<GroundAtom, KbError> {
    let (pred, args) = split_atom_text(text)?;
    let pid = match kb.predicate(&pred) {
        Some(p) => p,
        None if open_predicates => kb.add_predicate(&pred, args.len())?,
        None => return Err(KbError::UnknownPredicate(pred)),
    };
    let mut ids = Vec::with_capacity(args.len());
    for a in &args {
        let id = match kb.entity(a) {
            Some(id) => id,
            None if open_entities => kb.entity_or_insert(a),
            None => return Err(KbError::UnknownEntity(a.clone())),
        };
        ids.push(id);
    }
    kb.make_atom(pid, &ids)
}

/// Loads a dataset directory. `rules.txt` is required.
pub fn load_dataset(dir: &Path, mode: WorldMode) -> Result<(KnowledgeBase, MlnModel), DatasetError> {
    let rules_path = dir.join("rules.txt");
    let rules = match read_optional(&rules_path)? {
        Some(t) => t,
        None => {
            return Err(DatasetError::Invalid(format!(
                "{}: missing rules file",
                rules_path.display()
            )))
        }
    };
    let mut kb = KnowledgeBase::new();
    let parse_err = |path: &Path, line: usize, message: String| DatasetError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let ent_path = dir.join("entities.txt");
    let open_entities = match read_optional(&ent_path)? {
        Some(text) => {
            for (line, name) in content_lines(&text) {
                kb.add_entity(name)
                    .map_err(|e| parse_err(&ent_path, line, e.to_string()))?;
            }
            false
        }
        None => true,
    };
    let pred_path = dir.join("predicates.txt");
    let open_predicates = match read_optional(&pred_path)? {
        Some(text) => {
            for (line, l) in content_lines(&text) {
                let (name, arity) = l
                    .split_once('\t')
                    .ok_or_else(|| parse_err(&pred_path, line, "expected Name<TAB>arity".into()))?;
                let arity: usize = arity
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(&pred_path, line, format!("bad arity {arity:?}")))?;
                kb.add_predicate(name.trim(), arity)
                    .map_err(|e| parse_err(&pred_path, line, e.to_string()))?;
            }
            false
        }
        None => true,
    };
    if open_predicates {
        for (name, arity) in crate::logic::scan_predicates(&rules) {
            match kb.predicate(&name) {
                Some(p) if kb.schema(p).arity != arity => {
                    return Err(DatasetError::Invalid(format!(
                        "{}: predicate {name} used with arities {} and {arity}",
                        rules_path.display(),
                        kb.schema(p).arity
                    )))
                }
                Some(_) => {}
                None => {
                    kb.add_predicate(&name, arity)
                        .map_err(|e| DatasetError::Invalid(format!("{}: {e}", rules_path.display())))?;
                }
            }
        }
    }

    let facts_path = dir.join("facts.txt");
    if let Some(text) = read_optional(&facts_path)? {
        for (line, l) in content_lines(&text) {
            let (value, atom_text) = split_value(l).map_err(|m| parse_err(&facts_path, line, m))?;
            let value = value.ok_or_else(|| parse_err(&facts_path, line, "expected value<TAB>Atom".into()))?;
            let atom = resolve_atom(&mut kb, atom_text, open_entities, open_predicates)
                .map_err(|e| parse_err(&facts_path, line, e.to_string()))?;
            kb.assert_fact(atom, value)
                .map_err(|e| parse_err(&facts_path, line, e.to_string()))?;
        }
    }
    for split in [Split::Train, Split::Valid, Split::Test] {
        let path = dir.join(split.file_name());
        let Some(text) = read_optional(&path)? else { continue };
        for (line, l) in content_lines(&text) {
            let (label, atom_text) = split_value(l).map_err(|m| parse_err(&path, line, m))?;
            let atom = resolve_atom(&mut kb, atom_text, open_entities, open_predicates)
                .map_err(|e| parse_err(&path, line, e.to_string()))?;
            // the facts file wins over split duplicates
            if kb.observed_value(&atom).is_some() && kb.split_entry(&atom).is_none() {
                continue;
            }
            kb.add_split_atom(atom, split, label)
                .map_err(|e| parse_err(&path, line, e.to_string()))?;
        }
    }
    kb.set_world_mode(mode);
    let model = MlnModel::from_rules(&rules, &kb).map_err(|e| DatasetError::Rule {
        path: rules_path.clone(),
        line: e.line,
        column: e.column,
        message: e.message,
    })?;
    Ok((kb, model))
}

/// Re-splits `kb` so that train and test atoms use disjoint relation sets:
/// relations seen in the splits are shuffled and halved, every split atom of
/// the first half goes to train and every atom of the second half to test
/// (valid atoms of test relations stay in valid). Facts are kept as they are.
pub fn make_zero_shot_split(kb: &KnowledgeBase, seed: u64) -> Result<KnowledgeBase, DatasetError> {
    let mut relations: Vec<usize> = Vec::new();
    for (atom, _) in kb.split_entries() {
        let p = atom.predicate().index();
        if !relations.contains(&p) {
            relations.push(p);
        }
    }
    if relations.len() < 2 {
        return Err(DatasetError::Invalid(format!(
            "zero-shot split needs at least 2 relations in the splits, found {}",
            relations.len()
        )));
    }
    relations.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    relations.shuffle(&mut rng);
    let train_rel = &relations[..relations.len() / 2];

    let mut out = KnowledgeBase::new();
    for c in kb.entities() {
        out.add_entity(kb.entity_name(c)).expect("names unique");
    }
    for p in kb.predicates() {
        out.add_predicate(&p.name, p.arity).expect("names unique");
    }
    out.set_world_mode(kb.world_mode());
    let invalid = |e: KbError| DatasetError::Invalid(e.to_string());
    for (atom, v) in kb.observed() {
        if kb.split_entry(&atom).is_none() {
            out.assert_fact(atom, v).map_err(invalid)?;
        }
    }
    for (atom, entry) in kb.split_entries() {
        let split = if train_rel.contains(&atom.predicate().index()) {
            Split::Train
        } else if entry.split == Split::Valid {
            Split::Valid
        } else {
            Split::Test
        };
        out.add_split_atom(atom, split, entry.label).map_err(invalid)?;
    }
    for q in kb.queries() {
        if kb.split_entry(&q).is_none() {
            out.add_query(q).map_err(invalid)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::evaluate;
    use std::collections::HashSet;

    #[test]
    fn kinship_schema_and_queries() {
        let data = generate_kinship(&KinshipSpec::default()).unwrap();
        assert_eq!(data.kb.num_predicates(), 15);
        assert_eq!(data.kb.num_queries(), 2 * 62);
        assert_eq!(data.model.len(), 22);
    }

    #[test]
    fn husbands_have_wives() {
        let data = generate_kinship(&KinshipSpec::default()).unwrap();
        let kb = &data.kb;
        let (h, w) = (kb.predicate("Husband").unwrap(), kb.predicate("Wife").unwrap());
        for (atom, _) in kb.observed() {
            if atom.predicate() == h {
                let a = atom.args();
                let wife = kb.make_atom(w, &[a[1], a[0]]).unwrap();
                assert_eq!(kb.observed_value(&wife), Some(true));
            }
        }
    }

    #[test]
    fn rules_hold_in_the_complete_world() {
        for seed in 0..5 {
            let spec = KinshipSpec {
                n_entities: 30,
                seed,
                ..KinshipSpec::default()
            };
            let data = generate_kinship(&spec).unwrap();
            let truth: HashSet<GroundAtom> = data.complete.iter().copied().collect();
            for clause in data.model.clauses() {
                for gc in crate::logic::enumerate_groundings(clause, &data.kb, 1 << 20).unwrap() {
                    assert!(evaluate(&gc, |a| Some(truth.contains(a))).unwrap());
                }
            }
        }
    }

    #[test]
    fn generator_is_seeded() {
        let a = generate_kinship(&KinshipSpec::default()).unwrap();
        let b = generate_kinship(&KinshipSpec::default()).unwrap();
        assert_eq!(a, b);
        let c = generate_kinship(&KinshipSpec {
            seed: 1,
            ..KinshipSpec::default()
        })
        .unwrap();
        assert_ne!(a.complete, c.complete);
    }

    #[test]
    fn default_size_fact_counts() {
        for seed in 0..20 {
            let spec = KinshipSpec {
                seed,
                ..KinshipSpec::default()
            };
            let n = generate_kinship(&spec).unwrap().kb.num_observed();
            assert!((120..=260).contains(&n), "seed {seed}: {n} facts");
        }
        let mean = |n_entities| {
            (0..5)
                .map(|seed| {
                    let spec = KinshipSpec {
                        n_entities,
                        seed,
                        ..KinshipSpec::default()
                    };
                    generate_kinship(&spec).unwrap().kb.num_observed()
                })
                .sum::<usize>()
        };
        let sizes = [62, 110, 160, 221, 266].map(mean);
        assert!(sizes.windows(2).all(|w| w[0] < w[1]), "{sizes:?}");
    }

    #[test]
    fn too_few_entities_rejected() {
        let spec = KinshipSpec {
            n_entities: 3,
            ..KinshipSpec::default()
        };
        assert!(generate_kinship(&spec).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let data = generate_kinship(&KinshipSpec {
            n_entities: 20,
            ..KinshipSpec::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &data.kb, &data.model).unwrap();
        let (kb, model) = load_dataset(dir.path(), WorldMode::Open).unwrap();
        assert_eq!(kb, data.kb);
        assert_eq!(model, data.model);
    }

    #[test]
    fn missing_rules_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("facts.txt"), "1\tF(a,b)\n").unwrap();
        assert!(load_dataset(dir.path(), WorldMode::Open).is_err());
    }

    #[test]
    fn toy_dataset_counts() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("rules.txt"), "1\t!S(X) | !F(X,Y) | S(Y)\n").unwrap();
        fs::write(dir.path().join("facts.txt"), "# toy\n1\tS(A)\n1\tF(A,B)\n0\tF(B,A)\n").unwrap();
        fs::write(dir.path().join("test.txt"), "S(B)\n\n").unwrap();
        let (kb, model) = load_dataset(dir.path(), WorldMode::Open).unwrap();
        assert_eq!(kb.num_observed(), 3);
        assert_eq!(kb.num_queries(), 1);
        assert_eq!(model.len(), 1);
    }

    #[test]
    fn bad_lines_report_positions() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("rules.txt"), "1\tS(X)\n").unwrap();
        fs::write(dir.path().join("facts.txt"), "1\tS(A)\n2\tS(B)\n").unwrap();
        let err = load_dataset(dir.path(), WorldMode::Open).unwrap_err().to_string();
        assert!(err.contains("facts.txt:2"), "{err}");
    }

    #[test]
    fn zero_shot_relations_are_disjoint() {
        let mut kb = KnowledgeBase::new();
        kb.add_predicate("R", 2).unwrap();
        kb.add_predicate("T", 2).unwrap();
        for e in ["A", "B", "C"] {
            kb.add_entity(e).unwrap();
        }
        for (p, a, b, s) in [
            ("R", "A", "B", Split::Train),
            ("T", "B", "C", Split::Train),
            ("R", "C", "A", Split::Test),
            ("T", "A", "C", Split::Test),
        ] {
            let atom = kb.atom(p, &[a, b]).unwrap();
            kb.add_split_atom(atom, s, Some(true)).unwrap();
        }
        let out = make_zero_shot_split(&kb, 3).unwrap();
        let rels = |s: Split| -> HashSet<usize> {
            out.split_entries()
                .filter(|(_, e)| e.split == s)
                .map(|(a, _)| a.predicate().index())
                .collect()
        };
        let (train, test) = (rels(Split::Train), rels(Split::Test));
        assert_eq!(train.len(), 1);
        assert_eq!(test.len(), 1);
        assert!(train.is_disjoint(&test));

        let mut one = KnowledgeBase::new();
        one.add_predicate("R", 2).unwrap();
        one.add_entity("A").unwrap();
        let atom = one.atom("R", &["A", "A"]).unwrap();
        one.add_split_atom(atom, Split::Train, Some(true)).unwrap();
        assert!(make_zero_shot_split(&one, 0).is_err());
    }
}
