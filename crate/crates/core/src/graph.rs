//! In-memory triple store.
//!
//! Terms are interned into a dictionary and triples are kept in three
//! ordered permutation indexes (SPO, POS, OSP) so that every pattern shape
//! resolves to a prefix range scan on one of them. The dictionary only ever
//! grows, which keeps [`TermId`]s stable across retractions.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::Bound;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Predicate used for class membership.
pub const RDF_TYPE: &str = "rdf:type";

/// `content_hash` of a graph with no triples (SHA-256 of the empty string).
pub const EMPTY_GRAPH_HASH: &str =
    "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid entity identifier {0:?}: must be non-empty, contain no whitespace and not start with a quote")]
    InvalidEntity(String),
    #[error("invalid {datatype} literal {lexical:?}: {reason}")]
    InvalidLiteral {
        lexical: String,
        datatype: Datatype,
        reason: String,
    },
    #[error("{position} must be an entity, got {term}")]
    NonEntityPosition { position: &'static str, term: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    String,
    Float,
    Integer,
    Date,
    Boolean,
}

impl Datatype {
    pub const ALL: [Datatype; 5] = [
        Datatype::String,
        Datatype::Float,
        Datatype::Integer,
        Datatype::Date,
        Datatype::Boolean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Datatype::String => "string",
            Datatype::Float => "float",
            Datatype::Integer => "integer",
            Datatype::Date => "date",
            Datatype::Boolean => "boolean",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == name)
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, Datatype::Float | Datatype::Integer)
    }
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A typed literal in canonical lexical form.
///
/// Two literals are equal iff their datatype and canonical lexical form are
/// equal, so `"200"^^float` and `"200.0"^^float` are the same literal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    lexical: String,
    datatype: Datatype,
}

impl Literal {
    /// Validates `lexical` against `datatype` and canonicalizes it.
    pub fn new(lexical: &str, datatype: Datatype) -> Result<Self, GraphError> {
        let invalid = |reason: &str| GraphError::InvalidLiteral {
            lexical: lexical.to_string(),
            datatype,
            reason: reason.to_string(),
        };
        let canonical = match datatype {
            Datatype::String => lexical.to_string(),
            Datatype::Float => {
                let v: f64 = lexical.trim().parse().map_err(|_| invalid("not a number"))?;
                if !v.is_finite() {
                    return Err(invalid("not finite"));
                }
                canonical_float(v)
            }
            Datatype::Integer => {
                let v: i64 = lexical.trim().parse().map_err(|_| invalid("not an integer"))?;
                v.to_string()
            }
            Datatype::Date => {
                let d = NaiveDate::parse_from_str(lexical.trim(), "%Y-%m-%d")
                    .map_err(|_| invalid("expected YYYY-MM-DD"))?;
                d.format("%Y-%m-%d").to_string()
            }
            Datatype::Boolean => match lexical.trim() {
                "true" => "true".to_string(),
                "false" => "false".to_string(),
                _ => return Err(invalid("expected true or false")),
            },
        };
        Ok(Self {
            lexical: canonical,
            datatype,
        })
    }

    pub fn string(value: impl Into<String>) -> Self {
        Self {
            lexical: value.into(),
            datatype: Datatype::String,
        }
    }

    pub fn float(value: f64) -> Result<Self, GraphError> {
        if !value.is_finite() {
            return Err(GraphError::InvalidLiteral {
                lexical: value.to_string(),
                datatype: Datatype::Float,
                reason: "not finite".into(),
            });
        }
        Ok(Self {
            lexical: canonical_float(value),
            datatype: Datatype::Float,
        })
    }

    pub fn integer(value: i64) -> Self {
        Self {
            lexical: value.to_string(),
            datatype: Datatype::Integer,
        }
    }

    pub fn boolean(value: bool) -> Self {
        Self {
            lexical: value.to_string(),
            datatype: Datatype::Boolean,
        }
    }

    pub fn date(value: NaiveDate) -> Self {
        Self {
            lexical: value.format("%Y-%m-%d").to_string(),
            datatype: Datatype::Date,
        }
    }

    pub fn lexical(&self) -> &str {
        &self.lexical
    }

    pub fn datatype(&self) -> Datatype {
        self.datatype
    }

    /// Numeric value of float and integer literals.
    pub fn as_f64(&self) -> Option<f64> {
        if self.datatype.is_numeric() {
            self.lexical.parse().ok()
        } else {
            None
        }
    }
}

fn canonical_float(v: f64) -> String {
    // -0.0 and 0.0 are the same value
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:?}")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Entity(String),
    Literal(Literal),
}

impl Term {
    pub fn entity(id: impl Into<String>) -> Result<Self, GraphError> {
        let id = id.into();
        if id.is_empty() || id.starts_with('"') || id.chars().any(char::is_whitespace) {
            return Err(GraphError::InvalidEntity(id));
        }
        Ok(Term::Entity(id))
    }

    pub fn literal(lexical: &str, datatype: Datatype) -> Result<Self, GraphError> {
        Literal::new(lexical, datatype).map(Term::Literal)
    }

    pub fn is_entity(&self) -> bool {
        matches!(self, Term::Entity(_))
    }

    pub fn as_entity(&self) -> Option<&str> {
        match self {
            Term::Entity(id) => Some(id),
            Term::Literal(_) => None,
        }
    }

    pub fn as_literal(&self) -> Option<&Literal> {
        match self {
            Term::Literal(l) => Some(l),
            Term::Entity(_) => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        self.as_literal().and_then(Literal::as_f64)
    }
}

impl From<Literal> for Term {
    fn from(l: Literal) -> Self {
        Term::Literal(l)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Entity(id) => f.write_str(id),
            Term::Literal(l) => {
                f.write_str("\"")?;
                for c in l.lexical.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        '\r' => f.write_str("\\r")?,
                        '\t' => f.write_str("\\t")?,
                        c => write!(f, "{c}")?,
                    }
                }
                write!(f, "\"^^{}", l.datatype)
            }
        }
    }
}

/// A well-formed triple: subject and predicate are always entities.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    subject: Term,
    predicate: Term,
    object: Term,
}

impl Triple {
    pub fn new(subject: Term, predicate: Term, object: Term) -> Result<Self, GraphError> {
        if !subject.is_entity() {
            return Err(GraphError::NonEntityPosition {
                position: "subject",
                term: subject.to_string(),
            });
        }
        if !predicate.is_entity() {
            return Err(GraphError::NonEntityPosition {
                position: "predicate",
                term: predicate.to_string(),
            });
        }
        Ok(Self {
            subject,
            predicate,
            object,
        })
    }

    /// Shorthand for an all-entity triple.
    pub fn entities(s: &str, p: &str, o: &str) -> Result<Self, GraphError> {
        Self::new(Term::entity(s)?, Term::entity(p)?, Term::entity(o)?)
    }

    pub fn subject(&self) -> &Term {
        &self.subject
    }

    pub fn predicate(&self) -> &Term {
        &self.predicate
    }

    pub fn object(&self) -> &Term {
        &self.object
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TermId(u32);

impl TermId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A triple in dictionary-encoded form, ordered subject, predicate, object.
pub type IdTriple = [TermId; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Asserted,
    Inferred,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    terms: Vec<Term>,
    numeric: Vec<Option<f64>>,
    ids: HashMap<Term, TermId>,
    spo: BTreeSet<IdTriple>,
    pos: BTreeSet<IdTriple>,
    osp: BTreeSet<IdTriple>,
    inferred: HashSet<IdTriple>,
    generation: u64,
}

const MIN: TermId = TermId(0);
const MAX: TermId = TermId(u32::MAX);

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.spo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spo.is_empty()
    }

    pub fn inferred_len(&self) -> usize {
        self.inferred.len()
    }

    /// Monotone mutation counter.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn intern(&mut self, term: &Term) -> TermId {
        if let Some(&id) = self.ids.get(term) {
            return id;
        }
        let id = TermId(u32::try_from(self.terms.len()).expect("term dictionary overflow"));
        self.terms.push(term.clone());
        self.numeric.push(term.as_f64());
        self.ids.insert(term.clone(), id);
        id
    }

    pub fn lookup(&self, term: &Term) -> Option<TermId> {
        self.ids.get(term).copied()
    }

    pub fn lookup_entity(&self, id: &str) -> Option<TermId> {
        self.ids.get(&Term::Entity(id.to_string())).copied()
    }

    pub fn term(&self, id: TermId) -> &Term {
        &self.terms[id.index()]
    }

    /// Cached numeric value of a float or integer literal.
    pub fn numeric(&self, id: TermId) -> Option<f64> {
        self.numeric[id.index()]
    }

    pub fn insert(&mut self, triple: &Triple) -> bool {
        self.insert_with(triple, Provenance::Asserted)
    }

    /// Inserts with explicit provenance. An asserted insert of a triple that
    /// is present as inferred upgrades its provenance but still returns
    /// `false`.
    pub fn insert_with(&mut self, triple: &Triple, provenance: Provenance) -> bool {
        let key = [
            self.intern(&triple.subject),
            self.intern(&triple.predicate),
            self.intern(&triple.object),
        ];
        self.insert_ids(key, provenance)
    }

    /// Inserts a dictionary-encoded triple. Ids must come from this graph and
    /// the subject and predicate must be entities.
    pub fn insert_ids(&mut self, key: IdTriple, provenance: Provenance) -> bool {
        debug_assert!(self.term(key[0]).is_entity() && self.term(key[1]).is_entity());
        if !self.spo.insert(key) {
            if provenance == Provenance::Asserted {
                self.inferred.remove(&key);
            }
            return false;
        }
        let [s, p, o] = key;
        self.pos.insert([p, o, s]);
        self.osp.insert([o, s, p]);
        if provenance == Provenance::Inferred {
            self.inferred.insert(key);
        }
        self.generation += 1;
        true
    }

    pub fn retract(&mut self, triple: &Triple) -> bool {
        match self.key_of(triple) {
            Some(key) => self.retract_ids(key),
            None => false,
        }
    }

    pub fn retract_ids(&mut self, key: IdTriple) -> bool {
        if !self.spo.remove(&key) {
            return false;
        }
        let [s, p, o] = key;
        self.pos.remove(&[p, o, s]);
        self.osp.remove(&[o, s, p]);
        self.inferred.remove(&key);
        self.generation += 1;
        true
    }

    /// Drops every inferred triple, leaving the asserted core.
    pub fn clear_inferred(&mut self) -> usize {
        let inferred: Vec<IdTriple> = self.inferred.iter().copied().collect();
        for key in &inferred {
            self.retract_ids(*key);
        }
        inferred.len()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.key_of(triple).is_some_and(|k| self.spo.contains(&k))
    }

    pub fn contains_ids(&self, key: &IdTriple) -> bool {
        self.spo.contains(key)
    }

    pub fn provenance(&self, triple: &Triple) -> Option<Provenance> {
        let key = self.key_of(triple)?;
        if !self.spo.contains(&key) {
            None
        } else if self.inferred.contains(&key) {
            Some(Provenance::Inferred)
        } else {
            Some(Provenance::Asserted)
        }
    }

    fn key_of(&self, triple: &Triple) -> Option<IdTriple> {
        Some([
            self.lookup(&triple.subject)?,
            self.lookup(&triple.predicate)?,
            self.lookup(&triple.object)?,
        ])
    }

    pub fn decode(&self, key: IdTriple) -> Triple {
        Triple {
            subject: self.term(key[0]).clone(),
            predicate: self.term(key[1]).clone(),
            object: self.term(key[2]).clone(),
        }
    }

    pub fn iter_ids(&self) -> impl Iterator<Item = IdTriple> + '_ {
        self.spo.iter().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = Triple> + '_ {
        self.iter_ids().map(|k| self.decode(k))
    }

    /// Triples matching a pattern; `None` components are wildcards.
    pub fn matches(&self, s: Option<&Term>, p: Option<&Term>, o: Option<&Term>) -> Vec<Triple> {
        let resolve = |t: Option<&Term>| match t {
            None => Some(None),
            Some(t) => self.lookup(t).map(Some),
        };
        let (Some(s), Some(p), Some(o)) = (resolve(s), resolve(p), resolve(o)) else {
            return Vec::new();
        };
        self.match_ids(s, p, o).map(|k| self.decode(k)).collect()
    }

    /// Id-level pattern match. Results are in SPO order within the index
    /// range that serves the pattern.
    pub fn match_ids(
        &self,
        s: Option<TermId>,
        p: Option<TermId>,
        o: Option<TermId>,
    ) -> Box<dyn Iterator<Item = IdTriple> + '_> {
        match (s, p, o) {
            (Some(s), Some(p), Some(o)) => {
                let key = [s, p, o];
                Box::new(self.spo.contains(&key).then_some(key).into_iter())
            }
            (Some(s), Some(p), None) => Box::new(prefix(&self.spo, [s, p, MIN], [s, p, MAX])),
            (Some(s), None, None) => Box::new(prefix(&self.spo, [s, MIN, MIN], [s, MAX, MAX])),
            (None, Some(p), Some(o)) => Box::new(
                prefix(&self.pos, [p, o, MIN], [p, o, MAX]).map(|[p, o, s]| [s, p, o]),
            ),
            (None, Some(p), None) => Box::new(
                prefix(&self.pos, [p, MIN, MIN], [p, MAX, MAX]).map(|[p, o, s]| [s, p, o]),
            ),
            (Some(s), None, Some(o)) => Box::new(
                prefix(&self.osp, [o, s, MIN], [o, s, MAX]).map(|[o, s, p]| [s, p, o]),
            ),
            (None, None, Some(o)) => Box::new(
                prefix(&self.osp, [o, MIN, MIN], [o, MAX, MAX]).map(|[o, s, p]| [s, p, o]),
            ),
            (None, None, None) => Box::new(self.spo.iter().copied()),
        }
    }

    pub fn count_ids(&self, s: Option<TermId>, p: Option<TermId>, o: Option<TermId>) -> usize {
        match (s, p, o) {
            (None, None, None) => self.len(),
            _ => self.match_ids(s, p, o).count(),
        }
    }

    /// Objects of `(subject, predicate, ?)`.
    pub fn objects(&self, subject: TermId, predicate: TermId) -> impl Iterator<Item = TermId> + '_ {
        prefix(
            &self.spo,
            [subject, predicate, MIN],
            [subject, predicate, MAX],
        )
        .map(|[_, _, o]| o)
    }

    /// Subjects of `(?, predicate, object)`.
    pub fn subjects(&self, predicate: TermId, object: TermId) -> impl Iterator<Item = TermId> + '_ {
        prefix(&self.pos, [predicate, object, MIN], [predicate, object, MAX]).map(|[_, _, s]| s)
    }

    /// All triples rendered one per line, sorted lexicographically.
    pub fn canonical_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self.iter().map(|t| t.to_string()).collect();
        lines.sort_unstable();
        lines
    }

    pub fn to_canonical_text(&self) -> String {
        let mut out = String::new();
        for line in self.canonical_lines() {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// SHA-256 over the sorted canonical serialization, hex encoded. Depends
    /// only on the triple set.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_canonical_text().as_bytes());
        hex(&hasher.finalize())
    }

    /// Parses canonical text (one triple per line; blank lines and `#`
    /// comments allowed). All parsed triples are asserted.
    pub fn parse_canonical(text: &str) -> Result<Self, GraphError> {
        let mut graph = Graph::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let triple = parse_line(line).map_err(|message| GraphError::Parse {
                line: idx + 1,
                message,
            })?;
            graph.insert(&triple);
        }
        Ok(graph)
    }
}

fn prefix(
    index: &BTreeSet<IdTriple>,
    lo: IdTriple,
    hi: IdTriple,
) -> impl Iterator<Item = IdTriple> + '_ {
    index
        .range((Bound::Included(lo), Bound::Included(hi)))
        .copied()
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn parse_line(line: &str) -> Result<Triple, String> {
    let (subject, rest) = line.split_once(' ').ok_or("expected three terms")?;
    let (predicate, object) = rest.split_once(' ').ok_or("expected three terms")?;
    let object = parse_object(object.trim())?;
    Triple::new(
        Term::entity(subject).map_err(|e| e.to_string())?,
        Term::entity(predicate).map_err(|e| e.to_string())?,
        object,
    )
    .map_err(|e| e.to_string())
}

fn parse_object(text: &str) -> Result<Term, String> {
    let Some(body) = text.strip_prefix('"') else {
        return Term::entity(text).map_err(|e| e.to_string());
    };
    let mut lexical = String::new();
    let mut chars = body.char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some((_, 'n')) => lexical.push('\n'),
                Some((_, 'r')) => lexical.push('\r'),
                Some((_, 't')) => lexical.push('\t'),
                Some((_, '"')) => lexical.push('"'),
                Some((_, '\\')) => lexical.push('\\'),
                other => return Err(format!("bad escape {other:?}")),
            },
            '"' => {
                let rest = &body[i + 1..];
                let dt = rest.strip_prefix("^^").ok_or("expected ^^datatype after literal")?;
                let datatype =
                    Datatype::from_name(dt).ok_or_else(|| format!("unknown datatype {dt:?}"))?;
                return Term::literal(&lexical, datatype).map_err(|e| e.to_string());
            }
            c => lexical.push(c),
        }
    }
    Err("unterminated literal".into())
}
