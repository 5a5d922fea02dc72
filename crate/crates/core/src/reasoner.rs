//! Forward-chaining materialization of schema axioms.
//!
//! Seven entailment kinds are supported: inverse, symmetric, transitive,
//! sub-property, subclass, and domain/range typing of object properties.
//! Evaluation is semi-naive: each round only joins the triples derived in
//! the previous round against the graph. Inferred triples are stored with
//! [`Provenance::Inferred`]; nothing is ever retracted.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{Graph, IdTriple, Provenance, Term, TermId, RDF_TYPE};
use crate::schema::{DataRange, Schema, TOP_CLASS};

/// Hard stop for runaway evaluation. Every rule only adds triples over a
/// finite term set, so a correct implementation never gets here.
pub const ITERATION_CAP: usize = 10_000;

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error("no fixpoint after {0} iterations")]
    IterationCap(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Inverse,
    Symmetric,
    Transitive,
    Subproperty,
    Subclass,
    DomainTyping,
    RangeTyping,
}

impl RuleKind {
    pub const ALL: [RuleKind; 7] = [
        RuleKind::Inverse,
        RuleKind::Symmetric,
        RuleKind::Transitive,
        RuleKind::Subproperty,
        RuleKind::Subclass,
        RuleKind::DomainTyping,
        RuleKind::RangeTyping,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::Inverse => "inverse",
            RuleKind::Symmetric => "symmetric",
            RuleKind::Transitive => "transitive",
            RuleKind::Subproperty => "subproperty",
            RuleKind::Subclass => "subclass",
            RuleKind::DomainTyping => "domain-typing",
            RuleKind::RangeTyping => "range-typing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum EntailmentRule {
    /// Covers both directions of a mutual inverse pair.
    Inverse { property: String, inverse: String },
    Symmetric { property: String },
    Transitive { property: String },
    Subproperty { property: String, parent: String },
    Subclass { class: String, parent: String },
    DomainTyping { property: String, class: String },
    RangeTyping { property: String, class: String },
}

impl EntailmentRule {
    pub fn kind(&self) -> RuleKind {
        match self {
            EntailmentRule::Inverse { .. } => RuleKind::Inverse,
            EntailmentRule::Symmetric { .. } => RuleKind::Symmetric,
            EntailmentRule::Transitive { .. } => RuleKind::Transitive,
            EntailmentRule::Subproperty { .. } => RuleKind::Subproperty,
            EntailmentRule::Subclass { .. } => RuleKind::Subclass,
            EntailmentRule::DomainTyping { .. } => RuleKind::DomainTyping,
            EntailmentRule::RangeTyping { .. } => RuleKind::RangeTyping,
        }
    }
}

impl fmt::Display for EntailmentRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntailmentRule::Inverse { property, inverse } => write!(f, "inverse({property}, {inverse})"),
            EntailmentRule::Symmetric { property } => write!(f, "symmetric({property})"),
            EntailmentRule::Transitive { property } => write!(f, "transitive({property})"),
            EntailmentRule::Subproperty { property, parent } => {
                write!(f, "subproperty({property}, {parent})")
            }
            EntailmentRule::Subclass { class, parent } => write!(f, "subclass({class}, {parent})"),
            EntailmentRule::DomainTyping { property, class } => {
                write!(f, "domain-typing({property}, {class})")
            }
            EntailmentRule::RangeTyping { property, class } => {
                write!(f, "range-typing({property}, {class})")
            }
        }
    }
}

/// Reads the entailment rules off the schema's axioms.
pub fn derive_rules(schema: &Schema) -> Vec<EntailmentRule> {
    let mut rules = Vec::new();
    for c in schema.classes.values() {
        if let Some(parent) = &c.parent {
            rules.push(EntailmentRule::Subclass {
                class: c.name.clone(),
                parent: parent.clone(),
            });
        }
    }
    for p in schema.object_properties.values() {
        if let Some(inv) = &p.inverse {
            let mutual = schema
                .object_properties
                .get(inv)
                .is_some_and(|q| q.inverse.as_ref() == Some(&p.name));
            if mutual && p.name <= *inv {
                rules.push(EntailmentRule::Inverse {
                    property: p.name.clone(),
                    inverse: inv.clone(),
                });
            }
        }
        if p.is_symmetric() {
            rules.push(EntailmentRule::Symmetric {
                property: p.name.clone(),
            });
        }
        if p.is_transitive() {
            rules.push(EntailmentRule::Transitive {
                property: p.name.clone(),
            });
        }
        if let Some(parent) = &p.parent {
            rules.push(EntailmentRule::Subproperty {
                property: p.name.clone(),
                parent: parent.clone(),
            });
        }
        // Membership in the top class is implicit and never materialized.
        if p.domain != TOP_CLASS {
            rules.push(EntailmentRule::DomainTyping {
                property: p.name.clone(),
                class: p.domain.clone(),
            });
        }
        if p.range != TOP_CLASS {
            rules.push(EntailmentRule::RangeTyping {
                property: p.name.clone(),
                class: p.range.clone(),
            });
        }
    }
    rules.sort();
    rules
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MaterializationStats {
    pub before: usize,
    pub after: usize,
    pub added: usize,
    pub iterations: usize,
    pub by_rule: BTreeMap<&'static str, usize>,
    /// Triples whose predicate the schema does not declare.
    pub ignored: usize,
}

impl MaterializationStats {
    pub fn added_by(&self, kind: RuleKind) -> usize {
        self.by_rule.get(kind.name()).copied().unwrap_or(0)
    }
}

/// A rule bound to the term ids of one graph.
#[derive(Debug, Clone, Copy)]
enum Compiled {
    /// (s,p,o) => (o,q,s)
    Flip { to: TermId, kind: RuleKind },
    /// (s,p,o) => (s,q,o)
    Lift { to: TermId },
    /// (a,p,b),(b,p,c) => (a,p,c)
    Chain,
    /// (s,p,o) => (s,type,c)
    TypeSubject { class: TermId, kind: RuleKind },
    /// (s,p,o) => (o,type,c)
    TypeObject { class: TermId },
}

#[derive(Debug, Clone)]
pub struct Reasoner {
    rules: Vec<EntailmentRule>,
    declared: Vec<String>,
}

impl Reasoner {
    pub fn new(schema: &Schema) -> Self {
        let mut declared: Vec<String> = schema
            .object_properties
            .keys()
            .chain(schema.data_properties.keys())
            .map(|n| schema.iri(n))
            .collect();
        declared.push(RDF_TYPE.to_string());
        Self {
            rules: derive_rules(schema)
                .into_iter()
                .map(|r| qualify(r, schema))
                .collect(),
            declared,
        }
    }

    pub fn rules(&self) -> &[EntailmentRule] {
        &self.rules
    }

    /// Runs to fixpoint, treating every triple in the graph as new.
    pub fn materialize(&self, graph: &mut Graph) -> Result<MaterializationStats, ReasonerError> {
        let seeds: Vec<IdTriple> = graph.iter_ids().collect();
        self.run(graph, seeds)
    }

    /// Runs to fixpoint from `seeds` only. The rest of the graph must
    /// already be closed under the rules, e.g. after an earlier
    /// [`Reasoner::materialize`].
    pub fn materialize_from(
        &self,
        graph: &mut Graph,
        seeds: impl IntoIterator<Item = IdTriple>,
    ) -> Result<MaterializationStats, ReasonerError> {
        let seeds: Vec<IdTriple> = seeds.into_iter().filter(|t| graph.contains_ids(t)).collect();
        self.run(graph, seeds)
    }

    fn compile(&self, graph: &mut Graph) -> (TermId, HashMap<TermId, Vec<Compiled>>, HashMap<TermId, Vec<TermId>>) {
        let mut id = |name: &str| graph.intern(&Term::Entity(name.to_string()));
        let rdf_type = id(RDF_TYPE);
        let mut by_property: HashMap<TermId, Vec<Compiled>> = HashMap::new();
        let mut superclasses: HashMap<TermId, Vec<TermId>> = HashMap::new();
        for rule in &self.rules {
            match rule {
                EntailmentRule::Inverse { property, inverse } => {
                    let (p, q) = (id(property), id(inverse));
                    by_property.entry(p).or_default().push(Compiled::Flip { to: q, kind: RuleKind::Inverse });
                    if p != q {
                        by_property.entry(q).or_default().push(Compiled::Flip { to: p, kind: RuleKind::Inverse });
                    }
                }
                EntailmentRule::Symmetric { property } => {
                    let p = id(property);
                    by_property.entry(p).or_default().push(Compiled::Flip { to: p, kind: RuleKind::Symmetric });
                }
                EntailmentRule::Transitive { property } => {
                    let p = id(property);
                    by_property.entry(p).or_default().push(Compiled::Chain);
                }
                EntailmentRule::Subproperty { property, parent } => {
                    let (p, q) = (id(property), id(parent));
                    by_property.entry(p).or_default().push(Compiled::Lift { to: q });
                }
                EntailmentRule::Subclass { class, parent } => {
                    let (c, d) = (id(class), id(parent));
                    superclasses.entry(c).or_default().push(d);
                }
                EntailmentRule::DomainTyping { property, class } => {
                    let (p, c) = (id(property), id(class));
                    by_property.entry(p).or_default().push(Compiled::TypeSubject { class: c, kind: RuleKind::DomainTyping });
                }
                EntailmentRule::RangeTyping { property, class } => {
                    let (p, c) = (id(property), id(class));
                    by_property.entry(p).or_default().push(Compiled::TypeObject { class: c });
                }
            }
        }
        (rdf_type, by_property, superclasses)
    }

    fn run(&self, graph: &mut Graph, seeds: Vec<IdTriple>) -> Result<MaterializationStats, ReasonerError> {
        let before = graph.len();
        let declared: Vec<TermId> = self
            .declared
            .iter()
            .filter_map(|n| graph.lookup_entity(n))
            .collect();
        let ignored = graph
            .iter_ids()
            .filter(|[_, p, _]| !declared.contains(p))
            .count();
        let (rdf_type, by_property, superclasses) = self.compile(graph);

        let mut by_rule: BTreeMap<&'static str, usize> =
            RuleKind::ALL.iter().map(|k| (k.name(), 0)).collect();
        let mut delta = seeds;
        let mut iterations = 0;
        loop {
            iterations += 1;
            if iterations > ITERATION_CAP {
                return Err(ReasonerError::IterationCap(ITERATION_CAP));
            }
            // Keyed for a deterministic insertion order; the first rule to
            // derive a triple in a round gets the credit.
            let mut derived: BTreeMap<IdTriple, RuleKind> = BTreeMap::new();
            let mut emit = |t: IdTriple, kind: RuleKind, graph: &Graph| {
                if !graph.contains_ids(&t) {
                    derived.entry(t).or_insert(kind);
                }
            };
            for &[s, p, o] in &delta {
                if p == rdf_type {
                    if let Some(parents) = superclasses.get(&o) {
                        for &d in parents {
                            emit([s, rdf_type, d], RuleKind::Subclass, graph);
                        }
                    }
                    continue;
                }
                let Some(rules) = by_property.get(&p) else { continue };
                for rule in rules {
                    match *rule {
                        Compiled::Flip { to, kind } => {
                            if graph.term(o).is_entity() {
                                emit([o, to, s], kind, graph);
                            }
                        }
                        Compiled::Lift { to } => emit([s, to, o], RuleKind::Subproperty, graph),
                        Compiled::Chain => {
                            let forward: Vec<TermId> = graph.objects(o, p).collect();
                            for c in forward {
                                emit([s, p, c], RuleKind::Transitive, graph);
                            }
                            let backward: Vec<TermId> = graph.subjects(p, s).collect();
                            for a in backward {
                                emit([a, p, o], RuleKind::Transitive, graph);
                            }
                        }
                        Compiled::TypeSubject { class, kind } => emit([s, rdf_type, class], kind, graph),
                        Compiled::TypeObject { class } => {
                            if graph.term(o).is_entity() {
                                emit([o, rdf_type, class], RuleKind::RangeTyping, graph);
                            }
                        }
                    }
                }
            }
            let mut next = Vec::with_capacity(derived.len());
            for (t, kind) in derived {
                if graph.insert_ids(t, Provenance::Inferred) {
                    *by_rule.entry(kind.name()).or_default() += 1;
                    next.push(t);
                }
            }
            if next.is_empty() {
                break;
            }
            delta = next;
        }

        let after = graph.len();
        Ok(MaterializationStats {
            before,
            after,
            added: after - before,
            iterations,
            by_rule,
            ignored,
        })
    }
}

/// Rules carry graph identifiers, not bare schema names.
fn qualify(rule: EntailmentRule, schema: &Schema) -> EntailmentRule {
    let q = |n: String| schema.iri(&n);
    match rule {
        EntailmentRule::Inverse { property, inverse } => EntailmentRule::Inverse { property: q(property), inverse: q(inverse) },
        EntailmentRule::Symmetric { property } => EntailmentRule::Symmetric { property: q(property) },
        EntailmentRule::Transitive { property } => EntailmentRule::Transitive { property: q(property) },
        EntailmentRule::Subproperty { property, parent } => EntailmentRule::Subproperty { property: q(property), parent: q(parent) },
        EntailmentRule::Subclass { class, parent } => EntailmentRule::Subclass { class: q(class), parent: q(parent) },
        EntailmentRule::DomainTyping { property, class } => EntailmentRule::DomainTyping { property: q(property), class: q(class) },
        EntailmentRule::RangeTyping { property, class } => EntailmentRule::RangeTyping { property: q(property), class: q(class) },
    }
}

pub fn materialize(graph: &mut Graph, schema: &Schema) -> Result<MaterializationStats, ReasonerError> {
    Reasoner::new(schema).materialize(graph)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    EnumOutOfRange,
    FunctionalConflict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConsistencyViolation {
    pub kind: ViolationKind,
    pub subject: String,
    pub property: String,
    pub values: Vec<String>,
}

/// Reports enumeration and single-valuedness violations. Never modifies the
/// graph.
pub fn check_consistency(graph: &Graph, schema: &Schema) -> Vec<ConsistencyViolation> {
    let mut out = Vec::new();
    for def in schema.data_properties.values() {
        let Some(p) = graph.lookup_entity(&schema.iri(&def.name)) else { continue };
        let mut by_subject: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for [s, _, o] in graph.match_ids(None, Some(p), None) {
            let subject = graph.term(s).to_string();
            let value = graph.term(o);
            if let DataRange::OneOf(_) = &def.range {
                let ok = value
                    .as_literal()
                    .is_some_and(|l| def.range.allows(l.lexical()));
                if !ok {
                    out.push(ConsistencyViolation {
                        kind: ViolationKind::EnumOutOfRange,
                        subject: subject.clone(),
                        property: def.name.clone(),
                        values: vec![value.to_string()],
                    });
                }
            }
            by_subject.entry(subject).or_default().push(value.to_string());
        }
        if def.functional {
            for (subject, values) in by_subject {
                if values.len() > 1 {
                    out.push(ConsistencyViolation {
                        kind: ViolationKind::FunctionalConflict,
                        subject,
                        property: def.name.clone(),
                        values,
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| (&a.subject, &a.property).cmp(&(&b.subject, &b.property)));
    out
}
