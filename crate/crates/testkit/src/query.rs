//! Random rules over a small fixed vocabulary, random graphs, and an
//! exhaustive-enumeration evaluator.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::term::{all, compare, reldiff, render, OTerm, OTriple, Value};

pub const SCHEMA_JSON: &str = r#"{
  "namespace": "ex:",
  "classes": [
    {"name": "A", "comment": "generated"},
    {"name": "B", "parent": "A", "comment": "generated"}
  ],
  "dataProperties": [
    {"name": "f", "domain": "A", "range": "float"},
    {"name": "n", "domain": "A", "range": "integer"},
    {"name": "t", "domain": "A", "range": "string"},
    {"name": "d", "domain": "A", "range": "date"},
    {"name": "b", "domain": "A", "range": "boolean"}
  ],
  "objectProperties": [
    {"name": "r", "domain": "A", "range": "A"},
    {"name": "s", "domain": "A", "range": "B"}
  ]
}"#;

const NS: &str = "ex:";
const CLASSES: [&str; 2] = ["A", "B"];
const OBJECT_PROPS: [&str; 2] = ["r", "s"];
const DATA_PROPS: [(&str, &str); 5] = [
    ("f", "float"),
    ("n", "integer"),
    ("t", "string"),
    ("d", "date"),
    ("b", "boolean"),
];
const FLOATS: [&str; 7] = ["0.0", "1.0", "1.02", "2.5", "100.0", "104.0", "-1.0"];
const INTEGERS: [&str; 3] = ["0", "1", "100"];
const STRINGS: [&str; 3] = ["a", "b", "2020-06-01"];
const DATES: [&str; 2] = ["2020-06-01", "2021-01-15"];
const NUMBER_CONSTS: [&str; 4] = ["0", "1", "2.5", "100"];
const STRING_CONSTS: [&str; 3] = ["a", "b", "2020-06-01"];

/// Variable type as the validator infers it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Entity,
    Lit(&'static str),
}

#[derive(Debug, Clone)]
pub enum OArg {
    Var(String),
    Num(String),
    Str(String),
}

impl OArg {
    fn render(&self) -> String {
        match self {
            OArg::Var(v) => v.clone(),
            OArg::Num(n) => n.clone(),
            OArg::Str(s) => format!("\"{s}\""),
        }
    }
}

#[derive(Debug, Clone)]
pub enum OAtom {
    Class { class: String, var: String },
    Prop { prop: String, s: String, o: String },
    Cmp { l: OArg, op: &'static str, r: OArg },
    Rel { l: String, r: String, tolerance: f64 },
}

impl OAtom {
    fn render(&self) -> String {
        match self {
            OAtom::Class { class, var } => format!("{class}({var})"),
            OAtom::Prop { prop, s, o } => format!("{prop}({s}, {o})"),
            OAtom::Cmp { l, op, r } => format!("{} {op} {}", l.render(), r.render()),
            OAtom::Rel { l, r, tolerance } => format!("reldiff({l}, {r}, {tolerance})"),
        }
    }

    fn structural_vars(&self) -> Vec<&str> {
        match self {
            OAtom::Class { var, .. } => vec![var],
            OAtom::Prop { s, o, .. } => vec![s, o],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone)]
pub struct RuleCase {
    pub name: String,
    pub head: Vec<String>,
    pub body: Vec<OAtom>,
    pub graph: Vec<OTriple>,
}

/// A result row: variable name to rendered term, plus the verdict.
pub type Row = (Vec<(String, String)>, Option<bool>);

impl RuleCase {
    pub fn generate(rng: &mut impl Rng, max_triples: usize) -> Self {
        let graph = random_graph(rng, max_triples);
        let (head, body) = random_rule(rng);
        Self {
            name: "q".into(),
            head,
            body,
            graph,
        }
    }

    pub fn rule_text(&self) -> String {
        let body: Vec<String> = self.body.iter().map(OAtom::render).collect();
        format!("{}({}) := {}", self.name, self.head.join(", "), body.join(" AND "))
    }

    pub fn graph_text(&self) -> String {
        render(self.graph.iter().cloned())
    }

    /// Variables in order of first appearance in the body.
    pub fn variables(&self) -> Vec<String> {
        let mut vars: Vec<String> = Vec::new();
        for a in &self.body {
            for v in a.structural_vars() {
                if !vars.iter().any(|x| x == v) {
                    vars.push(v.to_string());
                }
            }
        }
        vars
    }

    /// Every assignment of graph terms to the rule's variables that satisfies
    /// the structural atoms. With `filter` only rows whose tests all hold are
    /// kept and the verdict is `Some(true)`; otherwise every structural match
    /// is kept with its three-valued verdict.
    pub fn enumerate(&self, filter: bool) -> BTreeSet<Row> {
        let facts: BTreeSet<&OTriple> = self.graph.iter().collect();
        let mut domain: BTreeSet<&OTerm> = BTreeSet::new();
        let subjects: Vec<OTerm> = self.graph.iter().map(|(s, _, _)| OTerm::Iri(s.clone())).collect();
        domain.extend(subjects.iter());
        domain.extend(self.graph.iter().map(|(_, _, o)| o));
        let domain: Vec<&OTerm> = domain.into_iter().collect();
        let vars = self.variables();

        let mut out = BTreeSet::new();
        let mut assignment: BTreeMap<&str, &OTerm> = BTreeMap::new();
        self.search(&vars, 0, &domain, &facts, &mut assignment, filter, &mut out);
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn search<'a>(
        &'a self,
        vars: &'a [String],
        depth: usize,
        domain: &[&'a OTerm],
        facts: &BTreeSet<&OTriple>,
        assignment: &mut BTreeMap<&'a str, &'a OTerm>,
        filter: bool,
        out: &mut BTreeSet<Row>,
    ) {
        if depth == vars.len() {
            let verdict = all(&self
                .body
                .iter()
                .filter_map(|a| test(a, assignment))
                .collect::<Vec<_>>());
            if filter && verdict != Some(true) {
                return;
            }
            let row: Vec<(String, String)> = assignment
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
            out.insert((row, verdict));
            return;
        }
        let var = vars[depth].as_str();
        for &term in domain {
            assignment.insert(var, term);
            let consistent = self.body.iter().all(|a| {
                let sv = a.structural_vars();
                if !sv.contains(&var) || !sv.iter().all(|v| assignment.contains_key(v)) {
                    return true;
                }
                holds_structurally(a, assignment, facts)
            });
            if consistent {
                self.search(vars, depth + 1, domain, facts, assignment, filter, out);
            }
            assignment.remove(var);
        }
    }
}

fn holds_structurally(atom: &OAtom, a: &BTreeMap<&str, &OTerm>, facts: &BTreeSet<&OTriple>) -> bool {
    match atom {
        OAtom::Class { class, var } => match a[var.as_str()] {
            OTerm::Iri(x) => facts.contains(&(x.clone(), "rdf:type".to_string(), OTerm::Iri(format!("{NS}{class}")))),
            OTerm::Lit(..) => false,
        },
        OAtom::Prop { prop, s, o } => match a[s.as_str()] {
            OTerm::Iri(x) => facts.contains(&(x.clone(), format!("{NS}{prop}"), a[o.as_str()].clone())),
            OTerm::Lit(..) => false,
        },
        _ => true,
    }
}

fn test(atom: &OAtom, a: &BTreeMap<&str, &OTerm>) -> Option<Option<bool>> {
    let val = |arg: &OArg| match arg {
        OArg::Var(v) => Value::of(a[v.as_str()]),
        OArg::Num(n) => Value::Num(n.parse().unwrap()),
        OArg::Str(s) => Value::Text(s.clone(), "string"),
    };
    match atom {
        OAtom::Cmp { l, op, r } => Some(compare(&val(l), op, &val(r))),
        OAtom::Rel { l, r, tolerance } => Some(match (a[l.as_str()].number(), a[r.as_str()].number()) {
            (Some(x), Some(y)) => reldiff(x, y, *tolerance),
            _ => None,
        }),
        _ => None,
    }
}

pub fn random_graph(rng: &mut impl Rng, max_triples: usize) -> Vec<OTriple> {
    let n_entities = rng.random_range(2..=6);
    let n = rng.random_range(0..=max_triples);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let s = format!("{NS}e{}", rng.random_range(0..n_entities));
        let roll = rng.random_range(0..100);
        let t = if roll < 20 {
            let c = CLASSES.choose(rng).unwrap();
            (s, "rdf:type".to_string(), OTerm::Iri(format!("{NS}{c}")))
        } else if roll < 45 {
            let p = OBJECT_PROPS.choose(rng).unwrap();
            (s, format!("{NS}{p}"), OTerm::Iri(format!("{NS}e{}", rng.random_range(0..n_entities))))
        } else {
            let (p, dt) = *DATA_PROPS.choose(rng).unwrap();
            let o = if rng.random_bool(0.05) {
                // Ill-typed value for the property.
                OTerm::Lit("a".into(), "string")
            } else {
                random_literal(rng, dt)
            };
            (s, format!("{NS}{p}"), o)
        };
        out.push(t);
    }
    out
}

fn random_literal(rng: &mut impl Rng, dt: &'static str) -> OTerm {
    let lex = match dt {
        "float" => FLOATS.choose(rng).unwrap().to_string(),
        "integer" => INTEGERS.choose(rng).unwrap().to_string(),
        "string" => STRINGS.choose(rng).unwrap().to_string(),
        "date" => DATES.choose(rng).unwrap().to_string(),
        _ => rng.random_bool(0.5).to_string(),
    };
    OTerm::Lit(lex, dt)
}

fn random_rule(rng: &mut impl Rng) -> (Vec<String>, Vec<OAtom>) {
    let mut types: Vec<(String, Ty)> = Vec::new();
    let mut body = Vec::new();
    let max_vars = 4;

    fn pick(rng: &mut impl Rng, types: &mut Vec<(String, Ty)>, ty: Ty, max_vars: usize) -> String {
        let existing: Vec<&String> = types.iter().filter(|(_, t)| *t == ty).map(|(v, _)| v).collect();
        let fresh_ok = types.len() < max_vars;
        if !existing.is_empty() && (!fresh_ok || rng.random_bool(0.6)) {
            return (*existing.choose(rng).unwrap()).clone();
        }
        if !fresh_ok {
            return String::new();
        }
        let name = format!("v{}", types.len());
        types.push((name.clone(), ty));
        name
    }

    let n_structural = rng.random_range(1..=4);
    for _ in 0..n_structural {
        let roll = rng.random_range(0..3);
        let atom = match roll {
            0 => {
                let var = pick(rng, &mut types, Ty::Entity, max_vars);
                if var.is_empty() {
                    continue;
                }
                OAtom::Class {
                    class: CLASSES.choose(rng).unwrap().to_string(),
                    var,
                }
            }
            1 => {
                let s = pick(rng, &mut types, Ty::Entity, max_vars);
                let o = pick(rng, &mut types, Ty::Entity, max_vars);
                if s.is_empty() || o.is_empty() {
                    continue;
                }
                OAtom::Prop {
                    prop: OBJECT_PROPS.choose(rng).unwrap().to_string(),
                    s,
                    o,
                }
            }
            _ => {
                let (p, dt) = *DATA_PROPS.choose(rng).unwrap();
                let s = pick(rng, &mut types, Ty::Entity, max_vars);
                let o = pick(rng, &mut types, Ty::Lit(dt), max_vars);
                if s.is_empty() || o.is_empty() {
                    continue;
                }
                OAtom::Prop { prop: p.to_string(), s, o }
            }
        };
        body.push(atom);
    }
    if body.is_empty() {
        let var = pick(rng, &mut types, Ty::Entity, max_vars);
        body.push(OAtom::Class {
            class: "A".into(),
            var,
        });
    }

    // A slot filled before its atom was dropped may have left a stray name.
    types.retain(|(v, _)| body.iter().any(|a| a.structural_vars().contains(&v.as_str())));

    let n_tests = rng.random_range(0..=3);
    for _ in 0..n_tests {
        if let Some(t) = random_test(rng, &types) {
            body.push(t);
        }
    }

    let mut vars: Vec<String> = types.iter().map(|(v, _)| v.clone()).collect();
    let arity = rng.random_range(1..=vars.len().min(2));
    let mut head = Vec::new();
    for _ in 0..arity {
        let i = rng.random_range(0..vars.len());
        head.push(vars.remove(i));
    }
    (head, body)
}

fn random_test(rng: &mut impl Rng, types: &[(String, Ty)]) -> Option<OAtom> {
    const ALL_OPS: [&str; 6] = ["==", "!=", "<", "<=", ">", ">="];
    const EQ_OPS: [&str; 2] = ["==", "!="];
    let (v, ty) = types.choose(rng)?.clone();
    let numeric = |t: Ty| matches!(t, Ty::Lit("float" | "integer"));
    let ops: &[&'static str] = match ty {
        Ty::Entity | Ty::Lit("boolean") => &EQ_OPS,
        _ => &ALL_OPS,
    };
    let op = *ops.choose(rng).unwrap();

    if ty == Ty::Lit("float") && rng.random_bool(0.3) {
        let floats: Vec<&String> = types.iter().filter(|(_, t)| *t == ty).map(|(n, _)| n).collect();
        let other = (*floats.choose(rng).unwrap()).clone();
        let tolerance = *[0.05, 0.5, 0.01].choose(rng).unwrap();
        return Some(OAtom::Rel { l: v, r: other, tolerance });
    }
    if rng.random_bool(0.5) {
        // Against another variable of a compatible type.
        let partners: Vec<&String> = types
            .iter()
            .filter(|(_, t)| *t == ty || (numeric(ty) && numeric(*t)))
            .map(|(n, _)| n)
            .collect();
        let other = (*partners.choose(rng).unwrap()).clone();
        let (l, r) = if rng.random_bool(0.5) { (v, other) } else { (other, v) };
        return Some(OAtom::Cmp {
            l: OArg::Var(l),
            op,
            r: OArg::Var(r),
        });
    }
    let constant = match ty {
        Ty::Entity | Ty::Lit("boolean") => return None,
        t if numeric(t) => OArg::Num(NUMBER_CONSTS.choose(rng).unwrap().to_string()),
        _ => OArg::Str(STRING_CONSTS.choose(rng).unwrap().to_string()),
    };
    let var = OArg::Var(v);
    let (l, r) = if rng.random_bool(0.5) { (var, constant) } else { (constant, var) };
    Some(OAtom::Cmp { l, op, r })
}
