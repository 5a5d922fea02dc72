//! A minimal term model with its own rendering and comparison rules.

use std::cmp::Ordering;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OTerm {
    Iri(String),
    /// Lexical form (already canonical) and datatype name.
    Lit(String, &'static str),
}

impl OTerm {
    pub fn iri(s: impl Into<String>) -> Self {
        OTerm::Iri(s.into())
    }

    pub fn float(lexical: &str) -> Self {
        OTerm::Lit(lexical.to_string(), "float")
    }

    pub fn is_iri(&self) -> bool {
        matches!(self, OTerm::Iri(_))
    }

    pub fn number(&self) -> Option<f64> {
        match self {
            OTerm::Lit(l, "float" | "integer") => l.parse().ok(),
            _ => None,
        }
    }
}

impl fmt::Display for OTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OTerm::Iri(s) => f.write_str(s),
            OTerm::Lit(l, dt) => write!(f, "\"{l}\"^^{dt}"),
        }
    }
}

pub type OTriple = (String, String, OTerm);

pub fn render(triples: impl IntoIterator<Item = OTriple>) -> String {
    let mut lines: Vec<String> = triples
        .into_iter()
        .map(|(s, p, o)| format!("{s} {p} {o}"))
        .collect();
    lines.sort();
    lines.dedup();
    let mut out = lines.join("\n");
    if !out.is_empty() {
        out.push('\n');
    }
    out
}

/// Comparison operand as the rule language sees it.
#[derive(Debug, Clone)]
pub enum Value {
    Iri(String),
    Num(f64),
    Text(String, &'static str),
}

impl Value {
    pub fn of(t: &OTerm) -> Self {
        match t {
            OTerm::Iri(s) => Value::Iri(s.clone()),
            OTerm::Lit(l, dt) => match t.number() {
                Some(n) => Value::Num(n),
                None => Value::Text(l.clone(), dt),
            },
        }
    }
}

pub fn holds(op: &str, ord: Ordering) -> bool {
    match op {
        "==" => ord == Ordering::Equal,
        "!=" => ord != Ordering::Equal,
        "<" => ord == Ordering::Less,
        "<=" => ord != Ordering::Greater,
        ">" => ord == Ordering::Greater,
        ">=" => ord != Ordering::Less,
        other => panic!("unknown operator {other}"),
    }
}

/// `None` when the operation is undefined for the operand types.
pub fn compare(l: &Value, op: &str, r: &Value) -> Option<bool> {
    let ordering = matches!(op, "<" | "<=" | ">" | ">=");
    match (l, r) {
        (Value::Iri(a), Value::Iri(b)) => {
            if ordering {
                None
            } else {
                Some(holds(op, a.cmp(b)))
            }
        }
        (Value::Num(a), Value::Num(b)) => a.partial_cmp(b).map(|o| holds(op, o)),
        (Value::Text(a, da), Value::Text(b, db)) => {
            let same_kind = da == db
                || (*da == "string" && *db == "date")
                || (*da == "date" && *db == "string");
            if !same_kind || (*da == "boolean" && ordering) {
                None
            } else {
                Some(holds(op, a.as_str().cmp(b.as_str())))
            }
        }
        _ => None,
    }
}

/// Relative difference test; undefined unless both values are positive.
pub fn reldiff(a: f64, b: f64, tolerance: f64) -> Option<bool> {
    if a <= 0.0 || b <= 0.0 {
        return None;
    }
    let larger = if a > b { a } else { b };
    Some((a - b).abs() / larger <= tolerance)
}

/// Three-valued AND.
pub fn all(values: &[Option<bool>]) -> Option<bool> {
    if values.contains(&Some(false)) {
        Some(false)
    } else if values.contains(&None) {
        None
    } else {
        Some(true)
    }
}
