//! Tabular input whose convertible cells are known by construction.

use rand::seq::IndexedRandom;
use rand::Rng;

pub const SCHEMA_JSON: &str = r#"{
  "namespace": "ex:",
  "classes": [{"name": "Item", "comment": "generated"}],
  "dataProperties": [
    {"name": "label", "domain": "Item", "range": "string"},
    {"name": "kind", "domain": "Item", "range": {"oneOf": ["x", "y"]}},
    {"name": "size", "domain": "Item", "range": "float"},
    {"name": "count", "domain": "Item", "range": "integer"},
    {"name": "seen", "domain": "Item", "range": "date"},
    {"name": "ok", "domain": "Item", "range": "boolean"}
  ]
}"#;

pub const MAPPING_JSON: &str = r#"{
  "class": "Item",
  "idColumn": "id",
  "columns": {
    "label": {"property": "label", "datatype": "string"},
    "kind": {"property": "kind", "datatype": "string"},
    "size": {"property": "size", "datatype": "float"},
    "count": {"property": "count", "datatype": "integer"},
    "seen": {"property": "seen", "datatype": "date"},
    "ok": {"property": "ok", "datatype": "boolean"}
  }
}"#;

const COLUMNS: [&str; 6] = ["label", "kind", "size", "count", "seen", "ok"];
const EMPTY: [&str; 2] = ["", "   "];

fn valid(column: &str) -> &'static [&'static str] {
    match column {
        "label" => &["Résine", "  two  words ", "plain", "MiXeD"],
        "kind" => &["x", "Y", " x "],
        "size" => &["12.5", "3,75", "7", "-0.5", "1e3"],
        "count" => &["0", "42", "-7"],
        "seen" => &["2020-01-31", "31/01/2020", "1999-12-01"],
        _ => &["oui", "false", "1", "No"],
    }
}

fn invalid(column: &str) -> &'static [&'static str] {
    match column {
        "label" => &[],
        "kind" => &["z", "tabac"],
        "size" => &["abc", "n/a", "1.2.3"],
        "count" => &["1.5", "many"],
        "seen" => &["2020-13-01", "yesterday"],
        _ => &["maybe"],
    }
}

#[derive(Debug, Clone)]
pub struct IngestCase {
    pub csv: String,
    pub rows: usize,
    /// Non-empty cells that convert to a value allowed by the schema.
    pub convertible: usize,
    pub invalid: usize,
}

pub fn generate(rng: &mut impl Rng, rows: usize) -> IngestCase {
    let mut csv = String::from("id,label,kind,size,count,seen,ok\n");
    let (mut convertible, mut bad) = (0, 0);
    for i in 0..rows {
        let mut fields = vec![format!("\"R{i}\"")];
        for column in COLUMNS {
            let roll: f64 = rng.random();
            let bad_pool = invalid(column);
            let cell = if roll < 0.2 {
                *EMPTY.choose(rng).unwrap()
            } else if roll < 0.3 && !bad_pool.is_empty() {
                bad += 1;
                *bad_pool.choose(rng).unwrap()
            } else {
                convertible += 1;
                *valid(column).choose(rng).unwrap()
            };
            fields.push(format!("\"{cell}\""));
        }
        csv.push_str(&fields.join(","));
        csv.push('\n');
    }
    IngestCase {
        csv,
        rows,
        convertible,
        invalid: bad,
    }
}
