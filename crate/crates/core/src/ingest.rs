//! Tabular records to ABox instances.
//!
//! Each row of a table becomes one instance of the mapping's target class,
//! with one triple per bound cell that converts cleanly. Cells that fail to
//! convert are skipped and reported, never replaced by a default.

use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::graph::{Datatype, Graph, Literal, Term, Triple, RDF_TYPE};
use crate::schema::{DataRange, Lookup, Schema};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("mapping does not match the schema: {}", .0.join("; "))]
    Mapping(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("{0}")]
    Graph(#[from] crate::graph::GraphError),
}

/// One input record: column name to raw cell text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordRow(pub IndexMap<String, String>);

impl RecordRow {
    pub fn get(&self, column: &str) -> Option<&str> {
        self.0.get(column).map(String::as_str)
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for RecordRow {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        RecordRow(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnBinding {
    /// Cell holds the id of another instance, linked through `property`.
    Link {
        link: bool,
        property: String,
        #[serde(rename = "targetClass")]
        target_class: String,
    },
    Data {
        property: String,
        datatype: Datatype,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestMapping {
    pub class: String,
    #[serde(rename = "idColumn")]
    pub id_column: String,
    pub columns: IndexMap<String, ColumnBinding>,
}

impl IngestMapping {
    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        serde_json::from_str(text).map_err(|e| IngestError::Json {
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Checks every binding against the schema. Returns all problems found.
    pub fn validate(&self, schema: &Schema) -> Result<(), IngestError> {
        let mut problems = Vec::new();
        if !schema.classes.contains_key(&self.class) {
            problems.push(format!("class {} is not declared", self.class));
        }
        for (column, binding) in &self.columns {
            match binding {
                ColumnBinding::Data { property, datatype } => match schema.lookup(property) {
                    Lookup::DataProperty(def) => {
                        if !schema.is_subclass_of(&self.class, &def.domain) {
                            problems.push(format!(
                                "column {column}: {property} has domain {}, not {}",
                                def.domain, self.class
                            ));
                        }
                        if def.range.datatype() != *datatype {
                            problems.push(format!(
                                "column {column}: {property} has range {}, mapping says {datatype}",
                                def.range.datatype()
                            ));
                        }
                    }
                    other => problems.push(format!(
                        "column {column}: {property} is {}, expected a data property",
                        other.kind()
                    )),
                },
                ColumnBinding::Link {
                    link,
                    property,
                    target_class,
                } => {
                    if !link {
                        problems.push(format!("column {column}: link must be true"));
                    }
                    match schema.lookup(property) {
                        Lookup::ObjectProperty(def) => {
                            if !schema.is_subclass_of(&self.class, &def.domain) {
                                problems.push(format!(
                                    "column {column}: {property} has domain {}, not {}",
                                    def.domain, self.class
                                ));
                            }
                            if !schema.is_subclass_of(target_class, &def.range) {
                                problems.push(format!(
                                    "column {column}: target {target_class} is not within range {} of {property}",
                                    def.range
                                ));
                            }
                        }
                        other => problems.push(format!(
                            "column {column}: {property} is {}, expected an object property",
                            other.kind()
                        )),
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(IngestError::Mapping(problems))
        }
    }
}

/// A value that was not turned into a triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub row: usize,
    pub column: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct IngestStats {
    pub rows_read: usize,
    pub instances_created: usize,
    pub triples_added: usize,
    pub values_skipped: usize,
    #[serde(skip)]
    pub skips: Vec<Skip>,
}

impl IngestStats {
    pub fn merge(&mut self, other: IngestStats) {
        self.rows_read += other.rows_read;
        self.instances_created += other.instances_created;
        self.triples_added += other.triples_added;
        self.values_skipped += other.values_skipped;
        self.skips.extend(other.skips);
    }
}

/// Trim, lower-case, strip accents and collapse inner whitespace.
pub fn normalize_string(raw: &str) -> String {
    let folded: String = raw
        .to_lowercase()
        .nfd()
        .filter(|c| !is_combining_mark(*c))
        .nfc()
        .collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Converts a raw cell into a canonical literal of `datatype`.
pub fn convert_value(raw: &str, datatype: Datatype) -> Result<Literal, String> {
    let text = raw.trim();
    match datatype {
        Datatype::String => Ok(Literal::string(normalize_string(text))),
        Datatype::Float => {
            let has_letters = text.chars().any(|c| c.is_alphabetic() && c != 'e' && c != 'E');
            let dotted = if text.contains(',') && !text.contains('.') && text.matches(',').count() == 1 {
                text.replace(',', ".")
            } else {
                text.to_string()
            };
            match dotted.parse::<f64>() {
                Ok(v) if v.is_finite() && !has_letters => {
                    Literal::float(v).map_err(|e| e.to_string())
                }
                _ => Err(format!("{raw:?} is not a number")),
            }
        }
        Datatype::Integer => text
            .parse::<i64>()
            .map(Literal::integer)
            .map_err(|_| format!("{raw:?} is not an integer")),
        Datatype::Date => NaiveDate::parse_from_str(text, "%Y-%m-%d")
            .or_else(|_| NaiveDate::parse_from_str(text, "%d/%m/%Y"))
            .map(Literal::date)
            .map_err(|_| format!("{raw:?} is not a date (YYYY-MM-DD or DD/MM/YYYY)")),
        Datatype::Boolean => match normalize_string(text).as_str() {
            "true" | "yes" | "1" | "oui" | "vrai" => Ok(Literal::boolean(true)),
            "false" | "no" | "0" | "non" | "faux" => Ok(Literal::boolean(false)),
            _ => Err(format!("{raw:?} is not a boolean")),
        },
    }
}

/// Graph identifier of an instance of `class` keyed by a raw id cell.
pub fn instance_id(schema: &Schema, class: &str, raw_id: &str) -> Option<String> {
    let key = normalize_string(raw_id).replace(' ', "-");
    if key.is_empty() {
        return None;
    }
    Some(format!("{}{}/{}", schema.namespace, class.to_lowercase(), key))
}

/// Populates `graph` from `rows`. The mapping is validated before anything
/// is written; per-value failures are recorded in the returned stats.
pub fn populate(
    graph: &mut Graph,
    schema: &Schema,
    mapping: &IngestMapping,
    rows: impl IntoIterator<Item = RecordRow>,
) -> Result<IngestStats, IngestError> {
    mapping.validate(schema)?;

    let entity = |id: String| Term::entity(id).expect("generated ids contain no whitespace");
    let rdf_type = entity(RDF_TYPE.to_string());
    let class_term = entity(schema.iri(&mapping.class));
    let predicates: IndexMap<&str, Term> = mapping
        .columns
        .values()
        .map(|b| match b {
            ColumnBinding::Data { property, .. } | ColumnBinding::Link { property, .. } => {
                (property.as_str(), entity(schema.iri(property)))
            }
        })
        .collect();

    let before = graph.len();
    let mut stats = IngestStats::default();
    for (idx, row) in rows.into_iter().enumerate() {
        let row_no = idx + 1;
        stats.rows_read += 1;
        let mut skip = |column: &str, reason: String| {
            stats.skips.push(Skip {
                row: row_no,
                column: column.to_string(),
                reason,
            });
        };
        let Some(id) = row
            .get(&mapping.id_column)
            .and_then(|raw| instance_id(schema, &mapping.class, raw))
        else {
            skip(&mapping.id_column, "missing instance id".into());
            continue;
        };
        let subject = entity(id);
        let typing = Triple::new(subject.clone(), rdf_type.clone(), class_term.clone())?;
        if graph.insert(&typing) {
            stats.instances_created += 1;
        }

        for (column, binding) in &mapping.columns {
            let Some(raw) = row.get(column).filter(|v| !v.trim().is_empty()) else {
                continue;
            };
            match binding {
                ColumnBinding::Data { property, datatype } => {
                    let literal = match convert_value(raw, *datatype) {
                        Ok(l) => l,
                        Err(reason) => {
                            skip(column, reason);
                            continue;
                        }
                    };
                    if let Some(def) = schema.data_properties.get(property) {
                        if let DataRange::OneOf(allowed) = &def.range {
                            if !def.range.allows(literal.lexical()) {
                                skip(
                                    column,
                                    format!(
                                        "{:?} is not one of {}",
                                        literal.lexical(),
                                        allowed.join(", ")
                                    ),
                                );
                                continue;
                            }
                        }
                    }
                    let predicate = &predicates[property.as_str()];
                    let object = Term::Literal(literal);
                    // Repeated keys merge onto one instance; the last value wins.
                    let stale: Vec<Triple> = graph
                        .matches(Some(&subject), Some(predicate), None)
                        .into_iter()
                        .filter(|t| t.object() != &object)
                        .collect();
                    for old in &stale {
                        graph.retract(old);
                        skip(column, format!("replaced conflicting value {}", old.object()));
                    }
                    graph.insert(&Triple::new(subject.clone(), predicate.clone(), object)?);
                }
                ColumnBinding::Link {
                    property,
                    target_class,
                    ..
                } => {
                    let Some(target) = instance_id(schema, target_class, raw) else {
                        skip(column, format!("{raw:?} is not a usable id"));
                        continue;
                    };
                    let predicate = predicates[property.as_str()].clone();
                    graph.insert(&Triple::new(subject.clone(), predicate, entity(target))?);
                }
            }
        }
    }
    stats.triples_added = graph.len() - before;
    stats.values_skipped = stats.skips.len();
    Ok(stats)
}

pub fn read_csv(reader: impl Read) -> Result<Vec<RecordRow>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut seen = std::collections::HashSet::new();
    for h in &headers {
        if !seen.insert(h) {
            return Err(IngestError::Mapping(vec![format!("duplicate column {h}")]));
        }
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        rows.push(headers.iter().zip(record.iter()).collect());
    }
    Ok(rows)
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<RecordRow>, IngestError> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IngestError::Json {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: IndexMap<String, serde_json::Value> =
            serde_json::from_str(&line).map_err(|e| IngestError::Json {
                line: idx + 1,
                message: e.to_string(),
            })?;
        rows.push(
            obj.into_iter()
                .map(|(k, v)| {
                    let cell = match v {
                        serde_json::Value::Null => String::new(),
                        serde_json::Value::String(s) => s,
                        other => other.to_string(),
                    };
                    (k, cell)
                })
                .collect(),
        );
    }
    Ok(rows)
}

/// Reads CSV or JSON-lines by file extension.
pub fn read_rows(path: &Path) -> Result<Vec<RecordRow>, IngestError> {
    let io = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("ndjson") => read_jsonl(std::io::BufReader::new(file)),
        _ => read_csv(file),
    }
}

pub fn write_skip_log(skips: &[Skip], mut out: impl Write) -> std::io::Result<()> {
    for s in skips {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// A set of tables loaded together. Paths are relative to the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tables: Vec<ManifestTable>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestTable {
    pub mapping: PathBuf,
    pub input: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), IngestError> {
        let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest = serde_json::from_str(&text).map_err(|e| IngestError::Json {
            line: e.line(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((manifest, base))
    }
}

pub fn load_mapping(path: &Path) -> Result<IngestMapping, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    IngestMapping::from_json(&text)
}

/// Loads every table of a manifest. All mappings are validated before the
/// first table is populated.
pub fn populate_manifest(
    graph: &mut Graph,
    schema: &Schema,
    manifest_path: &Path,
) -> Result<IngestStats, IngestError> {
    let (manifest, base) = Manifest::load(manifest_path)?;
    let mut tables = Vec::new();
    for t in &manifest.tables {
        let mapping = load_mapping(&base.join(&t.mapping))?;
        mapping.validate(schema)?;
        tables.push((mapping, base.join(&t.input)));
    }
    let mut total = IngestStats::default();
    for (mapping, input) in tables {
        let rows = read_rows(&input)?;
        total.merge(populate(graph, schema, &mapping, rows)?);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::load_schema;
    use proptest::prelude::*;

    fn schema() -> Schema {
        load_schema(include_bytes!("../../../schema/drug-domain.json")).unwrap()
    }

    fn sample_mapping() -> IngestMapping {
        IngestMapping::from_json(
            r#"{"class": "Sample", "idColumn": "id", "columns": {
                "number": {"property": "sampleNumber", "datatype": "string"},
                "drug": {"property": "drugType", "datatype": "string"},
                "form": {"property": "chemicalForm", "datatype": "string"},
                "width": {"property": "width", "datatype": "float"},
                "height": {"property": "height", "datatype": "float"},
                "sealed": {"link": true, "property": "comesFrom", "targetClass": "Sealed"}
            }}"#,
        )
        .unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_string("  Résine "), "resine");
        assert_eq!(normalize_string("CANNABIS"), "cannabis");
        assert_eq!(normalize_string("Amphetamine  and\tderivatives"), "amphetamine and derivatives");
        assert_eq!(normalize_string("Ça Œuvre"), "ca œuvre");
    }

    #[test]
    fn convert_examples() {
        let w = convert_value("200", Datatype::Float).unwrap();
        assert_eq!(w.as_f64(), Some(200.0));
        assert_eq!(convert_value("12,5", Datatype::Float).unwrap().as_f64(), Some(12.5));
        assert_eq!(convert_value("01/02/2023", Datatype::Date).unwrap().lexical(), "2023-02-01");
        assert_eq!(convert_value("2023-02-01", Datatype::Date).unwrap().lexical(), "2023-02-01");
        assert!(convert_value("abc", Datatype::Float).is_err());
        assert!(convert_value("inf", Datatype::Float).is_err());
        assert!(convert_value("1,234.5", Datatype::Float).is_err());
        assert!(convert_value("31/02/2023", Datatype::Date).is_err());
        assert_eq!(convert_value("Oui", Datatype::Boolean).unwrap().lexical(), "true");
        assert!(convert_value("7.5", Datatype::Integer).is_err());
    }

    #[test]
    fn populate_two_samples() {
        let s = schema();
        let mut g = Graph::new();
        let rows = vec![
            RecordRow::from_iter([("id", "1"), ("number", "1"), ("drug", "Cannabis"), ("form", "Résine"), ("width", "200"), ("height", "100"), ("sealed", "")]),
            RecordRow::from_iter([("id", "2"), ("number", "2"), ("drug", "Cannabis"), ("form", "Résine"), ("width", "150"), ("height", "100"), ("sealed", "S-9")]),
        ];
        let stats = populate(&mut g, &s, &sample_mapping(), rows).unwrap();
        assert_eq!(stats.rows_read, 2);
        assert_eq!(stats.instances_created, 2);
        assert_eq!(stats.triples_added, 2 * 6 + 1);
        assert_eq!(stats.values_skipped, 0);
        let drug = Term::entity("stups:drugType").unwrap();
        let cannabis = Term::Literal(Literal::string("cannabis"));
        assert_eq!(g.matches(None, Some(&drug), Some(&cannabis)).len(), 2);
        let sealed = Triple::entities("stups:sample/2", "stups:comesFrom", "stups:sealed/s-9").unwrap();
        assert!(g.contains(&sealed));
    }

    #[test]
    fn empty_input_changes_nothing() {
        let mut g = Graph::new();
        let stats = populate(&mut g, &schema(), &sample_mapping(), Vec::new()).unwrap();
        assert_eq!(stats, IngestStats::default());
        assert!(g.is_empty());
    }

    #[test]
    fn bad_values_are_skipped_with_reasons() {
        let mut g = Graph::new();
        let rows = vec![
            RecordRow::from_iter([("id", "1"), ("drug", "tobacco"), ("width", "abc")]),
            RecordRow::from_iter([("id", " "), ("drug", "cocaine")]),
        ];
        let stats = populate(&mut g, &schema(), &sample_mapping(), rows).unwrap();
        assert_eq!(stats.instances_created, 1);
        assert_eq!(stats.triples_added, 1);
        let cols: Vec<&str> = stats.skips.iter().map(|s| s.column.as_str()).collect();
        assert_eq!(cols, ["drug", "width", "id"]);
        assert!(stats.skips[0].reason.contains("not one of"));
        let mut log = Vec::new();
        write_skip_log(&stats.skips, &mut log).unwrap();
        let first: serde_json::Value = serde_json::from_slice(log.split(|b| *b == b'\n').next().unwrap()).unwrap();
        assert_eq!(first["row"], 1);
        assert_eq!(first["column"], "drug");
    }

    #[test]
    fn repeated_ids_merge_last_write_wins() {
        let mut g = Graph::new();
        let rows = vec![
            RecordRow::from_iter([("id", "7"), ("width", "10")]),
            RecordRow::from_iter([("id", "7"), ("width", "12"), ("height", "3")]),
        ];
        let stats = populate(&mut g, &schema(), &sample_mapping(), rows).unwrap();
        assert_eq!(stats.instances_created, 1);
        assert_eq!(g.len(), 3);
        assert_eq!(stats.skips.len(), 1);
        assert!(stats.skips[0].reason.contains("replaced"));
        let width = Term::entity("stups:width").unwrap();
        let vals = g.matches(None, Some(&width), None);
        assert_eq!(vals[0].object().as_f64(), Some(12.0));
    }

    #[test]
    fn invalid_mapping_mutates_nothing() {
        let mut g = Graph::new();
        let mut m = sample_mapping();
        m.columns.insert("x".into(), ColumnBinding::Data { property: "colourz".into(), datatype: Datatype::String });
        m.columns.insert("y".into(), ColumnBinding::Data { property: "width".into(), datatype: Datatype::String });
        m.columns.insert("z".into(), ColumnBinding::Data { property: "seizureDate".into(), datatype: Datatype::Date });
        let rows = vec![RecordRow::from_iter([("id", "1"), ("width", "3")])];
        match populate(&mut g, &schema(), &m, rows) {
            Err(IngestError::Mapping(problems)) => assert_eq!(problems.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(g.is_empty());
    }

    #[test]
    fn csv_and_jsonl_readers() {
        let rows = read_csv("id,width\n1,\"2,5\"\n2,\n".as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].get("width"), Some("2,5"));
        assert_eq!(rows[1].get("width"), Some(""));
        let rows = read_jsonl("{\"id\": 1, \"width\": 2.5, \"x\": null}\n\n{\"id\": \"b\"}\n".as_bytes()).unwrap();
        assert_eq!(rows[0].get("id"), Some("1"));
        assert_eq!(rows[0].get("x"), Some(""));
        assert_eq!(rows[1].get("id"), Some("b"));
        assert!(read_csv("a,a\n1,2\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_string(&s);
            prop_assert_eq!(normalize_string(&once), once);
        }

        #[test]
        fn populate_is_deterministic(widths in proptest::collection::vec("[0-9]{1,3}(,[0-9])?|x", 0..20)) {
            let rows: Vec<RecordRow> = widths.iter().enumerate()
                .map(|(i, w)| RecordRow::from_iter([("id".to_string(), (i % 7).to_string()), ("width".to_string(), w.clone())]))
                .collect();
            let mut a = Graph::new();
            let mut b = Graph::new();
            populate(&mut a, &schema(), &sample_mapping(), rows.clone()).unwrap();
            populate(&mut b, &schema(), &sample_mapping(), rows).unwrap();
            prop_assert_eq!(a.content_hash(), b.content_hash());
        }
    }
}
