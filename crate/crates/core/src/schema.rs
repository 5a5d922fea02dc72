//! TBox model: classes, data properties and object-property axioms, plus the
//! JSON document format they are loaded from.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Datatype;

pub const DEFAULT_NAMESPACE: &str = "stups:";
/// Implicit superclass of every class. It needs no declaration and its
/// membership is never materialized.
pub const TOP_CLASS: &str = "Thing";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDef {
    pub name: String,
    pub parent: Option<String>,
    pub comment: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataRange {
    Datatype(Datatype),
    OneOf(Vec<String>),
}

impl DataRange {
    /// Datatype of the literals this range admits. Enumerations are strings.
    pub fn datatype(&self) -> Datatype {
        match self {
            DataRange::Datatype(d) => *d,
            DataRange::OneOf(_) => Datatype::String,
        }
    }

    pub fn allows(&self, value: &str) -> bool {
        match self {
            DataRange::Datatype(_) => true,
            DataRange::OneOf(values) => values.iter().any(|v| v == value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPropertyDef {
    pub name: String,
    pub domain: String,
    pub range: DataRange,
    /// Single-valued: an individual holds at most one value.
    pub functional: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyTrait {
    Transitive,
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectPropertyDef {
    pub name: String,
    pub domain: String,
    pub range: String,
    pub inverse: Option<String>,
    pub traits: BTreeSet<PropertyTrait>,
    pub parent: Option<String>,
}

impl ObjectPropertyDef {
    pub fn is_transitive(&self) -> bool {
        self.traits.contains(&PropertyTrait::Transitive)
    }

    pub fn is_symmetric(&self) -> bool {
        self.traits.contains(&PropertyTrait::Symmetric)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub namespace: String,
    pub classes: BTreeMap<String, ClassDef>,
    pub data_properties: BTreeMap<String, DataPropertyDef>,
    pub object_properties: BTreeMap<String, ObjectPropertyDef>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            namespace: DEFAULT_NAMESPACE.to_string(),
            classes: BTreeMap::new(),
            data_properties: BTreeMap::new(),
            object_properties: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NameKind {
    Class,
    DataProperty,
    ObjectProperty,
    Unknown,
}

impl fmt::Display for NameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NameKind::Class => "class",
            NameKind::DataProperty => "data property",
            NameKind::ObjectProperty => "object property",
            NameKind::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lookup<'a> {
    Class(&'a ClassDef),
    DataProperty(&'a DataPropertyDef),
    ObjectProperty(&'a ObjectPropertyDef),
    Unknown,
}

impl Lookup<'_> {
    pub fn kind(&self) -> NameKind {
        match self {
            Lookup::Class(_) => NameKind::Class,
            Lookup::DataProperty(_) => NameKind::DataProperty,
            Lookup::ObjectProperty(_) => NameKind::ObjectProperty,
            Lookup::Unknown => NameKind::Unknown,
        }
    }
}

impl Schema {
    pub fn lookup(&self, name: &str) -> Lookup<'_> {
        if let Some(c) = self.classes.get(name) {
            Lookup::Class(c)
        } else if let Some(d) = self.data_properties.get(name) {
            Lookup::DataProperty(d)
        } else if let Some(o) = self.object_properties.get(name) {
            Lookup::ObjectProperty(o)
        } else {
            Lookup::Unknown
        }
    }

    /// Entity identifier of a schema name in the graph.
    pub fn iri(&self, name: &str) -> String {
        format!("{}{}", self.namespace, name)
    }

    /// Inverse of [`Schema::iri`]: the schema name behind a graph identifier.
    pub fn local_name<'a>(&self, iri: &'a str) -> Option<&'a str> {
        iri.strip_prefix(self.namespace.as_str())
    }

    /// The class and its ancestors, nearest first.
    pub fn ancestors(&self, class: &str) -> Vec<&str> {
        let mut out = Vec::new();
        let mut cur = self.classes.get(class);
        while let Some(c) = cur {
            if out.contains(&c.name.as_str()) {
                break;
            }
            out.push(c.name.as_str());
            cur = c.parent.as_deref().and_then(|p| self.classes.get(p));
        }
        out
    }

    pub fn is_subclass_of(&self, class: &str, ancestor: &str) -> bool {
        ancestor == TOP_CLASS || self.ancestors(class).contains(&ancestor)
    }

    /// Declared class or the implicit top class.
    pub fn has_class(&self, name: &str) -> bool {
        name == TOP_CLASS || self.classes.contains_key(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticCode {
    InvalidName,
    DuplicateName,
    NameCollision,
    MissingComment,
    DanglingReference,
    UnknownDatatype,
    EnumTooSmall,
    AsymmetricInverse,
    InverseSignature,
    SubclassCycle,
    SubpropertyCycle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    /// The offending name.
    pub name: String,
    /// Where in the document, e.g. `objectProperties.hasX.range`.
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}: {}", self.code, self.location, self.message)
    }
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("schema syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema is invalid: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

impl SchemaError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            SchemaError::Invalid(d) => d,
            SchemaError::Syntax { .. } => &[],
        }
    }
}

// Document representation.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    namespace: Option<String>,
    #[serde(default)]
    classes: Vec<ClassDoc>,
    #[serde(default, rename = "dataProperties")]
    data_properties: Vec<DataPropertyDoc>,
    #[serde(default, rename = "objectProperties")]
    object_properties: Vec<ObjectPropertyDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassDoc {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
    #[serde(default)]
    comment: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RangeDoc {
    Named(String),
    OneOf {
        #[serde(rename = "oneOf")]
        one_of: Vec<String>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataPropertyDoc {
    name: String,
    domain: String,
    range: RangeDoc,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    functional: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectPropertyDoc {
    name: String,
    domain: String,
    range: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inverse: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    traits: Vec<PropertyTrait>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
}

/// Parses and validates a schema document.
pub fn load_schema(document: &[u8]) -> Result<Schema, SchemaError> {
    let doc: SchemaDoc = serde_json::from_slice(document).map_err(|e| SchemaError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let mut diags = Vec::new();
    let mut schema = Schema {
        namespace: doc.namespace.unwrap_or_else(|| DEFAULT_NAMESPACE.to_string()),
        ..Schema::default()
    };

    let dup = |section: &str, name: &str, diags: &mut Vec<Diagnostic>| {
        diags.push(Diagnostic {
            code: DiagnosticCode::DuplicateName,
            name: name.to_string(),
            location: format!("{section}.{name}"),
            message: format!("{name} is declared more than once in {section}"),
        });
    };

    for c in doc.classes {
        if schema.classes.contains_key(&c.name) {
            dup("classes", &c.name, &mut diags);
            continue;
        }
        schema.classes.insert(
            c.name.clone(),
            ClassDef {
                name: c.name,
                parent: c.parent,
                comment: c.comment,
            },
        );
    }
    for d in doc.data_properties {
        if schema.data_properties.contains_key(&d.name) {
            dup("dataProperties", &d.name, &mut diags);
            continue;
        }
        let range = match d.range {
            RangeDoc::Named(n) => match Datatype::from_name(&n) {
                Some(dt) => DataRange::Datatype(dt),
                None => {
                    diags.push(Diagnostic {
                        code: DiagnosticCode::UnknownDatatype,
                        name: n.clone(),
                        location: format!("dataProperties.{}.range", d.name),
                        message: format!("unknown datatype {n:?}"),
                    });
                    continue;
                }
            },
            RangeDoc::OneOf { one_of } => DataRange::OneOf(one_of),
        };
        schema.data_properties.insert(
            d.name.clone(),
            DataPropertyDef {
                name: d.name,
                domain: d.domain,
                range,
                functional: d.functional,
            },
        );
    }
    for o in doc.object_properties {
        if schema.object_properties.contains_key(&o.name) {
            dup("objectProperties", &o.name, &mut diags);
            continue;
        }
        schema.object_properties.insert(
            o.name.clone(),
            ObjectPropertyDef {
                name: o.name,
                domain: o.domain,
                range: o.range,
                inverse: o.inverse,
                traits: o.traits.into_iter().collect(),
                parent: o.parent,
            },
        );
    }

    diags.extend(validate_schema(&schema));
    if diags.is_empty() {
        Ok(schema)
    } else {
        Err(SchemaError::Invalid(diags))
    }
}

/// Renders a schema in the document format accepted by [`load_schema`].
pub fn serialize_schema(schema: &Schema) -> String {
    let doc = SchemaDoc {
        namespace: Some(schema.namespace.clone()),
        classes: schema
            .classes
            .values()
            .map(|c| ClassDoc {
                name: c.name.clone(),
                parent: c.parent.clone(),
                comment: c.comment.clone(),
            })
            .collect(),
        data_properties: schema
            .data_properties
            .values()
            .map(|d| DataPropertyDoc {
                name: d.name.clone(),
                domain: d.domain.clone(),
                range: match &d.range {
                    DataRange::Datatype(dt) => RangeDoc::Named(dt.name().to_string()),
                    DataRange::OneOf(v) => RangeDoc::OneOf { one_of: v.clone() },
                },
                functional: d.functional,
            })
            .collect(),
        object_properties: schema
            .object_properties
            .values()
            .map(|o| ObjectPropertyDoc {
                name: o.name.clone(),
                domain: o.domain.clone(),
                range: o.range.clone(),
                inverse: o.inverse.clone(),
                traits: o.traits.iter().copied().collect(),
                parent: o.parent.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("schema document serializes")
}

fn valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Checks every schema invariant. Empty iff the schema is well formed.
pub fn validate_schema(s: &Schema) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut push = |code, name: &str, location: String, message: String| {
        diags.push(Diagnostic {
            code,
            name: name.to_string(),
            location,
            message,
        })
    };

    let sections: [(&str, Vec<&String>); 3] = [
        ("classes", s.classes.keys().collect()),
        ("dataProperties", s.data_properties.keys().collect()),
        ("objectProperties", s.object_properties.keys().collect()),
    ];
    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    for (section, names) in &sections {
        for name in names {
            if !valid_identifier(name) {
                push(
                    DiagnosticCode::InvalidName,
                    name,
                    format!("{section}.{name}"),
                    format!("{name:?} is not a valid identifier"),
                );
            }
            if let Some(other) = seen.insert(name.as_str(), section) {
                push(
                    DiagnosticCode::NameCollision,
                    name,
                    format!("{section}.{name}"),
                    format!("{name} is declared both in {other} and in {section}"),
                );
            }
        }
    }

    for c in s.classes.values() {
        if c.comment.trim().is_empty() {
            push(
                DiagnosticCode::MissingComment,
                &c.name,
                format!("classes.{}.comment", c.name),
                format!("class {} has no comment", c.name),
            );
        }
        if let Some(p) = &c.parent {
            if !s.classes.contains_key(p) {
                push(
                    DiagnosticCode::DanglingReference,
                    p,
                    format!("classes.{}.parent", c.name),
                    format!("parent class {p} of {} is not declared", c.name),
                );
            }
        }
    }

    for d in s.data_properties.values() {
        if !s.has_class(&d.domain) {
            push(
                DiagnosticCode::DanglingReference,
                &d.domain,
                format!("dataProperties.{}.domain", d.name),
                format!("domain class {} of {} is not declared", d.domain, d.name),
            );
        }
        if let DataRange::OneOf(values) = &d.range {
            let distinct: HashSet<&String> = values.iter().collect();
            if distinct.len() < 2 || distinct.len() != values.len() {
                push(
                    DiagnosticCode::EnumTooSmall,
                    &d.name,
                    format!("dataProperties.{}.range", d.name),
                    format!("enumeration of {} must list at least two distinct values", d.name),
                );
            }
        }
    }

    for o in s.object_properties.values() {
        for (field, class) in [("domain", &o.domain), ("range", &o.range)] {
            if !s.has_class(class) {
                push(
                    DiagnosticCode::DanglingReference,
                    class,
                    format!("objectProperties.{}.{field}", o.name),
                    format!("{field} class {class} of {} is not declared", o.name),
                );
            }
        }
        if let Some(p) = &o.parent {
            if !s.object_properties.contains_key(p) {
                push(
                    DiagnosticCode::DanglingReference,
                    p,
                    format!("objectProperties.{}.parent", o.name),
                    format!("parent property {p} of {} is not declared", o.name),
                );
            }
        }
        let Some(inv_name) = &o.inverse else { continue };
        let Some(inv) = s.object_properties.get(inv_name) else {
            push(
                DiagnosticCode::DanglingReference,
                inv_name,
                format!("objectProperties.{}.inverse", o.name),
                format!("inverse property {inv_name} of {} is not declared", o.name),
            );
            continue;
        };
        if inv.inverse.as_deref() != Some(o.name.as_str()) {
            push(
                DiagnosticCode::AsymmetricInverse,
                &o.name,
                format!("objectProperties.{}.inverse", o.name),
                format!(
                    "{} declares inverse {inv_name}, but {inv_name} does not declare {} as its inverse",
                    o.name, o.name
                ),
            );
        } else if o.domain != inv.range || o.range != inv.domain {
            // Reported once per pair.
            if o.name < inv.name || o.name == inv.name {
                push(
                    DiagnosticCode::InverseSignature,
                    &o.name,
                    format!("objectProperties.{}", o.name),
                    format!(
                        "{} ({} -> {}) and its inverse {} ({} -> {}) must swap domain and range",
                        o.name, o.domain, o.range, inv.name, inv.domain, inv.range
                    ),
                );
            }
        }
    }

    for cycle in cycles(s.classes.values().map(|c| (c.name.as_str(), c.parent.as_deref()))) {
        push(
            DiagnosticCode::SubclassCycle,
            &cycle[0],
            format!("classes.{}.parent", cycle[0]),
            format!("subclass cycle: {}", cycle.join(" -> ")),
        );
    }
    for cycle in cycles(
        s.object_properties
            .values()
            .map(|o| (o.name.as_str(), o.parent.as_deref())),
    ) {
        push(
            DiagnosticCode::SubpropertyCycle,
            &cycle[0],
            format!("objectProperties.{}.parent", cycle[0]),
            format!("sub-property cycle: {}", cycle.join(" -> ")),
        );
    }

    diags
}

/// Cycles in a parent-pointer forest, each rotated to start at its smallest
/// member and reported once.
fn cycles<'a>(edges: impl Iterator<Item = (&'a str, Option<&'a str>)>) -> Vec<Vec<String>> {
    let parent: BTreeMap<&str, Option<&str>> = edges.collect();
    let mut found: BTreeSet<Vec<String>> = BTreeSet::new();
    for &start in parent.keys() {
        let mut path = vec![start];
        let mut cur = start;
        while let Some(Some(next)) = parent.get(cur) {
            if let Some(pos) = path.iter().position(|n| n == next) {
                let cyc = &path[pos..];
                let min = cyc.iter().enumerate().min_by_key(|(_, n)| **n).map(|(i, _)| i).unwrap();
                let rotated: Vec<String> = cyc[min..]
                    .iter()
                    .chain(&cyc[..min])
                    .map(|n| n.to_string())
                    .collect();
                found.insert(rotated);
                break;
            }
            path.push(next);
            cur = next;
        }
    }
    found.into_iter().collect()
}
