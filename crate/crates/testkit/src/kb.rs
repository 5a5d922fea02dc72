//! Random schemas with random assertions, and a naive fixpoint oracle.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::term::{render, OTerm, OTriple};

pub const NS: &str = "ex:";
pub const TYPE: &str = "rdf:type";
pub const TOP: &str = "Thing";

#[derive(Debug, Clone)]
pub struct OClass {
    pub name: String,
    pub parent: Option<String>,
}

#[derive(Debug, Clone)]
pub struct OProperty {
    pub name: String,
    pub domain: String,
    pub range: String,
    pub inverse: Option<String>,
    pub parent: Option<String>,
    pub transitive: bool,
    pub symmetric: bool,
}

#[derive(Debug, Clone)]
pub struct OSchema {
    pub classes: Vec<OClass>,
    pub properties: Vec<OProperty>,
    /// Float-valued data properties; no entailment applies to them.
    pub data_properties: Vec<(String, String)>,
}

impl OSchema {
    pub fn to_json(&self) -> String {
        let q = |s: &str| format!("\"{s}\"");
        let classes: Vec<String> = self
            .classes
            .iter()
            .map(|c| match &c.parent {
                Some(p) => format!(
                    "{{\"name\": {}, \"parent\": {}, \"comment\": \"generated\"}}",
                    q(&c.name),
                    q(p)
                ),
                None => format!("{{\"name\": {}, \"comment\": \"generated\"}}", q(&c.name)),
            })
            .collect();
        let data: Vec<String> = self
            .data_properties
            .iter()
            .map(|(n, d)| format!("{{\"name\": {}, \"domain\": {}, \"range\": \"float\"}}", q(n), q(d)))
            .collect();
        let props: Vec<String> = self
            .properties
            .iter()
            .map(|p| {
                let mut fields = vec![
                    format!("\"name\": {}", q(&p.name)),
                    format!("\"domain\": {}", q(&p.domain)),
                    format!("\"range\": {}", q(&p.range)),
                ];
                if let Some(i) = &p.inverse {
                    fields.push(format!("\"inverse\": {}", q(i)));
                }
                if let Some(par) = &p.parent {
                    fields.push(format!("\"parent\": {}", q(par)));
                }
                let mut traits = Vec::new();
                if p.transitive {
                    traits.push(q("transitive"));
                }
                if p.symmetric {
                    traits.push(q("symmetric"));
                }
                if !traits.is_empty() {
                    fields.push(format!("\"traits\": [{}]", traits.join(", ")));
                }
                format!("{{{}}}", fields.join(", "))
            })
            .collect();
        format!(
            "{{\"namespace\": \"{NS}\", \"classes\": [{}], \"dataProperties\": [{}], \"objectProperties\": [{}]}}",
            classes.join(", "),
            data.join(", "),
            props.join(", ")
        )
    }

    fn property(&self, name: &str) -> Option<&OProperty> {
        self.properties.iter().find(|p| p.name == name)
    }
}

pub fn random_schema(rng: &mut impl Rng) -> OSchema {
    let n_classes = rng.random_range(1..=5);
    let mut classes: Vec<OClass> = Vec::new();
    for i in 0..n_classes {
        let parent = (i > 0 && rng.random_bool(0.5)).then(|| format!("C{}", rng.random_range(0..i)));
        classes.push(OClass {
            name: format!("C{i}"),
            parent,
        });
    }
    let mut class_pool: Vec<String> = classes.iter().map(|c| c.name.clone()).collect();
    class_pool.push(TOP.to_string());

    let n_props = rng.random_range(1..=6);
    let mut properties: Vec<OProperty> = Vec::new();
    for i in 0..n_props {
        properties.push(OProperty {
            name: format!("p{i}"),
            domain: class_pool.choose(rng).unwrap().clone(),
            range: class_pool.choose(rng).unwrap().clone(),
            inverse: None,
            parent: (i > 0 && rng.random_bool(0.4)).then(|| format!("p{}", rng.random_range(0..i))),
            transitive: rng.random_bool(0.3),
            symmetric: rng.random_bool(0.25),
        });
    }
    // Pair up some properties as mutual inverses with swapped signatures.
    let mut free: Vec<usize> = (0..n_props).collect();
    while free.len() >= 2 && rng.random_bool(0.5) {
        let a = free.remove(rng.random_range(0..free.len()));
        let b = free.remove(rng.random_range(0..free.len()));
        let (dom, ran) = (properties[a].domain.clone(), properties[a].range.clone());
        properties[b].domain = ran;
        properties[b].range = dom;
        properties[a].inverse = Some(properties[b].name.clone());
        properties[b].inverse = Some(properties[a].name.clone());
    }
    let data_properties = vec![("v".to_string(), class_pool.choose(rng).unwrap().clone())];
    OSchema {
        classes,
        properties,
        data_properties,
    }
}

/// Up to `max` random assertions over a handful of entities. Most use
/// declared properties; a few are typing triples, literal-valued, or use an
/// undeclared predicate.
pub fn random_triples(schema: &OSchema, max: usize, rng: &mut impl Rng) -> Vec<OTriple> {
    let n_entities = rng.random_range(2..=12);
    let entity = |rng: &mut dyn rand::RngCore| format!("{NS}e{}", rng.random_range(0..n_entities));
    let n = rng.random_range(0..=max);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let s = entity(rng);
        let roll = rng.random_range(0..100);
        let t = if roll < 70 {
            let p = schema.properties.choose(rng).unwrap();
            let o = if rng.random_bool(0.05) {
                OTerm::float("1.5")
            } else {
                OTerm::Iri(entity(rng))
            };
            (s, format!("{NS}{}", p.name), o)
        } else if roll < 85 {
            let c = schema.classes.choose(rng).unwrap();
            (s, TYPE.to_string(), OTerm::Iri(format!("{NS}{}", c.name)))
        } else if roll < 95 {
            let (d, _) = schema.data_properties.choose(rng).unwrap();
            (s, format!("{NS}{d}"), OTerm::float(&format!("{}.0", rng.random_range(1..5))))
        } else {
            (s, format!("{NS}unrelated"), OTerm::Iri(entity(rng)))
        };
        out.push(t);
    }
    out
}

#[derive(Debug, Clone)]
pub struct KbCase {
    pub schema: OSchema,
    pub triples: Vec<OTriple>,
}

impl KbCase {
    pub fn generate(rng: &mut impl Rng, max_triples: usize) -> Self {
        let schema = random_schema(rng);
        let triples = random_triples(&schema, max_triples, rng);
        Self { schema, triples }
    }

    pub fn schema_json(&self) -> String {
        self.schema.to_json()
    }

    pub fn text(&self) -> String {
        render(self.triples.iter().cloned())
    }

    pub fn closure(&self) -> BTreeSet<OTriple> {
        naive_closure(&self.schema, self.triples.iter().cloned())
    }
}

/// Everything entailed by `facts` under the schema's axioms, computed by
/// re-applying every rule to every fact until nothing changes.
pub fn naive_closure(schema: &OSchema, facts: impl IntoIterator<Item = OTriple>) -> BTreeSet<OTriple> {
    let mut all: BTreeSet<OTriple> = facts.into_iter().collect();
    let iri = |n: &str| format!("{NS}{n}");
    loop {
        let mut new: Vec<OTriple> = Vec::new();
        for (s, p, o) in &all {
            if p == TYPE {
                for c in &schema.classes {
                    if *o == OTerm::Iri(iri(&c.name)) {
                        if let Some(parent) = &c.parent {
                            new.push((s.clone(), TYPE.to_string(), OTerm::Iri(iri(parent))));
                        }
                    }
                }
                continue;
            }
            let Some(prop) = p.strip_prefix(NS).and_then(|n| schema.property(n)) else {
                continue;
            };
            let object_iri = match o {
                OTerm::Iri(x) => Some(x.clone()),
                OTerm::Lit(..) => None,
            };
            if let Some(parent) = &prop.parent {
                new.push((s.clone(), iri(parent), o.clone()));
            }
            if prop.domain != TOP {
                new.push((s.clone(), TYPE.to_string(), OTerm::Iri(iri(&prop.domain))));
            }
            if let Some(x) = &object_iri {
                if let Some(inv) = &prop.inverse {
                    let mutual = schema
                        .property(inv)
                        .is_some_and(|q| q.inverse.as_deref() == Some(prop.name.as_str()));
                    if mutual {
                        new.push((x.clone(), iri(inv), OTerm::Iri(s.clone())));
                    }
                }
                if prop.symmetric {
                    new.push((x.clone(), p.clone(), OTerm::Iri(s.clone())));
                }
                if prop.range != TOP {
                    new.push((x.clone(), TYPE.to_string(), OTerm::Iri(iri(&prop.range))));
                }
                if prop.transitive {
                    for (s2, p2, o2) in &all {
                        if p2 == p && s2 == x {
                            new.push((s.clone(), p.clone(), o2.clone()));
                        }
                    }
                }
            }
        }
        let before = all.len();
        all.extend(new);
        if all.len() == before {
            return all;
        }
    }
}

pub fn parse_line(line: &str) -> OTriple {
    let mut parts = line.splitn(3, ' ');
    let s = parts.next().unwrap().to_string();
    let p = parts.next().unwrap().to_string();
    let o = parts.next().unwrap();
    let o = match o.strip_prefix('"') {
        Some(rest) => {
            let (lex, dt) = rest.rsplit_once("\"^^").expect("literal");
            let dt = match dt {
                "float" => "float",
                "integer" => "integer",
                "string" => "string",
                "date" => "date",
                "boolean" => "boolean",
                other => panic!("unknown datatype {other}"),
            };
            OTerm::Lit(lex.to_string(), dt)
        }
        None => OTerm::Iri(o.to_string()),
    };
    (s, p, o)
}

/// Reads canonical text (as produced by the engine) back into oracle terms.
pub fn parse_text(text: &str) -> BTreeSet<OTriple> {
    text.lines().filter(|l| !l.trim().is_empty()).map(parse_line).collect()
}
