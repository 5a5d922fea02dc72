use std::collections::BTreeSet;

use batchline::graph::Graph;
use batchline::reasoner::{materialize, Reasoner};
use batchline::schema::{load_schema, Schema};
use rand::seq::SliceRandom;
use testkit::closure::{random_digraph, transitive_closure};
use testkit::kb::{naive_closure, parse_text, KbCase, OSchema, OProperty, NS, TYPE};
use testkit::term::{render, OTerm, OTriple};

fn load(case: &KbCase) -> (Schema, Graph) {
    let schema = load_schema(case.schema_json().as_bytes())
        .unwrap_or_else(|e| panic!("{e}\n{}", case.schema_json()));
    let graph = Graph::parse_canonical(&case.text()).unwrap();
    (schema, graph)
}

fn closed(case: &KbCase) -> (Schema, Graph) {
    let (schema, mut graph) = load(case);
    materialize(&mut graph, &schema).unwrap();
    (schema, graph)
}

#[test]
fn semi_naive_matches_naive_fixpoint() {
    let mut derived = 0;
    for seed in 0..100 {
        let case = KbCase::generate(&mut testkit::rng(seed), 200);
        let (_, graph) = closed(&case);
        let got = parse_text(&graph.to_canonical_text());
        let want = case.closure();
        derived += want.len() - parse_text(&case.text()).len();
        assert_eq!(got, want, "seed {seed}\nschema {}", case.schema_json());
    }
    // The generator must exercise the rules, not just hand over closed graphs.
    assert!(derived > 2000, "only {derived} derived triples");
}

#[test]
fn materialization_is_idempotent() {
    for seed in 100..130 {
        let case = KbCase::generate(&mut testkit::rng(seed), 200);
        let (schema, mut graph) = closed(&case);
        let hash = graph.content_hash();
        let stats = materialize(&mut graph, &schema).unwrap();
        assert_eq!(stats.added, 0, "seed {seed}");
        assert_eq!(graph.content_hash(), hash);
    }
}

#[test]
fn more_facts_never_lose_conclusions() {
    for seed in 200..230 {
        let mut rng = testkit::rng(seed);
        let case = KbCase::generate(&mut rng, 150);
        let extra = testkit::kb::random_triples(&case.schema, 50, &mut rng);
        let (_, small) = closed(&case);
        let bigger = KbCase {
            schema: case.schema.clone(),
            triples: case.triples.iter().cloned().chain(extra).collect(),
        };
        let (_, large) = closed(&bigger);
        let small = parse_text(&small.to_canonical_text());
        let large = parse_text(&large.to_canonical_text());
        assert!(small.is_subset(&large), "seed {seed}");
    }
}

#[test]
fn insertion_order_does_not_matter() {
    for seed in 300..330 {
        let mut rng = testkit::rng(seed);
        let case = KbCase::generate(&mut rng, 200);
        let (schema, reference) = closed(&case);
        let mut shuffled = case.triples.clone();
        shuffled.shuffle(&mut rng);
        let mut graph = Graph::new();
        for line in shuffled.iter().map(|t| render([t.clone()])) {
            let one = Graph::parse_canonical(&line).unwrap();
            for t in one.iter() {
                graph.insert(&t);
            }
        }
        materialize(&mut graph, &schema).unwrap();
        assert_eq!(graph.content_hash(), reference.content_hash(), "seed {seed}");
    }
}

#[test]
fn incremental_run_matches_full_run() {
    for seed in 400..430 {
        let mut rng = testkit::rng(seed);
        let case = KbCase::generate(&mut rng, 150);
        let extra = testkit::kb::random_triples(&case.schema, 50, &mut rng);
        let (schema, mut graph) = closed(&case);
        let addition = Graph::parse_canonical(&render(extra.clone())).unwrap();
        let mut seeds = Vec::new();
        for t in addition.iter() {
            graph.insert(&t);
            let [s, p, o] = [t.subject(), t.predicate(), t.object()].map(|x| graph.lookup(x).unwrap());
            seeds.push([s, p, o]);
        }
        Reasoner::new(&schema).materialize_from(&mut graph, seeds).unwrap();
        let want = naive_closure(&case.schema, case.triples.iter().cloned().chain(extra));
        assert_eq!(parse_text(&graph.to_canonical_text()), want, "seed {seed}");
    }
}

#[test]
fn typing_is_sound() {
    for seed in 500..560 {
        let case = KbCase::generate(&mut testkit::rng(seed), 200);
        let (_, graph) = closed(&case);
        let facts = parse_text(&graph.to_canonical_text());
        for (s, p, o) in &facts {
            let Some(prop) = p.strip_prefix(NS).and_then(|n| case.schema.properties.iter().find(|q| q.name == n)) else {
                continue;
            };
            let typed = |x: &str, class: &str| {
                class == testkit::kb::TOP
                    || facts.contains(&(x.to_string(), TYPE.to_string(), OTerm::Iri(format!("{NS}{class}"))))
            };
            assert!(typed(s, &prop.domain), "seed {seed}: {s} lacks domain type of {p}");
            if let OTerm::Iri(o) = o {
                assert!(typed(o, &prop.range), "seed {seed}: {o} lacks range type of {p}");
            }
        }
    }
}

#[test]
fn symmetric_properties_are_closed() {
    for seed in 600..660 {
        let case = KbCase::generate(&mut testkit::rng(seed), 200);
        let (_, graph) = closed(&case);
        let facts = parse_text(&graph.to_canonical_text());
        for prop in case.schema.properties.iter().filter(|p| p.symmetric) {
            let p = format!("{NS}{}", prop.name);
            for (s, q, o) in &facts {
                if *q == p {
                    if let OTerm::Iri(o) = o {
                        assert!(facts.contains(&(o.clone(), p.clone(), OTerm::Iri(s.clone()))), "seed {seed}");
                    }
                }
            }
        }
    }
}

fn single_transitive() -> OSchema {
    OSchema {
        classes: vec![],
        properties: vec![OProperty {
            name: "reach".into(),
            domain: "Thing".into(),
            range: "Thing".into(),
            inverse: None,
            parent: None,
            transitive: true,
            symmetric: false,
        }],
        data_properties: vec![],
    }
}

#[test]
fn transitive_closure_matches_floyd_warshall() {
    let oschema = single_transitive();
    let json = oschema.to_json().replace("\"dataProperties\": [], ", "");
    let schema = load_schema(json.as_bytes()).unwrap();
    let mut rng = testkit::rng(7);
    for round in 0..100 {
        let (nodes, edges) = random_digraph(&mut rng, 30);
        let node = |i: usize| format!("{NS}n{i}");
        let triples: Vec<OTriple> = edges
            .iter()
            .map(|&(a, b)| (node(a), format!("{NS}reach"), OTerm::Iri(node(b))))
            .collect();
        let mut graph = Graph::parse_canonical(&render(triples)).unwrap();
        materialize(&mut graph, &schema).unwrap();
        let got: BTreeSet<OTriple> = parse_text(&graph.to_canonical_text());
        let want: BTreeSet<OTriple> = transitive_closure(nodes, &edges)
            .into_iter()
            .map(|(a, b)| (node(a), format!("{NS}reach"), OTerm::Iri(node(b))))
            .collect();
        assert_eq!(got, want, "round {round}");
    }
}
