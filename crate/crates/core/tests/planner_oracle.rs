use std::collections::BTreeSet;

use batchline::graph::Graph;
use batchline::planner::{compile, execute, BindingTable, CompileMode};
use batchline::ruledsl::{parse_rule, validate_rule, RuleAst};
use batchline::schema::{load_schema, Schema};
use rand::seq::SliceRandom;
use testkit::query::{RuleCase, Row, SCHEMA_JSON};

fn schema() -> Schema {
    load_schema(SCHEMA_JSON.as_bytes()).unwrap()
}

fn rows(table: &BindingTable, graph: &Graph) -> BTreeSet<Row> {
    table
        .rows
        .iter()
        .map(|r| {
            let mut named: Vec<(String, String)> = table
                .variables
                .iter()
                .zip(&r.values)
                .map(|(v, &id)| (v.clone(), graph.term(id).to_string()))
                .collect();
            named.sort();
            (named, r.verdict)
        })
        .collect()
}

fn prepare(case: &RuleCase, schema: &Schema) -> (RuleAst, Graph) {
    let text = case.rule_text();
    let ast = parse_rule(&text).unwrap_or_else(|e| panic!("{text}: {e:?}"));
    let diags = validate_rule(&ast, schema);
    assert!(diags.is_empty(), "{text}: {diags:?}");
    (ast, Graph::parse_canonical(&case.graph_text()).unwrap())
}

#[test]
fn execution_matches_exhaustive_enumeration() {
    let schema = schema();
    let (mut nonempty, mut unknown) = (0, 0);
    for seed in 0..100 {
        let case = RuleCase::generate(&mut testkit::rng(seed), 60);
        let (ast, graph) = prepare(&case, &schema);
        for (mode, filter) in [(CompileMode::Query, true), (CompileMode::Verdict, false)] {
            let plan = compile(&ast, &schema, &graph, mode);
            let got = rows(&execute(&plan, &graph), &graph);
            let want = case.enumerate(filter);
            assert_eq!(got, want, "seed {seed} {mode:?}\n{}\n{plan}", case.rule_text());
            if filter && !want.is_empty() {
                nonempty += 1;
            }
            if !filter {
                unknown += want.iter().filter(|r| r.1.is_none()).count();
            }
        }
    }
    assert!(nonempty >= 30, "only {nonempty} cases had answers");
    assert!(unknown > 0, "no case reached an undefined comparison");
}

#[test]
fn atom_order_does_not_change_answers() {
    let schema = schema();
    for seed in 1000..1100 {
        let mut rng = testkit::rng(seed);
        let mut case = RuleCase::generate(&mut rng, 60);
        let (ast, graph) = prepare(&case, &schema);
        let reference = rows(&execute(&compile(&ast, &schema, &graph, CompileMode::Verdict), &graph), &graph);
        for _ in 0..3 {
            case.body.shuffle(&mut rng);
            let (ast, graph) = prepare(&case, &schema);
            let plan = compile(&ast, &schema, &graph, CompileMode::Verdict);
            let got = rows(&execute(&plan, &graph), &graph);
            assert_eq!(got, reference, "seed {seed}\n{}\n{plan}", case.rule_text());
        }
    }
}

#[test]
fn query_rows_are_the_true_verdict_rows() {
    let schema = schema();
    for seed in 2000..2100 {
        let case = RuleCase::generate(&mut testkit::rng(seed), 60);
        let (ast, graph) = prepare(&case, &schema);
        let query = rows(&execute(&compile(&ast, &schema, &graph, CompileMode::Query), &graph), &graph);
        let verdict: BTreeSet<Row> = rows(&execute(&compile(&ast, &schema, &graph, CompileMode::Verdict), &graph), &graph)
            .into_iter()
            .filter(|r| r.1 == Some(true))
            .collect();
        assert_eq!(query, verdict, "seed {seed}\n{}", case.rule_text());
    }
}
