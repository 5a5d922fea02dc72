//! End-to-end acceptance checks. Each check prints one PASS/FAIL line;
//! the test fails if any check fails.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use batchline::graph::{Graph, Term, Triple};
use batchline::planner::{compile, evaluate_ruleset, execute, CompileMode, EvalOptions, Evaluator, VerdictValue};
use batchline::reasoner::{materialize, RuleKind};
use batchline::review::{replay, Action, DecisionRequest, MemoryLog, Session};
use batchline::ruledsl::{parse_rule, parse_ruleset, validate_rule};
use batchline::schema::{load_schema, Schema};
use batchline::synth::{self, SynthConfig};
use batchline_service::api::{router, AppState};
use batchline_service::cli::run;
use batchline_service::pipeline::{read_data, read_rules, read_schema};
use testkit::kb::{parse_text, KbCase};
use testkit::query::RuleCase;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn path(rel: &str) -> String {
    root().join(rel).to_string_lossy().into_owned()
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(std::iter::once("batchline").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn golden() -> Outcome {
    let start = Instant::now();
    let schema = read_schema(&root().join("schema/drug-domain.json")).map_err(|e| e.to_string())?;
    let rules = read_rules(&[root().join("rules/matching.dsl")], &schema).map_err(|e| e.to_string())?;
    let (mut graph, _) = read_data(&schema, &root().join("fixtures/vd-manifest.json"), None).map_err(|e| e.to_string())?;
    materialize(&mut graph, &schema).map_err(|e| e.to_string())?;
    let report = evaluate_ruleset(&rules, &graph, &schema, EvalOptions::default()).map_err(|d| format!("{d:?}"))?;
    let elapsed = start.elapsed();
    check(report.pairs.len() == 1, || format!("{} pairs", report.pairs.len()))?;
    let got: Vec<(String, VerdictValue)> =
        report.pairs[0].verdicts.iter().map(|(r, v)| (r.clone(), v.value)).collect();
    let want = vec![
        ("drugType".to_string(), VerdictValue::Match),
        ("chemicalForm".to_string(), VerdictValue::Match),
        ("width".to_string(), VerdictValue::NoMatch),
        ("height".to_string(), VerdictValue::Match),
    ];
    check(got == want, || format!("verdicts {got:?}"))?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("4 verdicts exact in {elapsed:.2?}"))
}

fn sibling() -> Outcome {
    let schema = load_schema(
        br#"{"namespace": "ex:",
        "classes": [{"name": "Person", "comment": "A human."}],
        "objectProperties": [{"name": "isFatherOf", "domain": "Person", "range": "Person"}]}"#,
    )
    .map_err(|e| e.to_string())?;
    let mut graph = Graph::new();
    for (a, b) in [("f", "a"), ("f", "b"), ("g", "c")] {
        graph.insert(&Triple::entities(&format!("ex:{a}"), "ex:isFatherOf", &format!("ex:{b}")).unwrap());
    }
    materialize(&mut graph, &schema).map_err(|e| e.to_string())?;
    let rule = parse_rule(
        "siblings(p2, p3) := Person(p1) AND Person(p2) AND Person(p3) AND isFatherOf(p1, p2) AND isFatherOf(p1, p3) AND p2 != p3",
    )
    .map_err(|e| format!("{e:?}"))?;
    let diags = validate_rule(&rule, &schema);
    check(diags.is_empty(), || format!("{diags:?}"))?;
    let table = execute(&compile(&rule, &schema, &graph, CompileMode::Query), &graph);
    let unordered: BTreeSet<BTreeSet<String>> = table
        .head_tuples(&graph)
        .into_iter()
        .map(|t| t.iter().map(Term::to_string).collect())
        .collect();
    let want: BTreeSet<BTreeSet<String>> = [["ex:a".to_string(), "ex:b".to_string()].into()].into();
    check(unordered == want, || format!("got {unordered:?}"))?;
    Ok("{ex:a, ex:b}".into())
}

fn transitivity() -> Outcome {
    let schema = read_schema(&root().join("fixtures/transitive-schema.json")).map_err(|e| e.to_string())?;
    let (mut graph, _) = read_data(&schema, &root().join("fixtures/transitive-chain.triples"), None).map_err(|e| e.to_string())?;
    check(graph.len() == 3, || format!("fixture has {} triples", graph.len()))?;
    let first = materialize(&mut graph, &schema).map_err(|e| e.to_string())?;
    let hash = graph.content_hash();
    let second = materialize(&mut graph, &schema).map_err(|e| e.to_string())?;
    check(first.added == 1, || format!("first run added {}", first.added))?;
    check(graph.contains(&Triple::entities("ex:c1", "ex:r", "ex:c3").unwrap()), || "c1 r c3 missing".into())?;
    check(second.added == 0 && graph.content_hash() == hash, || format!("second run added {}", second.added))?;
    Ok("added 1, then 0".into())
}

fn fixpoint() -> Outcome {
    let start = Instant::now();
    for seed in 0..100 {
        let case = KbCase::generate(&mut testkit::rng(seed), 200);
        let schema = load_schema(case.schema_json().as_bytes()).map_err(|e| format!("seed {seed}: {e}"))?;
        let mut graph = Graph::parse_canonical(&case.text()).map_err(|e| format!("seed {seed}: {e}"))?;
        materialize(&mut graph, &schema).map_err(|e| format!("seed {seed}: {e}"))?;
        let got = parse_text(&graph.to_canonical_text());
        check(got == case.closure(), || format!("seed {seed} differs from the naive fixpoint"))?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!("100 seeds in {elapsed:.2?}"))
}

fn compiler() -> Outcome {
    let start = Instant::now();
    let schema = load_schema(testkit::query::SCHEMA_JSON.as_bytes()).map_err(|e| e.to_string())?;
    for seed in 0..100 {
        let case = RuleCase::generate(&mut testkit::rng(seed), 60);
        let rule = parse_rule(&case.rule_text()).map_err(|e| format!("seed {seed}: {e:?}"))?;
        let graph = Graph::parse_canonical(&case.graph_text()).map_err(|e| format!("seed {seed}: {e}"))?;
        let table = execute(&compile(&rule, &schema, &graph, CompileMode::Query), &graph);
        let got: BTreeSet<_> = table
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
            .collect();
        check(got == case.enumerate(true), || format!("seed {seed}: {}", case.rule_text()))?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!("100 seeds in {elapsed:.2?}"))
}

fn scale() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let summary = synth::generate(SynthConfig { samples: 20_000, seed: 1 }, dir.path()).map_err(|e| e.to_string())?;
    check(summary.samples == 20_000, || format!("{} samples", summary.samples))?;
    check((60_000..=80_000).contains(&summary.instances), || format!("{} instances", summary.instances))?;
    let schema = read_schema(&root().join("schema/drug-domain.json")).map_err(|e| e.to_string())?;
    let rules = read_rules(&[root().join("rules/matching.dsl")], &schema).map_err(|e| e.to_string())?;
    let (mut graph, stats) = read_data(&schema, &summary.manifest, None).map_err(|e| e.to_string())?;
    check(stats.instances_created == summary.instances, || {
        format!("loaded {} instances, generated {}", stats.instances_created, summary.instances)
    })?;
    let violations = batchline::reasoner::check_consistency(&graph, &schema);
    check(violations.is_empty(), || format!("{} schema violations", violations.len()))?;

    let start = Instant::now();
    let enrich = materialize(&mut graph, &schema).map_err(|e| e.to_string())?;
    let evaluator = Evaluator::new(&rules, &schema, &graph, EvalOptions::blocked_by_drug_type()).map_err(|d| format!("{d:?}"))?;
    let counts = evaluator.summary(&graph);
    let elapsed = start.elapsed();
    let (inverse, symmetric) = (enrich.added_by(RuleKind::Inverse), enrich.added_by(RuleKind::Symmetric));
    check(inverse > 0 && symmetric > 0, || format!("inverse {inverse}, symmetric {symmetric}"))?;
    check(counts.pairs > 0, || "no candidate pairs".into())?;
    within(elapsed, Duration::from_secs(60))?;
    Ok(format!(
        "{} instances, {} -> {} triples (inverse {inverse}, symmetric {symmetric}), {} pairs in {elapsed:.2?}",
        summary.instances, enrich.before, enrich.after, counts.pairs
    ))
}

fn validation_gate() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bad = dir.path().join("colour.dsl");
    std::fs::write(&bad, "colour(s1, s2) := Sample(s1) AND Sample(s2) AND hue(s1, c1) AND hue(s2, c2) AND c1 == c2;\n")
        .map_err(|e| e.to_string())?;
    let schema = path("schema/drug-domain.json");
    let data = path("fixtures/vd-manifest.json");
    let (code, _, err) = cli(&["evaluate", "--schema", &schema, "--rules", bad.to_str().unwrap(), "--data", &data]);
    check(code != 0, || "CLI exited 0".into())?;
    let diag: serde_json::Value = err
        .lines()
        .next()
        .and_then(|l| serde_json::from_str(l).ok())
        .ok_or_else(|| format!("no diagnostic on stderr: {err}"))?;
    check(diag["code"] == "unknown-predicate", || format!("diagnostic {diag}"))?;
    let hint = diag["hint"].as_str().unwrap_or("");
    check(hint.contains("schema"), || format!("hint {hint:?}"))?;
    Ok(format!("exit {code}, hint: {hint}"))
}

fn read_only() -> Outcome {
    let schema = read_schema(&root().join("schema/drug-domain.json")).map_err(|e| e.to_string())?;
    let mut rules_text = std::fs::read_to_string(root().join("rules/matching.dsl")).map_err(|e| e.to_string())?;
    rules_text.push_str(&std::fs::read_to_string(root().join("rules/dimensions.dsl")).map_err(|e| e.to_string())?);
    let rules = parse_ruleset(&rules_text).map_err(|e| format!("{e:?}"))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let summary = synth::generate(SynthConfig { samples: 60, seed: 5 }, dir.path()).map_err(|e| e.to_string())?;

    for data in [root().join("fixtures/vd-manifest.json"), summary.manifest.clone()] {
        let (mut graph, _) = read_data(&schema, &data, None).map_err(|e| e.to_string())?;
        materialize(&mut graph, &schema).map_err(|e| e.to_string())?;
        let before = graph.content_hash();
        for options in [EvalOptions::default(), EvalOptions::blocked_by_drug_type()] {
            evaluate_ruleset(&rules, &graph, &schema, options).map_err(|d| format!("{d:?}"))?;
            check(graph.content_hash() == before, || format!("{} changed", data.display()))?;
        }
    }

    // The service's evaluate endpoint leaves the graph alone as well.
    let (graph, _) = read_data(&schema, &root().join("fixtures/vd-manifest.json"), None).map_err(|e| e.to_string())?;
    let session = Session::new(schema, rules, graph, EvalOptions::default(), Box::new(MemoryLog::new()))
        .map_err(|e| e.to_string())?;
    let before = session.graph().content_hash();
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(|e| e.to_string())?;
    let after = runtime.block_on(async {
        use tower::ServiceExt;
        let state = AppState::new(session);
        let app = router(state.clone());
        let req = axum::http::Request::post("/evaluate").body(axum::body::Body::empty()).unwrap();
        let resp = app.oneshot(req).await.unwrap();
        assert!(resp.status().is_success());
        state.with_session(|s| s.graph().content_hash())
    });
    check(after == before, || "POST /evaluate changed the graph".into())?;
    Ok("hash unchanged by library and HTTP evaluation".into())
}

struct Fixture {
    schema: Schema,
    rules: batchline::ruledsl::RuleSet,
    graph: Graph,
}

fn review_fixture() -> Result<Fixture, String> {
    let schema = read_schema(&root().join("schema/drug-domain.json")).map_err(|e| e.to_string())?;
    let rules = read_rules(&[root().join("rules/matching.dsl")], &schema).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let summary = synth::generate(SynthConfig { samples: 10, seed: 11 }, dir.path()).map_err(|e| e.to_string())?;
    let (graph, _) = read_data(&schema, &summary.manifest, None).map_err(|e| e.to_string())?;
    Ok(Fixture { schema, rules, graph })
}

fn session(f: &Fixture, log: Box<dyn batchline::review::DecisionLog>) -> Result<Session, String> {
    Session::new(f.schema.clone(), f.rules.clone(), f.graph.clone(), EvalOptions::default(), log).map_err(|e| e.to_string())
}

/// Connected components of the accepted pairs.
fn components(accepted: &BTreeSet<(String, String)>) -> BTreeSet<BTreeSet<String>> {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in accepted {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut seen = BTreeSet::new();
    let mut out = BTreeSet::new();
    for &start in adj.keys() {
        if seen.contains(start) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                comp.insert(n.to_string());
                stack.extend(&adj[n]);
            }
        }
        out.insert(comp);
    }
    out
}

fn close_pairs(lines: &BTreeSet<testkit::term::OTriple>) -> BTreeSet<(String, String)> {
    lines
        .iter()
        .filter(|t| t.1 == "stups:isCloseTo")
        .filter_map(|(s, _, o)| match o {
            testkit::term::OTerm::Iri(o) => Some((s.clone(), o.clone())),
            _ => None,
        })
        .collect()
}

fn replay_determinism() -> Outcome {
    let fixture = review_fixture()?;
    let probe = session(&fixture, Box::new(MemoryLog::new()))?;
    let pairs: Vec<(String, String)> = probe.report().pairs.iter().map(|p| (p.s1.clone(), p.s2.clone())).collect();
    check(pairs.len() >= 10, || format!("only {} pairs", pairs.len()))?;
    // The generated data already links some samples.
    let base_close = close_pairs(&parse_text(&probe.graph().to_canonical_text()));
    let mut total_accepted = 0;
    for seed in 0..50u64 {
        let steps = testkit::decisions::sequence(&mut testkit::rng(seed), &pairs, 12);
        let log = MemoryLog::new();
        let mut live = session(&fixture, Box::new(log.clone()))?;
        let mut last: BTreeMap<(String, String), bool> = BTreeMap::new();
        for (i, step) in steps.iter().enumerate() {
            let req = DecisionRequest {
                s1: step.s1.clone(),
                s2: step.s2.clone(),
                action: if step.accept { Action::Accept } else { Action::Reject },
                expert: step.expert.clone(),
                comment: None,
            };
            live.record(req, format!("2026-01-01T00:00:{i:02}Z")).map_err(|e| format!("seed {seed}: {e}"))?;
            let key = if step.s1 < step.s2 { (step.s1.clone(), step.s2.clone()) } else { (step.s2.clone(), step.s1.clone()) };
            last.insert(key, step.accept);
        }
        let rebuilt = replay(Cursor::new(log.contents()), session(&fixture, Box::new(MemoryLog::new()))?)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        check(live.graph().content_hash() == rebuilt.graph().content_hash(), || format!("seed {seed}: hashes differ"))?;

        let accepted: BTreeSet<(String, String)> = last.into_iter().filter(|(_, a)| *a).map(|(k, _)| k).collect();
        total_accepted += accepted.len();
        let lines = parse_text(&live.graph().to_canonical_text());
        let has = |s: &str, p: &str, o: &str| lines.contains(&(s.to_string(), p.to_string(), testkit::term::OTerm::Iri(o.to_string())));
        for (a, b) in &accepted {
            check(has(a, "stups:isCloseTo", b) && has(b, "stups:isCloseTo", a), || format!("seed {seed}: {a} {b} not close in both directions"))?;
        }
        let mut want_close = base_close.clone();
        for (a, b) in &accepted {
            want_close.insert((a.clone(), b.clone()));
            want_close.insert((b.clone(), a.clone()));
        }
        check(close_pairs(&lines) == want_close, || format!("seed {seed}: isCloseTo differs from base plus accepted pairs"))?;

        let mut batch_of: BTreeMap<String, String> = BTreeMap::new();
        for (s, p, o) in &lines {
            if p == "stups:isInBatch" {
                if let testkit::term::OTerm::Iri(b) = o {
                    check(batch_of.insert(s.clone(), b.clone()).is_none(), || format!("seed {seed}: {s} in two batches"))?;
                }
            }
        }
        let mut grouped: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
        for (s, b) in &batch_of {
            grouped.entry(b).or_default().insert(s.clone());
        }
        let got: BTreeSet<BTreeSet<String>> = grouped.into_values().collect();
        check(got == components(&accepted), || format!("seed {seed}: batches {got:?}"))?;
    }
    check(total_accepted > 0, || "no sequence accepted anything".into())?;
    Ok(format!("50 seeds, {total_accepted} accepted pairs checked"))
}

#[test]
fn primary_criteria() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("golden two-sample example", golden),
        ("sibling rule", sibling),
        ("transitive chain", transitivity),
        ("fixpoint oracle equivalence", fixpoint),
        ("compiler oracle equivalence", compiler),
        ("scale smoke test", scale),
        ("rule validation gate", validation_gate),
        ("read-only evaluation", read_only),
        ("replay determinism", replay_determinism),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                println!("FAIL {name}: {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
