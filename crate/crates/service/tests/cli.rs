use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use batchline::review::{Action, DecisionRequest, FileLog};
use batchline_service::cli::run;
use batchline_service::pipeline::{open_session, Inputs};
use serde_json::Value;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn path(rel: &str) -> String {
    root().join(rel).to_string_lossy().into_owned()
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("batchline").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn golden_args<'a>(schema: &'a str, rules: &'a str, data: &'a str) -> Vec<&'a str> {
    vec!["--schema", schema, "--rules", rules, "--data", data]
}

#[test]
fn evaluate_prints_the_golden_verdicts() {
    let (schema, rules, data) = (path("schema/drug-domain.json"), path("rules/matching.dsl"), path("fixtures/vd-manifest.json"));
    let mut args = vec!["evaluate", "--format", "tsv"];
    args.extend(golden_args(&schema, &rules, &data));
    let (code, out, err) = cli(&args);
    assert_eq!(code, 0, "{err}");
    assert_eq!(
        out,
        "s1\ts2\trule\tverdict\n\
         stups:sample/1\tstups:sample/2\tdrugType\tMATCH\n\
         stups:sample/1\tstups:sample/2\tchemicalForm\tMATCH\n\
         stups:sample/1\tstups:sample/2\twidth\tNO_MATCH\n\
         stups:sample/1\tstups:sample/2\theight\tMATCH\n"
    );

    let mut args = vec!["evaluate"];
    args.extend(golden_args(&schema, &rules, &data));
    let (code, out, _) = cli(&args);
    assert_eq!(code, 0);
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["pairs"][0]["verdicts"]["width"]["value"], "NO_MATCH");
    assert_eq!(report["summary"]["byRule"]["height"]["match"], 1);
}

#[test]
fn evaluate_reads_a_single_table_with_its_mapping() {
    let schema = path("schema/drug-domain.json");
    let rules = path("rules/matching.dsl");
    let dims = path("rules/dimensions.dsl");
    let data = path("fixtures/vd-samples.csv");
    let mapping = path("fixtures/sample-mapping.json");
    let args = [
        "evaluate", "--schema", &schema, "--rules", &rules, "--rules", &dims, "--data", &data, "--mapping", &mapping,
        "--format", "tsv", "--summary",
    ];
    let (code, out, err) = cli(&args);
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "rule\tmatch\tno_match\tinapplicable");
    assert!(lines.contains(&"width\t0\t1\t0"));
    assert!(lines.contains(&"diameter\t0\t0\t1"));
    assert_eq!(lines.len(), 8);

    let (code, _, err) = cli(&["evaluate", "--schema", &schema, "--rules", &rules, "--data", &data]);
    assert_eq!(code, 1);
    assert!(err.contains("--mapping"), "{err}");
}

#[test]
fn enrich_adds_one_triple_to_the_chain() {
    let (schema, data) = (path("fixtures/transitive-schema.json"), path("fixtures/transitive-chain.triples"));
    let dir = tempfile::tempdir().unwrap();
    let enriched = dir.path().join("closed.triples");
    let enriched_s = enriched.to_string_lossy().into_owned();
    let (code, out, err) = cli(&["enrich", "--schema", &schema, "--data", &data, "--out", &enriched_s]);
    assert_eq!(code, 0, "{err}");
    let stats: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(stats["added"], 1);
    assert_eq!(stats["before"], 3);
    assert_eq!(stats["after"], 4);
    assert_eq!(stats["byRule"]["transitive"], 1);

    let (code, out, _) = cli(&["enrich", "--schema", &schema, "--data", &enriched_s]);
    assert_eq!(code, 0);
    let again: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(again["added"], 0);
}

#[test]
fn load_reports_counts_and_skips() {
    let schema = path("schema/drug-domain.json");
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("samples.csv");
    fs::write(&data, "sample,number,drug,form,width_mm,height_mm\n1,1,Cannabis,Résine,20O,100\n2,2,tabac,Résine,150,\n").unwrap();
    let skip_log = dir.path().join("skips.jsonl");
    let out_graph = dir.path().join("graph.triples");
    let args = [
        "load",
        "--schema",
        &schema,
        "--data",
        data.to_str().unwrap(),
        "--mapping",
        &path("fixtures/sample-mapping.json"),
        "--skip-log",
        skip_log.to_str().unwrap(),
        "--out",
        out_graph.to_str().unwrap(),
    ];
    let (code, out, err) = cli(&args);
    assert_eq!(code, 0, "{err}");
    let stats: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(stats["rowsRead"], 2);
    assert_eq!(stats["instancesCreated"], 2);
    assert_eq!(stats["valuesSkipped"], 2);
    // Typing, number and form for both rows, one drug type, one height, one width.
    assert_eq!(stats["triplesAdded"], 2 + 2 + 2 + 1 + 1 + 1);
    let skips: Vec<Value> = fs::read_to_string(&skip_log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(skips.len(), 2);
    assert_eq!(skips[0]["row"], 1);
    assert_eq!(skips[0]["column"], "width_mm");
    assert_eq!(skips[1]["column"], "drug");
    let written = fs::read_to_string(&out_graph).unwrap();
    assert_eq!(written.lines().count(), 9);
}

#[test]
fn report_rerenders_saved_json() {
    let (schema, rules, data) = (path("schema/drug-domain.json"), path("rules/matching.dsl"), path("fixtures/vd-manifest.json"));
    let mut args = vec!["evaluate"];
    args.extend(golden_args(&schema, &rules, &data));
    let (_, json_out, _) = cli(&args);
    args.extend(["--format", "tsv"]);
    let (_, tsv_out, _) = cli(&args);
    let dir = tempfile::tempdir().unwrap();
    let saved = dir.path().join("report.json");
    fs::write(&saved, &json_out).unwrap();
    let (code, out, _) = cli(&["report", saved.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(out, tsv_out);
    let (code, out, _) = cli(&["report", saved.to_str().unwrap(), "--format", "json", "--summary"]);
    assert_eq!(code, 0);
    let summary: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["pairs"], 1);

    fs::write(&saved, "{\"not\": \"a report\"}").unwrap();
    let (code, _, err) = cli(&["report", saved.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("not a report"));
}

#[test]
fn undeclared_property_is_rejected_with_a_hint() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.dsl");
    fs::write(&bad, "colour(s1, s2) := Sample(s1) AND Sample(s2) AND hue(s1, c1) AND hue(s2, c2) AND c1 == c2;\n").unwrap();
    let (schema, data) = (path("schema/drug-domain.json"), path("fixtures/vd-manifest.json"));
    let (code, out, err) = cli(&["evaluate", "--schema", &schema, "--rules", bad.to_str().unwrap(), "--data", &data]);
    assert_ne!(code, 0);
    assert!(out.is_empty());
    let first: Value = serde_json::from_str(err.lines().next().unwrap()).unwrap();
    assert_eq!(first["code"], "unknown-predicate");
    assert_eq!(first["name"], "hue");
    assert!(first["hint"].as_str().unwrap().contains("revise the schema"));
}

#[test]
fn rule_syntax_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("broken.dsl");
    fs::write(&bad, "width(s1, s2) := Sample(s1) AND\n").unwrap();
    let (schema, data) = (path("schema/drug-domain.json"), path("fixtures/vd-manifest.json"));
    let (code, _, err) = cli(&["evaluate", "--schema", &schema, "--rules", bad.to_str().unwrap(), "--data", &data]);
    assert_eq!(code, 1);
    let first: Value = serde_json::from_str(err.lines().next().unwrap()).unwrap();
    assert_eq!(first["code"], "syntax");
    assert!(first["file"].as_str().unwrap().ends_with("broken.dsl"));

    let rules = path("rules/matching.dsl");
    let (code, _, err) = cli(&["evaluate", "--schema", &schema, "--rules", &rules, "--rules", &rules, "--data", &data]);
    assert_eq!(code, 1);
    assert!(err.contains("duplicate-rule"), "{err}");
}

#[test]
fn usage_errors_exit_two() {
    let (code, _, err) = cli(&["frobnicate"]);
    assert_eq!(code, 2);
    assert!(err.contains("Usage"));
    let (code, _, _) = cli(&["evaluate", "--schema", "x.json"]);
    assert_eq!(code, 2);
    let (code, out, _) = cli(&["--help"]);
    assert_eq!(code, 0);
    for sub in ["load", "enrich", "evaluate", "report", "serve", "replay", "generate-synthetic"] {
        assert!(out.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_batchline");
    let status = Command::new(bin).arg("nope").output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("Usage"));
    let ok = Command::new(bin)
        .args(["enrich", "--schema", &path("fixtures/transitive-schema.json"), "--data", &path("fixtures/transitive-chain.triples")])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let stats: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(stats["added"], 1);
    let missing = Command::new(bin)
        .args(["enrich", "--schema", "/nonexistent/schema.json", "--data", "x.triples"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

fn inputs() -> Inputs {
    Inputs {
        schema: root().join("schema/drug-domain.json"),
        rules: vec![root().join("rules/matching.dsl")],
        data: root().join("fixtures/vd-manifest.json"),
        mapping: None,
        block_by_drug_type: false,
    }
}

fn decide(log: &Path, action: Action) {
    let mut session = open_session(&inputs(), Some(log)).unwrap();
    let req = DecisionRequest {
        s1: "stups:sample/2".into(),
        s2: "stups:sample/1".into(),
        action,
        expert: "alice".into(),
        comment: None,
    };
    session.record(req, batchline::review::now_timestamp()).unwrap();
}

#[test]
fn replay_rebuilds_logged_state() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("decisions.jsonl");
    decide(&log, Action::Accept);
    // A second session on the same log picks up the first decision.
    let resumed = open_session(&inputs(), Some(&log)).unwrap();
    assert_eq!(resumed.decisions().len(), 1);
    assert_eq!(FileLog::read(&log).unwrap().len(), 1);

    let (schema, rules, data) = (path("schema/drug-domain.json"), path("rules/matching.dsl"), path("fixtures/vd-manifest.json"));
    let mut args = vec!["replay", "--log", log.to_str().unwrap()];
    args.extend(golden_args(&schema, &rules, &data));
    let (code, out, err) = cli(&args);
    assert_eq!(code, 0, "{err}");
    let state: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(state["decisions"], 1);
    assert_eq!(state["accepted"], 1);
    assert_eq!(state["batches"][0]["members"].as_array().unwrap().len(), 2);
    assert_eq!(state["contentHash"], resumed.graph().content_hash());

    fs::write(&log, "{\"timestamp\": 1}\n").unwrap();
    let (code, _, err) = cli(&args);
    assert_eq!(code, 1);
    assert!(err.contains("line 1"), "{err}");
}

#[test]
fn generate_synthetic_writes_a_loadable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("synth");
    let (code, out, err) = cli(&["generate-synthetic", "--samples", "40", "--seed", "9", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let summary: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["samples"], 40);
    let manifest = out_dir.join("manifest.json");
    assert!(manifest.exists());
    let (code, out, _) = cli(&["load", "--schema", &path("schema/drug-domain.json"), "--data", manifest.to_str().unwrap()]);
    assert_eq!(code, 0);
    let stats: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(stats["instancesCreated"], summary["instances"]);
}
