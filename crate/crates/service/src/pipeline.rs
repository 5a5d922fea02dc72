//! Loading inputs from disk, shared by the CLI and the server.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use batchline::graph::Graph;
use batchline::ingest::{load_mapping, populate, populate_manifest, read_rows, IngestStats};
use batchline::planner::EvalOptions;
use batchline::review::{DecisionLog, FileLog, MemoryLog, Session};
use batchline::ruledsl::{parse_ruleset, validate_ruleset, RuleDiagnostic, RuleError, RuleSet};
use batchline::schema::{load_schema, Schema};

/// Rules that parsed but do not fit the schema.
#[derive(Debug)]
pub struct RuleRejection(pub Vec<RuleDiagnostic>);

impl fmt::Display for RuleRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} rule diagnostic(s)", self.0.len())?;
        for d in &self.0 {
            write!(f, "\n  {d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for RuleRejection {}

/// A rule file that failed to parse.
#[derive(Debug)]
pub struct RuleFileError {
    pub path: PathBuf,
    pub error: RuleError,
}

impl fmt::Display for RuleFileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path.display(), self.error)
    }
}

impl std::error::Error for RuleFileError {}

pub fn read_schema(path: &Path) -> Result<Schema> {
    let bytes = fs::read(path).with_context(|| format!("reading schema {}", path.display()))?;
    load_schema(&bytes).with_context(|| format!("loading schema {}", path.display()))
}

/// Parses every rule file, checks names are unique across files, then
/// validates the whole set against the schema.
pub fn read_rules(paths: &[PathBuf], schema: &Schema) -> Result<RuleSet> {
    let mut all = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path).with_context(|| format!("reading rules {}", path.display()))?;
        let set = parse_ruleset(&text).map_err(|error| RuleFileError {
            path: path.clone(),
            error,
        })?;
        all.extend(set.rules().iter().cloned());
    }
    let rules = RuleSet::new(all).map_err(|error| RuleFileError {
        path: paths.last().cloned().unwrap_or_default(),
        error,
    })?;
    let diags = validate_ruleset(&rules, schema);
    if !diags.is_empty() {
        return Err(RuleRejection(diags).into());
    }
    Ok(rules)
}

/// Reads a dataset. Canonical triple files (`.triples`, `.nt`) load as is,
/// a `.json` file is a table manifest, and `.csv`/`.jsonl` tables need a
/// mapping.
pub fn read_data(schema: &Schema, data: &Path, mapping: Option<&Path>) -> Result<(Graph, IngestStats)> {
    let ext = data.extension().and_then(|e| e.to_str()).unwrap_or("");
    let mut graph = Graph::new();
    let stats = match ext {
        "triples" | "nt" => {
            let text = fs::read_to_string(data).with_context(|| format!("reading {}", data.display()))?;
            graph = Graph::parse_canonical(&text).with_context(|| format!("parsing {}", data.display()))?;
            IngestStats {
                triples_added: graph.len(),
                ..IngestStats::default()
            }
        }
        "json" => populate_manifest(&mut graph, schema, data).with_context(|| format!("loading manifest {}", data.display()))?,
        "csv" | "jsonl" => {
            let Some(mapping) = mapping else {
                bail!("{} is a table; pass --mapping", data.display());
            };
            let mapping = load_mapping(mapping).with_context(|| format!("loading mapping {}", mapping.display()))?;
            let rows = read_rows(data).with_context(|| format!("reading {}", data.display()))?;
            populate(&mut graph, schema, &mapping, rows)?
        }
        _ => bail!("cannot tell the format of {} (expected .triples, .nt, .json, .csv or .jsonl)", data.display()),
    };
    Ok((graph, stats))
}

pub struct Inputs {
    pub schema: PathBuf,
    pub rules: Vec<PathBuf>,
    pub data: PathBuf,
    pub mapping: Option<PathBuf>,
    pub block_by_drug_type: bool,
}

impl Inputs {
    pub fn options(&self) -> EvalOptions {
        if self.block_by_drug_type {
            EvalOptions::blocked_by_drug_type()
        } else {
            EvalOptions::default()
        }
    }
}

/// Builds a review session. With a log path, earlier decisions in that file
/// are replayed and new ones are appended to it.
pub fn open_session(inputs: &Inputs, log: Option<&Path>) -> Result<Session> {
    let schema = read_schema(&inputs.schema)?;
    let rules = read_rules(&inputs.rules, &schema)?;
    let (graph, _) = read_data(&schema, &inputs.data, inputs.mapping.as_deref())?;
    let (sink, earlier): (Box<dyn DecisionLog>, _) = match log {
        Some(path) => {
            let earlier = FileLog::read(path)?;
            let sink = FileLog::open(path).with_context(|| format!("opening decision log {}", path.display()))?;
            (Box::new(sink), earlier)
        }
        None => (Box::new(MemoryLog::new()), Vec::new()),
    };
    let mut session = Session::new(schema, rules, graph, inputs.options(), sink)?;
    session.replay_records(earlier)?;
    Ok(session)
}
