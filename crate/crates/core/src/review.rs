//! Expert review of candidate pairs.
//!
//! Decisions are appended to a JSON-lines log before anything else happens.
//! Accepted pairs are the only way match and batch facts enter the graph:
//! each accepted pair asserts `isCloseTo`, and accepted pairs are grouped
//! transitively into batches. Replaying a log over the same base data
//! yields the same graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{hex, Graph, IdTriple, Provenance, Term, Triple, RDF_TYPE};
use crate::planner::{EvalOptions, Evaluator, MatchReport, PairReport};
use crate::reasoner::{MaterializationStats, Reasoner, ReasonerError};
use crate::ruledsl::{RuleDiagnostic, RuleSet};
use crate::schema::Schema;

pub const CLOSE_TO: &str = "isCloseTo";
pub const IN_BATCH: &str = "isInBatch";
pub const BATCH_CLASS: &str = "Batch";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Pending,
    Accepted,
    Rejected,
}

impl ReviewStatus {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pending" => Some(Self::Pending),
            "accepted" => Some(Self::Accepted),
            "rejected" => Some(Self::Rejected),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DecisionRecord {
    /// UTC, RFC 3339.
    pub timestamp: String,
    pub s1: String,
    pub s2: String,
    pub action: Action,
    pub expert: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub verdict_snapshot_hash: String,
}

/// A decision as submitted, before it is stamped and logged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub s1: String,
    pub s2: String,
    pub action: Action,
    pub expert: String,
    #[serde(default)]
    pub comment: Option<String>,
}

pub fn now_timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// SHA-256 of the pair's verdict map as JSON.
pub fn verdict_hash(pair: &PairReport) -> String {
    let json = serde_json::to_vec(&pair.verdicts).expect("verdicts serialize");
    hex(&Sha256::digest(&json))
}

/// Append-only sink for decision records.
pub trait DecisionLog: Send + Sync {
    /// Must be durable when it returns `Ok`.
    fn append(&mut self, record: &DecisionRecord) -> io::Result<()>;
}

pub struct FileLog {
    path: PathBuf,
    file: File,
}

impl FileLog {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Records of an existing log; a missing file reads as empty.
    pub fn read(path: impl AsRef<Path>) -> Result<Vec<DecisionRecord>, SessionError> {
        match File::open(path.as_ref()) {
            Ok(f) => read_records(BufReader::new(f)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(SessionError::Log(e)),
        }
    }
}

impl DecisionLog for FileLog {
    fn append(&mut self, record: &DecisionRecord) -> io::Result<()> {
        let mut line = serde_json::to_string(record).map_err(io::Error::other)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()
    }
}

#[derive(Debug, Default)]
struct MemoryLogState {
    text: String,
    fail: bool,
}

/// In-memory log. Clones share the same buffer.
#[derive(Debug, Clone, Default)]
pub struct MemoryLog {
    state: Arc<Mutex<MemoryLogState>>,
}

impl MemoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contents(&self) -> String {
        self.state.lock().expect("log lock").text.clone()
    }

    /// Makes every following append fail until reset.
    pub fn fail_writes(&self, fail: bool) {
        self.state.lock().expect("log lock").fail = fail;
    }
}

impl DecisionLog for MemoryLog {
    fn append(&mut self, record: &DecisionRecord) -> io::Result<()> {
        let mut s = self.state.lock().expect("log lock");
        if s.fail {
            return Err(io::Error::other("log write refused"));
        }
        s.text.push_str(&serde_json::to_string(record).map_err(io::Error::other)?);
        s.text.push('\n');
        Ok(())
    }
}

/// Discards records; for sessions that only replay.
pub struct NullLog;

impl DecisionLog for NullLog {
    fn append(&mut self, _: &DecisionRecord) -> io::Result<()> {
        Ok(())
    }
}

/// Parses a JSON-lines log. Blank lines are ignored.
pub fn read_records(reader: impl BufRead) -> Result<Vec<DecisionRecord>, SessionError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(SessionError::Log)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| SessionError::Replay {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("pair ({s1}, {s2}) is not in the current report")]
    UnknownPair { s1: String, s2: String },
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
    #[error("decision log: {0}")]
    Log(#[source] io::Error),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error("{} rule diagnostics", .0.len())]
    Rules(Vec<RuleDiagnostic>),
    #[error("malformed decision record at line {line}: {message}")]
    Replay { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchInfo {
    pub id: String,
    pub members: Vec<String>,
}

/// Review state over one knowledge base.
pub struct Session {
    schema: Schema,
    rules: RuleSet,
    options: EvalOptions,
    reasoner: Reasoner,
    graph: Graph,
    enrichment: MaterializationStats,
    report: MatchReport,
    report_generation: u64,
    decisions: Vec<DecisionRecord>,
    status: BTreeMap<(String, String), Action>,
    /// Overlay triples this session asserted; base facts are never owned.
    owned: BTreeSet<Triple>,
    log: Box<dyn DecisionLog>,
}

fn canonical_pair(s1: &str, s2: &str) -> (String, String) {
    if s1 <= s2 {
        (s1.to_string(), s2.to_string())
    } else {
        (s2.to_string(), s1.to_string())
    }
}

impl Session {
    /// Materializes `graph` and evaluates the rules over it.
    pub fn new(
        schema: Schema,
        rules: RuleSet,
        mut graph: Graph,
        options: EvalOptions,
        log: Box<dyn DecisionLog>,
    ) -> Result<Self, SessionError> {
        let reasoner = Reasoner::new(&schema);
        let enrichment = reasoner.materialize(&mut graph)?;
        let evaluator = Evaluator::new(&rules, &schema, &graph, options.clone()).map_err(SessionError::Rules)?;
        let report = evaluator.report(&graph);
        Ok(Self {
            report_generation: graph.generation(),
            schema,
            rules,
            options,
            reasoner,
            graph,
            enrichment,
            report,
            decisions: Vec::new(),
            status: BTreeMap::new(),
            owned: BTreeSet::new(),
            log,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn enrichment(&self) -> &MaterializationStats {
        &self.enrichment
    }

    pub fn report(&self) -> &MatchReport {
        &self.report
    }

    /// True when the graph changed after the report was computed.
    pub fn is_stale(&self) -> bool {
        self.report_generation != self.graph.generation()
    }

    pub fn report_generation(&self) -> u64 {
        self.report_generation
    }

    pub fn decisions(&self) -> &[DecisionRecord] {
        &self.decisions
    }

    pub fn decisions_for(&self, s1: &str, s2: &str) -> Vec<&DecisionRecord> {
        let key = canonical_pair(s1, s2);
        self.decisions.iter().filter(|d| (d.s1.as_str(), d.s2.as_str()) == (&key.0, &key.1)).collect()
    }

    pub fn status(&self, s1: &str, s2: &str) -> ReviewStatus {
        match self.status.get(&canonical_pair(s1, s2)) {
            None => ReviewStatus::Pending,
            Some(Action::Accept) => ReviewStatus::Accepted,
            Some(Action::Reject) => ReviewStatus::Rejected,
        }
    }

    /// Recomputes the report over the current graph.
    pub fn reevaluate(&mut self) -> Result<&MatchReport, SessionError> {
        let evaluator =
            Evaluator::new(&self.rules, &self.schema, &self.graph, self.options.clone()).map_err(SessionError::Rules)?;
        self.report = evaluator.report(&self.graph);
        self.report_generation = self.graph.generation();
        Ok(&self.report)
    }

    /// Validates, logs, then applies a decision.
    pub fn record(&mut self, req: DecisionRequest, timestamp: String) -> Result<DecisionRecord, SessionError> {
        if req.expert.trim().is_empty() {
            return Err(SessionError::InvalidDecision("expert identifier is empty".into()));
        }
        let (s1, s2) = canonical_pair(&req.s1, &req.s2);
        let pair = self.report.pair(&s1, &s2).ok_or_else(|| SessionError::UnknownPair {
            s1: s1.clone(),
            s2: s2.clone(),
        })?;
        let record = DecisionRecord {
            timestamp,
            verdict_snapshot_hash: verdict_hash(pair),
            s1,
            s2,
            action: req.action,
            expert: req.expert,
            comment: req.comment,
        };
        self.log.append(&record).map_err(SessionError::Log)?;
        self.apply(record.clone())?;
        Ok(record)
    }

    /// Applies already-logged records in order, without logging them again.
    pub fn replay_records(&mut self, records: impl IntoIterator<Item = DecisionRecord>) -> Result<usize, SessionError> {
        let mut n = 0;
        for r in records {
            self.apply(r)?;
            n += 1;
        }
        Ok(n)
    }

    fn apply(&mut self, record: DecisionRecord) -> Result<(), SessionError> {
        let key = canonical_pair(&record.s1, &record.s2);
        self.status.insert(key, record.action);
        self.decisions.push(record);
        self.sync_overlay()
    }

    fn accepted(&self) -> Vec<&(String, String)> {
        self.status
            .iter()
            .filter(|(_, a)| **a == Action::Accept)
            .map(|(k, _)| k)
            .collect()
    }

    /// Accepted pairs grouped transitively; members and groups sorted.
    pub fn batches(&self) -> Vec<BatchInfo> {
        let accepted = self.accepted();
        let mut parent: HashMap<&str, &str> = HashMap::new();
        fn find<'a>(p: &mut HashMap<&'a str, &'a str>, x: &'a str) -> &'a str {
            let mut r = x;
            while let Some(&n) = p.get(r) {
                if n == r {
                    break;
                }
                r = n;
            }
            p.insert(x, r);
            r
        }
        for (a, b) in &accepted {
            parent.entry(a).or_insert(a);
            parent.entry(b).or_insert(b);
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                parent.insert(hi, lo);
            }
        }
        let members: Vec<&str> = parent.keys().copied().collect();
        let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for m in members {
            let root = find(&mut parent, m);
            groups.entry(root).or_default().push(m.to_string());
        }
        let mut out: Vec<BatchInfo> = groups
            .into_values()
            .map(|mut members| {
                members.sort();
                BatchInfo {
                    id: self.batch_iri(&members[0]),
                    members,
                }
            })
            .collect();
        out.sort_by(|a, b| a.members[0].cmp(&b.members[0]));
        out
    }

    fn batch_iri(&self, first_member: &str) -> String {
        let local = self.schema.local_name(first_member).unwrap_or(first_member);
        let slug: String = local
            .chars()
            .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '-' })
            .collect();
        format!("{}batch/{slug}", self.schema.namespace)
    }

    fn overlay(&self) -> Result<BTreeSet<Triple>, SessionError> {
        let ns = |n: &str| self.schema.iri(n);
        let bad = |e: crate::graph::GraphError| SessionError::InvalidDecision(e.to_string());
        let mut out = BTreeSet::new();
        for (a, b) in self.accepted() {
            out.insert(Triple::entities(a, &ns(CLOSE_TO), b).map_err(bad)?);
        }
        for batch in self.batches() {
            out.insert(Triple::entities(&batch.id, RDF_TYPE, &ns(BATCH_CLASS)).map_err(bad)?);
            for m in &batch.members {
                out.insert(Triple::entities(m, &ns(IN_BATCH), &batch.id).map_err(bad)?);
            }
        }
        Ok(out)
    }

    /// Brings the graph in line with the accepted pairs: pure growth is
    /// materialized incrementally, any removal rebuilds the closure.
    fn sync_overlay(&mut self) -> Result<(), SessionError> {
        let wanted = self.overlay()?;
        let owned: BTreeSet<Triple> = wanted
            .into_iter()
            .filter(|t| self.owned.contains(t) || self.graph.provenance(t) != Some(Provenance::Asserted))
            .collect();
        let removed: Vec<Triple> = self.owned.difference(&owned).cloned().collect();
        let added: Vec<Triple> = owned.difference(&self.owned).cloned().collect();
        if removed.is_empty() && added.is_empty() {
            return Ok(());
        }
        if removed.is_empty() {
            let mut seeds: Vec<IdTriple> = Vec::new();
            for t in &added {
                self.graph.insert(t);
                let id = |g: &mut Graph, term: &Term| g.intern(term);
                seeds.push([
                    id(&mut self.graph, t.subject()),
                    id(&mut self.graph, t.predicate()),
                    id(&mut self.graph, t.object()),
                ]);
            }
            self.reasoner.materialize_from(&mut self.graph, seeds)?;
        } else {
            self.graph.clear_inferred();
            for t in &removed {
                self.graph.retract(t);
            }
            for t in &added {
                self.graph.insert(t);
            }
            self.reasoner.materialize(&mut self.graph)?;
        }
        self.owned = owned;
        Ok(())
    }
}

/// Applies a logged decision stream to a base session.
pub fn replay(reader: impl BufRead, mut base: Session) -> Result<Session, SessionError> {
    let records = read_records(reader)?;
    base.replay_records(records)?;
    Ok(base)
}
