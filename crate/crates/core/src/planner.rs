//! Rule compilation and evaluation.
//!
//! A rule body compiles to a pipeline of index scans, one per class or
//! property atom, executed as index nested-loop joins. Comparisons either
//! filter rows (query form) or are folded into a tri-state verdict column
//! (verdict form). Pair evaluation turns verdict rows into MATCH, NO_MATCH
//! or INAPPLICABLE for every candidate pair and rule.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{Datatype, Graph, IdTriple, Term, TermId, RDF_TYPE};
use crate::ruledsl::{validate_rule, AtomKind, CmpOp, Operand, RuleAst, RuleDiagnostic, RuleSet};
use crate::schema::Schema;

/// `|a - b| / max(a, b) <= t`. Callers guarantee `a, b > 0`.
pub fn reldiff_eval(a: f64, b: f64, t: f64) -> bool {
    (a - b).abs() / a.max(b) <= t
}

fn reldiff_checked(a: f64, b: f64, t: f64) -> Option<bool> {
    (a > 0.0 && b > 0.0).then(|| reldiff_eval(a, b, t))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PatternTerm {
    Var(usize),
    Const(Term),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Var(usize),
    Str(String),
    Num(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Test {
    Compare { left: Arg, op: CmpOp, right: Arg },
    RelDiff { left: usize, right: usize, tolerance: f64 },
}

impl Test {
    fn vars(&self) -> Vec<usize> {
        match self {
            Test::Compare { left, right, .. } => [left, right]
                .into_iter()
                .filter_map(|a| match a {
                    Arg::Var(v) => Some(*v),
                    _ => None,
                })
                .collect(),
            Test::RelDiff { left, right, .. } => vec![*left, *right],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanStep {
    /// Index scan joined with the current row on `join_on`.
    Scan {
        atom: usize,
        pattern: [PatternTerm; 3],
        estimate: usize,
        join_on: Vec<usize>,
    },
    /// Drops rows whose test is not true.
    Filter { atom: usize, test: Test },
    /// Conjunction of the tests, stored in the verdict column.
    Bind { tests: Vec<(usize, Test)> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompileMode {
    /// Comparisons filter rows; the result is the set of satisfying bindings.
    Query,
    /// Comparisons feed the verdict column; rows are the structural matches.
    Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub rule: String,
    pub variables: Vec<String>,
    pub head: Vec<usize>,
    pub steps: Vec<PlanStep>,
}

impl QueryPlan {
    pub fn scans(&self) -> impl Iterator<Item = &PlanStep> {
        self.steps.iter().filter(|s| matches!(s, PlanStep::Scan { .. }))
    }

    pub fn var(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }
}

impl fmt::Display for QueryPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = |i: &usize| format!("?{}", self.variables[*i]);
        let arg = |a: &Arg| match a {
            Arg::Var(i) => v(i),
            Arg::Str(s) => format!("{s:?}"),
            Arg::Num(n) => n.to_string(),
        };
        let test = |t: &Test| match t {
            Test::Compare { left, op, right } => format!("{} {} {}", arg(left), op.symbol(), arg(right)),
            Test::RelDiff { left, right, tolerance } => format!("reldiff({}, {}, {tolerance})", v(left), v(right)),
        };
        writeln!(f, "plan {}({})", self.rule, self.head.iter().map(v).collect::<Vec<_>>().join(", "))?;
        for step in &self.steps {
            match step {
                PlanStep::Scan { pattern, estimate, join_on, .. } => {
                    let p: Vec<String> = pattern
                        .iter()
                        .map(|t| match t {
                            PatternTerm::Var(i) => v(i),
                            PatternTerm::Const(t) => t.to_string(),
                        })
                        .collect();
                    write!(f, "  scan ({}) est={estimate}", p.join(" "))?;
                    if !join_on.is_empty() {
                        write!(f, " join on {}", join_on.iter().map(v).collect::<Vec<_>>().join(", "))?;
                    }
                    writeln!(f)?;
                }
                PlanStep::Filter { test: t, .. } => writeln!(f, "  filter {}", test(t))?,
                PlanStep::Bind { tests } => {
                    let parts: Vec<String> = tests.iter().map(|(_, t)| test(t)).collect();
                    writeln!(f, "  bind verdict = {}", if parts.is_empty() { "true".into() } else { parts.join(" && ") })?;
                }
            }
        }
        Ok(())
    }
}

fn test_of(kind: &AtomKind, var: &impl Fn(&str) -> usize) -> Option<Test> {
    let arg = |o: &Operand| match o {
        Operand::Var(v) => Arg::Var(var(v)),
        Operand::Str(s) => Arg::Str(s.clone()),
        Operand::Number(n) => Arg::Num(*n),
    };
    match kind {
        AtomKind::Compare { left, op, right } => Some(Test::Compare {
            left: arg(left),
            op: *op,
            right: arg(right),
        }),
        AtomKind::RelDiff { left, right, tolerance } => Some(Test::RelDiff {
            left: var(left),
            right: var(right),
            tolerance: *tolerance,
        }),
        _ => None,
    }
}

fn pattern_of(kind: &AtomKind, schema: &Schema, var: &impl Fn(&str) -> usize) -> Option<[PatternTerm; 3]> {
    let entity = |s: String| PatternTerm::Const(Term::Entity(s));
    match kind {
        AtomKind::Class { class, var: x } => Some([
            PatternTerm::Var(var(x)),
            entity(RDF_TYPE.to_string()),
            entity(schema.iri(class)),
        ]),
        AtomKind::Property { property, subject, object } => Some([
            PatternTerm::Var(var(subject)),
            entity(schema.iri(property)),
            PatternTerm::Var(var(object)),
        ]),
        _ => None,
    }
}

fn estimate(pattern: &[PatternTerm; 3], graph: &Graph) -> usize {
    let mut ids = [None; 3];
    for (slot, t) in ids.iter_mut().zip(pattern) {
        if let PatternTerm::Const(term) = t {
            match graph.lookup(term) {
                Some(id) => *slot = Some(id),
                None => return 0,
            }
        }
    }
    graph.count_ids(ids[0], ids[1], ids[2])
}

fn pattern_vars(p: &[PatternTerm; 3]) -> impl Iterator<Item = usize> + '_ {
    p.iter().filter_map(|t| match t {
        PatternTerm::Var(v) => Some(*v),
        PatternTerm::Const(_) => None,
    })
}

/// Compiles the atoms `subset` (indices into the body) of `ast`. Variables
/// keep their rule-wide numbering.
fn compile_atoms(
    ast: &RuleAst,
    subset: &[usize],
    schema: &Schema,
    graph: &Graph,
    mode: CompileMode,
    prebound: &[usize],
) -> QueryPlan {
    let variables: Vec<String> = ast.variables().into_iter().map(String::from).collect();
    let var = |name: &str| variables.iter().position(|v| v == name).expect("variable collected");
    let head = ast.head.iter().map(|h| var(h)).collect();

    let mut scans: Vec<(usize, [PatternTerm; 3], usize)> = Vec::new();
    let mut tests: Vec<(usize, Test)> = Vec::new();
    for &i in subset {
        let kind = &ast.body[i].kind;
        if let Some(p) = pattern_of(kind, schema, &var) {
            let est = estimate(&p, graph);
            scans.push((i, p, est));
        } else if let Some(t) = test_of(kind, &var) {
            tests.push((i, t));
        }
    }

    let mut bound: BTreeSet<usize> = prebound.iter().copied().collect();
    let mut steps = Vec::new();
    let mut pending = tests.clone();
    let flush = |bound: &BTreeSet<usize>, pending: &mut Vec<(usize, Test)>, steps: &mut Vec<PlanStep>| {
        if mode != CompileMode::Query {
            return;
        }
        pending.retain(|(atom, t)| {
            if t.vars().iter().all(|v| bound.contains(v)) {
                steps.push(PlanStep::Filter { atom: *atom, test: t.clone() });
                false
            } else {
                true
            }
        });
    };
    flush(&bound, &mut pending, &mut steps);
    while !scans.is_empty() {
        // Prefer scans that join with bound variables, then the smallest
        // exact count, then source order.
        let connected = |p: &[PatternTerm; 3]| pattern_vars(p).any(|v| bound.contains(&v));
        let any_connected = scans.iter().any(|(_, p, _)| connected(p));
        let pick = scans
            .iter()
            .enumerate()
            .filter(|(_, (_, p, _))| !any_connected || connected(p))
            .min_by_key(|(_, (atom, _, est))| (*est, *atom))
            .map(|(k, _)| k)
            .expect("non-empty");
        let (atom, pattern, est) = scans.remove(pick);
        let mut join_on: Vec<usize> = pattern_vars(&pattern).filter(|v| bound.contains(v)).collect();
        join_on.dedup();
        bound.extend(pattern_vars(&pattern));
        steps.push(PlanStep::Scan {
            atom,
            pattern,
            estimate: est,
            join_on,
        });
        flush(&bound, &mut pending, &mut steps);
    }
    if mode == CompileMode::Verdict {
        steps.push(PlanStep::Bind { tests });
    }
    QueryPlan {
        rule: ast.name.clone(),
        variables,
        head,
        steps,
    }
}

/// Compiles a whole rule. Class and property names resolve through the
/// schema namespace; scan estimates are exact index counts on `graph`.
pub fn compile(ast: &RuleAst, schema: &Schema, graph: &Graph, mode: CompileMode) -> QueryPlan {
    let all: Vec<usize> = (0..ast.body.len()).collect();
    compile_atoms(ast, &all, schema, graph, mode, &[])
}

// Execution

/// A value as seen by comparisons.
#[derive(Debug, Clone, Copy)]
enum Val<'a> {
    Entity(TermId),
    Num(f64),
    Text(&'a str, Datatype),
}

fn val_of(graph: &Graph, id: TermId) -> Val<'_> {
    match graph.term(id) {
        Term::Entity(_) => Val::Entity(id),
        Term::Literal(l) => match graph.numeric(id) {
            Some(n) => Val::Num(n),
            None => Val::Text(l.lexical(), l.datatype()),
        },
    }
}

fn apply(op: CmpOp, ord: Ordering) -> bool {
    match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
    }
}

/// Tri-state comparison: `None` when the operand types do not support `op`.
fn compare(l: Val<'_>, op: CmpOp, r: Val<'_>) -> Option<bool> {
    match (l, r) {
        (Val::Entity(a), Val::Entity(b)) => (!op.is_ordering()).then(|| apply(op, a.cmp(&b))),
        (Val::Num(a), Val::Num(b)) => a.partial_cmp(&b).map(|o| apply(op, o)),
        (Val::Text(a, da), Val::Text(b, db)) => {
            use Datatype::{Boolean, Date, String};
            let compatible = da == db || matches!((da, db), (String, Date) | (Date, String));
            if !compatible || (da == Boolean && op.is_ordering()) {
                return None;
            }
            Some(apply(op, a.cmp(b)))
        }
        _ => None,
    }
}

fn arg_val<'a>(a: &'a Arg, graph: &'a Graph, get: &impl Fn(usize) -> TermId) -> Val<'a> {
    match a {
        Arg::Var(v) => val_of(graph, get(*v)),
        Arg::Num(n) => Val::Num(*n),
        Arg::Str(s) => Val::Text(s, Datatype::String),
    }
}

fn eval_test(test: &Test, graph: &Graph, get: &impl Fn(usize) -> TermId) -> Option<bool> {
    let arg = |a| arg_val(a, graph, get);
    match test {
        Test::Compare { left, op, right } => compare(arg(left), *op, arg(right)),
        Test::RelDiff { left, right, tolerance } => {
            match (graph.numeric(get(*left)), graph.numeric(get(*right))) {
                (Some(a), Some(b)) => reldiff_checked(a, b, *tolerance),
                _ => None,
            }
        }
    }
}

/// Kleene conjunction: false dominates, then unknown.
fn conjunction(values: impl Iterator<Item = Option<bool>>) -> Option<bool> {
    let mut unknown = false;
    for v in values {
        match v {
            Some(false) => return Some(false),
            None => unknown = true,
            Some(true) => {}
        }
    }
    if unknown {
        None
    } else {
        Some(true)
    }
}

enum Slot {
    Var(usize),
    Id(TermId),
    Missing,
}

enum Step<'p> {
    Scan([Slot; 3]),
    Filter(&'p Test),
    Bind(Vec<&'p Test>),
}

struct Resolved<'p> {
    width: usize,
    steps: Vec<Step<'p>>,
}

impl<'p> Resolved<'p> {
    fn new(plan: &'p QueryPlan, graph: &Graph) -> Self {
        let steps = plan
            .steps
            .iter()
            .map(|s| match s {
                PlanStep::Scan { pattern, .. } => Step::Scan(pattern.clone().map(|t| match t {
                    PatternTerm::Var(v) => Slot::Var(v),
                    PatternTerm::Const(term) => graph.lookup(&term).map_or(Slot::Missing, Slot::Id),
                })),
                PlanStep::Filter { test, .. } => Step::Filter(test),
                PlanStep::Bind { tests } => Step::Bind(tests.iter().map(|(_, t)| t).collect()),
            })
            .collect();
        Self {
            width: plan.variables.len(),
            steps,
        }
    }

    fn run(&self, graph: &Graph, initial: &[(usize, TermId)]) -> Vec<(Vec<Option<TermId>>, Option<bool>)> {
        let mut row = vec![None; self.width];
        for &(v, id) in initial {
            row[v] = Some(id);
        }
        let mut out = Vec::new();
        self.step(graph, 0, &mut row, &mut out);
        out
    }

    fn step(
        &self,
        graph: &Graph,
        at: usize,
        row: &mut Vec<Option<TermId>>,
        out: &mut Vec<(Vec<Option<TermId>>, Option<bool>)>,
    ) {
        let Some(step) = self.steps.get(at) else {
            out.push((row.clone(), Some(true)));
            return;
        };
        match step {
            Step::Scan(slots) => {
                let mut key = [None; 3];
                for (k, slot) in key.iter_mut().zip(slots) {
                    *k = match slot {
                        Slot::Var(v) => row[*v],
                        Slot::Id(id) => Some(*id),
                        Slot::Missing => return,
                    };
                }
                let found: Vec<IdTriple> = graph.match_ids(key[0], key[1], key[2]).collect();
                for triple in found {
                    let mut set: Vec<usize> = Vec::new();
                    let mut ok = true;
                    for (slot, id) in slots.iter().zip(triple) {
                        if let Slot::Var(v) = slot {
                            match row[*v] {
                                Some(cur) if cur != id => {
                                    ok = false;
                                    break;
                                }
                                Some(_) => {}
                                None => {
                                    row[*v] = Some(id);
                                    set.push(*v);
                                }
                            }
                        }
                    }
                    if ok {
                        self.step(graph, at + 1, row, out);
                    }
                    for v in set {
                        row[v] = None;
                    }
                }
            }
            Step::Filter(test) => {
                let get = |v: usize| row[v].expect("filter variable bound");
                if eval_test(test, graph, &get) == Some(true) {
                    self.step(graph, at + 1, row, out);
                }
            }
            Step::Bind(tests) => {
                let get = |v: usize| row[v].expect("bind variable bound");
                let verdict = conjunction(tests.iter().map(|t| eval_test(t, graph, &get)));
                out.push((row.clone(), verdict));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BindingRow {
    pub values: Vec<TermId>,
    /// Always `Some(true)` for query-form plans.
    pub verdict: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BindingTable {
    pub variables: Vec<String>,
    pub head: Vec<usize>,
    pub rows: Vec<BindingRow>,
}

impl BindingTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows as terms, in table order.
    pub fn decode(&self, graph: &Graph) -> Vec<Vec<Term>> {
        self.rows
            .iter()
            .map(|r| r.values.iter().map(|&id| graph.term(id).clone()).collect())
            .collect()
    }

    /// Distinct head tuples.
    pub fn head_tuples(&self, graph: &Graph) -> BTreeSet<Vec<Term>> {
        self.rows
            .iter()
            .map(|r| self.head.iter().map(|&h| graph.term(r.values[h]).clone()).collect())
            .collect()
    }
}

pub fn execute(plan: &QueryPlan, graph: &Graph) -> BindingTable {
    execute_with(plan, graph, &[])
}

/// Executes with some variables bound up front.
pub fn execute_with(plan: &QueryPlan, graph: &Graph, initial: &[(usize, TermId)]) -> BindingTable {
    let raw = Resolved::new(plan, graph).run(graph, initial);
    let mut rows: Vec<BindingRow> = raw
        .into_iter()
        .map(|(values, verdict)| BindingRow {
            values: values.into_iter().map(|v| v.expect("safe rule binds every variable")).collect(),
            verdict,
        })
        .collect();
    let key = |r: &BindingRow| -> (Vec<&Term>, Vec<&Term>) {
        (
            plan.head.iter().map(|&h| graph.term(r.values[h])).collect(),
            r.values.iter().map(|&v| graph.term(v)).collect(),
        )
    };
    rows.sort_by(|a, b| key(a).cmp(&key(b)));
    rows.dedup();
    BindingTable {
        variables: plan.variables.clone(),
        head: plan.head.clone(),
        rows,
    }
}

// Pair evaluation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictValue {
    Match,
    NoMatch,
    Inapplicable,
}

impl VerdictValue {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictValue::Match => "MATCH",
            VerdictValue::NoMatch => "NO_MATCH",
            VerdictValue::Inapplicable => "INAPPLICABLE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "MATCH" => Some(VerdictValue::Match),
            "NO_MATCH" => Some(VerdictValue::NoMatch),
            "INAPPLICABLE" => Some(VerdictValue::Inapplicable),
            _ => None,
        }
    }
}

impl fmt::Display for VerdictValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub value: VerdictValue,
    /// Variable name to canonical term.
    pub bindings: IndexMap<String, String>,
    /// Canonical lines of the triples matched by the deciding row.
    pub support: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub s1: String,
    pub s2: String,
    pub verdicts: IndexMap<String, Verdict>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VerdictCounts {
    #[serde(rename = "match")]
    pub matches: usize,
    pub no_match: usize,
    pub inapplicable: usize,
}

impl VerdictCounts {
    fn add(&mut self, v: VerdictValue) {
        match v {
            VerdictValue::Match => self.matches += 1,
            VerdictValue::NoMatch => self.no_match += 1,
            VerdictValue::Inapplicable => self.inapplicable += 1,
        }
    }

    fn merge(&mut self, other: &Self) {
        self.matches += other.matches;
        self.no_match += other.no_match;
        self.inapplicable += other.inapplicable;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleConfigError {
    pub rule: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportSummary {
    pub samples: usize,
    pub pairs: usize,
    pub by_rule: IndexMap<String, VerdictCounts>,
    pub errors: Vec<RuleConfigError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// Content hash of the evaluated graph.
    pub dataset: String,
    pub rules: Vec<String>,
    pub pairs: Vec<PairReport>,
    pub summary: ReportSummary,
}

impl MatchReport {
    pub fn pair(&self, s1: &str, s2: &str) -> Option<&PairReport> {
        let (a, b) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        self.pairs.iter().find(|p| p.s1 == a && p.s2 == b)
    }

    /// `s1  s2  rule  verdict`, tab separated, one line per verdict.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("s1\ts2\trule\tverdict\n");
        for p in &self.pairs {
            for (rule, v) in &p.verdicts {
                out.push_str(&format!("{}\t{}\t{}\t{}\n", p.s1, p.s2, rule, v.value));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOptions {
    /// Class whose instances form candidate pairs.
    pub pair_class: String,
    /// Data property used as blocking key; only samples sharing a value are
    /// paired, and samples without a value are left out.
    pub block_by: Option<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            pair_class: "Sample".into(),
            block_by: None,
        }
    }
}

impl EvalOptions {
    pub fn blocked_by_drug_type() -> Self {
        Self {
            block_by: Some("drugType".into()),
            ..Self::default()
        }
    }
}

type Row = Vec<Option<TermId>>;

#[derive(Debug, Clone)]
enum Strategy {
    /// The structural atoms split into one component per head variable.
    Factorized { left: QueryPlan, right: QueryPlan, tests: Vec<Test> },
    PerPair,
}

#[derive(Debug, Clone)]
struct PreparedRule {
    ast: RuleAst,
    plan: QueryPlan,
    strategy: Strategy,
}

/// Rules prepared for pairwise evaluation against one schema.
#[derive(Debug, Clone)]
pub struct Evaluator {
    schema: Schema,
    options: EvalOptions,
    rules: Vec<PreparedRule>,
    errors: Vec<RuleConfigError>,
}

fn components(ast: &RuleAst, variables: &[String]) -> Vec<usize> {
    let idx = |n: &str| variables.iter().position(|v| v == n).expect("known variable");
    let mut parent: Vec<usize> = (0..variables.len()).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for atom in &ast.body {
        let vars: Vec<usize> = atom.binds().into_iter().map(idx).collect();
        for w in vars.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            parent[a] = b;
        }
    }
    (0..variables.len()).map(|v| find(&mut parent, v)).collect()
}

impl Evaluator {
    /// Validates every rule. Rules that validate but cannot produce pair
    /// verdicts become configuration errors; the rest are prepared.
    pub fn new(rules: &RuleSet, schema: &Schema, graph: &Graph, options: EvalOptions) -> Result<Self, Vec<RuleDiagnostic>> {
        let diags: Vec<RuleDiagnostic> = rules.rules().iter().flat_map(|r| validate_rule(r, schema)).collect();
        if !diags.is_empty() {
            return Err(diags);
        }
        let mut prepared = Vec::new();
        let mut errors = Vec::new();
        for ast in rules.rules() {
            match Self::prepare(ast, schema, graph, &options) {
                Ok(p) => prepared.push(p),
                Err(message) => errors.push(RuleConfigError {
                    rule: ast.name.clone(),
                    message,
                }),
            }
        }
        Ok(Self {
            schema: schema.clone(),
            options,
            rules: prepared,
            errors,
        })
    }

    fn prepare(ast: &RuleAst, schema: &Schema, graph: &Graph, options: &EvalOptions) -> Result<PreparedRule, String> {
        if ast.head.len() != 2 {
            return Err(format!("head has arity {}, pair rules need 2", ast.head.len()));
        }
        for h in &ast.head {
            let typed = ast.body.iter().any(|a| match &a.kind {
                AtomKind::Class { class, var } => var == h && schema.is_subclass_of(class, &options.pair_class),
                _ => false,
            });
            if !typed {
                return Err(format!("head variable {h} is not restricted to {}", options.pair_class));
            }
        }
        let plan = compile(ast, schema, graph, CompileMode::Verdict);
        let h0 = plan.head[0];
        let h1 = plan.head[1];
        let comp = components(ast, &plan.variables);
        let var = |n: &str| plan.var(n).expect("known variable");
        let structural: Vec<usize> = (0..ast.body.len()).filter(|&i| !ast.body[i].is_test()).collect();
        let side = |i: usize| comp[var(ast.body[i].binds()[0])];
        let strategy = if comp[h0] != comp[h1] && structural.iter().all(|&i| side(i) == comp[h0] || side(i) == comp[h1]) {
            let (l, r): (Vec<usize>, Vec<usize>) = structural.iter().partition(|&&i| side(i) == comp[h0]);
            let tests = (0..ast.body.len())
                .filter_map(|i| test_of(&ast.body[i].kind, &var))
                .collect();
            Strategy::Factorized {
                left: compile_atoms(ast, &l, schema, graph, CompileMode::Query, &[h0]),
                right: compile_atoms(ast, &r, schema, graph, CompileMode::Query, &[h1]),
                tests,
            }
        } else {
            Strategy::PerPair
        };
        Ok(PreparedRule {
            ast: ast.clone(),
            plan,
            strategy,
        })
    }

    pub fn rule_names(&self) -> Vec<String> {
        self.rules.iter().map(|r| r.ast.name.clone()).collect()
    }

    pub fn errors(&self) -> &[RuleConfigError] {
        &self.errors
    }

    pub fn plan(&self, rule: &str) -> Option<&QueryPlan> {
        self.rules.iter().find(|r| r.ast.name == rule).map(|r| &r.plan)
    }

    pub fn is_factorized(&self, rule: &str) -> bool {
        self.rules
            .iter()
            .any(|r| r.ast.name == rule && matches!(r.strategy, Strategy::Factorized { .. }))
    }

    /// Instances of the pair class, ordered by identifier.
    pub fn candidates(&self, graph: &Graph) -> Vec<TermId> {
        let class = Term::Entity(self.schema.iri(&self.options.pair_class));
        let (Some(ty), Some(class)) = (graph.lookup_entity(RDF_TYPE), graph.lookup(&class)) else {
            return Vec::new();
        };
        let mut out: Vec<TermId> = graph.subjects(ty, class).collect();
        out.sort_by(|a, b| graph.term(*a).cmp(graph.term(*b)));
        out
    }

    /// Blocking-key values per candidate; `None` when blocking is off.
    fn block_keys(&self, graph: &Graph, candidates: &[TermId]) -> Option<Vec<Vec<TermId>>> {
        let prop = self.options.block_by.as_ref()?;
        let p = graph.lookup_entity(&self.schema.iri(prop));
        Some(
            candidates
                .iter()
                .map(|&c| {
                    let mut v: Vec<TermId> = p.map(|p| graph.objects(c, p).collect()).unwrap_or_default();
                    v.sort();
                    v
                })
                .collect(),
        )
    }

    /// Canonical candidate pairs (first id sorts before second).
    pub fn candidate_pairs(&self, graph: &Graph) -> Vec<(TermId, TermId)> {
        let cands = self.candidates(graph);
        let keys = self.block_keys(graph, &cands);
        let mut out = Vec::new();
        for i in 0..cands.len() {
            for j in i + 1..cands.len() {
                if keys.as_ref().is_none_or(|k| shares(&k[i], &k[j])) {
                    out.push((cands[i], cands[j]));
                }
            }
        }
        out
    }

    /// Verdict rows for one rule and pair: structural matches with their
    /// tri-state test outcome.
    fn rows(&self, rule: &PreparedRule, graph: &Graph, x: TermId, y: TermId) -> Vec<(Row, Option<bool>)> {
        let (h0, h1) = (rule.plan.head[0], rule.plan.head[1]);
        match &rule.strategy {
            Strategy::PerPair => Resolved::new(&rule.plan, graph).run(graph, &[(h0, x), (h1, y)]),
            Strategy::Factorized { left, right, tests } => {
                let l = Resolved::new(left, graph).run(graph, &[(h0, x)]);
                let r = Resolved::new(right, graph).run(graph, &[(h1, y)]);
                let mut out = Vec::new();
                for (a, _) in &l {
                    for (b, _) in &r {
                        let row: Row = a.iter().zip(b).map(|(p, q)| p.or(*q)).collect();
                        let get = |v: usize| row[v].expect("bound");
                        let verdict = conjunction(tests.iter().map(|t| eval_test(t, graph, &get)));
                        out.push((row, verdict));
                    }
                }
                out
            }
        }
    }

    fn decide(rows: &[(Row, Option<bool>)]) -> (VerdictValue, Option<usize>) {
        if let Some(i) = rows.iter().position(|(_, v)| *v == Some(true)) {
            return (VerdictValue::Match, Some(i));
        }
        if let Some(i) = rows.iter().position(|(_, v)| *v == Some(false)) {
            return (VerdictValue::NoMatch, Some(i));
        }
        (VerdictValue::Inapplicable, None)
    }

    /// Verdict of `rule` for the ordered pair `(x, y)`.
    pub fn verdict(&self, graph: &Graph, rule: &str, x: TermId, y: TermId) -> Option<VerdictValue> {
        let r = self.rules.iter().find(|r| r.ast.name == rule)?;
        Some(Self::decide(&self.rows(r, graph, x, y)).0)
    }

    /// Same verdict computed without factorization.
    pub fn verdict_unfactorized(&self, graph: &Graph, rule: &str, x: TermId, y: TermId) -> Option<VerdictValue> {
        let r = self.rules.iter().find(|r| r.ast.name == rule)?;
        let (h0, h1) = (r.plan.head[0], r.plan.head[1]);
        let rows = Resolved::new(&r.plan, graph).run(graph, &[(h0, x), (h1, y)]);
        Some(Self::decide(&rows).0)
    }

    /// Full verdicts, with bindings and support, for the ordered pair.
    pub fn pair_report(&self, graph: &Graph, x: TermId, y: TermId) -> PairReport {
        let mut verdicts = IndexMap::new();
        for rule in &self.rules {
            let mut rows = self.rows(rule, graph, x, y);
            rows.sort_by(|a, b| {
                let ta: Vec<&Term> = a.0.iter().flatten().map(|&i| graph.term(i)).collect();
                let tb: Vec<&Term> = b.0.iter().flatten().map(|&i| graph.term(i)).collect();
                ta.cmp(&tb)
            });
            let (value, at) = Self::decide(&rows);
            let mut bindings = IndexMap::new();
            let mut support = Vec::new();
            if let Some(row) = at.map(|i| &rows[i].0) {
                let term = |v: usize| graph.term(row[v].expect("bound")).clone();
                for (i, name) in rule.plan.variables.iter().enumerate() {
                    bindings.insert(name.clone(), term(i).to_string());
                }
                let var = |n: &str| rule.plan.var(n).expect("known variable");
                for atom in &rule.ast.body {
                    let line = match &atom.kind {
                        AtomKind::Class { class, var: x } => format!(
                            "{} {} {}",
                            term(var(x)),
                            RDF_TYPE,
                            self.schema.iri(class)
                        ),
                        AtomKind::Property { property, subject, object } => format!(
                            "{} {} {}",
                            term(var(subject)),
                            self.schema.iri(property),
                            term(var(object))
                        ),
                        _ => continue,
                    };
                    if !support.contains(&line) {
                        support.push(line);
                    }
                }
            }
            verdicts.insert(rule.ast.name.clone(), Verdict { value, bindings, support });
        }
        PairReport {
            s1: graph.term(x).to_string(),
            s2: graph.term(y).to_string(),
            verdicts,
        }
    }

    fn empty_summary(&self) -> ReportSummary {
        ReportSummary {
            samples: 0,
            pairs: 0,
            by_rule: self.rules.iter().map(|r| (r.ast.name.clone(), VerdictCounts::default())).collect(),
            errors: self.errors.clone(),
        }
    }

    /// Complete report over all candidate pairs.
    pub fn report(&self, graph: &Graph) -> MatchReport {
        let mut summary = self.empty_summary();
        summary.samples = self.candidates(graph).len();
        let pairs: Vec<PairReport> = self
            .candidate_pairs(graph)
            .into_iter()
            .map(|(x, y)| self.pair_report(graph, x, y))
            .collect();
        summary.pairs = pairs.len();
        for p in &pairs {
            for (rule, v) in &p.verdicts {
                summary.by_rule[rule].add(v.value);
            }
        }
        MatchReport {
            dataset: graph.content_hash(),
            rules: self.rule_names(),
            pairs,
            summary,
        }
    }

    /// Verdict counts only. Per-candidate rows are computed once per rule and
    /// side, so large candidate sets stay cheap.
    pub fn summary(&self, graph: &Graph) -> ReportSummary {
        let cands = self.candidates(graph);
        let keys = self.block_keys(graph, &cands);
        let n = cands.len();
        let mut summary = self.empty_summary();
        summary.samples = n;

        // Groups of candidate indices that may pair up.
        let groups: Vec<Vec<usize>> = match &keys {
            None => vec![(0..n).collect()],
            Some(keys) => {
                let mut by_key: HashMap<TermId, Vec<usize>> = HashMap::new();
                for (i, ks) in keys.iter().enumerate() {
                    for &k in ks {
                        by_key.entry(k).or_default().push(i);
                    }
                }
                let mut g: Vec<(TermId, Vec<usize>)> = by_key.into_iter().collect();
                g.sort();
                g.into_iter().map(|(_, v)| v).collect()
            }
        };
        // A pair sharing several key values is counted in the group of its
        // smallest shared value only.
        let first_shared = |i: usize, j: usize| -> Option<TermId> {
            let keys = keys.as_ref()?;
            keys[i].iter().find(|k| keys[j].contains(k)).copied()
        };

        let mut by_rule_rows: Vec<Option<(Vec<Vec<Row>>, Vec<Vec<Row>>)>> = Vec::new();
        for rule in &self.rules {
            by_rule_rows.push(match &rule.strategy {
                Strategy::Factorized { left, right, .. } => {
                    let (h0, h1) = (rule.plan.head[0], rule.plan.head[1]);
                    let (lp, rp) = (Resolved::new(left, graph), Resolved::new(right, graph));
                    let l = cands.iter().map(|&c| lp.run(graph, &[(h0, c)]).into_iter().map(|r| r.0).collect()).collect();
                    let r = cands.iter().map(|&c| rp.run(graph, &[(h1, c)]).into_iter().map(|r| r.0).collect()).collect();
                    Some((l, r))
                }
                Strategy::PerPair => None,
            });
        }

        let mut pairs = 0usize;
        for group in &groups {
            let group_value = keys.as_ref().map(|k| {
                // The key this group was built from is shared by all members.
                let first = &k[group[0]];
                *first
                    .iter()
                    .find(|v| group.iter().all(|&m| k[m].contains(v)))
                    .expect("group key shared")
            });
            let counts: Vec<(usize, Vec<VerdictCounts>)> = (0..group.len())
                .into_par_iter()
                .map(|a| {
                    let mut local = vec![VerdictCounts::default(); self.rules.len()];
                    let mut n_pairs = 0;
                    let i = group[a];
                    for &j in &group[a + 1..] {
                        if let Some(v) = group_value {
                            if first_shared(i, j) != Some(v) {
                                continue;
                            }
                        }
                        let (x, y) = (i, j);
                        n_pairs += 1;
                        for (k, rule) in self.rules.iter().enumerate() {
                            let value = match (&rule.strategy, &by_rule_rows[k]) {
                                (Strategy::Factorized { tests, .. }, Some((l, r))) => {
                                    factorized_verdict(graph, tests, &l[x], &r[y])
                                }
                                _ => Self::decide(&self.rows(rule, graph, cands[x], cands[y])).0,
                            };
                            local[k].add(value);
                        }
                    }
                    (n_pairs, local)
                })
                .collect();
            for (np, local) in counts {
                pairs += np;
                for (k, c) in local.iter().enumerate() {
                    summary.by_rule[k].merge(c);
                }
            }
        }
        summary.pairs = pairs;
        summary
    }
}

fn shares(a: &[TermId], b: &[TermId]) -> bool {
    a.iter().any(|k| b.contains(k))
}

fn factorized_verdict(graph: &Graph, tests: &[Test], left: &[Row], right: &[Row]) -> VerdictValue {
    let mut seen_false = false;
    for a in left {
        for b in right {
            let get = |v: usize| a[v].or(b[v]).expect("bound");
            match conjunction(tests.iter().map(|t| eval_test(t, graph, &get))) {
                Some(true) => return VerdictValue::Match,
                Some(false) => seen_false = true,
                None => {}
            }
        }
    }
    if seen_false {
        VerdictValue::NoMatch
    } else {
        VerdictValue::Inapplicable
    }
}

/// Validates, prepares and evaluates a rule set in one call.
pub fn evaluate_ruleset(
    rules: &RuleSet,
    graph: &Graph,
    schema: &Schema,
    options: EvalOptions,
) -> Result<MatchReport, Vec<RuleDiagnostic>> {
    Ok(Evaluator::new(rules, schema, graph, options)?.report(graph))
}
