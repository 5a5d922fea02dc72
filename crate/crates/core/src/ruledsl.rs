//! Textual rule language for analysis rules.
//!
//! ```text
//! # two samples match if their drug types are the same
//! drugType(s1, s2) := Sample(s1) AND Sample(s2) AND drugType(s1, dt1)
//!     AND drugType(s2, dt2) AND dt1 == dt2 AND s1 != s2;
//! ```
//!
//! Each rule is a head predicate over variables and a conjunction of atoms:
//! class atoms `C(x)`, property atoms `p(x, y)`, comparisons `a OP b` and the
//! built-in relative-difference test `reldiff(x, y, tolerance)`. In
//! description-logic notation `:=` reads as equivalence and `AND` as
//! conjunction.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::graph::Datatype;
use crate::schema::{Lookup, Schema};

/// Source position, 1-based. Spans never take part in AST equality.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Span {
    pub line: u32,
    pub column: u32,
}

impl PartialEq for Span {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CmpOp {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Var(String),
    Str(String),
    Number(f64),
}

impl Operand {
    pub fn var(&self) -> Option<&str> {
        match self {
            Operand::Var(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AtomKind {
    Class {
        class: String,
        var: String,
    },
    Property {
        property: String,
        subject: String,
        object: String,
    },
    Compare {
        left: Operand,
        op: CmpOp,
        right: Operand,
    },
    /// `|a - b| / max(a, b) <= tolerance`, tolerance strictly within (0, 1).
    RelDiff {
        left: String,
        right: String,
        tolerance: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub kind: AtomKind,
    pub span: Span,
}

impl Atom {
    pub fn new(kind: AtomKind) -> Self {
        Self {
            kind,
            span: Span::default(),
        }
    }

    /// Variables bound by this atom (class and property atoms only).
    pub fn binds(&self) -> Vec<&str> {
        match &self.kind {
            AtomKind::Class { var, .. } => vec![var],
            AtomKind::Property {
                subject, object, ..
            } => vec![subject, object],
            _ => Vec::new(),
        }
    }

    /// Variables read by a comparison or relative-difference test.
    pub fn reads(&self) -> Vec<&str> {
        match &self.kind {
            AtomKind::Compare { left, right, .. } => {
                left.var().into_iter().chain(right.var()).collect()
            }
            AtomKind::RelDiff { left, right, .. } => vec![left, right],
            _ => Vec::new(),
        }
    }

    pub fn is_test(&self) -> bool {
        matches!(self.kind, AtomKind::Compare { .. } | AtomKind::RelDiff { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleAst {
    pub name: String,
    pub head: Vec<String>,
    pub body: Vec<Atom>,
    pub span: Span,
}

impl RuleAst {
    /// Every variable in first-occurrence order: head first, then body.
    pub fn variables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        let body = self.body.iter().flat_map(|a| {
            let mut v = a.binds();
            v.extend(a.reads());
            v
        });
        for v in self.head.iter().map(String::as_str).chain(body) {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSet {
    rules: Vec<RuleAst>,
}

impl RuleSet {
    pub fn new(rules: Vec<RuleAst>) -> Result<Self, RuleError> {
        let mut seen = HashSet::new();
        for r in &rules {
            if !seen.insert(r.name.clone()) {
                return Err(RuleError {
                    code: RuleErrorCode::DuplicateRule,
                    line: r.span.line,
                    column: r.span.column,
                    message: format!("rule {} is defined more than once", r.name),
                    expected: Vec::new(),
                    names: vec![r.name.clone()],
                });
            }
        }
        Ok(Self { rules })
    }

    pub fn rules(&self) -> &[RuleAst] {
        &self.rules
    }

    pub fn get(&self, name: &str) -> Option<&RuleAst> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleErrorCode {
    Lexical,
    Syntax,
    Safety,
    InvalidTolerance,
    DuplicateRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{code:?} error at {line}:{column}: {message}")]
pub struct RuleError {
    pub code: RuleErrorCode,
    pub line: u32,
    pub column: u32,
    pub message: String,
    /// Tokens that would have been accepted (syntax errors).
    pub expected: Vec<String>,
    /// Offending variable or rule names.
    pub names: Vec<String>,
}

impl RuleError {
    fn at(code: RuleErrorCode, span: Span, message: impl Into<String>) -> Self {
        Self {
            code,
            line: span.line,
            column: span.column,
            message: message.into(),
            expected: Vec::new(),
            names: Vec::new(),
        }
    }
}

// Lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Number(f64),
    LParen,
    RParen,
    Comma,
    Assign,
    And,
    Semi,
    Cmp(CmpOp),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier {s:?}"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Number(n) => format!("number {n}"),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
            Tok::Assign => "':='".into(),
            Tok::And => "'AND'".into(),
            Tok::Semi => "';'".into(),
            Tok::Cmp(op) => format!("'{}'", op.symbol()),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, Span)>, RuleError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let advance = |i: &mut usize, line: &mut u32, col: &mut u32, c: char| {
        *i += 1;
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, column: col };
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, c);
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                {
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
            }
            }
            continue;
        }
        let two: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let op2 = match two.as_str() {
            ":=" => Some(Tok::Assign),
            "==" => Some(Tok::Cmp(CmpOp::Eq)),
            "!=" => Some(Tok::Cmp(CmpOp::Ne)),
            "<=" => Some(Tok::Cmp(CmpOp::Le)),
            ">=" => Some(Tok::Cmp(CmpOp::Ge)),
            _ => None,
        };
        if let Some(tok) = op2 {
            out.push((tok, span));
            advance(&mut i, &mut line, &mut col, c);
            {
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
            }
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            ';' => Some(Tok::Semi),
            '<' => Some(Tok::Cmp(CmpOp::Lt)),
            '>' => Some(Tok::Cmp(CmpOp::Gt)),
            _ => None,
        };
        if let Some(tok) = single {
            out.push((tok, span));
            advance(&mut i, &mut line, &mut col, c);
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut ident = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                ident.push(chars[i]);
                {
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
            }
            }
            out.push((if ident == "AND" { Tok::And } else { Tok::Ident(ident) }, span));
            continue;
        }
        if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let mut num = String::new();
            num.push(c);
            advance(&mut i, &mut line, &mut col, c);
            let mut prev = c;
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '+' || d == '-') && (prev == 'e' || prev == 'E');
                if !(d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign) {
                    break;
                }
                num.push(d);
                prev = d;
                advance(&mut i, &mut line, &mut col, d);
            }
            match num.parse::<f64>() {
                Ok(v) if v.is_finite() => out.push((Tok::Number(v), span)),
                _ => {
                    return Err(RuleError::at(RuleErrorCode::Lexical, span, format!("malformed number {num:?}")))
                }
            }
            continue;
        }
        if c == '"' {
            advance(&mut i, &mut line, &mut col, c);
            let mut s = String::new();
            loop {
                let Some(&d) = chars.get(i) else {
                    return Err(RuleError::at(RuleErrorCode::Lexical, span, "unterminated string"));
                };
                advance(&mut i, &mut line, &mut col, d);
                match d {
                    '"' => break,
                    '\\' => {
                        let Some(&e) = chars.get(i) else {
                            return Err(RuleError::at(RuleErrorCode::Lexical, span, "unterminated string"));
                        };
                        advance(&mut i, &mut line, &mut col, e);
                        s.push(match e {
                            'n' => '\n',
                            't' => '\t',
                            '"' => '"',
                            '\\' => '\\',
                            other => {
                                return Err(RuleError::at(
                                    RuleErrorCode::Lexical,
                                    span,
                                    format!("unknown escape \\{other}"),
                                ))
                            }
                        });
                    }
                    d => s.push(d),
                }
            }
            out.push((Tok::Str(s), span));
            continue;
        }
        return Err(RuleError::at(RuleErrorCode::Lexical, span, format!("unexpected character {c:?}")));
    }
    out.push((Tok::Eof, Span { line, column: col }));
    Ok(out)
}

// Parser

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &[&str]) -> RuleError {
        let mut e = RuleError::at(
            RuleErrorCode::Syntax,
            self.span(),
            format!("unexpected {}, expected {}", self.peek().describe(), expected.join(" or ")),
        );
        e.expected = expected.iter().map(|s| s.to_string()).collect();
        e
    }

    fn expect(&mut self, tok: Tok, name: &str) -> Result<Span, RuleError> {
        if *self.peek() == tok {
            Ok(self.bump().1)
        } else {
            Err(self.unexpected(&[name]))
        }
    }

    fn ident(&mut self) -> Result<(String, Span), RuleError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let span = self.bump().1;
                Ok((s, span))
            }
            _ => Err(self.unexpected(&["identifier"])),
        }
    }

    fn var(&mut self) -> Result<String, RuleError> {
        match self.peek().clone() {
            Tok::Ident(s) if is_var_name(&s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected(&["variable"])),
        }
    }

    fn rule(&mut self) -> Result<RuleAst, RuleError> {
        let (name, span) = self.ident()?;
        self.expect(Tok::LParen, "'('")?;
        let mut head = vec![self.var()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            let v_span = self.span();
            let v = self.var()?;
            if head.contains(&v) {
                let mut e = RuleError::at(RuleErrorCode::Syntax, v_span, format!("head variable {v} repeated"));
                e.names = vec![v];
                return Err(e);
            }
            head.push(v);
        }
        self.expect(Tok::RParen, "')'")?;
        self.expect(Tok::Assign, "':='")?;
        let mut body = vec![self.atom()?];
        while *self.peek() == Tok::And {
            self.bump();
            body.push(self.atom()?);
        }
        let rule = RuleAst {
            name,
            head,
            body,
            span,
        };
        check_safety(&rule)?;
        Ok(rule)
    }

    fn atom(&mut self) -> Result<Atom, RuleError> {
        let span = self.span();
        let kind = match (self.peek().clone(), self.peek_at(1).clone()) {
            (Tok::Ident(name), Tok::LParen) if name == "reldiff" => {
                self.bump();
                self.bump();
                let left = self.var()?;
                self.expect(Tok::Comma, "','")?;
                let right = self.var()?;
                self.expect(Tok::Comma, "','")?;
                let tol_span = self.span();
                let tolerance = match self.bump().0 {
                    Tok::Number(n) => n,
                    _ => {
                        self.pos -= 1;
                        return Err(self.unexpected(&["number"]));
                    }
                };
                if !(tolerance > 0.0 && tolerance < 1.0) {
                    return Err(RuleError::at(
                        RuleErrorCode::InvalidTolerance,
                        tol_span,
                        format!("reldiff tolerance {tolerance} must lie strictly between 0 and 1"),
                    ));
                }
                self.expect(Tok::RParen, "')'")?;
                AtomKind::RelDiff {
                    left,
                    right,
                    tolerance,
                }
            }
            (Tok::Ident(name), Tok::LParen) => {
                self.bump();
                self.bump();
                let first = self.var()?;
                let kind = if *self.peek() == Tok::Comma {
                    self.bump();
                    let second = self.var()?;
                    AtomKind::Property {
                        property: name,
                        subject: first,
                        object: second,
                    }
                } else {
                    AtomKind::Class {
                        class: name,
                        var: first,
                    }
                };
                self.expect(Tok::RParen, "')'")?;
                kind
            }
            _ => {
                let left = self.operand()?;
                let op = match self.peek() {
                    Tok::Cmp(op) => *op,
                    _ => return Err(self.unexpected(&["comparison operator"])),
                };
                self.bump();
                let right = self.operand()?;
                AtomKind::Compare { left, op, right }
            }
        };
        Ok(Atom { kind, span })
    }

    fn operand(&mut self) -> Result<Operand, RuleError> {
        match self.peek().clone() {
            Tok::Ident(s) if is_var_name(&s) => {
                self.bump();
                Ok(Operand::Var(s))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Operand::Str(s))
            }
            Tok::Number(n) => {
                self.bump();
                Ok(Operand::Number(n))
            }
            _ => Err(self.unexpected(&["variable", "string", "number", "predicate atom"])),
        }
    }
}

fn is_var_name(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_ascii_lowercase() || c == '_') && s != "reldiff"
}

/// Head variables and comparison operands must be bound by a class or
/// property atom.
fn check_safety(rule: &RuleAst) -> Result<(), RuleError> {
    let bound: HashSet<&str> = rule.body.iter().flat_map(Atom::binds).collect();
    let mut unbound: Vec<String> = Vec::new();
    let reads = rule.body.iter().flat_map(Atom::reads);
    for v in reads.chain(rule.head.iter().map(String::as_str)) {
        if !bound.contains(v) && !unbound.iter().any(|u| u == v) {
            unbound.push(v.to_string());
        }
    }
    if unbound.is_empty() {
        return Ok(());
    }
    let mut e = RuleError::at(
        RuleErrorCode::Safety,
        rule.span,
        format!(
            "rule {}: variables {} are not bound by any class or property atom",
            rule.name,
            unbound.join(", ")
        ),
    );
    e.names = unbound;
    Err(e)
}

/// Parses a single rule; a trailing `;` is optional.
pub fn parse_rule(text: &str) -> Result<RuleAst, RuleError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let rule = p.rule()?;
    if *p.peek() == Tok::Semi {
        p.bump();
    }
    if *p.peek() != Tok::Eof {
        return Err(p.unexpected(&["end of input"]));
    }
    Ok(rule)
}

/// Parses a rule file: one or more rules, each terminated by `;`.
pub fn parse_ruleset(text: &str) -> Result<RuleSet, RuleError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let mut rules = Vec::new();
    loop {
        rules.push(p.rule()?);
        p.expect(Tok::Semi, "';'")?;
        if *p.peek() == Tok::Eof {
            break;
        }
    }
    RuleSet::new(rules)
}

fn write_operand(out: &mut String, o: &Operand) {
    match o {
        Operand::Var(v) => out.push_str(v),
        Operand::Number(n) => {
            let _ = write!(out, "{n}");
        }
        Operand::Str(s) => {
            out.push('"');
            for c in s.chars() {
                match c {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\t' => out.push_str("\\t"),
                    c => out.push(c),
                }
            }
            out.push('"');
        }
    }
}

/// Canonical single-line rendering, without the terminating `;`.
pub fn print_rule(ast: &RuleAst) -> String {
    let mut out = format!("{}({}) :=", ast.name, ast.head.join(", "));
    for (i, atom) in ast.body.iter().enumerate() {
        out.push_str(if i == 0 { " " } else { " AND " });
        match &atom.kind {
            AtomKind::Class { class, var } => {
                let _ = write!(out, "{class}({var})");
            }
            AtomKind::Property {
                property,
                subject,
                object,
            } => {
                let _ = write!(out, "{property}({subject}, {object})");
            }
            AtomKind::Compare { left, op, right } => {
                write_operand(&mut out, left);
                let _ = write!(out, " {} ", op.symbol());
                write_operand(&mut out, right);
            }
            AtomKind::RelDiff {
                left,
                right,
                tolerance,
            } => {
                let _ = write!(out, "reldiff({left}, {right}, {tolerance})");
            }
        }
    }
    out
}

pub fn print_ruleset(rules: &RuleSet) -> String {
    rules
        .rules()
        .iter()
        .map(|r| format!("{};\n", print_rule(r)))
        .collect()
}

// Validation against the schema

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleDiagnosticCode {
    UnknownPredicate,
    WrongKind,
    DatatypeMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleDiagnostic {
    pub code: RuleDiagnosticCode,
    pub rule: String,
    pub name: String,
    pub span: Span,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
}

impl fmt::Display for RuleDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule {} at {}: {}", self.rule, self.span, self.message)?;
        if let Some(h) = &self.hint {
            write!(f, " (hint: {h})")?;
        }
        Ok(())
    }
}

/// Static type of a variable.
#[derive(Debug, Clone, PartialEq)]
pub enum VarType {
    Entity,
    Literal(Datatype),
}

/// Checks predicates against the schema and operand types against each
/// other. Empty iff the rule is valid.
pub fn validate_rule(ast: &RuleAst, schema: &Schema) -> Vec<RuleDiagnostic> {
    let mut diags = Vec::new();
    let diag = |code, name: &str, span, message: String, hint: Option<String>| RuleDiagnostic {
        code,
        rule: ast.name.clone(),
        name: name.to_string(),
        span,
        message,
        hint,
    };
    let revise = |name: &str| {
        Some(format!(
            "{name} is not part of the TBox: revise the schema to declare it, or rewrite the rule with declared elements"
        ))
    };

    let mut types: BTreeMap<String, VarType> = BTreeMap::new();
    let mut assign = |var: &str, ty: VarType, span: Span, diags: &mut Vec<RuleDiagnostic>| {
        if let Some(prev) = types.get(var) {
            if *prev != ty {
                diags.push(diag(
                    RuleDiagnosticCode::DatatypeMismatch,
                    var,
                    span,
                    format!("variable {var} is used both as {prev:?} and as {ty:?}"),
                    None,
                ));
            }
        } else {
            types.insert(var.to_string(), ty);
        }
    };

    for atom in &ast.body {
        match &atom.kind {
            AtomKind::Class { class, var } => match schema.lookup(class) {
                Lookup::Class(_) => assign(var, VarType::Entity, atom.span, &mut diags),
                Lookup::Unknown => diags.push(diag(
                    RuleDiagnosticCode::UnknownPredicate,
                    class,
                    atom.span,
                    format!("unknown class {class}"),
                    revise(class),
                )),
                other => diags.push(diag(
                    RuleDiagnosticCode::WrongKind,
                    class,
                    atom.span,
                    format!("{class} is a {}, used as a class", other.kind()),
                    None,
                )),
            },
            AtomKind::Property {
                property,
                subject,
                object,
            } => match schema.lookup(property) {
                Lookup::ObjectProperty(_) => {
                    assign(subject, VarType::Entity, atom.span, &mut diags);
                    assign(object, VarType::Entity, atom.span, &mut diags);
                }
                Lookup::DataProperty(def) => {
                    assign(subject, VarType::Entity, atom.span, &mut diags);
                    assign(object, VarType::Literal(def.range.datatype()), atom.span, &mut diags);
                }
                Lookup::Unknown => diags.push(diag(
                    RuleDiagnosticCode::UnknownPredicate,
                    property,
                    atom.span,
                    format!("unknown property {property}"),
                    revise(property),
                )),
                Lookup::Class(_) => diags.push(diag(
                    RuleDiagnosticCode::WrongKind,
                    property,
                    atom.span,
                    format!("{property} is a class, used as a property"),
                    None,
                )),
            },
            _ => {}
        }
    }

    let operand_type = |o: &Operand| -> Option<VarType> {
        match o {
            Operand::Var(v) => types.get(v).cloned(),
            Operand::Str(_) => Some(VarType::Literal(Datatype::String)),
            Operand::Number(_) => Some(VarType::Literal(Datatype::Float)),
        }
    };
    for atom in &ast.body {
        match &atom.kind {
            AtomKind::Compare { left, op, right } => {
                let (Some(l), Some(r)) = (operand_type(left), operand_type(right)) else {
                    continue;
                };
                if let Err(why) = comparable(&l, *op, &r, matches!(right, Operand::Str(_)) || matches!(left, Operand::Str(_))) {
                    diags.push(diag(
                        RuleDiagnosticCode::DatatypeMismatch,
                        op.symbol(),
                        atom.span,
                        why,
                        None,
                    ));
                }
            }
            AtomKind::RelDiff { left, right, .. } => {
                for v in [left, right] {
                    match types.get(v) {
                        Some(VarType::Literal(Datatype::Float)) | None => {}
                        Some(other) => diags.push(diag(
                            RuleDiagnosticCode::DatatypeMismatch,
                            v,
                            atom.span,
                            format!("reldiff needs float values, {v} is {other:?}"),
                            None,
                        )),
                    }
                }
            }
            _ => {}
        }
    }
    diags
}

fn comparable(l: &VarType, op: CmpOp, r: &VarType, has_string_constant: bool) -> Result<(), String> {
    use VarType::*;
    let ok = match (l, r) {
        (Entity, Entity) => !op.is_ordering(),
        (Literal(a), Literal(b)) if a.is_numeric() && b.is_numeric() => true,
        (Literal(Datatype::Boolean), Literal(Datatype::Boolean)) => !op.is_ordering(),
        (Literal(a), Literal(b)) if a == b => true,
        // A quoted constant may be compared with a date.
        (Literal(Datatype::Date), Literal(Datatype::String))
        | (Literal(Datatype::String), Literal(Datatype::Date)) => has_string_constant,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(format!("cannot apply {} to {l:?} and {r:?}", op.symbol()))
    }
}

/// Validates every rule of a set.
pub fn validate_ruleset(rules: &RuleSet, schema: &Schema) -> Vec<RuleDiagnostic> {
    rules
        .rules()
        .iter()
        .flat_map(|r| validate_rule(r, schema))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::load_schema;
    use proptest::prelude::*;

    const MATCH: &str = "match(s1,s2) := Sample(s1) AND Sample(s2) AND drugType(s1,dt1) AND drugType(s2,dt2) AND dt1 == dt2 AND s1 != s2";

    fn shipped() -> Schema {
        load_schema(include_bytes!("../../../schema/drug-domain.json")).unwrap()
    }

    #[test]
    fn parses_drug_type_rule() {
        let r = parse_rule(MATCH).unwrap();
        assert_eq!(r.name, "match");
        assert_eq!(r.head, ["s1", "s2"]);
        let count = |f: fn(&AtomKind) -> bool| r.body.iter().filter(|a| f(&a.kind)).count();
        assert_eq!(count(|k| matches!(k, AtomKind::Class { .. })), 2);
        assert_eq!(count(|k| matches!(k, AtomKind::Property { .. })), 2);
        assert_eq!(count(|k| matches!(k, AtomKind::Compare { .. })), 2);
        assert_eq!((r.body[2].span.line, r.body[2].span.column), (1, 47));
    }

    #[test]
    fn parses_sibling_rule() {
        let r = parse_rule(
            "siblings(p2,p3) := Person(p1) AND Person(p2) AND Person(p3) AND isFatherOf(p1,p2) AND isFatherOf(p1,p3) AND p2 != p3",
        )
        .unwrap();
        assert_eq!(r.body.len(), 6);
    }

    #[test]
    fn safety_violation_names_unbound_vars() {
        let e = parse_rule("bad(x,y) := Sample(x) AND z == 5").unwrap_err();
        assert_eq!(e.code, RuleErrorCode::Safety);
        let mut names = e.names.clone();
        names.sort();
        assert_eq!(names, ["y", "z"]);
    }

    #[test]
    fn error_codes_are_distinct() {
        let lexical = parse_rule("m(x) := Sample(x) AND x @ 3").unwrap_err();
        assert_eq!(lexical.code, RuleErrorCode::Lexical);
        assert_eq!((lexical.line, lexical.column), (1, 25));
        let syntax = parse_rule("m(x) := Sample(x) AND\n  AND").unwrap_err();
        assert_eq!(syntax.code, RuleErrorCode::Syntax);
        assert_eq!((syntax.line, syntax.column), (2, 3));
        assert!(syntax.expected.contains(&"variable".to_string()));
        let tol = parse_rule("m(x, y) := width(x, a) AND width(y, b) AND reldiff(a, b, 1.5)").unwrap_err();
        assert_eq!(tol.code, RuleErrorCode::InvalidTolerance);
        assert_eq!(parse_rule("m(X) := Sample(X)").unwrap_err().code, RuleErrorCode::Syntax);
        assert_eq!(parse_rule("m(x) := Sample(x) extra").unwrap_err().code, RuleErrorCode::Syntax);
        assert_eq!(parse_rule("\"open").unwrap_err().code, RuleErrorCode::Lexical);
    }

    #[test]
    fn ruleset_needs_terminators_and_unique_names() {
        let text = "# comment\na(x) := Sample(x);\nb(x) := Sample(x); # trailing\n";
        assert_eq!(parse_ruleset(text).unwrap().len(), 2);
        assert_eq!(parse_ruleset("a(x) := Sample(x)").unwrap_err().code, RuleErrorCode::Syntax);
        let dup = parse_ruleset("a(x) := Sample(x);\na(y) := Sample(y);").unwrap_err();
        assert_eq!(dup.code, RuleErrorCode::DuplicateRule);
        assert_eq!(dup.line, 2);
    }

    #[test]
    fn canonical_printing() {
        let r = parse_rule("m(x ,  y) :=  Sample(x)   AND width( x,w1 ) AND Sample(y) AND width(y, w2) AND reldiff(w1,w2,0.05) AND w1 >= 10").unwrap();
        assert_eq!(
            print_rule(&r),
            "m(x, y) := Sample(x) AND width(x, w1) AND Sample(y) AND width(y, w2) AND reldiff(w1, w2, 0.05) AND w1 >= 10"
        );
        let m = parse_rule(MATCH).unwrap();
        assert_eq!(parse_rule(&print_rule(&m)).unwrap(), m);
    }

    #[test]
    fn validation_accepts_drug_type_rule() {
        assert!(validate_rule(&parse_rule(MATCH).unwrap(), &shipped()).is_empty());
    }

    #[test]
    fn unknown_predicate_suggests_revising_schema() {
        let r = parse_rule("m(s1,s2) := Sample(s1) AND Sample(s2) AND colour2(s1,c1) AND colour2(s2,c2) AND c1 == c2").unwrap();
        let d = validate_rule(&r, &shipped());
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].code, RuleDiagnosticCode::UnknownPredicate);
        assert_eq!(d[0].name, "colour2");
        assert!(d[0].hint.as_deref().unwrap().contains("revise the schema"));
    }

    #[test]
    fn reldiff_over_strings_is_rejected() {
        let r = parse_rule("m(s1,s2) := drugType(s1,a) AND drugType(s2,b) AND reldiff(a,b,0.05)").unwrap();
        let d = validate_rule(&r, &shipped());
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|d| d.code == RuleDiagnosticCode::DatatypeMismatch));
    }

    #[test]
    fn kind_and_type_mismatches() {
        let s = shipped();
        let kinds = parse_rule("m(x, y) := width(x) AND Sample(x, y)").unwrap();
        let d = validate_rule(&kinds, &s);
        assert_eq!(d.iter().filter(|d| d.code == RuleDiagnosticCode::WrongKind).count(), 2);
        let types = parse_rule("m(x, y) := width(x, y) AND comesFrom(x, y)").unwrap();
        assert_eq!(validate_rule(&types, &s)[0].code, RuleDiagnosticCode::DatatypeMismatch);
        let order = parse_rule("m(x, y) := Sample(x) AND Sample(y) AND x < y").unwrap();
        assert_eq!(validate_rule(&order, &s)[0].code, RuleDiagnosticCode::DatatypeMismatch);
        let date = parse_rule("m(x) := receptionDate(x, d) AND d >= \"2020-01-01\"").unwrap();
        assert!(validate_rule(&date, &s).is_empty());
        let mixed = parse_rule("m(x) := width(x, w) AND drugType(x, t) AND w == t").unwrap();
        assert_eq!(validate_rule(&mixed, &s).len(), 1);
    }

    fn arb_rule() -> impl Strategy<Value = RuleAst> {
        let classes = prop::sample::select(vec!["Sample", "Sealed", "Batch"]);
        let props = prop::sample::select(vec!["width", "drugType", "comesFrom", "isCloseTo"]);
        let ops = prop::sample::select(vec![CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge]);
        (
            proptest::collection::vec((classes, 0..4usize), 1..4),
            proptest::collection::vec((props, 0..4usize, 0..4usize), 0..4),
            proptest::collection::vec((ops, 0..4usize, prop_oneof![
                (0..4usize).prop_map(|i| Operand::Var(format!("v{i}"))),
                "[a-z \"\\\\]{0,6}".prop_map(Operand::Str),
                (-1e6f64..1e6).prop_map(Operand::Number),
            ]), 0..3),
            proptest::option::of((0..4usize, 0..4usize, 0.001f64..0.999)),
            1..3usize,
        )
            .prop_map(|(cls, props, cmps, rel, arity)| {
                let mut body: Vec<Atom> = cls
                    .into_iter()
                    .map(|(c, v)| Atom::new(AtomKind::Class { class: c.into(), var: format!("v{v}") }))
                    .collect();
                body.extend(props.into_iter().map(|(p, s, o)| {
                    Atom::new(AtomKind::Property { property: p.into(), subject: format!("v{s}"), object: format!("v{o}") })
                }));
                let bound: Vec<String> = body.iter().flat_map(|a| a.binds().into_iter().map(String::from)).collect();
                let pick = |i: usize| bound[i % bound.len()].clone();
                for (op, l, r) in cmps {
                    let right = match r {
                        Operand::Var(_) => Operand::Var(pick(l + 1)),
                        other => other,
                    };
                    body.push(Atom::new(AtomKind::Compare { left: Operand::Var(pick(l)), op, right }));
                }
                if let Some((a, b, t)) = rel {
                    body.push(Atom::new(AtomKind::RelDiff { left: pick(a), right: pick(b), tolerance: t }));
                }
                let mut head: Vec<String> = Vec::new();
                for v in &bound {
                    if head.len() < arity && !head.contains(v) {
                        head.push(v.clone());
                    }
                }
                RuleAst { name: "r".into(), head, body, span: Span::default() }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn print_parse_round_trip(rule in arb_rule()) {
            let text = print_rule(&rule);
            let back = parse_rule(&text).unwrap();
            prop_assert_eq!(&back, &rule);
            prop_assert_eq!(print_rule(&back), text);
        }

        #[test]
        fn parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..120)) {
            let text = String::from_utf8_lossy(&bytes);
            let _ = parse_rule(&text);
            let _ = parse_ruleset(&text);
        }

        #[test]
        fn parser_never_panics_on_near_misses(text in "[a-zA-Z0-9_(),:=!<>;\" .#\\-\\n]{0,80}") {
            let _ = parse_rule(&text);
            let _ = parse_ruleset(&text);
        }
    }
}
