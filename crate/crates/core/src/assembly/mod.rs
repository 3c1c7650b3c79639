//! Turns LLM fragments into one runnable, instrumented Hypothesis test.
//!
//! Assembled files import a small runtime module, `pbt_runtime`, that the
//! sandbox runner provides:
//!
//! * `_pbt.generating(strategy)` marks the Generate phase while the bound
//!   generator draws;
//! * `_pbt.phase(label[, property_id])` sets the current phase;
//! * `with _pbt.check(property_id[, rendered_input]):` enters Check phase
//!   for one property and records (rather than raises) assertion failures
//!   and errors, so every property is evaluated on every run.
//!
//! The first line of every assembled file is a `# pbt-workbench: {json}`
//! header carrying the mode, target and property ids.

pub mod pysrc;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::prompts::{IoNames, TargetApi};
use pysrc::{dedent, indent_lines, PySource, Stmt};

pub const RUNTIME_MODULE: &str = "pbt_runtime";
pub const HEADER_PREFIX: &str = "# pbt-workbench: ";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AssemblyError {
    #[error("no assertion statements found")]
    NoAssertionsFound,
    #[error("malformed generator: {0}")]
    MalformedGenerator(String),
    #[error("unparseable fragment: {0}")]
    UnparseableFragment(String),
    #[error("`{0}` is never called in the test")]
    TargetCallNotFound(String),
    #[error("fragment defines {0} test functions, expected one")]
    MultipleTestFunctions(usize),
    #[error("fragment defines no test function")]
    NoTestFunction,
    #[error("invalid phase map: {0}")]
    InvalidPhaseMap(String),
}

impl From<pysrc::ParseError> for AssemblyError {
    fn from(e: pysrc::ParseError) -> Self {
        AssemblyError::UnparseableFragment(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorArtifact {
    pub source_text: String,
    pub generator_name: String,
}

impl GeneratorArtifact {
    /// Finds the single `@st.composite` function in `source`.
    pub fn from_source(source: &str) -> Result<Self, AssemblyError> {
        let parsed = PySource::parse(source)?;
        let composites: Vec<&str> = parsed
            .functions()
            .into_iter()
            .filter(|(decos, _)| decos.iter().any(|d| is_composite_decorator(&d.text)))
            .filter_map(|(_, f)| f.def_name())
            .collect();
        match composites.as_slice() {
            [name] => Ok(Self {
                source_text: source.to_string(),
                generator_name: name.to_string(),
            }),
            [] => Err(AssemblyError::MalformedGenerator(
                "no @st.composite function found".into(),
            )),
            many => Err(AssemblyError::MalformedGenerator(format!(
                "{} composite functions found: {}",
                many.len(),
                many.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), AssemblyError> {
        let parsed = PySource::parse(&self.source_text)?;
        let found = parsed
            .functions()
            .iter()
            .any(|(_, f)| f.def_name() == Some(self.generator_name.as_str()));
        if found {
            Ok(())
        } else {
            Err(AssemblyError::MalformedGenerator(format!(
                "`{}` is not defined at top level",
                self.generator_name
            )))
        }
    }
}

fn is_composite_decorator(text: &str) -> bool {
    let name = text.trim_start_matches('@').trim();
    let name = name.split('(').next().unwrap_or(name).trim();
    name == "composite" || name.ends_with(".composite")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyAssertion {
    pub id: String,
    /// The assertion statement, including any guarding block, dedented.
    pub source_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestMode {
    Separate,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Generate,
    Invoke,
    Check(String),
}

impl Phase {
    pub fn property_id(&self) -> Option<&str> {
        match self {
            Phase::Check(id) => Some(id),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Generate => f.write_str("Generate"),
            Phase::Invoke => f.write_str("Invoke"),
            Phase::Check(id) => write!(f, "Check({id})"),
        }
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Generate" => Ok(Phase::Generate),
            "Invoke" => Ok(Phase::Invoke),
            _ => s
                .strip_prefix("Check(")
                .and_then(|r| r.strip_suffix(')'))
                .filter(|id| !id.is_empty())
                .map(|id| Phase::Check(id.to_string()))
                .ok_or_else(|| format!("unknown phase `{s}`")),
        }
    }
}

impl Serialize for Phase {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Phase {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Lines `start_line..=end_line` (1-based) belong to `phase`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub start_line: usize,
    pub end_line: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledTest {
    pub source_text: String,
    pub mode: TestMode,
    pub target: TargetApi,
    pub test_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_name: Option<String>,
    pub properties: Vec<PropertyAssertion>,
    pub phase_map: Vec<PhaseSpan>,
    /// Native abort-on-first-failure semantics instead of soft checks.
    #[serde(default)]
    pub strict: bool,
}

impl AssembledTest {
    pub fn property_ids(&self) -> Vec<String> {
        self.properties.iter().map(|p| p.id.clone()).collect()
    }

    /// Phase of a 1-based source line.
    pub fn phase_of_line(&self, line: usize) -> Option<&Phase> {
        self.phase_map
            .iter()
            .find(|s| s.start_line <= line && line <= s.end_line)
            .map(|s| &s.phase)
    }

    /// Checks the phase map partitions the file and names every property.
    /// Runner-produced instrumentation goes through the same check.
    pub fn validate(&self) -> Result<(), AssemblyError> {
        validate_phase_map(&self.source_text, &self.phase_map, &self.property_ids())
    }

    pub fn header(&self) -> Option<TestHeader> {
        parse_header(&self.source_text)
    }
}

pub fn validate_phase_map(source: &str, spans: &[PhaseSpan], property_ids: &[String]) -> Result<(), AssemblyError> {
    let n_lines = source.lines().count();
    let mut expected = 1;
    for s in spans {
        if s.start_line != expected || s.end_line < s.start_line {
            return Err(AssemblyError::InvalidPhaseMap(format!(
                "span {}..={} does not continue at line {expected}",
                s.start_line, s.end_line
            )));
        }
        expected = s.end_line + 1;
    }
    if expected != n_lines + 1 {
        return Err(AssemblyError::InvalidPhaseMap(format!(
            "spans cover {} of {n_lines} lines",
            expected - 1
        )));
    }
    for id in property_ids {
        if !spans.iter().any(|s| s.phase.property_id() == Some(id.as_str())) {
            return Err(AssemblyError::InvalidPhaseMap(format!(
                "property {id} has no Check span"
            )));
        }
    }
    Ok(())
}

/// Machine-readable first line of an assembled test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestHeader {
    pub format: u32,
    pub mode: TestMode,
    pub target: String,
    pub test: String,
    pub properties: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    /// How the API invocation was located: `boilerplate` or `first-call`.
    pub invocation: String,
    /// `soft` or `strict`.
    pub checks: String,
    /// Assertions before the invocation, treated as generator checks.
    #[serde(default)]
    pub pre_call_checks: usize,
}

pub fn parse_header(source: &str) -> Option<TestHeader> {
    let first = source.lines().next()?;
    serde_json::from_str(first.strip_prefix(HEADER_PREFIX)?).ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssemblyOptions {
    #[serde(default)]
    pub io_names: IoNames,
    #[serde(default)]
    pub strict: bool,
}

/// One property per top-level assertion statement; an assertion nested in
/// a block counts once and an `if` header becomes its guard.
pub fn enumerate_properties(props: &str) -> Result<Vec<PropertyAssertion>, AssemblyError> {
    let parsed = PySource::parse(props)?;
    Ok(collect_properties(&parsed, &parsed.stmts))
}

fn collect_properties(parsed: &PySource, stmts: &[Stmt]) -> Vec<PropertyAssertion> {
    stmts
        .iter()
        .filter(|s| s.contains_assertion())
        .enumerate()
        .map(|(i, s)| property_from(parsed, s, i + 1))
        .collect()
}

fn property_from(parsed: &PySource, stmt: &Stmt, ordinal: usize) -> PropertyAssertion {
    let guard = match stmt.clauses.first() {
        Some(c) if c.keyword == "if" => Some(c.condition.clone()),
        _ => None,
    };
    PropertyAssertion {
        id: format!("P{ordinal}"),
        source_text: dedent(&parsed.stmt_source(stmt)),
        guard,
        description: parsed.leading_comment(stmt.start),
    }
}

/// A property together with the supporting statements placed in its check
/// block.
struct CheckGroup<'a> {
    stmts: Vec<&'a Stmt>,
}

/// Groups statements so each assertion carries the non-assertion
/// statements before it; trailing statements join the last group.
fn group_checks<'a>(stmts: &[&'a Stmt]) -> (Vec<CheckGroup<'a>>, Vec<&'a Stmt>) {
    let mut groups: Vec<CheckGroup<'a>> = Vec::new();
    let mut pending: Vec<&'a Stmt> = Vec::new();
    for s in stmts {
        pending.push(s);
        if s.contains_assertion() {
            groups.push(CheckGroup {
                stmts: std::mem::take(&mut pending),
            });
        }
    }
    if let Some(last) = groups.last_mut() {
        last.stmts.append(&mut pending);
    }
    (groups, pending)
}

/// Line-accumulating writer that records phase spans.
struct Emitter {
    lines: Vec<String>,
    spans: Vec<PhaseSpan>,
}

impl Emitter {
    fn new() -> Self {
        Self {
            lines: Vec::new(),
            spans: Vec::new(),
        }
    }

    fn push(&mut self, phase: &Phase, text: &str) {
        for line in text.split('\n') {
            self.lines.push(line.to_string());
            let n = self.lines.len();
            match self.spans.last_mut() {
                Some(s) if &s.phase == phase => s.end_line = n,
                _ => self.spans.push(PhaseSpan {
                    start_line: n,
                    end_line: n,
                    phase: phase.clone(),
                }),
            }
        }
    }

    /// Blank lines stay in whatever span precedes them.
    fn blank(&mut self) {
        let phase = self.spans.last().map(|s| s.phase.clone()).unwrap_or(Phase::Generate);
        self.push(&phase, "");
    }

    fn finish(mut self) -> (String, Vec<PhaseSpan>) {
        while self.lines.last().is_some_and(|l| l.is_empty()) {
            self.lines.pop();
            if let Some(last) = self.spans.last_mut() {
                if last.end_line > self.lines.len() {
                    last.end_line = self.lines.len();
                }
                if last.end_line < last.start_line {
                    self.spans.pop();
                }
            }
        }
        let mut text = self.lines.join("\n");
        text.push('\n');
        (text, self.spans)
    }
}

fn header_line(h: &TestHeader) -> String {
    format!(
        "{HEADER_PREFIX}{}",
        serde_json::to_string(h).expect("header serializes")
    )
}

/// Independent/consecutive strategies: generator and properties come
/// from separate replies and the test body around them is boilerplate.
pub fn assemble_separate(
    generator: &GeneratorArtifact,
    props: &str,
    target: &TargetApi,
    opts: &AssemblyOptions,
) -> Result<AssembledTest, AssemblyError> {
    generator.validate()?;
    let parsed = PySource::parse(props)?;
    let properties = collect_properties(&parsed, &parsed.stmts);
    if properties.is_empty() {
        return Err(AssemblyError::NoAssertionsFound);
    }
    let (imports, body): (Vec<&Stmt>, Vec<&Stmt>) = parsed.stmts.iter().partition(|s| s.is_import());
    let (groups, _) = group_checks(&body);

    let io = &opts.io_names;
    let test_name = format!("test_{}_separate", target.test_stem());
    let header = TestHeader {
        format: FORMAT_VERSION,
        mode: TestMode::Separate,
        target: target.qualname.clone(),
        test: test_name.clone(),
        properties: properties.iter().map(|p| p.id.clone()).collect(),
        generator: Some(generator.generator_name.clone()),
        invocation: "boilerplate".into(),
        checks: if opts.strict { "strict" } else { "soft" }.into(),
        pre_call_checks: 0,
    };

    let gen = Phase::Generate;
    let mut out = Emitter::new();
    out.push(&gen, &header_line(&header));
    out.push(&gen, &format!("import {RUNTIME_MODULE} as _pbt"));
    out.push(&gen, "from hypothesis import given, strategies as st");
    out.push(&gen, &format!("import {}", target.module_path));
    for imp in &imports {
        out.push(&gen, &dedent(&parsed.stmt_source(imp)));
    }
    out.blank();
    out.push(&gen, generator.source_text.trim_end_matches(['\n', ' ', '\t']));
    out.blank();
    out.blank();
    out.push(
        &gen,
        &format!("@given({}=_pbt.generating({}()))", io.input, generator.generator_name),
    );
    out.push(&gen, &format!("def {test_name}({}):", io.input));
    out.push(&Phase::Invoke, "    _pbt.phase(\"Invoke\")");
    out.push(
        &Phase::Invoke,
        &format!("    {} = {}({})", io.output, target.qualname, io.input),
    );
    for (prop, group) in properties.iter().zip(&groups) {
        let phase = Phase::Check(prop.id.clone());
        let code = group
            .stmts
            .iter()
            .map(|s| dedent(&parsed.stmt_source(s)))
            .collect::<Vec<_>>()
            .join("\n");
        if opts.strict {
            out.push(&phase, &format!("    _pbt.phase(\"Check\", \"{}\")", prop.id));
            out.push(&phase, &indent_lines(&code, "    "));
        } else {
            out.push(&phase, &format!("    with _pbt.check(\"{}\", {}):", prop.id, io.input));
            out.push(&phase, &indent_lines(&code, "        "));
        }
    }
    let (source_text, phase_map) = out.finish();
    let test = AssembledTest {
        source_text,
        mode: TestMode::Separate,
        target: target.clone(),
        test_name,
        generator_name: Some(generator.generator_name.clone()),
        properties,
        phase_map,
        strict: opts.strict,
    };
    test.validate()?;
    Ok(test)
}

/// Spellings under which `qualname` may be called given the fragment's
/// imports, e.g. `np.cumsum` after `import numpy as np`.
pub fn call_spellings(parsed: &PySource, qualname: &str) -> Vec<String> {
    let mut aliases: Vec<(String, String)> = Vec::new();
    let mut visit = |s: &Stmt| {
        if s.is_import() {
            aliases.extend(import_aliases(&s.text));
        }
    };
    fn walk<'a>(stmts: &'a [Stmt], f: &mut impl FnMut(&'a Stmt)) {
        for s in stmts {
            f(s);
            for c in &s.clauses {
                walk(&c.body, f);
            }
        }
    }
    walk(&parsed.stmts, &mut visit);

    let mut spellings = vec![qualname.to_string()];
    if let Some(bare) = qualname.strip_prefix("builtins.") {
        spellings.push(bare.to_string());
    }
    for (local, full) in aliases {
        let spelled = if qualname == full {
            Some(local)
        } else {
            qualname
                .strip_prefix(&format!("{full}."))
                .map(|rest| format!("{local}.{rest}"))
        };
        if let Some(s) = spelled {
            if !spellings.contains(&s) {
                spellings.push(s);
            }
        }
    }
    spellings
}

/// (local name, full dotted name) pairs bound by one import statement.
fn import_aliases(text: &str) -> Vec<(String, String)> {
    let text = text.replace(['(', ')', '\n', '\\'], " ");
    let mut out = Vec::new();
    if let Some(rest) = text.strip_prefix("import ") {
        for part in rest.split(',') {
            let mut words = part.split_whitespace();
            let Some(module) = words.next() else { continue };
            match (words.next(), words.next()) {
                (Some("as"), Some(alias)) => out.push((alias.to_string(), module.to_string())),
                _ => {
                    // `import a.b` binds `a`, through which `a.b` is reachable.
                    out.push((module.to_string(), module.to_string()));
                }
            }
        }
    } else if let Some(rest) = text.strip_prefix("from ") {
        if let Some((module, names)) = rest.split_once(" import ") {
            let module = module.trim();
            for part in names.split(',') {
                let mut words = part.split_whitespace();
                let Some(name) = words.next() else { continue };
                if name == "*" {
                    continue;
                }
                let local = match (words.next(), words.next()) {
                    (Some("as"), Some(alias)) => alias,
                    _ => name,
                };
                out.push((local.to_string(), format!("{module}.{name}")));
            }
        }
    }
    out
}

fn ident_char(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

/// True if `text` calls `callee` (`callee(`, not `xcallee(` or `a.callee(`).
fn calls(text: &str, callee: &str) -> bool {
    let mut from = 0;
    while let Some(pos) = text[from..].find(callee) {
        let start = from + pos;
        let end = start + callee.len();
        let before_ok = !text[..start]
            .chars()
            .next_back()
            .is_some_and(|c| ident_char(c) || c == '.');
        let after = text[end..].trim_start();
        if before_ok && after.starts_with('(') {
            return true;
        }
        from = end;
    }
    false
}

/// `.name(` method-call form.
fn calls_method(text: &str, name: &str) -> bool {
    let needle = format!(".{name}");
    let mut from = 0;
    while let Some(pos) = text[from..].find(&needle) {
        let end = from + pos + needle.len();
        if !text[end..].chars().next().is_some_and(ident_char) && text[end..].trim_start().starts_with('(') {
            return true;
        }
        from = end;
    }
    false
}

fn is_test_function(decos: &[&Stmt], f: &Stmt) -> bool {
    f.def_name().is_some_and(|n| n.starts_with("test"))
        || decos.iter().any(|d| {
            let t = d.text.trim_start_matches('@');
            t.starts_with("given(") || t.contains(".given(")
        })
}

/// Together strategy: the reply is already a full test function. The first
/// statement calling the target splits generation from invocation.
pub fn instrument_combined(
    combined: &str,
    target: &TargetApi,
    opts: &AssemblyOptions,
) -> Result<AssembledTest, AssemblyError> {
    let parsed = PySource::parse(combined)?;
    let functions = parsed.functions();
    let tests: Vec<_> = functions
        .iter()
        .filter(|(decos, f)| is_test_function(decos, f))
        .collect();
    let (_, func) = match tests.as_slice() {
        [one] => (&one.0, one.1),
        [] => return Err(AssemblyError::NoTestFunction),
        many => return Err(AssemblyError::MultipleTestFunctions(many.len())),
    };
    let test_name = func.def_name().unwrap_or("test").to_string();
    let body: Vec<&Stmt> = func.clauses[0].body.iter().collect();
    if func.clauses[0].inline.is_some() || body.is_empty() {
        return Err(AssemblyError::TargetCallNotFound(target.qualname.clone()));
    }

    let spellings = call_spellings(&parsed, &target.qualname);
    let by_spelling = body
        .iter()
        .position(|s| s.texts().iter().any(|t| spellings.iter().any(|sp| calls(t, sp))));
    let call_idx = by_spelling
        .or_else(|| {
            let method_like = target.input_object.is_some() || target.qualname.split('.').count() > 2;
            method_like
                .then(|| {
                    body.iter()
                        .position(|s| s.texts().iter().any(|t| calls_method(t, target.short_name())))
                })
                .flatten()
        })
        .ok_or_else(|| AssemblyError::TargetCallNotFound(target.qualname.clone()))?;

    let pre_call_checks = body[..call_idx].iter().filter(|s| s.contains_assertion()).count();
    let after: Vec<&Stmt> = body[call_idx + 1..].to_vec();
    let (groups, trailing) = group_checks(&after);
    if groups.is_empty() {
        return Err(AssemblyError::NoAssertionsFound);
    }
    let properties: Vec<PropertyAssertion> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let assertion = g
                .stmts
                .iter()
                .find(|s| s.contains_assertion())
                .expect("group holds an assertion");
            property_from(&parsed, assertion, i + 1)
        })
        .collect();

    let header = TestHeader {
        format: FORMAT_VERSION,
        mode: TestMode::Combined,
        target: target.qualname.clone(),
        test: test_name.clone(),
        properties: properties.iter().map(|p| p.id.clone()).collect(),
        generator: None,
        invocation: "first-call".into(),
        checks: if opts.strict { "strict" } else { "soft" }.into(),
        pre_call_checks,
    };

    let body_indent: String = {
        let line = &parsed.lines[body[0].start];
        line[..line.len() - line.trim_start().len()].to_string()
    };
    let first_body_line = body[0].start;
    let call_stmt = body[call_idx];
    let last_body_line = body.last().map(|s| s.end).unwrap_or(call_stmt.end);
    // Comment lines directly above a property belong to its check block.
    let group_start = |g: &CheckGroup| {
        let mut start = g.stmts[0].start;
        while start > 0 && parsed.comments.contains_key(&(start - 1)) && start - 1 > call_stmt.end {
            start -= 1;
        }
        start
    };

    let gen = Phase::Generate;
    let mut out = Emitter::new();
    out.push(&gen, &header_line(&header));
    out.push(&gen, &format!("import {RUNTIME_MODULE} as _pbt"));
    let src = |a: usize, b: usize| parsed.lines[a..b].join("\n");
    if first_body_line > 0 {
        out.push(&gen, &src(0, first_body_line));
    }
    out.push(&gen, &format!("{body_indent}_pbt.phase(\"Generate\")"));
    if call_stmt.start > first_body_line {
        out.push(&gen, &src(first_body_line, call_stmt.start));
    }
    out.push(&Phase::Invoke, &format!("{body_indent}_pbt.phase(\"Invoke\")"));
    let first_group_start = groups.first().map(group_start).unwrap_or(last_body_line + 1);
    out.push(&Phase::Invoke, &src(call_stmt.start, first_group_start));

    for (i, (prop, g)) in properties.iter().zip(&groups).enumerate() {
        let phase = Phase::Check(prop.id.clone());
        let start = group_start(g);
        let end = match groups.get(i + 1) {
            Some(next) => group_start(next),
            None => last_body_line + 1,
        };
        let code = src(start, end);
        if opts.strict {
            out.push(&phase, &format!("{body_indent}_pbt.phase(\"Check\", \"{}\")", prop.id));
            out.push(&phase, &code);
        } else {
            out.push(&phase, &format!("{body_indent}with _pbt.check(\"{}\"):", prop.id));
            out.push(&phase, &indent_lines(&code, "    "));
        }
    }
    debug_assert!(trailing.is_empty());
    if last_body_line + 1 < parsed.lines.len() {
        let rest = src(last_body_line + 1, parsed.lines.len());
        if !rest.trim().is_empty() {
            out.push(&gen, &rest);
        }
    }
    let (source_text, phase_map) = out.finish();
    let test = AssembledTest {
        source_text,
        mode: TestMode::Combined,
        target: target.clone(),
        test_name,
        generator_name: None,
        properties,
        phase_map,
        strict: opts.strict,
    };
    test.validate()?;
    Ok(test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_target() -> TargetApi {
        TargetApi::from_qualname("builtins.sorted", "Return a new sorted list.").unwrap()
    }

    const GEN_LISTS: &str = "from hypothesis import given, strategies as st\n\n# Random list generator\n@st.composite\ndef generate_lists(draw):\n  return draw(st.lists(\n              elements=st.integers(),\n              min_size=1))\n";

    #[test]
    fn generator_detection() {
        let g = GeneratorArtifact::from_source(GEN_LISTS).unwrap();
        assert_eq!(g.generator_name, "generate_lists");
        assert!(matches!(
            GeneratorArtifact::from_source("def f():\n    return 1\n"),
            Err(AssemblyError::MalformedGenerator(_))
        ));
        let bad = GeneratorArtifact {
            source_text: GEN_LISTS.into(),
            generator_name: "nope".into(),
        };
        assert!(matches!(
            assemble_separate(&bad, "assert True\n", &sorted_target(), &AssemblyOptions::default()),
            Err(AssemblyError::MalformedGenerator(_))
        ));
    }

    #[test]
    fn separate_matches_given_style() {
        let g = GeneratorArtifact::from_source(GEN_LISTS).unwrap();
        let props = "# sorted output is monotone\nassert all(result[i] <= result[i + 1]\n       for i in range(len(result) - 1))\n";
        let t = assemble_separate(&g, props, &sorted_target(), &AssemblyOptions::default()).unwrap();
        let src = &t.source_text;
        assert!(src.contains("@given(input_args=_pbt.generating(generate_lists()))"));
        assert!(src.contains("def test_builtins_sorted_separate(input_args):"));
        assert!(src.contains("    result = builtins.sorted(input_args)"));
        assert!(src.contains("    with _pbt.check(\"P1\", input_args):\n        assert all("));
        let call = src.find("builtins.sorted(input_args)").unwrap();
        let check = src.find("_pbt.check(\"P1\"").unwrap();
        assert!(call < check);
        assert_eq!(t.property_ids(), vec!["P1"]);
        assert_eq!(
            t.properties[0].description.as_deref(),
            Some("sorted output is monotone")
        );
        let h = t.header().unwrap();
        assert_eq!(h.mode, TestMode::Separate);
        assert_eq!(h.properties, vec!["P1"]);
        assert_eq!(h.generator.as_deref(), Some("generate_lists"));
    }

    #[test]
    fn separate_without_assertions_fails() {
        let g = GeneratorArtifact::from_source(GEN_LISTS).unwrap();
        assert_eq!(
            assemble_separate(&g, "x = 1\nprint(x)\n", &sorted_target(), &AssemblyOptions::default()),
            Err(AssemblyError::NoAssertionsFound)
        );
        assert!(matches!(
            assemble_separate(&g, "assert (x\n", &sorted_target(), &AssemblyOptions::default()),
            Err(AssemblyError::UnparseableFragment(_))
        ));
    }

    #[test]
    fn supporting_statements_join_the_next_check() {
        let g = GeneratorArtifact::from_source(GEN_LISTS).unwrap();
        let props = "import math\nexpected = len(input_args)\nassert len(result) == expected\nassert result == sorted(result)\nleftover = 1\n";
        let t = assemble_separate(&g, props, &sorted_target(), &AssemblyOptions::default()).unwrap();
        assert!(t.source_text.contains("\nimport math\n"));
        assert!(t.source_text.contains(
            "with _pbt.check(\"P1\", input_args):\n        expected = len(input_args)\n        assert len(result) == expected"
        ));
        assert!(t
            .source_text
            .contains("        assert result == sorted(result)\n        leftover = 1\n"));
        assert_eq!(t.properties.len(), 2);
    }

    #[test]
    fn strict_mode_uses_plain_phase_markers() {
        let g = GeneratorArtifact::from_source(GEN_LISTS).unwrap();
        let opts = AssemblyOptions {
            strict: true,
            ..Default::default()
        };
        let t = assemble_separate(&g, "assert result\n", &sorted_target(), &opts).unwrap();
        assert!(t
            .source_text
            .contains("    _pbt.phase(\"Check\", \"P1\")\n    assert result\n"));
        assert!(!t.source_text.contains("_pbt.check("));
        assert_eq!(t.header().unwrap().checks, "strict");
    }

    #[test]
    fn combined_data_test() {
        let src = "from hypothesis import given, strategies as st\n\n@given(st.data())\ndef test_sorted_combined(data):\n  lst = data.draw(st.lists(\n                  elements=st.integers(),\n                  min_size=1))\n  sorted_lst = sorted(lst)\n  assert all(sorted_lst[i] <= sorted_lst[i + 1]\n         for i in range(len(sorted_lst) - 1))\n";
        let target = TargetApi::from_qualname("builtins.sorted", "d").unwrap();
        let t = instrument_combined(src, &target, &AssemblyOptions::default()).unwrap();
        assert_eq!(t.property_ids(), vec!["P1"]);
        assert_eq!(t.test_name, "test_sorted_combined");
        let line_of = |needle: &str| {
            t.source_text
                .lines()
                .position(|l| l.contains(needle))
                .map(|i| i + 1)
                .unwrap()
        };
        assert_eq!(t.phase_of_line(line_of("lst = data.draw")), Some(&Phase::Generate));
        assert_eq!(
            t.phase_of_line(line_of("sorted_lst = sorted(lst)")),
            Some(&Phase::Invoke)
        );
        assert_eq!(
            t.phase_of_line(line_of("for i in range")),
            Some(&Phase::Check("P1".into()))
        );
        assert_eq!(t.header().unwrap().invocation, "first-call");
    }

    #[test]
    fn combined_errors() {
        let target = TargetApi::from_qualname("numpy.cumsum", "d").unwrap();
        let no_call = "import numpy as np\n@given(st.data())\ndef test_x(data):\n    a = data.draw(st.integers())\n    assert np.sum(a) == a\n";
        assert_eq!(
            instrument_combined(no_call, &target, &AssemblyOptions::default()),
            Err(AssemblyError::TargetCallNotFound("numpy.cumsum".into()))
        );
        let two = "def test_a():\n    pass\ndef test_b():\n    pass\n";
        assert_eq!(
            instrument_combined(two, &target, &AssemblyOptions::default()),
            Err(AssemblyError::MultipleTestFunctions(2))
        );
    }

    #[test]
    fn aliases_and_method_calls() {
        let parsed = PySource::parse("import numpy as np\nfrom numpy import cumsum as cs\nimport networkx\n").unwrap();
        let sp = call_spellings(&parsed, "numpy.cumsum");
        assert!(sp.contains(&"np.cumsum".to_string()));
        assert!(sp.contains(&"cs".to_string()));
        assert!(calls("x = np.cumsum(a)", "np.cumsum"));
        assert!(!calls("x = mynp.cumsum(a)", "np.cumsum"));
        assert!(!calls("x = np.cumsum", "np.cumsum"));
        assert!(calls_method("s = t.total_seconds()", "total_seconds"));
        assert!(!calls_method("s = t.total_seconds_x()", "total_seconds"));

        let weak = "@given(generate_timedelta())\ndef test_timedelta_total_seconds(t):\n  total_seconds = t.total_seconds()\n  # Check that total_seconds is a float\n  assert isinstance(total_seconds, float)\n";
        let target = TargetApi::from_qualname("datetime.timedelta.total_seconds", "d")
            .unwrap()
            .with_module_path("datetime");
        let t = instrument_combined(weak, &target, &AssemblyOptions::default()).unwrap();
        assert_eq!(t.property_ids(), vec!["P1"]);
        assert_eq!(
            t.properties[0].description.as_deref(),
            Some("Check that total_seconds is a float")
        );
    }

    #[test]
    fn phase_labels_round_trip() {
        for p in [Phase::Generate, Phase::Invoke, Phase::Check("P12".into())] {
            assert_eq!(p.to_string().parse::<Phase>().unwrap(), p);
        }
        assert!("Check()".parse::<Phase>().is_err());
        assert!("Teardown".parse::<Phase>().is_err());
    }

    #[test]
    fn phase_map_validation_catches_gaps() {
        let spans = vec![
            PhaseSpan {
                start_line: 1,
                end_line: 2,
                phase: Phase::Generate,
            },
            PhaseSpan {
                start_line: 4,
                end_line: 4,
                phase: Phase::Invoke,
            },
        ];
        assert!(validate_phase_map("a\nb\nc\nd\n", &spans, &[]).is_err());
        let spans = vec![PhaseSpan {
            start_line: 1,
            end_line: 4,
            phase: Phase::Generate,
        }];
        assert!(validate_phase_map("a\nb\nc\nd\n", &spans, &[]).is_ok());
        assert!(validate_phase_map("a\nb\nc\nd\n", &spans, &["P1".into()]).is_err());
    }
}
