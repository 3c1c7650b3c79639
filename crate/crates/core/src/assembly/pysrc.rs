//! Statement-level reader for Python source fragments.
//!
//! This is not a full Python parser. It understands enough of the
//! lexical structure (strings, brackets, comments, line continuations,
//! indentation blocks and compound-statement clauses) to split LLM output
//! into statements, find assertions and locate calls.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line + 1, self.message)
    }
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line,
        message: message.into(),
    })
}

const COMPOUND: &[&str] = &[
    "if", "elif", "else", "for", "while", "try", "except", "finally", "with", "def", "class", "async", "match", "case",
];
const CONTINUATIONS: &[&str] = &["elif", "else", "except", "finally"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub keyword: String,
    /// Header text between the keyword and the colon, trimmed.
    pub condition: String,
    /// Physical line of the clause header.
    pub line: usize,
    pub inline: Option<String>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stmt {
    /// First physical line, 0-based.
    pub start: usize,
    /// Last physical line, inclusive.
    pub end: usize,
    pub indent: usize,
    /// Logical text of the statement (header line for compound ones),
    /// comments removed.
    pub text: String,
    /// Empty for simple statements.
    pub clauses: Vec<Clause>,
}

impl Stmt {
    pub fn is_compound(&self) -> bool {
        !self.clauses.is_empty()
    }

    pub fn keyword(&self) -> Option<&str> {
        self.clauses.first().map(|c| c.keyword.as_str())
    }

    /// `assert ...` or a bare call to a function named `assert*`
    /// (`np.testing.assert_almost_equal(...)`, `self.assertEqual(...)`).
    pub fn is_assertion(&self) -> bool {
        !self.is_compound() && is_assertion_text(&self.text)
    }

    pub fn contains_assertion(&self) -> bool {
        self.is_assertion()
            || self.clauses.iter().any(|c| {
                c.inline.as_deref().is_some_and(is_assertion_text) || c.body.iter().any(Stmt::contains_assertion)
            })
    }

    /// Every logical text in this statement, headers and nested bodies
    /// included.
    pub fn texts(&self) -> Vec<&str> {
        let mut out = vec![self.text.as_str()];
        for c in &self.clauses {
            if let Some(i) = &c.inline {
                out.push(i);
            }
            for s in &c.body {
                out.extend(s.texts());
            }
        }
        out
    }

    pub fn is_import(&self) -> bool {
        !self.is_compound() && (self.text.starts_with("import ") || self.text.starts_with("from "))
    }

    /// Name of a `def` statement.
    pub fn def_name(&self) -> Option<&str> {
        let c = self.clauses.first()?;
        let header = match c.keyword.as_str() {
            "def" => c.condition.as_str(),
            "async" => c.condition.strip_prefix("def")?.trim_start(),
            _ => return None,
        };
        let end = header
            .find(|ch: char| !(ch == '_' || ch.is_alphanumeric()))
            .unwrap_or(header.len());
        Some(&header[..end]).filter(|n| !n.is_empty())
    }
}

pub(crate) fn is_assertion_text(text: &str) -> bool {
    let t = text.trim_start();
    if let Some(rest) = t.strip_prefix("assert") {
        if rest.is_empty() || rest.starts_with([' ', '(', '\t', '\n']) {
            return true;
        }
    }
    // Dotted callee immediately followed by `(`.
    let callee_end = t
        .find(|c: char| !(c == '_' || c == '.' || c.is_alphanumeric()))
        .unwrap_or(t.len());
    let callee = &t[..callee_end];
    if callee.is_empty() || !t[callee_end..].trim_start().starts_with('(') {
        return false;
    }
    let last = callee.rsplit('.').next().unwrap_or(callee);
    last.to_ascii_lowercase().starts_with("assert")
}

#[derive(Debug, Clone)]
pub struct PySource {
    /// Physical lines without terminators.
    pub lines: Vec<String>,
    pub stmts: Vec<Stmt>,
    /// Comment-only physical lines, text after `#` trimmed.
    pub comments: BTreeMap<usize, String>,
}

#[derive(Debug, Clone)]
struct LogicalLine {
    start: usize,
    end: usize,
    indent: usize,
    text: String,
}

fn indent_width(line: &str) -> usize {
    let mut w = 0;
    for c in line.chars() {
        match c {
            ' ' => w += 1,
            '\t' => w = (w / 8 + 1) * 8,
            '\x0c' => {}
            _ => break,
        }
    }
    w
}

#[derive(Clone, Copy)]
struct StrState {
    quote: char,
    triple: bool,
}

fn logical_lines(lines: &[String]) -> Result<(Vec<LogicalLine>, BTreeMap<usize, String>), ParseError> {
    let mut out = Vec::new();
    let mut comments = BTreeMap::new();
    let mut brackets: Vec<(char, usize)> = Vec::new();
    let mut string: Option<(StrState, usize)> = None;
    let mut current: Option<LogicalLine> = None;

    for (i, line) in lines.iter().enumerate() {
        if current.is_none() {
            let trimmed = line.trim_start();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(c) = trimmed.strip_prefix('#') {
                comments.insert(i, c.trim().to_string());
                continue;
            }
            current = Some(LogicalLine {
                start: i,
                end: i,
                indent: indent_width(line),
                text: String::new(),
            });
        }
        let cur = current.as_mut().expect("logical line open");
        if cur.start != i {
            cur.text.push('\n');
        }
        cur.end = i;
        let body: &str = if cur.start == i { line.trim_start() } else { line };
        let chars: Vec<char> = body.chars().collect();
        let mut j = 0;
        let mut continued = false;
        while j < chars.len() {
            let c = chars[j];
            if let Some((st, _)) = string {
                cur.text.push(c);
                if c == '\\' {
                    if let Some(&n) = chars.get(j + 1) {
                        cur.text.push(n);
                        j += 2;
                        continue;
                    }
                    j += 1;
                    continue;
                }
                if c == st.quote {
                    if st.triple {
                        if chars.get(j + 1) == Some(&st.quote) && chars.get(j + 2) == Some(&st.quote) {
                            cur.text.push(st.quote);
                            cur.text.push(st.quote);
                            j += 3;
                            string = None;
                            continue;
                        }
                    } else {
                        string = None;
                    }
                }
                j += 1;
                continue;
            }
            match c {
                '#' => break,
                '"' | '\'' => {
                    let triple = chars.get(j + 1) == Some(&c) && chars.get(j + 2) == Some(&c);
                    string = Some((StrState { quote: c, triple }, i));
                    if triple {
                        cur.text.push_str(&format!("{c}{c}{c}"));
                        j += 3;
                    } else {
                        cur.text.push(c);
                        j += 1;
                    }
                    continue;
                }
                '(' | '[' | '{' => brackets.push((c, i)),
                ')' | ']' | '}' => {
                    let open = match c {
                        ')' => '(',
                        ']' => '[',
                        _ => '{',
                    };
                    match brackets.pop() {
                        Some((o, _)) if o == open => {}
                        _ => return err(i, format!("unmatched `{c}`")),
                    }
                }
                '\\' if j + 1 == chars.len() => {
                    continued = true;
                    j += 1;
                    continue;
                }
                _ => {}
            }
            cur.text.push(c);
            j += 1;
        }
        if let Some((st, _)) = string {
            if !st.triple && !continued {
                return err(i, "unterminated string literal");
            }
        }
        if string.is_none() && brackets.is_empty() && !continued {
            let mut done = current.take().expect("logical line open");
            let trimmed = done.text.trim_end().to_string();
            done.text = trimmed;
            if done.text.is_empty() {
                continue;
            }
            out.push(done);
        }
    }
    if let Some((_, line)) = string {
        return err(line, "unterminated string literal");
    }
    if let Some((c, line)) = brackets.last() {
        return err(*line, format!("`{c}` is never closed"));
    }
    if let Some(cur) = current {
        return err(cur.end, "unexpected end of input");
    }
    Ok((out, comments))
}

/// Calls `f` for every character outside strings and brackets; stops when
/// `f` returns true and yields that byte index.
pub(crate) fn find_top_level(text: &str, mut f: impl FnMut(usize, char, &str) -> bool) -> Option<usize> {
    let mut depth = 0usize;
    let mut string: Option<StrState> = None;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if let Some(st) = string {
            if c == '\\' {
                chars.next();
                continue;
            }
            if c == st.quote {
                if st.triple {
                    if text[i..].starts_with(&format!("{0}{0}{0}", st.quote)) {
                        chars.next();
                        chars.next();
                        string = None;
                    }
                } else {
                    string = None;
                }
            }
            continue;
        }
        match c {
            '"' | '\'' => {
                let triple = text[i..].starts_with(&format!("{c}{c}{c}"));
                if triple {
                    chars.next();
                    chars.next();
                }
                string = Some(StrState { quote: c, triple });
            }
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth = depth.saturating_sub(1),
            _ if depth == 0 && f(i, c, &text[i..]) => return Some(i),
            _ => {}
        }
    }
    None
}

fn first_word(text: &str) -> &str {
    let end = text
        .find(|c: char| !(c == '_' || c.is_alphanumeric()))
        .unwrap_or(text.len());
    &text[..end]
}

/// Splits a compound header into (keyword, condition, inline body).
fn split_header(text: &str) -> Option<(String, String, Option<String>)> {
    let kw = first_word(text);
    if !COMPOUND.contains(&kw) {
        return None;
    }
    let mut lambdas = 0usize;
    let mut prev_ident_end = 0usize;
    let colon = find_top_level(text, |i, c, rest| {
        if (c == '_' || c.is_alphabetic()) && i >= prev_ident_end {
            let word = first_word(rest);
            prev_ident_end = i + word.len();
            let boundary = i == 0
                || !text[..i]
                    .chars()
                    .next_back()
                    .is_some_and(|p| p == '_' || p.is_alphanumeric());
            if word == "lambda" && boundary {
                lambdas += 1;
            }
            return false;
        }
        if c == ':' && !rest[1..].starts_with('=') {
            if lambdas > 0 {
                lambdas -= 1;
                return false;
            }
            return true;
        }
        false
    })?;
    let condition = text[kw.len()..colon].trim().to_string();
    let inline = text[colon + 1..].trim();
    // `match`/`case` are soft keywords: `match(x)` alone is a call.
    if (kw == "match" || kw == "case") && condition.is_empty() {
        return None;
    }
    Some((
        kw.to_string(),
        condition,
        (!inline.is_empty()).then(|| inline.to_string()),
    ))
}

struct Builder<'a> {
    lines: &'a [LogicalLine],
    pos: usize,
}

impl Builder<'_> {
    fn block(&mut self, indent: usize) -> Result<Vec<Stmt>, ParseError> {
        let mut stmts: Vec<Stmt> = Vec::new();
        while let Some(line) = self.lines.get(self.pos) {
            if line.indent < indent {
                break;
            }
            if line.indent > indent {
                return err(line.start, "unexpected indent");
            }
            let header = split_header(&line.text);
            if let Some((kw, _, _)) = &header {
                if CONTINUATIONS.contains(&kw.as_str()) {
                    let clause = self.clause()?;
                    match stmts.last_mut() {
                        Some(prev) if prev.is_compound() => {
                            prev.end = clause_end(&clause, prev.end);
                            prev.clauses.push(clause);
                            continue;
                        }
                        _ => return err(line.start, format!("`{kw}` without a matching block")),
                    }
                }
            }
            let start = line.start;
            if header.is_some() {
                let text = line.text.clone();
                let clause = self.clause()?;
                let end = clause_end(&clause, line.end);
                stmts.push(Stmt {
                    start,
                    end,
                    indent,
                    text,
                    clauses: vec![clause],
                });
            } else {
                self.pos += 1;
                stmts.push(Stmt {
                    start,
                    end: line.end,
                    indent,
                    text: line.text.clone(),
                    clauses: Vec::new(),
                });
            }
        }
        Ok(stmts)
    }

    fn clause(&mut self) -> Result<Clause, ParseError> {
        let line = &self.lines[self.pos];
        let (keyword, condition, inline) = split_header(&line.text).expect("clause called on a compound header");
        self.pos += 1;
        if inline.is_some() {
            return Ok(Clause {
                keyword,
                condition,
                line: line.start,
                inline,
                body: Vec::new(),
            });
        }
        match self.lines.get(self.pos) {
            Some(next) if next.indent > line.indent => {
                let body = self.block(next.indent)?;
                Ok(Clause {
                    keyword,
                    condition,
                    line: line.start,
                    inline: None,
                    body,
                })
            }
            _ => err(line.end, format!("expected an indented block after `{keyword}`")),
        }
    }
}

fn clause_end(clause: &Clause, header_end: usize) -> usize {
    clause.body.last().map(|s| s.end).unwrap_or(header_end).max(header_end)
}

impl PySource {
    pub fn parse(source: &str) -> Result<Self, ParseError> {
        let lines: Vec<String> = source
            .split('\n')
            .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
            .collect();
        let (logical, comments) = logical_lines(&lines)?;
        let base = logical.first().map(|l| l.indent).unwrap_or(0);
        let mut b = Builder {
            lines: &logical,
            pos: 0,
        };
        let stmts = b.block(base)?;
        if let Some(line) = logical.get(b.pos) {
            return err(line.start, "unindent does not match any outer indentation level");
        }
        Ok(Self { lines, stmts, comments })
    }

    /// Physical source of `stmt`, lines `start..=end`.
    pub fn stmt_source(&self, stmt: &Stmt) -> String {
        self.lines[stmt.start..=stmt.end].join("\n")
    }

    /// Comment lines directly above `line` (no blank line in between),
    /// joined with spaces.
    pub fn leading_comment(&self, line: usize) -> Option<String> {
        let mut parts = Vec::new();
        let mut i = line;
        while i > 0 {
            i -= 1;
            match self.comments.get(&i) {
                Some(c) => parts.push(c.clone()),
                None => break,
            }
        }
        if parts.is_empty() {
            return None;
        }
        parts.reverse();
        let joined = parts
            .iter()
            .map(|p| p.trim())
            .filter(|p| !p.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        (!joined.is_empty()).then_some(joined)
    }

    /// Top-level `def` statements with the decorator lines preceding each.
    pub fn functions(&self) -> Vec<(Vec<&Stmt>, &Stmt)> {
        let mut out = Vec::new();
        let mut decorators: Vec<&Stmt> = Vec::new();
        for s in &self.stmts {
            if !s.is_compound() && s.text.starts_with('@') {
                decorators.push(s);
                continue;
            }
            if s.def_name().is_some() {
                out.push((std::mem::take(&mut decorators), s));
            } else {
                decorators.clear();
            }
        }
        out
    }
}

/// Removes the common leading whitespace of all non-blank lines.
pub fn dedent(text: &str) -> String {
    let common = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start_matches([' ', '\t']).len())
        .min()
        .unwrap_or(0);
    text.lines()
        .map(|l| {
            if l.len() >= common {
                &l[common..]
            } else {
                l.trim_start()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Prefixes every non-blank line with `prefix`.
pub fn indent_lines(text: &str, prefix: &str) -> String {
    text.lines()
        .map(|l| {
            if l.trim().is_empty() {
                String::new()
            } else {
                format!("{prefix}{l}")
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_simple_and_compound_statements() {
        let src = "x = f(1,\n      2)\nif x:\n    assert x > 0\nelse:\n    y = 1\nassert y\n";
        let m = PySource::parse(src).unwrap();
        assert_eq!(m.stmts.len(), 3);
        assert_eq!((m.stmts[0].start, m.stmts[0].end), (0, 1));
        assert_eq!(m.stmts[1].clauses.len(), 2);
        assert_eq!(m.stmts[1].end, 5);
        assert!(m.stmts[1].contains_assertion());
        assert!(m.stmts[2].is_assertion());
    }

    #[test]
    fn recognizes_assertion_calls() {
        assert!(is_assertion_text("np.testing.assert_almost_equal(a, b)"));
        assert!(is_assertion_text("self.assertEqual(a, b)"));
        assert!(is_assertion_text("assert(x)"));
        assert!(!is_assertion_text("asserted = True"));
        assert!(!is_assertion_text("x = assert_thing(1)"));
    }

    #[test]
    fn strings_and_comments_do_not_confuse_structure() {
        let src = "s = \"\"\"if x:\n  (unbalanced\n\"\"\"  # comment: yes\nt = 'a#b'  # real comment\nassert s != t, \"colon: here\"\n";
        let m = PySource::parse(src).unwrap();
        assert_eq!(m.stmts.len(), 3);
        assert_eq!(m.stmts[1].text, "t = 'a#b'");
        assert!(m.stmts[2].is_assertion());
    }

    #[test]
    fn inline_bodies_and_lambdas() {
        let m = PySource::parse("if a: assert b\nf = lambda x: x\nwhile (n := n - 1): pass\n").unwrap();
        assert_eq!(m.stmts[0].clauses[0].inline.as_deref(), Some("assert b"));
        assert!(m.stmts[0].contains_assertion());
        assert!(!m.stmts[1].is_compound());
        assert_eq!(m.stmts[2].clauses[0].condition, "(n := n - 1)");
    }

    #[test]
    fn rejects_malformed_fragments() {
        for bad in [
            "x = (1,\n",
            "if x:\n",
            "if x:\ny = 1\n",
            "  x = 1\ny = 2\n",
            "x = 1\n    y = 2\n",
            "s = 'abc\n",
            "x = 1)\n",
            "else:\n    pass\n",
            "if a:\n        b = 1\n    c = 2\n",
        ] {
            assert!(PySource::parse(bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn uniformly_indented_fragment_is_accepted() {
        let m = PySource::parse("    # c\n    assert a\n    if b:\n        assert c\n").unwrap();
        assert_eq!(m.stmts.len(), 2);
        assert_eq!(m.leading_comment(1).as_deref(), Some("c"));
    }

    #[test]
    fn finds_functions_with_decorators() {
        let src = "@st.composite\ndef gen(draw):\n    return 1\n\n@given(gen())\ndef test_x(v):\n    assert v\n";
        let m = PySource::parse(src).unwrap();
        let fns = m.functions();
        assert_eq!(fns.len(), 2);
        assert_eq!(fns[0].1.def_name(), Some("gen"));
        assert_eq!(fns[0].0[0].text, "@st.composite");
        assert_eq!(fns[1].0[0].text, "@given(gen())");
    }

    #[test]
    fn backslash_continuation() {
        let m = PySource::parse("assert a == \\\n    b\nx = 1\n").unwrap();
        assert_eq!(m.stmts.len(), 2);
        assert_eq!(m.stmts[0].end, 1);
    }

    #[test]
    fn dedent_and_indent() {
        assert_eq!(dedent("  a\n    b\n\n  c"), "a\n  b\n\nc");
        assert_eq!(indent_lines("a\n\nb", "  "), "  a\n\n  b");
    }
}
