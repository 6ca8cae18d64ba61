//! Completion cleanup and rewriting into standalone programs.
//!
//! Cleanup undoes forum formatting (HTML entities), drops blank and
//! comment-only lines, strips trailing whitespace, and truncates at the first
//! column-0 comment that follows executable code.
//!
//! Rewriting scans the top-level statements from the end and exposes the
//! first one of a known shape as an assignment to a fresh output variable:
//!
//! | last matching statement | rewrite                                      |
//! |-------------------------|----------------------------------------------|
//! | `var = expr`            | append `var_out = var`                       |
//! | `var[i] = expr`         | append `var_out = var`                       |
//! | `print(expr, ...)`      | replace it and what follows with `var_out = expr` |
//! | `expr`                  | replace it and what follows with `var_out = expr` |
//!
//! Statement detection is lexical: a statement starts at column 0 outside
//! brackets, strings, and line continuations.

use serde::{Deserialize, Serialize};

/// Imports made available to every program unless already present.
pub const COMMON_IMPORTS: [&str; 2] = ["import pandas as pd", "import numpy as np"];

const OUTPUT_VAR: &str = "var_out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewriteForm {
    Assign,
    IndexedAssign,
    Print,
    BareExpr,
    None,
}

impl RewriteForm {
    pub fn as_str(self) -> &'static str {
        match self {
            RewriteForm::Assign => "assign",
            RewriteForm::IndexedAssign => "indexed-assign",
            RewriteForm::Print => "print",
            RewriteForm::BareExpr => "bare-expr",
            RewriteForm::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub raw: String,
    pub cleaned: String,
    /// Complete program (imports, input definition, rewritten completion).
    pub program: Option<String>,
    pub rewrite_form: RewriteForm,
    pub output_var: String,
}

/// Clean then rewrite a raw completion.
pub fn process(raw: &str, input_preamble: &str) -> Completion {
    let cleaned = cleanup(raw);
    Completion {
        raw: raw.to_string(),
        ..rewrite(&cleaned, input_preamble)
    }
}

/// The prompt ends inside a line comment, so the first line of a raw
/// completion continues that comment. Returns the text after it.
pub fn detach_from_prompt(raw: &str) -> &str {
    raw.split_once('\n').map_or("", |(_, rest)| rest)
}

const ENTITIES: [(&str, &str); 8] = [
    ("&lt;", "<"),
    ("&gt;", ">"),
    ("&quot;", "\""),
    ("&#39;", "'"),
    ("&#x27;", "'"),
    ("&apos;", "'"),
    ("&#34;", "\""),
    ("&amp;", "&"),
];

fn decode_entities_once(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        match ENTITIES.iter().find(|(e, _)| rest.starts_with(e)) {
            Some((e, r)) => {
                out.push_str(r);
                rest = &rest[e.len()..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Decode until nothing changes, so `&amp;lt;` ends up as `<`.
fn decode_entities(s: &str) -> String {
    let mut current = s.to_string();
    loop {
        let next = decode_entities_once(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

fn is_comment_only(line: &str) -> bool {
    line.trim_start().starts_with('#')
}

pub fn cleanup(raw: &str) -> String {
    let decoded = decode_entities(raw);
    let mut kept: Vec<&str> = Vec::new();
    let mut seen_code = false;
    for (i, line) in decoded.split('\n').enumerate() {
        if i > 0 && seen_code && line.starts_with('#') {
            break;
        }
        let line = line.trim_end();
        if line.trim_start().is_empty() || is_comment_only(line) {
            continue;
        }
        seen_code = true;
        kept.push(line);
    }
    kept.join("\n")
}

/// A top-level statement: byte range in the source plus its text with
/// comments removed.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Statement {
    start: usize,
    end: usize,
    code: String,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Quote {
    Single(char),
    Triple(char),
}

/// Split source into top-level statements.
fn top_level_statements(src: &str) -> Vec<Statement> {
    let mut out = Vec::new();
    let mut current: Option<Statement> = None;
    let mut depth: i32 = 0;
    let mut quote: Option<Quote> = None;
    let mut in_comment = false;
    let mut continued = false;
    let mut at_line_start = true;
    let mut header_line = false;
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut i = 0;

    let close = |cur: &mut Option<Statement>, out: &mut Vec<Statement>, end: usize| {
        if let Some(mut st) = cur.take() {
            st.end = end;
            if !st.code.trim().is_empty() {
                st.code = st.code.trim_end().to_string();
                out.push(st);
            }
        }
    };

    while i < chars.len() {
        let (pos, c) = chars[i];
        if at_line_start {
            at_line_start = false;
            let fresh = depth == 0 && quote.is_none() && !continued;
            if fresh && !c.is_whitespace() && c != '#' {
                close(&mut current, &mut out, pos);
                current = Some(Statement {
                    start: pos,
                    end: pos,
                    code: String::new(),
                });
                header_line = true;
            } else {
                header_line = header_line && !fresh;
            }
            continued = false;
        }
        if c == '\n' {
            in_comment = false;
            at_line_start = true;
            if matches!(quote, Some(Quote::Single(_))) {
                // unterminated literal; recover at the line break
                quote = None;
            }
            if let Some(st) = current.as_mut() {
                st.code.push('\n');
            }
            i += 1;
            continue;
        }
        if in_comment {
            i += 1;
            continue;
        }
        let push = |cur: &mut Option<Statement>, ch: char| {
            if let Some(st) = cur.as_mut() {
                st.code.push(ch);
            }
        };
        match quote {
            Some(q) => {
                push(&mut current, c);
                if c == '\\' {
                    if let Some(&(_, next)) = chars.get(i + 1) {
                        if next != '\n' {
                            push(&mut current, next);
                        } else {
                            push(&mut current, '\n');
                            at_line_start = true;
                        }
                        i += 2;
                        continue;
                    }
                }
                match q {
                    Quote::Single(qc) if c == qc => quote = None,
                    Quote::Triple(qc)
                        if c == qc
                            && chars.get(i + 1).map(|x| x.1) == Some(qc)
                            && chars.get(i + 2).map(|x| x.1) == Some(qc) =>
                    {
                        push(&mut current, qc);
                        push(&mut current, qc);
                        quote = None;
                        i += 3;
                        continue;
                    }
                    _ => {}
                }
                i += 1;
            }
            None => {
                match c {
                    '#' => {
                        in_comment = true;
                        i += 1;
                        continue;
                    }
                    '\'' | '"' => {
                        let triple = chars.get(i + 1).map(|x| x.1) == Some(c)
                            && chars.get(i + 2).map(|x| x.1) == Some(c);
                        if triple {
                            push(&mut current, c);
                            push(&mut current, c);
                            push(&mut current, c);
                            quote = Some(Quote::Triple(c));
                            i += 3;
                            continue;
                        }
                        quote = Some(Quote::Single(c));
                    }
                    '(' | '[' | '{' => depth += 1,
                    ')' | ']' | '}' => depth = (depth - 1).max(0),
                    '\\' if chars.get(i + 1).map(|x| x.1) == Some('\n') => {
                        continued = true;
                    }
                    ';' if depth == 0 && header_line => {
                        let compound = current
                            .as_ref()
                            .is_some_and(|st| starts_with_keyword(st.code.trim_start()));
                        if !compound {
                            close(&mut current, &mut out, pos);
                            // the remainder of the line opens a new statement
                            let next = chars.get(i + 1).map_or(src.len(), |x| x.0);
                            current = Some(Statement {
                                start: next,
                                end: next,
                                code: String::new(),
                            });
                            i += 1;
                            continue;
                        }
                    }
                    _ => {}
                }
                push(&mut current, c);
                i += 1;
            }
        }
    }
    close(&mut current, &mut out, src.len());
    // statements opened after a `;` may begin with spaces
    for st in &mut out {
        let lead = st.code.len() - st.code.trim_start().len();
        if lead > 0 {
            let skipped = src[st.start..].len() - src[st.start..].trim_start().len();
            st.start += skipped;
            st.code = st.code.trim_start().to_string();
        }
    }
    out
}

const STATEMENT_KEYWORDS: [&str; 22] = [
    "def", "class", "if", "elif", "else", "for", "while", "with", "try", "except", "finally",
    "import", "from", "return", "assert", "del", "pass", "raise", "global", "nonlocal", "break",
    "continue",
];

fn leading_word(s: &str) -> &str {
    let end = s
        .char_indices()
        .find(|(_, c)| !(c.is_alphanumeric() || *c == '_'))
        .map_or(s.len(), |(i, _)| i);
    &s[..end]
}

fn starts_with_keyword(s: &str) -> bool {
    let word = leading_word(s);
    STATEMENT_KEYWORDS.contains(&word)
        || matches!(word, "async" | "yield" | "await")
        || s.starts_with('@')
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_')
        && chars.all(|c| c.is_alphanumeric() || c == '_')
        && !STATEMENT_KEYWORDS.contains(&s)
}

/// Positions of depth-0 characters outside string literals in comment-free
/// code, as `(byte offset, char)`.
fn depth_zero_chars(code: &str) -> Vec<(usize, char)> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut quote: Option<Quote> = None;
    let chars: Vec<(usize, char)> = code.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        let at = |k: usize| chars.get(i + k).map(|x| x.1);
        match quote {
            Some(q) => {
                if c == '\\' {
                    i += 2;
                    continue;
                }
                match q {
                    Quote::Single(qc) if c == qc || c == '\n' => quote = None,
                    Quote::Triple(qc) if c == qc && at(1) == Some(qc) && at(2) == Some(qc) => {
                        quote = None;
                        i += 3;
                        continue;
                    }
                    _ => {}
                }
            }
            None => match c {
                '\'' | '"' => {
                    if at(1) == Some(c) && at(2) == Some(c) {
                        quote = Some(Quote::Triple(c));
                        i += 3;
                        continue;
                    }
                    quote = Some(Quote::Single(c));
                }
                '(' | '[' | '{' => {
                    if depth == 0 {
                        out.push((pos, c));
                    }
                    depth += 1;
                }
                ')' | ']' | '}' => {
                    depth = (depth - 1).max(0);
                    if depth == 0 {
                        out.push((pos, c));
                    }
                }
                _ if depth == 0 => out.push((pos, c)),
                _ => {}
            },
        }
        i += 1;
    }
    out
}

#[derive(Debug, PartialEq, Eq)]
enum Shape {
    Assign(String),
    IndexedAssign(String),
    Print(String),
    Expr(String),
    Other,
}

/// Byte offset of the first plain `=` at depth 0, or `None`. Comparison
/// operators do not count; an augmented assignment yields `Err`.
fn assignment_split(code: &str) -> Result<Option<usize>, ()> {
    let top = depth_zero_chars(code);
    let adjacent = |a: usize, b: usize| top[a].0 + top[a].1.len_utf8() == top[b].0;
    let mut idx = 0;
    while idx < top.len() {
        let (pos, c) = top[idx];
        if c != '=' {
            idx += 1;
            continue;
        }
        if idx + 1 < top.len() && top[idx + 1].1 == '=' && adjacent(idx, idx + 1) {
            // `==`
            idx += 2;
            continue;
        }
        let prev = (idx > 0 && adjacent(idx - 1, idx)).then(|| top[idx - 1].1);
        match prev {
            Some('<' | '>') if is_shift_augmented(&top, idx) => return Err(()),
            Some('!' | '<' | '>' | ':' | '=') => {}
            Some('+' | '-' | '*' | '/' | '%' | '&' | '|' | '^' | '@') => return Err(()),
            _ => return Ok(Some(pos)),
        }
        idx += 1;
    }
    Ok(None)
}

fn is_shift_augmented(top: &[(usize, char)], idx: usize) -> bool {
    // `>>=` / `<<=`
    idx >= 2
        && matches!(top[idx - 1].1, '<' | '>')
        && top[idx - 2].1 == top[idx - 1].1
        && top[idx - 2].0 + 1 == top[idx - 1].0
}

fn indexed_base(lhs: &str) -> Option<String> {
    if !lhs.ends_with(']') {
        return None;
    }
    let top = depth_zero_chars(lhs);
    if top.iter().any(|&(_, c)| c == ',' || c.is_whitespace()) {
        return None;
    }
    let base = leading_word(lhs);
    if !is_identifier(base) {
        return None;
    }
    // everything after the base must be `.attr` or `[...]` trailers
    let mut rest = &lhs[base.len()..];
    let mut saw_subscript = false;
    while !rest.is_empty() {
        if let Some(after_dot) = rest.strip_prefix('.') {
            let word = leading_word(after_dot);
            if word.is_empty() {
                return None;
            }
            rest = &after_dot[word.len()..];
        } else if rest.starts_with('[') {
            let close = depth_zero_chars(rest)
                .into_iter()
                .find(|&(_, c)| c == ']')?
                .0;
            rest = &rest[close + 1..];
            saw_subscript = true;
        } else {
            return None;
        }
    }
    saw_subscript.then(|| base.to_string())
}

fn print_argument(code: &str) -> Option<Option<String>> {
    let rest = code.strip_prefix("print")?;
    let rest_trim = rest.trim_start();
    if !rest_trim.starts_with('(') {
        return None;
    }
    let offset = code.len() - rest_trim.len();
    let top = depth_zero_chars(rest_trim);
    // the call must span the whole statement
    let (close, _) = *top.get(1)?;
    if top.len() != 2 || close + 1 != rest_trim.len() {
        return None;
    }
    let inner = &code[offset + 1..offset + close];
    let mut depth_end = inner.len();
    for (pos, c) in depth_zero_chars(inner) {
        if c == ',' {
            depth_end = pos;
            break;
        }
    }
    let first = inner[..depth_end].trim();
    if first.is_empty() || first.contains('=') && is_keyword_argument(first) {
        return Some(None);
    }
    Some(Some(first.to_string()))
}

fn is_keyword_argument(arg: &str) -> bool {
    arg.split_once('=')
        .is_some_and(|(name, value)| is_identifier(name.trim()) && !value.starts_with('='))
}

fn classify(code: &str) -> Shape {
    let code = code.trim();
    if code.is_empty() || starts_with_keyword(code) {
        return Shape::Other;
    }
    match assignment_split(code) {
        Err(()) => Shape::Other,
        Ok(Some(pos)) => {
            let lhs = code[..pos].trim();
            if is_identifier(lhs) {
                Shape::Assign(lhs.to_string())
            } else if let Some(base) = indexed_base(lhs) {
                Shape::IndexedAssign(base)
            } else {
                Shape::Other
            }
        }
        Ok(None) => {
            if let Some(arg) = print_argument(code) {
                return arg.map_or(Shape::Other, Shape::Print);
            }
            if code.ends_with(':') {
                return Shape::Other;
            }
            Shape::Expr(code.to_string())
        }
    }
}

fn fresh_output_var(text: &str) -> String {
    if !text.contains(OUTPUT_VAR) {
        return OUTPUT_VAR.to_string();
    }
    (1..)
        .map(|i| format!("{OUTPUT_VAR}{i}"))
        .find(|name| !text.contains(name.as_str()))
        .expect("some suffix is unused")
}

fn has_line(text: &str, wanted: &str) -> bool {
    text.lines().any(|l| l.trim() == wanted)
}

pub fn rewrite(cleaned: &str, input_preamble: &str) -> Completion {
    let output_var = fresh_output_var(&format!("{input_preamble}\n{cleaned}"));
    let statements = top_level_statements(cleaned);
    let matched = statements
        .iter()
        .rev()
        .map(|st| (st, classify(&st.code)))
        .find(|(_, shape)| *shape != Shape::Other);

    let (form, body) = match matched {
        None => (RewriteForm::None, None),
        Some((_, Shape::Assign(var))) => (
            RewriteForm::Assign,
            Some(format!("{cleaned}\n{output_var} = {var}")),
        ),
        Some((_, Shape::IndexedAssign(var))) => (
            RewriteForm::IndexedAssign,
            Some(format!("{cleaned}\n{output_var} = {var}")),
        ),
        Some((st, Shape::Print(expr))) => (
            RewriteForm::Print,
            Some(format!("{}{output_var} = {expr}", &cleaned[..st.start])),
        ),
        Some((st, Shape::Expr(expr))) => (
            RewriteForm::BareExpr,
            Some(format!("{}{output_var} = {expr}", &cleaned[..st.start])),
        ),
        Some((_, Shape::Other)) => unreachable!(),
    };

    let program = body.map(|body| {
        let mut parts: Vec<&str> = COMMON_IMPORTS
            .iter()
            .copied()
            .filter(|imp| !has_line(cleaned, imp) && !has_line(input_preamble, imp))
            .collect();
        if !input_preamble.is_empty() {
            parts.push(input_preamble);
        }
        parts.push(&body);
        parts.join("\n")
    });

    Completion {
        raw: cleaned.to_string(),
        cleaned: cleaned.to_string(),
        program,
        rewrite_form: form,
        output_var,
    }
}
