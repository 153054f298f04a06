//! Tolerant, indentation-aware analysis of Python-style code prefixes.
//!
//! Prefixes are usually cut mid-program, so nothing here builds a full
//! syntax tree. A small lexer tracks strings, brackets and explicit line
//! continuations, which is enough to recover logical lines, block
//! headers, scopes and the identifiers the rewrites operate on.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reserved words plus builtins that must never be renamed or shadowed.
pub const DENY_LIST: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
    "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return",
    "try", "while", "with", "yield", "match", "case", "type", "print", "len", "range", "input",
    "int", "str", "list", "dict", "set", "sum", "min", "max", "abs", "all", "any", "bool",
    "bytes", "chr", "divmod", "enumerate", "eval", "exec", "filter", "float", "format",
    "frozenset", "getattr", "globals", "hasattr", "hash", "id", "isinstance", "issubclass",
    "iter", "locals", "map", "next", "object", "open", "ord", "pow", "repr", "reversed",
    "round", "setattr", "slice", "sorted", "super", "tuple", "vars", "zip", "self", "cls",
    "Exception", "ValueError", "TypeError", "KeyError", "IndexError", "StopIteration",
];

const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
    "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return",
    "try", "while", "with", "yield",
];

pub fn is_keyword(name: &str) -> bool {
    KEYWORDS.contains(&name)
}

pub fn is_denied(name: &str) -> bool {
    DENY_LIST.contains(&name) || (name.starts_with("__") && name.ends_with("__"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Name,
    Number,
    Str,
    Op,
    Comment,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Byte range in the source.
    pub start: usize,
    pub end: usize,
    /// Physical line of the first byte.
    pub line: usize,
}

impl Token {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.start..self.end]
    }
}

const OPS3: &[&str] = &["**=", "//=", ">>=", "<<=", "..."];
const OPS2: &[&str] = &[
    "->", ":=", "==", "!=", "<=", ">=", "**", "//", "<<", ">>", "+=", "-=", "*=", "/=", "%=",
    "&=", "|=", "^=", "@=",
];

#[derive(Debug, Default, Clone)]
struct LexOutput {
    tokens: Vec<Token>,
    /// Per physical line: does it begin inside a bracket, string or `\` continuation.
    continued: Vec<bool>,
}

fn is_name_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_name_char(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

fn string_prefix_len(rest: &str) -> Option<usize> {
    let bytes = rest.as_bytes();
    let mut i = 0;
    while i < bytes.len() && i < 2 && matches!(bytes[i], b'r' | b'R' | b'b' | b'B' | b'u' | b'U' | b'f' | b'F') {
        i += 1;
    }
    match bytes.get(i) {
        Some(b'\'') | Some(b'"') => Some(i),
        _ => None,
    }
}

fn lex(src: &str) -> LexOutput {
    let bytes = src.as_bytes();
    let mut out = LexOutput::default();
    let mut line = 0usize;
    let mut depth = 0usize;
    let mut backslash = false;
    out.continued.push(false);
    let mut i = 0usize;

    let newline = |line: &mut usize, cont: bool, out: &mut LexOutput| {
        *line += 1;
        out.continued.push(cont);
    };

    while i < bytes.len() {
        let c = src[i..].chars().next().unwrap();
        match c {
            '\n' => {
                let cont = depth > 0 || backslash;
                backslash = false;
                newline(&mut line, cont, &mut out);
                i += 1;
            }
            ' ' | '\t' | '\r' | '\x0c' => i += 1,
            '\\' => {
                // Explicit continuation when followed by a line break.
                let after = &src[i + 1..];
                if after.starts_with('\n') || after.starts_with("\r\n") {
                    backslash = true;
                }
                i += 1;
            }
            '#' => {
                let end = src[i..].find('\n').map_or(bytes.len(), |n| i + n);
                out.tokens.push(Token { kind: TokenKind::Comment, start: i, end, line });
                i = end;
            }
            _ if string_prefix_len(&src[i..]).is_some() && (is_name_start(c) || c == '\'' || c == '"') => {
                let plen = string_prefix_len(&src[i..]).unwrap();
                let start = i;
                let start_line = line;
                let q = bytes[i + plen];
                let triple = bytes.len() >= i + plen + 3 && bytes[i + plen + 1] == q && bytes[i + plen + 2] == q;
                let mut j = i + plen + if triple { 3 } else { 1 };
                loop {
                    if j >= bytes.len() {
                        break;
                    }
                    let b = bytes[j];
                    if b == b'\\' {
                        if bytes.get(j + 1) == Some(&b'\n') {
                            newline(&mut line, true, &mut out);
                        }
                        j += 2;
                        continue;
                    }
                    if b == b'\n' {
                        if !triple {
                            // Unterminated single-quoted string: stop at the line end.
                            break;
                        }
                        newline(&mut line, true, &mut out);
                        j += 1;
                        continue;
                    }
                    if b == q {
                        if !triple {
                            j += 1;
                            break;
                        }
                        if bytes.get(j + 1) == Some(&q) && bytes.get(j + 2) == Some(&q) {
                            j += 3;
                            break;
                        }
                    }
                    j += 1;
                }
                let end = j.min(bytes.len());
                out.tokens.push(Token { kind: TokenKind::Str, start, end, line: start_line });
                i = end;
            }
            _ if is_name_start(c) => {
                let end = src[i..]
                    .char_indices()
                    .find(|&(_, ch)| !is_name_char(ch))
                    .map_or(bytes.len(), |(n, _)| i + n);
                out.tokens.push(Token { kind: TokenKind::Name, start: i, end, line });
                i = end;
            }
            _ if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) => {
                let mut j = i + 1;
                while j < bytes.len() {
                    let b = bytes[j];
                    let exponent_sign = (b == b'+' || b == b'-') && matches!(bytes[j - 1], b'e' | b'E') && !src[i..j].starts_with("0x");
                    if b.is_ascii_alphanumeric() || b == b'_' || b == b'.' || exponent_sign {
                        j += 1;
                    } else {
                        break;
                    }
                }
                out.tokens.push(Token { kind: TokenKind::Number, start: i, end: j, line });
                i = j;
            }
            _ => {
                let rest = &src[i..];
                let len = OPS3
                    .iter()
                    .chain(OPS2)
                    .find(|op| rest.starts_with(**op))
                    .map_or(c.len_utf8(), |op| op.len());
                match c {
                    '(' | '[' | '{' => depth += 1,
                    ')' | ']' | '}' => depth = depth.saturating_sub(1),
                    _ => {}
                }
                out.tokens.push(Token { kind: TokenKind::Op, start: i, end: i + len, line });
                i += len;
            }
        }
    }
    out
}

/// Lexes `src` into identifier, number, string, operator and comment tokens.
pub fn tokenize(src: &str) -> Vec<Token> {
    lex(src).tokens
}

/// Splits text into pieces that concatenate back to the input, one piece
/// per token with the preceding whitespace attached.
pub fn split_pieces(text: &str) -> Vec<String> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return if text.is_empty() { Vec::new() } else { vec![text.to_string()] };
    }
    let mut pieces = Vec::with_capacity(tokens.len());
    let mut prev = 0;
    for (k, t) in tokens.iter().enumerate() {
        let end = if k + 1 == tokens.len() { text.len() } else { t.end };
        pieces.push(text[prev..end].to_string());
        prev = end;
    }
    pieces
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    pub text: String,
    /// Indentation width in columns (tabs advance to the next multiple of 8).
    pub indent: usize,
}

impl Line {
    pub fn leading_ws(&self) -> &str {
        let n = self.text.len() - self.text.trim_start_matches([' ', '\t', '\x0c']).len();
        &self.text[..n]
    }
}

fn indent_width(text: &str) -> usize {
    let mut col = 0;
    for c in text.chars() {
        match c {
            ' ' => col += 1,
            '\t' => col = (col / 8 + 1) * 8,
            '\x0c' => col = 0,
            _ => break,
        }
    }
    col
}

/// Per-logical-line facts used by the rewrites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicalLine {
    /// First physical line.
    pub start: usize,
    /// Last physical line.
    pub end: usize,
    /// Index range into `CodeFacts::tokens`, comments excluded.
    pub tokens: std::ops::Range<usize>,
    /// Ends with a block-opening `:`.
    pub header: bool,
    /// Innermost enclosing `def`/`class` header line, `None` at module level.
    pub scope: Option<usize>,
    /// The logical line is closed (not cut off inside a bracket or string).
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CodeFacts {
    pub source: String,
    pub lines: Vec<Line>,
    pub statements: Vec<usize>,
    pub variables: Vec<String>,
    pub methods: Vec<String>,
    pub var_first_line: BTreeMap<String, usize>,
    /// Every identifier token in the source.
    pub identifiers: BTreeSet<String>,
    /// Non-comment tokens.
    pub tokens: Vec<Token>,
    pub logical: Vec<LogicalLine>,
}

impl CodeFacts {
    pub fn tok(&self, i: usize) -> &str {
        self.tokens[i].text(&self.source)
    }

    /// Joins the lines back into the source text.
    pub fn join(&self) -> String {
        self.lines.iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn logical_at(&self, line: usize) -> Option<&LogicalLine> {
        self.logical.iter().find(|l| l.start == line)
    }

    fn first_word(&self, ll: &LogicalLine) -> &str {
        if ll.tokens.is_empty() {
            ""
        } else {
            self.tok(ll.tokens.start)
        }
    }

    pub fn starts_with_word(&self, ll: &LogicalLine, word: &str) -> bool {
        self.first_word(ll) == word
    }
}

const COMPOUND: &[&str] = &["if", "elif", "else", "for", "while", "try", "except", "finally", "with", "def", "class", "async"];
const AUG_OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "//=", "%=", "**=", ">>=", "<<=", "&=", "|=", "^=", "@="];

/// Analyzes a (possibly incomplete) source prefix. Never fails.
pub fn analyze(source: &str) -> CodeFacts {
    let lex = lex(source);
    let lines: Vec<Line> = if source.is_empty() {
        Vec::new()
    } else {
        source
            .split('\n')
            .map(|t| Line { text: t.to_string(), indent: indent_width(t) })
            .collect()
    };

    let mut identifiers = BTreeSet::new();
    let tokens: Vec<Token> = lex.tokens.into_iter().filter(|t| t.kind != TokenKind::Comment).collect();
    for t in &tokens {
        if t.kind == TokenKind::Name {
            identifiers.insert(t.text(source).to_string());
        }
    }

    // Group tokens into logical lines.
    let mut logical = Vec::new();
    let mut k = 0;
    while k < tokens.len() {
        let first = k;
        let start_line = tokens[k].line;
        k += 1;
        while k < tokens.len() {
            let prev_end = last_line_of(source, &tokens[k - 1]);
            let line = tokens[k].line;
            if line > prev_end && !lex.continued.get(line).copied().unwrap_or(false) {
                break;
            }
            k += 1;
        }
        let last = &tokens[k - 1];
        let end_line = last_line_of(source, last);
        let complete = bracket_balance(source, &tokens[first..k]) == 0 && !unterminated(source, last);
        let header = complete && last.text(source) == ":";
        logical.push(LogicalLine { start: start_line, end: end_line, tokens: first..k, header, scope: None, complete });
    }

    // Scopes from indentation.
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for ll in logical.iter_mut() {
        let indent = lines[ll.start].indent;
        while stack.last().is_some_and(|&(ind, _)| ind >= indent) {
            stack.pop();
        }
        ll.scope = stack.last().map(|&(_, line)| line);
        let w = tokens[ll.tokens.start].text(source);
        let w = if w == "async" && ll.tokens.len() > 1 { tokens[ll.tokens.start + 1].text(source) } else { w };
        if ll.header && (w == "def" || w == "class") {
            stack.push((indent, ll.start));
        }
    }

    let mut facts = CodeFacts {
        source: source.to_string(),
        lines,
        identifiers,
        tokens,
        logical,
        ..Default::default()
    };

    for idx in 0..facts.logical.len() {
        let ll = facts.logical[idx].clone();
        if !ll.header {
            facts.statements.push(ll.start);
        }
        collect_bindings(&mut facts, &ll);
    }
    facts
}

fn last_line_of(src: &str, t: &Token) -> usize {
    t.line + src[t.start..t.end].matches('\n').count()
}

fn bracket_balance(src: &str, toks: &[Token]) -> isize {
    toks.iter()
        .filter(|t| t.kind == TokenKind::Op)
        .map(|t| match t.text(src) {
            "(" | "[" | "{" => 1,
            ")" | "]" | "}" => -1,
            _ => 0,
        })
        .sum()
}

fn unterminated(src: &str, t: &Token) -> bool {
    if t.kind != TokenKind::Str {
        return false;
    }
    let text = t.text(src);
    let body = text.trim_start_matches(|c: char| c.is_ascii_alphabetic());
    let q = &body[..1];
    let triple = body.len() >= 3 && body[..3].chars().all(|c| c.to_string() == q);
    if triple {
        body.len() < 6 || !body.ends_with(&q.repeat(3))
    } else {
        body.len() < 2 || !body.ends_with(q) || body.ends_with(&format!("\\{q}")) && !body.ends_with(&format!("\\\\{q}"))
    }
}

fn add_variable(facts: &mut CodeFacts, name: &str, line: usize) {
    if is_keyword(name) {
        return;
    }
    if !facts.var_first_line.contains_key(name) {
        facts.var_first_line.insert(name.to_string(), line);
        facts.variables.push(name.to_string());
    }
}

fn collect_bindings(facts: &mut CodeFacts, ll: &LogicalLine) {
    let range = ll.tokens.clone();
    let toks: Vec<(TokenKind, String)> = range
        .clone()
        .map(|i| (facts.tokens[i].kind, facts.tok(i).to_string()))
        .collect();
    if toks.is_empty() {
        return;
    }
    let mut pos = 0;
    if toks[0].1 == "async" {
        pos = 1;
    }
    let Some((_, head)) = toks.get(pos) else { return };

    match head.as_str() {
        "def" => {
            if let Some((TokenKind::Name, name)) = toks.get(pos + 1) {
                if !facts.methods.contains(name) {
                    facts.methods.push(name.clone());
                }
            }
            // Parameters: names at paren depth 1 not preceded by `=`, `:` or `->`.
            let mut depth = 0i32;
            let mut prev = "";
            for (kind, text) in toks.iter().skip(pos + 2) {
                match text.as_str() {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => {
                        depth -= 1;
                        if depth == 0 {
                            break;
                        }
                    }
                    _ => {}
                }
                if *kind == TokenKind::Name && depth == 1 && matches!(prev, "(" | "," | "*" | "**") {
                    add_variable(facts, text, ll.start);
                }
                prev = text;
            }
        }
        "for" => {
            let mut depth = 0i32;
            for (kind, text) in toks.iter().skip(pos + 1) {
                match text.as_str() {
                    "(" | "[" => depth += 1,
                    ")" | "]" => depth -= 1,
                    "in" if depth == 0 => break,
                    _ => {}
                }
                if *kind == TokenKind::Name {
                    add_variable(facts, text, ll.start);
                }
            }
        }
        "with" | "except" => {
            let mut depth = 0i32;
            for w in toks.windows(2) {
                match w[0].1.as_str() {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => depth -= 1,
                    _ => {}
                }
                if w[0].1 == "as" && depth == 0 && w[1].0 == TokenKind::Name {
                    add_variable(facts, &w[1].1, ll.start);
                }
            }
        }
        _ if COMPOUND.contains(&head.as_str()) => {}
        _ => collect_assignment_targets(facts, &toks, ll.start),
    }
}

fn collect_assignment_targets(facts: &mut CodeFacts, toks: &[(TokenKind, String)], line: usize) {
    // Segments separated by depth-0 assignment operators; every segment but
    // the last is a target list.
    let mut depth = 0i32;
    let mut seg_start = 0;
    let mut targets: Vec<&[(TokenKind, String)]> = Vec::new();
    for (i, (kind, text)) in toks.iter().enumerate() {
        if *kind != TokenKind::Op {
            continue;
        }
        match text.as_str() {
            "(" | "[" | "{" => depth += 1,
            ")" | "]" | "}" => depth -= 1,
            op if depth == 0 && AUG_OPS.contains(&op) => {
                targets.push(&toks[seg_start..i]);
                seg_start = i + 1;
                if op != "=" {
                    break;
                }
            }
            ":" if depth == 0 && targets.is_empty() => {
                // Annotated assignment `x: T = v`. A bare declaration `x: T`
                // binds nothing.
                let head = &toks[..i];
                let has_value = toks[i..].iter().any(|(k, t)| *k == TokenKind::Op && t == "=");
                if has_value && head.len() == 1 && head[0].0 == TokenKind::Name {
                    add_variable(facts, &head[0].1, line);
                }
                return;
            }
            _ => {}
        }
    }
    for seg in targets {
        let plain = seg.iter().all(|(kind, text)| {
            *kind == TokenKind::Name || matches!(text.as_str(), "," | "(" | ")" | "[" | "]" | "*")
        });
        if !plain || seg.is_empty() {
            continue;
        }
        for (kind, text) in seg {
            if *kind == TokenKind::Name {
                add_variable(facts, text, line);
            }
        }
    }
}

/// `base_<n>` with `n` drawn from [1000, 9999], redrawn until it collides
/// with no identifier in the analyzed source and no reserved name.
pub fn fresh_identifier(facts: &CodeFacts, base: &str, seed: u64) -> String {
    fresh_identifier_avoiding(facts, base, seed, &[])
}

pub fn fresh_identifier_avoiding(facts: &CodeFacts, base: &str, seed: u64, avoid: &[&str]) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n: u32 = rng.gen_range(1000..=9999);
        let candidate = format!("{base}_{n}");
        if !facts.identifiers.contains(&candidate)
            && !facts.variables.contains(&candidate)
            && !facts.methods.contains(&candidate)
            && !is_denied(&candidate)
            && !avoid.contains(&candidate.as_str())
        {
            return candidate;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn set(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn analyze_simple_function() {
        let f = analyze("def add(a, b):\n    c = a + b\n    return c");
        assert_eq!(f.variables, set(&["a", "b", "c"]));
        assert_eq!(f.methods, set(&["add"]));
        assert_eq!(f.statements, vec![1, 2]);
        assert_eq!(f.var_first_line["a"], 0);
        assert_eq!(f.var_first_line["c"], 1);
        assert_eq!(f.logical[1].scope, Some(0));
        assert_eq!(f.logical[0].scope, None);
    }

    #[test]
    fn analyze_empty() {
        let f = analyze("");
        assert!(f.lines.is_empty());
        assert!(f.statements.is_empty());
        assert!(f.variables.is_empty());
        assert!(f.methods.is_empty());
        assert_eq!(f.join(), "");
    }

    #[test]
    fn first_definition_wins() {
        let f = analyze("x = 1\nx = 2");
        assert_eq!(f.variables, set(&["x"]));
        assert_eq!(f.var_first_line["x"], 0);
    }

    #[test]
    fn attribute_and_subscript_targets_are_not_variables() {
        let f = analyze("self.x = 1\na[0] = 2\nb, (c, d) = 1, (2, 3)\ne: int = 4\nf += 1");
        assert_eq!(f.variables, set(&["b", "c", "d", "e", "f"]));
    }

    #[test]
    fn loops_with_and_params() {
        let src = "def f(x, y=2, *args, k: int = 3, **kw):\n    for i, j in pairs:\n        with open(p) as fh:\n            pass";
        let f = analyze(src);
        assert_eq!(f.variables, set(&["x", "y", "args", "k", "kw", "i", "j", "fh"]));
        assert_eq!(f.statements, vec![3]);
    }

    #[test]
    fn strings_and_brackets_span_lines() {
        let src = "s = \"\"\"a\nb = 1\n\"\"\"\nt = foo(1,\n   2)\nu = 3";
        let f = analyze(src);
        assert_eq!(f.variables, set(&["s", "t", "u"]));
        assert_eq!(f.statements, vec![0, 3, 5]);
        assert_eq!(f.logical[1].end, 4);
        assert!(f.logical.iter().all(|l| l.complete));
    }

    #[test]
    fn cut_off_prefix_is_tolerated() {
        let f = analyze("def g(a):\n    return foo(a,");
        assert_eq!(f.methods, set(&["g"]));
        assert!(!f.logical[1].complete);
        let f = analyze("x = 'unterminated\ny = 2");
        assert_eq!(f.variables, set(&["x", "y"]));
    }

    #[test]
    fn comments_and_blank_lines_are_not_statements() {
        let f = analyze("# hi\n\nx = 1  # note\nif x:\n    pass");
        assert_eq!(f.statements, vec![2, 4]);
    }

    #[test]
    fn split_pieces_roundtrip() {
        let text = "  return a+b  # c\n";
        let pieces = split_pieces(text);
        assert_eq!(pieces.concat(), text);
        assert_eq!(pieces[0], "  return");
    }

    #[test]
    fn fresh_identifier_replays_generator() {
        let f = analyze("c = 1");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let first: u32 = rng.gen_range(1000..=9999);
        let second: u32 = rng.gen_range(1000..=9999);
        assert_eq!(fresh_identifier(&f, "c", 5), format!("c_{first}"));
        assert_eq!(fresh_identifier(&analyze(""), "v", 5), format!("v_{first}"));

        // Force a collision with the first draw.
        let crafted = analyze(&format!("x = 1\nx_{first} = 2"));
        assert_eq!(fresh_identifier(&crafted, "x", 5), format!("x_{second}"));
    }

    proptest! {
        #[test]
        fn lines_roundtrip(s in "[ a-z0-9=():\\t\\n'\"#\\\\.,\\[\\]{}+-]{0,200}") {
            let f = analyze(&s);
            prop_assert_eq!(f.join(), s.clone());
            for st in &f.statements {
                prop_assert!(*st < f.lines.len());
            }
            for (name, line) in &f.var_first_line {
                prop_assert!(f.variables.contains(name));
                prop_assert!(*line < f.lines.len());
            }
        }

        #[test]
        fn fresh_never_in_source(s in "[a-z_0-9 =\\n]{0,120}", seed: u64) {
            let f = analyze(&s);
            let fresh = fresh_identifier(&f, "a", seed);
            let names: Vec<String> = tokenize(&s).iter().map(|t| t.text(&s).to_string()).collect();
            prop_assert!(!names.contains(&fresh));
        }
    }
}
