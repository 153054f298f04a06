//! Semantics-preserving prompt rewrites.
//!
//! Five families: dead conditional branches (IDC), redundant variable
//! declarations (IRV), variable/method renaming (VR), debug prints (IDP)
//! and dead loops (IDL). Each rewrite is applied alone to the original
//! prefix; [`generate_variants`] produces the fixed 11-slot set.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codeast::{analyze, fresh_identifier, is_denied, CodeFacts, LogicalLine, TokenKind};
use crate::corpus::Sample;
use crate::seed::{keyed_rng, keyed_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "IDC")]
    Idc,
    #[serde(rename = "IRV")]
    Irv,
    #[serde(rename = "VR")]
    Vr,
    #[serde(rename = "IDP")]
    Idp,
    #[serde(rename = "IDL")]
    Idl,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Idc, Family::Irv, Family::Vr, Family::Idp, Family::Idl];

    /// Number of distinct forms in the family.
    pub fn form_count(self) -> u8 {
        match self {
            Family::Idc => 4,
            Family::Irv | Family::Vr | Family::Idp => 2,
            Family::Idl => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Idc => "IDC",
            Family::Irv => "IRV",
            Family::Vr => "VR",
            Family::Idp => "IDP",
            Family::Idl => "IDL",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown perturbation family {s:?}"))
    }
}

/// Family of each of the 11 variant slots.
pub const SLOT_FAMILIES: [Family; 11] = [
    Family::Idc,
    Family::Idc,
    Family::Irv,
    Family::Irv,
    Family::Vr,
    Family::Vr,
    Family::Idp,
    Family::Idp,
    Family::Idl,
    Family::Idl,
    Family::Idl,
];

pub const VARIANT_COUNT: usize = SLOT_FAMILIES.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformKind {
    pub kind: Family,
    pub form: u8,
}

impl TransformKind {
    pub fn new(kind: Family, form: u8) -> Option<Self> {
        (form < kind.form_count()).then_some(Self { kind, form })
    }
}

/// Result of one rewrite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rewrite {
    pub text: String,
    /// The form actually applied, after any fallback.
    pub form: u8,
    pub fallback: bool,
    /// Identifier renamed by VR, if any.
    pub renamed: Option<String>,
}

impl Rewrite {
    fn new(text: String, form: u8, requested: u8) -> Self {
        Self {
            text,
            form,
            fallback: form != requested,
            renamed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedVariant {
    pub parent_id: String,
    pub index: usize,
    #[serde(flatten)]
    pub transform: TransformKind,
    #[serde(default)]
    pub fallback: bool,
    pub text: String,
}

const IDC_PREDICATES: [&str; 4] = ["False", "1 == 2", "\"a\" == \"b\"", "0 > 1"];
const IDL_HEADERS: [&str; 3] = ["while False:", "while 1 > 2:", "for _ in []:"];
const BODY_INDENT: &str = "    ";

/// A position where whole lines may be inserted.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Site {
    /// Insert before this physical line (may equal the line count).
    line: usize,
    indent: String,
    scope: Option<usize>,
}

fn ws_of(f: &CodeFacts, line: usize) -> String {
    f.lines.get(line).map(|l| l.leading_ws().to_string()).unwrap_or_default()
}

fn first_word<'a>(f: &'a CodeFacts, ll: &LogicalLine) -> &'a str {
    if ll.tokens.is_empty() {
        ""
    } else {
        f.tok(ll.tokens.start)
    }
}

fn is_docstring(f: &CodeFacts, ll: &LogicalLine) -> bool {
    ll.tokens.len() == 1 && f.tokens[ll.tokens.start].kind == TokenKind::Str
}

fn is_future_import(f: &CodeFacts, ll: &LogicalLine) -> bool {
    ll.tokens.len() >= 2 && first_word(f, ll) == "from" && f.tok(ll.tokens.start + 1) == "__future__"
}

/// Index of the first logical line that may be preceded by inserted code.
fn barrier(f: &CodeFacts) -> usize {
    f.logical
        .iter()
        .rposition(|ll| is_future_import(f, ll))
        .map_or(0, |i| i + 1)
}

/// Top-of-file insertion point, below any `__future__` imports.
fn top_site(f: &CodeFacts) -> Site {
    let b = barrier(f);
    match f.logical.get(b) {
        Some(ll) => Site { line: ll.start, indent: ws_of(f, ll.start), scope: ll.scope },
        None => {
            let line = f.logical.last().map_or(0, |ll| ll.end + 1).min(f.lines.len());
            Site { line, indent: String::new(), scope: None }
        }
    }
}

/// Statement-adjacent insertion points that never split a block header
/// from its body, a decorator from its target, or an `if` from its `else`.
fn sites(f: &CodeFacts) -> Vec<Site> {
    let mut out = Vec::new();
    let b = barrier(f);
    for (i, ll) in f.logical.iter().enumerate().skip(b) {
        let w = first_word(f, ll);
        if matches!(w, "elif" | "else" | "except" | "finally" | "case") || is_docstring(f, ll) {
            continue;
        }
        if i > 0 && first_word(f, &f.logical[i - 1]) == "@" {
            continue;
        }
        out.push(Site { line: ll.start, indent: ws_of(f, ll.start), scope: ll.scope });
    }
    if let Some(last) = f.logical.last() {
        if last.complete && !last.header && f.logical.len() > b && first_word(f, last) != "@" {
            out.push(Site { line: last.end + 1, indent: ws_of(f, last.start), scope: last.scope });
        }
    }
    if out.is_empty() {
        out.push(top_site(f));
    }
    out
}

/// Body position of a block header: the line after it, at the body's indentation.
fn body_site(f: &CodeFacts, idx: usize) -> Site {
    let ll = &f.logical[idx];
    let header_ws = ws_of(f, ll.start);
    let header_indent = f.lines[ll.start].indent;
    let indent = match f.logical.get(idx + 1) {
        Some(next) if f.lines[next.start].indent > header_indent => ws_of(f, next.start),
        _ => format!("{header_ws}{BODY_INDENT}"),
    };
    let scope = match first_word(f, ll) {
        "def" | "class" | "async" => Some(ll.start),
        _ => ll.scope,
    };
    let mut line = ll.end + 1;
    // A leading docstring stays first.
    if let Some(next) = f.logical.get(idx + 1) {
        if next.start == line && is_docstring(f, next) && ws_of(f, next.start) == indent {
            line = next.end + 1;
        }
    }
    Site { line, indent, scope }
}

/// Where a statement can go right after the line that first defines `var`.
fn after_definition(f: &CodeFacts, var: &str) -> Option<Site> {
    let line = *f.var_first_line.get(var)?;
    let idx = f.logical.iter().position(|ll| ll.start == line)?;
    let ll = &f.logical[idx];
    if !ll.complete {
        return None;
    }
    if ll.header {
        return Some(body_site(f, idx));
    }
    let w = first_word(f, ll);
    if matches!(w, "if" | "elif" | "else" | "for" | "while" | "try" | "except" | "finally" | "with" | "def" | "class" | "async" | "@") {
        // Single-line compound statement: the binding is not visible after it.
        return None;
    }
    Some(Site { line: ll.end + 1, indent: ws_of(f, ll.start), scope: ll.scope })
}

fn insert_at(f: &CodeFacts, site: &Site, new_lines: &[String]) -> String {
    let mut lines: Vec<&str> = f.lines.iter().map(|l| l.text.as_str()).collect();
    let at = site.line.min(lines.len());
    let indented: Vec<String> = new_lines.to_vec();
    for (k, l) in indented.iter().enumerate() {
        lines.insert(at + k, l);
    }
    lines.join("\n")
}

fn pick<'a, T, R: Rng>(rng: &mut R, items: &'a [T]) -> &'a T {
    items.choose(rng).expect("non-empty candidate list")
}

/// Inserts a branch guarded by a statically false predicate.
///
/// Forms 0 and 1 wrap an assignment to a fresh identifier; forms 2 and 3
/// wrap a copy of an existing simple statement, placed in that statement's
/// own scope so no new local binding is introduced. The form also selects
/// the predicate.
pub fn apply_idc(source: &str, form: u8, seed: u64) -> Rewrite {
    assert!(form < 4, "IDC form out of range");
    let f = analyze(source);
    let mut rng = keyed_rng(seed, &[b"idc"]);

    if form >= 2 {
        let copyable: Vec<&LogicalLine> = f.logical.iter().filter(|ll| copyable_statement(&f, ll)).collect();
        if !copyable.is_empty() {
            let stmt = *pick(&mut rng, &copyable);
            let mut candidates: Vec<Site> = sites(&f).into_iter().filter(|s| s.scope == stmt.scope).collect();
            candidates.push(Site { line: stmt.end + 1, indent: ws_of(&f, stmt.start), scope: stmt.scope });
            let site = pick(&mut rng, &candidates).clone();
            let body = f.lines[stmt.start].text.trim().to_string();
            let text = insert_at(
                &f,
                &site,
                &[
                    format!("{}if {}:", site.indent, IDC_PREDICATES[form as usize]),
                    format!("{}{BODY_INDENT}{body}", site.indent),
                ],
            );
            return Rewrite::new(text, form, form);
        }
    }

    let applied = if form >= 2 { 0 } else { form };
    let candidates = sites(&f);
    let site = pick(&mut rng, &candidates).clone();
    let fresh = fresh_identifier(&f, "flag", rng.gen());
    let value: u32 = rng.gen_range(0..=99);
    let text = insert_at(
        &f,
        &site,
        &[
            format!("{}if {}:", site.indent, IDC_PREDICATES[applied as usize]),
            format!("{}{BODY_INDENT}{fresh} = {value}", site.indent),
        ],
    );
    Rewrite::new(text, applied, form)
}

fn copyable_statement(f: &CodeFacts, ll: &LogicalLine) -> bool {
    if ll.header || !ll.complete || ll.start != ll.end || ll.tokens.is_empty() {
        return false;
    }
    let w = first_word(f, ll);
    if matches!(
        w,
        "break" | "continue" | "global" | "nonlocal" | "if" | "elif" | "else" | "for" | "while" | "try"
            | "except" | "finally" | "with" | "def" | "class" | "async" | "@" | "case" | "match"
    ) || is_future_import(f, ll)
    {
        return false;
    }
    ll.tokens.clone().all(|i| !matches!(f.tok(i), "yield" | "await" | "break" | "continue"))
}

/// Inserts a declaration that is never read.
///
/// Form 0 initializes it from an existing variable right after that
/// variable's first definition; form 1 uses an integer constant in
/// [0, 99] at a seeded position.
pub fn apply_irv(source: &str, form: u8, seed: u64) -> Rewrite {
    assert!(form < 2, "IRV form out of range");
    let f = analyze(source);
    let mut rng = keyed_rng(seed, &[b"irv"]);

    if form == 0 {
        let usable: Vec<(&String, Site)> = f
            .variables
            .iter()
            .filter_map(|v| after_definition(&f, v).map(|s| (v, s)))
            .collect();
        if !usable.is_empty() {
            let (var, site) = pick(&mut rng, &usable);
            let fresh = fresh_identifier(&f, var, rng.gen());
            let text = insert_at(&f, site, &[format!("{}{fresh} = {var}", site.indent)]);
            return Rewrite::new(text, 0, 0);
        }
    }

    let candidates = sites(&f);
    let site = pick(&mut rng, &candidates).clone();
    let fresh = fresh_identifier(&f, "unused", rng.gen());
    let value: u32 = rng.gen_range(0..=99);
    let text = insert_at(&f, &site, &[format!("{}{fresh} = {value}", site.indent)]);
    Rewrite::new(text, 1, form)
}

/// Identifiers that can be renamed everywhere without changing behavior:
/// never reached through attribute access, keyword arguments, imports or
/// string contents, and not reserved.
fn renameable(f: &CodeFacts) -> (Vec<String>, Vec<String>) {
    let mut blocked: BTreeSet<&str> = BTreeSet::new();
    let mut stack: Vec<&str> = Vec::new();
    for i in 0..f.tokens.len() {
        let text = f.tok(i);
        let kind = f.tokens[i].kind;
        match text {
            "(" | "[" | "{" => stack.push(text),
            ")" | "]" | "}" => {
                stack.pop();
            }
            _ => {}
        }
        if kind == TokenKind::Name {
            let prev = if i > 0 { f.tok(i - 1) } else { "" };
            let next = if i + 1 < f.tokens.len() { f.tok(i + 1) } else { "" };
            if prev == "." || (next == "=" && stack.last() == Some(&"(")) {
                blocked.insert(text);
            }
        }
        if kind == TokenKind::Str {
            for word in text.split(|c: char| !(c == '_' || c.is_alphanumeric())) {
                if !word.is_empty() {
                    blocked.insert(word);
                }
            }
        }
    }
    for ll in &f.logical {
        let w = first_word(f, ll);
        if w == "import" || w == "from" {
            for i in ll.tokens.clone() {
                blocked.insert(f.tok(i));
            }
        }
    }
    let ok = |name: &String| !is_denied(name) && !blocked.contains(name.as_str());
    let vars = f.variables.iter().filter(|v| ok(v)).cloned().collect();
    // A function's own name is observable through `__name__`, so functions
    // are only renamed when nothing could read it.
    let introspected = (1..f.tokens.len()).any(|i| f.tok(i - 1) == "." && matches!(f.tok(i), "__name__" | "__qualname__" | "__code__"));
    let methods = if introspected {
        Vec::new()
    } else {
        f.methods
            .iter()
            .filter(|m| ok(m))
            .filter(|m| {
                // Skip decorated functions and methods declared directly inside a class body.
                f.logical.iter().enumerate().filter(|(_, ll)| is_def_of(f, ll, m)).all(|(k, ll)| {
                    let decorated = k > 0 && first_word(f, &f.logical[k - 1]) == "@";
                    let in_class = ll.scope.is_some_and(|s| f.logical_at(s).is_some_and(|h| first_word(f, h) == "class"));
                    !decorated && !in_class
                })
            })
            .cloned()
            .collect()
    };
    (vars, methods)
}

fn is_def_of(f: &CodeFacts, ll: &LogicalLine, name: &str) -> bool {
    let skip = usize::from(first_word(f, ll) == "async");
    ll.header && ll.tokens.len() > skip + 1 && f.tok(ll.tokens.start + skip) == "def" && f.tok(ll.tokens.start + skip + 1) == name
}

fn rename_all(f: &CodeFacts, from: &str, to: &str) -> String {
    let mut out = String::with_capacity(f.source.len() + 16);
    let mut last = 0;
    for (i, t) in f.tokens.iter().enumerate() {
        if t.kind == TokenKind::Name && t.text(&f.source) == from && (i == 0 || f.tok(i - 1) != ".") {
            out.push_str(&f.source[last..t.start]);
            out.push_str(to);
            last = t.end;
        }
    }
    out.push_str(&f.source[last..]);
    out
}

/// Renames every whole-token occurrence of one identifier.
///
/// Form 0 picks a variable, form 1 a function (falling back to a variable).
pub fn apply_vr(source: &str, form: u8, seed: u64) -> Rewrite {
    apply_vr_excluding(source, form, seed, &[])
}

/// [`apply_vr`] that avoids renaming any name in `exclude` when another
/// candidate exists.
pub fn apply_vr_excluding(source: &str, form: u8, seed: u64, exclude: &[String]) -> Rewrite {
    assert!(form < 2, "VR form out of range");
    let f = analyze(source);
    let mut rng = keyed_rng(seed, &[b"vr"]);
    let (vars, methods) = renameable(&f);

    let prefer = |pool: &[String]| -> Vec<String> {
        let kept: Vec<String> = pool.iter().filter(|n| !exclude.contains(n)).cloned().collect();
        if kept.is_empty() {
            pool.to_vec()
        } else {
            kept
        }
    };
    let (pool, applied) = if form == 1 && !methods.is_empty() {
        let kept = prefer(&methods);
        if kept.iter().all(|m| exclude.contains(m)) && vars.iter().any(|v| !exclude.contains(v)) {
            (prefer(&vars), 0)
        } else {
            (kept, 1)
        }
    } else {
        (prefer(&vars), 0)
    };

    if let Some(name) = pool.choose(&mut rng) {
        let fresh = fresh_identifier(&f, name, rng.gen());
        let mut rw = Rewrite::new(rename_all(&f, name, &fresh), applied, form);
        rw.renamed = Some(name.clone());
        return rw;
    }

    // No renameable identifier: declare one at the top, then rename it.
    let fresh = fresh_identifier(&f, "tmp", rng.gen());
    let site = top_site(&f);
    let mut rw = Rewrite::new(insert_at(&f, &site, &[format!("{}{fresh} = 0", site.indent)]), applied, form);
    rw.fallback = true;
    rw.renamed = Some("tmp".to_string());
    rw
}

/// Inserts a debug print.
///
/// Form 0 prints at the start of the first function body (or the top of
/// the file when there is none); form 1 prints a variable right after its
/// first definition.
pub fn apply_idp(source: &str, form: u8, seed: u64) -> Rewrite {
    assert!(form < 2, "IDP form out of range");
    let f = analyze(source);
    let mut rng = keyed_rng(seed, &[b"idp"]);

    if form == 1 {
        let usable: Vec<(&String, Site)> = f
            .variables
            .iter()
            .filter_map(|v| after_definition(&f, v).map(|s| (v, s)))
            .collect();
        if !usable.is_empty() {
            let (var, site) = pick(&mut rng, &usable);
            let text = insert_at(&f, site, &[format!("{}print({var})", site.indent)]);
            return Rewrite::new(text, 1, 1);
        }
    }

    let method = f.logical.iter().enumerate().find(|(_, ll)| {
        ll.header && (first_word(&f, ll) == "def" || (first_word(&f, ll) == "async" && ll.tokens.len() > 1 && f.tok(ll.tokens.start + 1) == "def"))
    });
    let (site, label) = match method {
        Some((idx, ll)) => {
            let name_at = ll.tokens.start + if first_word(&f, ll) == "async" { 2 } else { 1 };
            let name = if name_at < ll.tokens.end { f.tok(name_at).to_string() } else { String::from("function") };
            (body_site(&f, idx), name)
        }
        None => (top_site(&f), String::from("start")),
    };
    let text = insert_at(&f, &site, &[format!("{}print(\"debug: {label}\")", site.indent)]);
    Rewrite::new(text, 0, form)
}

/// Inserts a loop that can never run. The form selects the loop header;
/// the body is a seeded choice of a print, `pass`, or an unused assignment.
pub fn apply_idl(source: &str, form: u8, seed: u64) -> Rewrite {
    assert!(form < 3, "IDL form out of range");
    let f = analyze(source);
    let mut rng = keyed_rng(seed, &[b"idl"]);
    let candidates = sites(&f);
    let site = pick(&mut rng, &candidates).clone();

    let header = if form == 2 && f.identifiers.contains("_") {
        // `_` is in use; binding it as a loop target could shadow it.
        format!("for {} in []:", fresh_identifier(&f, "_", rng.gen()))
    } else {
        IDL_HEADERS[form as usize].to_string()
    };
    let body = match rng.gen_range(0..3) {
        0 => "print(\"unreachable\")".to_string(),
        1 => "pass".to_string(),
        _ => {
            let fresh = fresh_identifier(&f, "unused", rng.gen());
            format!("{fresh} = {}", rng.gen_range(0..=99))
        }
    };
    let text = insert_at(
        &f,
        &site,
        &[format!("{}{header}", site.indent), format!("{}{BODY_INDENT}{body}", site.indent)],
    );
    Rewrite::new(text, form, form)
}

/// Applies one transform by family and form.
pub fn apply(source: &str, transform: TransformKind, seed: u64) -> Rewrite {
    match transform.kind {
        Family::Idc => apply_idc(source, transform.form, seed),
        Family::Irv => apply_irv(source, transform.form, seed),
        Family::Vr => apply_vr(source, transform.form, seed),
        Family::Idp => apply_idp(source, transform.form, seed),
        Family::Idl => apply_idl(source, transform.form, seed),
    }
}

/// Builds the 11 single-transform variants of a sample's prefix.
///
/// Slots: 0-1 IDC (two distinct seeded forms), 2-3 IRV, 4-5 VR (distinct
/// identifiers when possible), 6-7 IDP, 8-10 IDL.
pub fn generate_variants(sample: &Sample, seed: u64) -> Vec<PerturbedVariant> {
    let id = sample.id.as_bytes();
    let slot_seed = |slot: usize| keyed_seed(seed, &[id, &(slot as u64).to_le_bytes()]);

    let mut idc_forms = [0u8, 1, 2, 3];
    idc_forms.shuffle(&mut keyed_rng(seed, &[id, b"idc-forms"]));

    let mut rewrites: Vec<(Family, u8, Rewrite)> = Vec::with_capacity(VARIANT_COUNT);
    for (slot, &form) in idc_forms[..2].iter().enumerate() {
        rewrites.push((Family::Idc, form, apply_idc(&sample.prefix, form, slot_seed(slot))));
    }
    for form in 0..2u8 {
        let slot = 2 + form as usize;
        rewrites.push((Family::Irv, form, apply_irv(&sample.prefix, form, slot_seed(slot))));
    }
    let first_vr = apply_vr(&sample.prefix, 0, slot_seed(4));
    let exclude: Vec<String> = first_vr.renamed.iter().cloned().collect();
    let second_vr = apply_vr_excluding(&sample.prefix, 1, slot_seed(5), &exclude);
    rewrites.push((Family::Vr, 0, first_vr));
    rewrites.push((Family::Vr, 1, second_vr));
    for form in 0..2u8 {
        let slot = 6 + form as usize;
        rewrites.push((Family::Idp, form, apply_idp(&sample.prefix, form, slot_seed(slot))));
    }
    for form in 0..3u8 {
        let slot = 8 + form as usize;
        rewrites.push((Family::Idl, form, apply_idl(&sample.prefix, form, slot_seed(slot))));
    }

    rewrites
        .into_iter()
        .enumerate()
        .map(|(index, (kind, _requested, rw))| PerturbedVariant {
            parent_id: sample.id.clone(),
            index,
            transform: TransformKind { kind, form: rw.form },
            fallback: rw.fallback,
            text: rw.text,
        })
        .collect()
}
