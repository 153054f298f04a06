#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use mia_core::corpus::{Origin, Sample};
use mia_core::perturb::{generate_variants, Family, PerturbedVariant};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/programs")
}

/// (name, source, stdin) for every bundled program.
pub fn programs() -> Vec<(String, String, String)> {
    let mut out = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(fixture_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "py"))
        .collect();
    entries.sort();
    for path in entries {
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        let src = std::fs::read_to_string(&path).unwrap();
        let input = std::fs::read_to_string(path.with_extension("in")).unwrap_or_default();
        out.push((name, src, input));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Run {
    pub status: Option<i32>,
    pub stdout: String,
}

pub fn run_python(src: &str, stdin: &str) -> Run {
    let mut child = Command::new("python3")
        .arg("-c")
        .arg(src)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .env("PYTHONHASHSEED", "0")
        .spawn()
        .expect("python3 available");
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    Run {
        status: out.status.code(),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
    }
}

pub fn parses(src: &str) -> bool {
    let check = "import ast, sys\nast.parse(sys.stdin.read())";
    let mut child = Command::new("python3")
        .arg("-c")
        .arg(check)
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(src.as_bytes()).unwrap();
    child.wait().unwrap().success()
}

const MARK: &str = "<<injected>>";

/// Lines present in the variant but not in the parent, in order.
fn inserted_lines(parent: &str, variant: &str) -> Vec<usize> {
    let p: Vec<&str> = parent.split('\n').collect();
    let mut out = Vec::new();
    let mut j = 0;
    for (i, l) in variant.split('\n').enumerate() {
        if j < p.len() && p[j] == l {
            j += 1;
        } else {
            out.push(i);
        }
    }
    out
}

/// Rewrites the injected `print(arg)` so every line it emits carries a marker.
fn mark_injected_print(parent: &str, variant: &str) -> String {
    let ins = inserted_lines(parent, variant);
    let mut lines: Vec<String> = variant.split('\n').map(str::to_string).collect();
    for i in ins {
        let l = &lines[i];
        let ws = &l[..l.len() - l.trim_start().len()];
        let arg = l.trim().strip_prefix("print(").and_then(|r| r.strip_suffix(')')).expect("injected print");
        lines[i] = format!("{ws}print(\"\\n\".join(\"{MARK}\" + s for s in str({arg}).split(\"\\n\")))");
    }
    lines.join("\n")
}

/// Execution-equivalence oracle. Returns an error description on mismatch.
pub fn check_equivalent(parent: &str, v: &PerturbedVariant, stdin: &str, original: &Run) -> Result<(), String> {
    if !parses(&v.text) {
        return Err("variant does not parse".into());
    }
    let run = run_python(&v.text, stdin);
    if run.status != original.status {
        return Err(format!("exit status {:?} != {:?}", run.status, original.status));
    }
    if v.transform.kind != Family::Idp {
        if run.stdout != original.stdout {
            return Err(format!("stdout differs:\n{}\n---\n{}", run.stdout, original.stdout));
        }
        return Ok(());
    }
    let marked = run_python(&mark_injected_print(parent, &v.text), stdin);
    if marked.status != original.status {
        return Err("marked variant exit status differs".into());
    }
    let marked_lines: Vec<&str> = marked.stdout.split('\n').collect();
    let real_lines: Vec<&str> = run.stdout.split('\n').collect();
    if marked_lines.len() != real_lines.len() {
        return Err("marked and real variant emit different line counts".into());
    }
    let kept: Vec<&str> = real_lines
        .iter()
        .zip(&marked_lines)
        .filter(|(_, m)| !m.starts_with(MARK))
        .map(|(r, _)| *r)
        .collect();
    if kept.join("\n") != original.stdout {
        return Err(format!("stdout differs after removing injected lines:\n{}", kept.join("\n")));
    }
    Ok(())
}

pub fn program_sample(name: &str, src: &str) -> Sample {
    Sample::new(name, src, "pass", Origin::TrainPool).unwrap()
}

pub fn variants_of(name: &str, src: &str, seed: u64) -> Vec<PerturbedVariant> {
    generate_variants(&program_sample(name, src), seed)
}

/// Runs the execution oracle over every bundled program and seed, in
/// parallel. Returns (variants checked, failure descriptions).
pub fn check_corpus(seeds: &[u64]) -> (usize, Vec<String>) {
    let progs = programs();
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get()).min(16);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new((0usize, Vec::new()));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some((name, src, input)) = progs.get(i) else { break };
                let original = run_python(src, input);
                let mut checked = 0;
                let mut fails = Vec::new();
                for &seed in seeds {
                    for v in variants_of(name, src, seed) {
                        checked += 1;
                        if let Err(e) = check_equivalent(src, &v, input, &original) {
                            fails.push(format!("{name} seed {seed} slot {} {:?}: {e}\n{}", v.index, v.transform, v.text));
                        }
                    }
                }
                let mut r = results.lock().unwrap();
                r.0 += checked;
                r.1.extend(fails);
            });
        }
    });
    results.into_inner().unwrap()
}

pub mod gradcheck;
pub mod aucoracle;
