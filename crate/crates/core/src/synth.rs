//! Seeded generator of small, self-contained Python programs, split into
//! (prefix, suffix) completion tasks.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, CorpusError, Origin, Sample};
use crate::seed::keyed_rng;

const VERBS: &[&str] = &["compute", "collect", "merge", "scan", "score", "count", "build", "reduce", "filter", "rank"];
const NOUNS: &[&str] = &["totals", "items", "values", "pairs", "scores", "words", "grid", "chunks", "weights", "steps"];
const VARS: &[&str] = &["acc", "total", "best", "count", "result", "current", "limit", "offset", "window", "bucket"];
const LOOPS: &[&str] = &["item", "value", "entry", "elem", "num"];
const WORDS: &[&str] = &["alpha", "beta", "gamma", "delta", "omega", "sigma", "kappa", "theta"];

struct Names {
    func: String,
    data: String,
    a: String,
    b: String,
    v: String,
}

fn names(rng: &mut ChaCha8Rng) -> Names {
    let mut vars: Vec<&str> = VARS.to_vec();
    vars.shuffle(rng);
    Names {
        func: format!("{}_{}", VERBS.choose(rng).unwrap(), NOUNS.choose(rng).unwrap()),
        data: NOUNS.choose(rng).unwrap().to_string(),
        a: vars[0].to_string(),
        b: vars[1].to_string(),
        v: LOOPS.choose(rng).unwrap().to_string(),
    }
}

fn numbers(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| rng.gen_range(-20..60).to_string()).collect::<Vec<_>>().join(", ")
}

fn accumulate(rng: &mut ChaCha8Rng) -> Vec<String> {
    let Names { func, data, a, v, .. } = names(rng);
    let (m, r, k, c) = (rng.gen_range(2..6), rng.gen_range(0..2), rng.gen_range(2..9), rng.gen_range(1..7));
    let nums = { let n = rng.gen_range(5..10); numbers(rng, n) };
    vec![
        format!("def {func}({data}):"),
        format!("    {a} = {}", rng.gen_range(0..10)),
        format!("    for {v} in {data}:"),
        format!("        if {v} % {m} == {r}:"),
        format!("            {a} += {v} * {k}"),
        "        else:".into(),
        format!("            {a} -= {c}"),
        format!("    return {a}"),
        String::new(),
        String::new(),
        format!("print({func}([{nums}]))"),
    ]
}

fn running_max(rng: &mut ChaCha8Rng) -> Vec<String> {
    let Names { func, data, a, b, v } = names(rng);
    let nums = { let n = rng.gen_range(6..12); numbers(rng, n) };
    let w = rng.gen_range(2..5);
    vec![
        format!("def {func}({data}, {b}={w}):"),
        format!("    {a} = []"),
        format!("    for i in range(len({data}) - {b} + 1):"),
        format!("        {v} = max({data}[i:i + {b}])"),
        format!("        {a}.append({v})"),
        format!("    return {a}"),
        String::new(),
        String::new(),
        format!("{data} = [{nums}]"),
        format!("print({func}({data}))"),
        format!("print(sum({func}({data}, {})))", w + 1),
    ]
}

fn word_counts(rng: &mut ChaCha8Rng) -> Vec<String> {
    let Names { func, a, v, .. } = names(rng);
    let n = rng.gen_range(5..10);
    let mut words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    words.shuffle(rng);
    let text = words.join(" ");
    let min = rng.gen_range(1..3);
    vec![
        format!("def {func}(text):"),
        format!("    {a} = {{}}"),
        format!("    for {v} in text.split():"),
        format!("        {a}[{v}] = {a}.get({v}, 0) + 1"),
        format!("    return sorted(k for k, n in {a}.items() if n >= {min})"),
        String::new(),
        String::new(),
        format!("print({func}(\"{text}\"))"),
        format!("print(len({func}(\"{text} {text}\")))"),
    ]
}

fn fib_like(rng: &mut ChaCha8Rng) -> Vec<String> {
    let Names { func, a, b, .. } = names(rng);
    let (x0, x1, n, m) = (rng.gen_range(0..5), rng.gen_range(1..6), rng.gen_range(5..15), rng.gen_range(50..500));
    vec![
        format!("def {func}(n):"),
        format!("    {a}, {b} = {x0}, {x1}"),
        "    for _ in range(n):".into(),
        format!("        {a}, {b} = {b}, ({a} + {b}) % {m}"),
        format!("    return {a}"),
        String::new(),
        String::new(),
        format!("for k in range({n}):"),
        format!("    print(k, {func}(k))"),
    ]
}

fn grid_walk(rng: &mut ChaCha8Rng) -> Vec<String> {
    let Names { func, a, b, .. } = names(rng);
    let (rows, cols, step) = (rng.gen_range(2..5), rng.gen_range(2..5), rng.gen_range(1..4));
    vec![
        format!("def {func}(rows, cols):"),
        format!("    {a} = [[r * cols + c for c in range(cols)] for r in range(rows)]"),
        format!("    {b} = 0"),
        "    for r in range(rows):".into(),
        format!("        for c in range(0, cols, {step}):"),
        format!("            {b} += {a}[r][c]"),
        format!("    return {b}, {a}[-1]"),
        String::new(),
        String::new(),
        format!("print({func}({rows}, {cols}))"),
    ]
}

fn class_counter(rng: &mut ChaCha8Rng) -> Vec<String> {
    let Names { a, v, .. } = names(rng);
    let word = WORDS.choose(rng).unwrap();
    let cls = format!("{}{}Tracker", word[..1].to_uppercase(), &word[1..]);
    let nums = { let n = rng.gen_range(4..9); numbers(rng, n) };
    let cap = rng.gen_range(20..90);
    vec![
        format!("class {cls}:"),
        "    def __init__(self, cap):".into(),
        "        self.cap = cap".into(),
        "        self.seen = []".into(),
        String::new(),
        "    def add(self, x):".into(),
        "        if x <= self.cap:".into(),
        "            self.seen.append(x)".into(),
        "        return len(self.seen)".into(),
        String::new(),
        String::new(),
        format!("{a} = {cls}({cap})"),
        format!("for {v} in [{nums}]:"),
        format!("    {a}.add({v})"),
        format!("print({a}.seen, max({a}.seen, default=None))"),
    ]
}

const TEMPLATES: &[fn(&mut ChaCha8Rng) -> Vec<String>] = &[accumulate, running_max, word_counts, fib_like, grid_walk, class_counter];

/// One generated program as (prefix, suffix). The split point falls on a
/// line boundary between 40% and 60% of the non-blank lines.
pub fn program(seed: u64, index: usize) -> (String, String) {
    let mut rng = keyed_rng(seed, &[b"synth", &(index as u64).to_le_bytes()]);
    let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
    let lines = template(&mut rng);
    let content: Vec<usize> = lines.iter().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, _)| i).collect();
    let lo = (content.len() * 2).div_ceil(5).max(1);
    let hi = (content.len() * 3 / 5).max(lo);
    let cut = content[rng.gen_range(lo..=hi).min(content.len() - 1)];
    (lines[..cut].join("\n"), lines[cut..].join("\n"))
}

/// `n_members` train-pool samples followed by `n_nonmembers` test-pool
/// samples, ids `syn-0000`, `syn-0001`, ...
pub fn synthetic_corpus(seed: u64, n_members: usize, n_nonmembers: usize) -> Result<Corpus, CorpusError> {
    let mut samples = Vec::with_capacity(n_members + n_nonmembers);
    let mut seen = std::collections::HashSet::new();
    let mut index = 0;
    while samples.len() < n_members + n_nonmembers {
        let (prefix, suffix) = program(seed, index);
        index += 1;
        if !seen.insert(prefix.clone()) {
            continue;
        }
        let origin = if samples.len() < n_members { Origin::TrainPool } else { Origin::TestPool };
        samples.push(Sample::new(format!("syn-{:04}", samples.len()), &prefix, &suffix, origin)?);
    }
    Corpus::new("synthetic", samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shape_and_determinism() {
        let c = synthetic_corpus(42, 5, 7).unwrap();
        assert_eq!(c.len(), 12);
        assert_eq!(c.ids_with_origin(Origin::TrainPool).len(), 5);
        assert_eq!(c, synthetic_corpus(42, 5, 7).unwrap());
        assert_ne!(c, synthetic_corpus(43, 5, 7).unwrap());
        for s in &c.samples {
            assert!(!s.prefix.trim().is_empty() && !s.suffix.trim().is_empty());
        }
    }

    #[test]
    fn prefixes_are_distinct() {
        let c = synthetic_corpus(1, 60, 60).unwrap();
        let set: std::collections::HashSet<&str> = c.samples.iter().map(|s| s.prefix.as_str()).collect();
        assert_eq!(set.len(), c.len());
    }
}
