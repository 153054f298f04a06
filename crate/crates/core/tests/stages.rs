use mia_core::config::PipelineConfig;
use mia_core::embed::HashEmbedder;
use mia_core::pipeline::{ingest, run_all, simulator_for};
use mia_core::stage::{run_stage, Services, Stage};
use mia_core::synth::synthetic_corpus;

#[test]
fn file_chain_matches_in_memory_run() {
    let mut cfg = PipelineConfig { seed: 11, known_fraction: 0.5, ..Default::default() };
    cfg.classifier.hidden_dims = vec![24, 24, 24];
    let corpus = synthetic_corpus(cfg.seed, 8, 8).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    std::fs::write(p("synthetic.jsonl"), corpus.to_jsonl()).unwrap();
    let steps: [(Stage, &[&str], &str); 7] = [
        (Stage::Ingest, &["synthetic.jsonl"], "dataset.json"),
        (Stage::Perturb, &["dataset.json"], "variants.jsonl"),
        (Stage::Query, &["variants.jsonl", "dataset.json"], "responses.jsonl"),
        (Stage::Featurize, &["dataset.json", "responses.jsonl"], "features.jsonl"),
        (Stage::Train, &["features.jsonl"], "model.json"),
        (Stage::Infer, &["model.json", "features.jsonl"], "predictions.jsonl"),
        (Stage::Evaluate, &["predictions.jsonl", "dataset.json", "responses.jsonl"], "report.json"),
    ];
    for (stage, ins, out) in steps {
        let ins: Vec<_> = ins.iter().map(|n| p(n)).collect();
        run_stage(stage, &cfg, &ins, &p(out), false, Services::default()).unwrap_or_else(|e| panic!("{stage}: {e}"));
    }

    let victim = simulator_for(&cfg, &ingest(&cfg, corpus.clone()).unwrap()).unwrap();
    let run = run_all(&cfg, corpus, &victim, &HashEmbedder::new(cfg.seed)).unwrap();
    for (name, content) in run.files() {
        assert_eq!(std::fs::read_to_string(p(name)).unwrap(), content, "{name}");
    }
}
