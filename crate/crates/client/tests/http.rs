use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};

use mia_client::*;
use mia_core::config::PipelineConfig;
use mia_core::corpus::{Corpus, Origin, Sample};
use mia_core::embed::{EmbedError, Embedder, HashEmbedder};
use mia_core::metrics::{self, Prediction};
use mia_core::mlpcls;
use mia_core::perturb::generate_variants;
use mia_core::pipeline::{self, SimulateOptions};
use mia_core::protocol::*;
use mia_core::synth::synthetic_corpus;
use mia_core::victim::{SimVictim, SimVictimConfig, Victim, VictimError};
use mia_server::{router, AppState};

async fn serve(app: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

fn fast() -> ClientOptions {
    ClientOptions { retry: RetryPolicy { attempts: 3, base_delay: Duration::from_millis(5) }, ..Default::default() }
}

fn simulator(corpus: &Corpus) -> SimVictim {
    let memorized = corpus.ids_with_origin(Origin::TrainPool).into_iter().map(String::from).collect();
    SimVictim::new(SimVictimConfig { memorized_ids: memorized, seed: 3, ..Default::default() }, corpus).unwrap()
}

#[tokio::test]
async fn remote_simulator_matches_local() {
    let corpus = synthetic_corpus(3, 4, 4).unwrap();
    let local = simulator(&corpus);
    let url = serve(router(AppState::new(3).with_victim(Arc::new(simulator(&corpus))))).await;
    let client = VictimClient::new(&url, fast());
    for s in &corpus.samples {
        let remote = client.complete(&s.prefix, &s.id, 64).await.unwrap();
        assert_eq!(remote, local.complete(&s.prefix, &s.id, 64).unwrap());
        let text = format!("{}\n{}", s.prefix, s.suffix);
        assert_eq!(client.score(&text).await.unwrap(), local.score(&text).unwrap());
    }
    let prompts: Vec<(String, String)> = corpus.samples.iter().map(|s| (s.prefix.clone(), s.id.clone())).collect();
    let many = client.complete_many(&prompts, 16).await.unwrap();
    assert_eq!(many.iter().map(|r| r.prompt_id.as_str()).collect::<Vec<_>>(), corpus.samples.iter().map(|s| s.id.as_str()).collect::<Vec<_>>());
    assert!(matches!(client.complete("   ", "x", 8).await, Err(VictimError::EmptyPrompt)));
}

#[tokio::test]
async fn service_without_victim_is_unavailable() {
    let url = serve(router(AppState::new(0))).await;
    let health = ServiceClient::new(&url, fast()).health().await.unwrap();
    assert!(!health.victim);
    let err = VictimClient::new(&url, fast()).complete("x = 1", "a", 8).await.unwrap_err();
    assert!(matches!(err, VictimError::Transport { attempts: 3, .. }), "{err}");
}

#[tokio::test]
async fn retries_transient_failures_then_gives_up() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let flaky = Router::new().route(
        "/complete",
        post(move || {
            let h = h.clone();
            async move {
                if h.fetch_add(1, Ordering::SeqCst) < 2 {
                    Err(StatusCode::SERVICE_UNAVAILABLE)
                } else {
                    Ok(Json(CompleteResponse { text: "y".into(), tokens: vec!["y".into()], token_logprobs: vec![-0.1] }))
                }
            }
        }),
    );
    let url = serve(flaky).await;
    let rec = VictimClient::new(&url, fast()).complete("x", "p", 4).await.unwrap();
    assert_eq!(rec.text, "y");
    assert_eq!(hits.load(Ordering::SeqCst), 3);

    let down = serve(Router::new().route("/complete", post(|| async { StatusCode::BAD_GATEWAY }))).await;
    let err = VictimClient::new(&down, fast()).complete("x", "p", 4).await.unwrap_err();
    assert!(matches!(err, VictimError::Transport { attempts: 3, .. }), "{err}");

    let err = VictimClient::new("http://127.0.0.1:9", fast()).complete("x", "p", 4).await.unwrap_err();
    assert!(matches!(err, VictimError::Transport { attempts: 3, .. }), "{err}");
}

#[tokio::test]
async fn missing_scoring_is_unsupported() {
    let only_complete = Router::new().route(
        "/complete",
        post(|| async { Json(CompleteResponse { text: String::new(), tokens: vec![], token_logprobs: vec![] }) }),
    );
    let url = serve(only_complete).await;
    let err = VictimClient::new(&url, fast()).score("x = 1").await.unwrap_err();
    assert!(matches!(err, VictimError::Unsupported("scoring")), "{err}");
}

#[tokio::test]
async fn prompts_are_sent_unchanged() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let s = seen.clone();
    let echo = Router::new().route(
        "/complete",
        post(move |Json(req): Json<CompleteRequest>| {
            let s = s.clone();
            async move {
                s.lock().unwrap().push(req.prompt);
                Json(CompleteResponse { text: "pass".into(), tokens: vec!["pass".into()], token_logprobs: vec![-0.5] })
            }
        }),
    );
    let url = serve(echo).await;
    let prompt = "def f(x):\r\n\t# ünïcode \u{200b}\n    return x  \n\n";
    VictimClient::new(&url, fast()).complete(prompt, "p", 4).await.unwrap();
    assert_eq!(seen.lock().unwrap().as_slice(), [prompt.to_string()]);
}

#[tokio::test]
async fn in_flight_requests_are_bounded() {
    let (now, peak) = (Arc::new(AtomicUsize::new(0)), Arc::new(AtomicUsize::new(0)));
    let (n, p) = (now.clone(), peak.clone());
    let slow = Router::new().route(
        "/complete",
        post(move || {
            let (n, p) = (n.clone(), p.clone());
            async move {
                let cur = n.fetch_add(1, Ordering::SeqCst) + 1;
                p.fetch_max(cur, Ordering::SeqCst);
                tokio::time::sleep(Duration::from_millis(30)).await;
                n.fetch_sub(1, Ordering::SeqCst);
                Json(CompleteResponse { text: "y".into(), tokens: vec!["y".into()], token_logprobs: vec![-0.2] })
            }
        }),
    );
    let url = serve(slow).await;
    let client = VictimClient::new(&url, ClientOptions { concurrency_limit: 2, ..fast() });
    let prompts: Vec<(String, String)> = (0..8).map(|i| (format!("x = {i}"), format!("p{i}"))).collect();
    client.complete_many(&prompts, 4).await.unwrap();
    assert_eq!(peak.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn embeddings_are_checked() {
    let url = serve(router(AppState::new(9))).await;
    let client = EmbedClient::new(&url, fast());
    let e = client.embed("total = a + b").await.unwrap();
    assert_eq!(e, HashEmbedder::new(9).embed("total = a + b").unwrap());
    assert!(matches!(client.embed("  ").await, Err(EmbedError::EmptyInput)));

    let short = serve(Router::new().route("/embed", post(|| async { Json(EmbedResponse { embedding: vec![0.5; 512] }) }))).await;
    let err = EmbedClient::new(&short, fast()).embed("x").await.unwrap_err();
    assert!(matches!(err, EmbedError::Dimension { expected: 768, got: 512 }), "{err}");
}

#[tokio::test]
async fn pipeline_operations_match_core() {
    let url = serve(router(AppState::new(0))).await;
    let svc = ServiceClient::new(&url, fast());
    let sample = Sample::new("s1", "def f(a, b):\n    c = a + b", "    return c", Origin::TrainPool).unwrap();
    let variants = svc.perturb(&PerturbRequest { sample: sample.clone(), seed: 4 }).await.unwrap().variants;
    assert_eq!(variants, generate_variants(&sample, 4));

    let preds: Vec<Prediction> = (0..6)
        .map(|i| {
            let truth = if i % 2 == 0 { mia_core::corpus::Membership::Member } else { mia_core::corpus::Membership::Nonmember };
            Prediction { sample_id: format!("s{i}"), truth, score: i as f64 / 10.0, label: truth }
        })
        .collect();
    let report = svc.evaluate(&EvaluateRequest { predictions: preds.clone() }).await.unwrap();
    assert_eq!(report, metrics::evaluate(&preds).unwrap());
    let err = svc.evaluate(&EvaluateRequest { predictions: vec![] }).await.unwrap_err();
    assert!(matches!(err, ClientError::Status { status: 422, .. }), "{err}");

    let mut cfg = PipelineConfig { seed: 2, known_fraction: 0.5, ..Default::default() };
    cfg.classifier.hidden_dims = vec![16, 16, 16];
    let req = SimulateRequest { config: cfg.clone(), n_members: 6, n_nonmembers: 6, memorize_all: false };
    let files = svc.simulate(&req).await.unwrap().files;
    let run = tokio::task::spawn_blocking(move || {
        pipeline::simulate(&cfg, SimulateOptions { n_members: 6, n_nonmembers: 6, memorize_all: false }, &HashEmbedder::new(2)).unwrap()
    })
    .await
    .unwrap();
    for (name, body) in run.files() {
        assert_eq!(files[name], body, "{name}");
    }
    let model = run.model.model.clone();
    let xs: Vec<Vec<f64>> = run.features.iter().map(|f| f.features.clone()).collect();
    let remote = svc.predict(&PredictRequest { model: model.clone(), features: xs.clone() }).await.unwrap().predictions;
    let local: Vec<_> = xs.iter().map(|x| mlpcls::predict(&model, x).unwrap()).collect();
    assert_eq!(remote, local);
}

#[test]
fn blocking_adapters_drive_the_pipeline() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let corpus = synthetic_corpus(8, 5, 5).unwrap();
    let url = rt.block_on(serve(router(AppState::new(8).with_victim(Arc::new(simulator(&corpus))))));
    let victim = BlockingVictim::new(VictimClient::new(&url, fast()), rt.handle().clone());
    let embedder = BlockingEmbedder::new(EmbedClient::new(&url, fast()), rt.handle().clone());
    let mut cfg = PipelineConfig { seed: 8, known_fraction: 0.5, concurrency_limit: 4, ..Default::default() };
    cfg.classifier.hidden_dims = vec![16, 16, 16];

    let remote = pipeline::run_all(&cfg, corpus.clone(), &victim, &embedder).unwrap();
    let local = pipeline::run_all(&cfg, corpus.clone(), &simulator(&corpus), &HashEmbedder::new(8)).unwrap();
    assert_eq!(remote.files(), local.files());
}
