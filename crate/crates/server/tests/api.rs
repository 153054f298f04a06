use std::sync::Arc;

use mia_core::protocol::{EmbedResponse, ErrorBody, Health};
use mia_core::victim::{CompletionRecord, Victim, VictimError};
use mia_server::{router, AppState};

async fn serve(state: AppState) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    format!("http://{addr}")
}

struct CompleteOnly;

impl Victim for CompleteOnly {
    fn complete(&self, _: &str, prompt_id: &str, _: usize) -> Result<CompletionRecord, VictimError> {
        Ok(CompletionRecord { prompt_id: prompt_id.into(), text: "pass".into(), tokens: vec!["pass".into()], token_logprobs: vec![-0.1], mode: Default::default() })
    }

    fn score(&self, _: &str) -> Result<Vec<f64>, VictimError> {
        Err(VictimError::Unsupported("scoring"))
    }
}

#[tokio::test]
async fn status_codes_and_error_bodies() {
    let url = serve(AppState::new(1).with_victim(Arc::new(CompleteOnly))).await;
    let http = reqwest::Client::new();

    let health: Health = http.get(format!("{url}/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!((health.status.as_str(), health.victim), ("ok", true));

    let r = http.post(format!("{url}/complete")).header("content-type", "application/json").body("{not json").send().await.unwrap();
    assert_eq!(r.status(), 400);
    assert_eq!(r.json::<ErrorBody>().await.unwrap().kind, "validation");

    let r = http.post(format!("{url}/complete")).json(&serde_json::json!({"prompt": "x", "max_tokens": 0})).send().await.unwrap();
    assert_eq!(r.status(), 422);

    let r = http.post(format!("{url}/score")).json(&serde_json::json!({"text": "x = 1"})).send().await.unwrap();
    assert_eq!(r.status(), 501);
    assert_eq!(r.json::<ErrorBody>().await.unwrap().kind, "unsupported");

    let r = http.post(format!("{url}/embed")).json(&serde_json::json!({"text": "   "})).send().await.unwrap();
    assert_eq!(r.status(), 422);

    let r = http.post(format!("{url}/embed")).json(&serde_json::json!({"text": "a = b"})).send().await.unwrap();
    assert_eq!(r.json::<EmbedResponse>().await.unwrap().embedding.len(), 768);
}

#[tokio::test]
async fn simulate_rejects_degenerate_requests() {
    let url = serve(AppState::new(0)).await;
    let r = reqwest::Client::new()
        .post(format!("{url}/v1/simulate"))
        .json(&serde_json::json!({"config": {}, "n_members": 2, "n_nonmembers": 2}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 422);
    assert!(r.json::<ErrorBody>().await.unwrap().error.contains("at least 4"));
}
