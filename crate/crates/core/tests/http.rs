//! The session API driven over real HTTP.

use std::path::Path;

use clarion_core::belief::{ResponseConfig, ResponseModel};
use clarion_core::dataset::{synth_world, SynthConfig, SynthWorld};
use clarion_core::encoder::{train_encoder, TrainConfig};
use clarion_core::service::{serve_on, Service, ServiceConfig, StopRule};
use clarion_core::Engine;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

struct Api {
    client: Client,
    base: String,
}

impl Api {
    async fn start(world: &SynthWorld, rule: StopRule, config: ServiceConfig) -> Api {
        let (enc, _) = train_encoder(&world.corpus, &TrainConfig::default()).unwrap();
        let rm = ResponseModel::fit(&world.corpus, &enc, ResponseConfig::default()).unwrap();
        let service = Service::new(Engine::new(&world.corpus, enc, rm), &world.corpus, rule, config).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(serve_on(listener, service));
        Api { client: Client::new(), base }
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let resp = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        (resp.status(), resp.json().await.unwrap_or(Value::Null))
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let resp = self.client.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        (resp.status(), resp.json().await.unwrap_or(Value::Null))
    }

    async fn post_raw(&self, path: &str, body: &'static str) -> (StatusCode, Value) {
        let resp = self
            .client
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .body(body)
            .send()
            .await
            .unwrap();
        (resp.status(), resp.json().await.unwrap_or(Value::Null))
    }

    async fn session(&self) -> String {
        let (status, body) = self.post_raw("/sessions", "").await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body["session_id"].as_str().unwrap().to_string()
    }
}

fn world() -> SynthWorld {
    synth_world(&SynthConfig::new(16, 4, 0.0, 3)).unwrap()
}

/// Yes when the target label has the attribute the question asks about.
fn truthful(world: &SynthWorld, target: usize, question: &Value) -> &'static str {
    let q: usize = question["id"].as_str().unwrap().trim_start_matches(|c: char| !c.is_ascii_digit()).parse().unwrap();
    if world.codes[target] >> q & 1 == 1 {
        "yes"
    } else {
        "no"
    }
}

fn assert_error(status: StatusCode, body: &Value, expected: StatusCode) {
    assert_eq!(status, expected, "{body}");
    assert_eq!(body["status"], "error");
    assert!(body["error"].as_str().is_some_and(|e| !e.is_empty()), "{body}");
}

#[tokio::test]
async fn health_and_labels() {
    let world = world();
    let api = Api::start(&world, StopRule::FixedTurns(2), ServiceConfig::default()).await;
    let (status, health) = api.get("/healthz").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        (health["status"].as_str(), health["labels"].as_u64(), health["questions"].as_u64()),
        (Some("ok"), Some(16), Some(4))
    );

    let label = world.corpus.labels.get(3);
    let (status, info) = api.get(&format!("/labels/{}", label.id)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(info["text"], label.text.as_str());

    let (status, body) = api.get("/labels/nope").await;
    assert_error(status, &body, StatusCode::NOT_FOUND);
    let (status, _) = api.get("/no/such/route").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn request_errors_map_to_status_codes() {
    let world = world();
    let api = Api::start(&world, StopRule::FixedTurns(1), ServiceConfig::default()).await;

    let (status, body) = api.post("/sessions/unknown/query", json!({"text": "hi"})).await;
    assert_error(status, &body, StatusCode::NOT_FOUND);
    let (status, body) = api.post("/sessions", json!({"scenario_id": "nope"})).await;
    assert_error(status, &body, StatusCode::NOT_FOUND);
    let (status, body) = api.post_raw("/sessions", "{not json").await;
    assert_error(status, &body, StatusCode::UNPROCESSABLE_ENTITY);

    let id = api.session().await;
    let (status, body) = api.post(&format!("/sessions/{id}/answer"), json!({"answer": "yes"})).await;
    assert_error(status, &body, StatusCode::CONFLICT);
    assert_eq!(body["session_status"], "awaiting_query");
    let (status, body) = api.post(&format!("/sessions/{id}/query"), json!({"wrong": "field"})).await;
    assert_error(status, &body, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, body) = api.post(&format!("/sessions/{id}/query"), json!({"text": "   "})).await;
    assert_error(status, &body, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, step) = api.post(&format!("/sessions/{id}/query"), json!({"text": "help with billing"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        (step["action"].as_str(), step["status"].as_str(), step["turn"].as_u64()),
        (Some("ask"), Some("awaiting_answer"), Some(0))
    );

    let (status, body) = api.post(&format!("/sessions/{id}/answer"), json!({"answer": "perhaps"})).await;
    assert_error(status, &body, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["valid_answers"], json!(["yes", "no"]));
    assert_eq!(body["turn"], 0);

    let (status, body) = api.post(&format!("/sessions/{id}/rating"), json!({"naturalness": 4, "rationality": 4})).await;
    assert_error(status, &body, StatusCode::CONFLICT);

    let (status, done) = api.post(&format!("/sessions/{id}/answer"), json!({"answer": "no"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        (done["action"].as_str(), done["status"].as_str(), done["turn"].as_u64()),
        (Some("stop"), Some("done"), Some(1))
    );
    let (status, body) = api.post(&format!("/sessions/{id}/answer"), json!({"answer": "no"})).await;
    assert_error(status, &body, StatusCode::CONFLICT);
    assert_eq!(body["session_status"], "done");
}

#[tokio::test]
async fn expired_sessions_answer_gone() {
    let world = world();
    let config = ServiceConfig { ttl: std::time::Duration::ZERO, ..ServiceConfig::default() };
    let api = Api::start(&world, StopRule::FixedTurns(1), config).await;
    let id = api.session().await;
    std::thread::sleep(std::time::Duration::from_millis(5));
    let (status, body) = api.post(&format!("/sessions/{id}/query"), json!({"text": "hi"})).await;
    assert_error(status, &body, StatusCode::GONE);
    let (status, body) = api.get(&format!("/sessions/{id}/transcript")).await;
    assert_error(status, &body, StatusCode::GONE);
}

#[tokio::test]
async fn interleaved_sessions_do_not_share_state() {
    let world = world();
    let api = Api::start(&world, StopRule::FixedTurns(4), ServiceConfig::default()).await;
    let (a, b) = (api.session().await, api.session().await);
    assert_ne!(a, b);
    let (ta, tb) = (0, 15);
    let (_, mut step_a) = api.post(&format!("/sessions/{a}/query"), json!({"text": "hello"})).await;
    let (_, mut step_b) = api.post(&format!("/sessions/{b}/query"), json!({"text": "hello"})).await;
    while step_a["action"] == "ask" || step_b["action"] == "ask" {
        if step_a["action"] == "ask" {
            let answer = truthful(&world, ta, &step_a["question"]);
            step_a = api.post(&format!("/sessions/{a}/answer"), json!({ "answer": answer })).await.1;
        }
        if step_b["action"] == "ask" {
            let answer = truthful(&world, tb, &step_b["question"]);
            step_b = api.post(&format!("/sessions/{b}/answer"), json!({ "answer": answer })).await.1;
        }
    }
    let (_, ta_view) = api.get(&format!("/sessions/{a}/transcript")).await;
    let (_, tb_view) = api.get(&format!("/sessions/{b}/transcript")).await;
    assert_eq!(ta_view["turns"].as_array().unwrap().len(), 4);
    assert_eq!(tb_view["turns"].as_array().unwrap().len(), 4);
    assert_eq!(ta_view["prediction"], world.corpus.labels.get(ta).id.as_str());
    assert_eq!(tb_view["prediction"], world.corpus.labels.get(tb).id.as_str());
}

async fn play(api: &Api, world: &SynthWorld, target: usize) -> (String, Value) {
    let scenario = world.corpus.labels.get(target).id.clone();
    let (status, created) = api.post("/sessions", json!({ "scenario_id": scenario })).await;
    assert_eq!(status, StatusCode::OK, "{created}");
    let scenario_text = created["scenario_text"].as_str().unwrap();
    let id = created["session_id"].as_str().unwrap().to_string();
    let (_, mut step) = api.post(&format!("/sessions/{id}/query"), json!({ "text": scenario_text })).await;
    while step["action"] == "ask" {
        assert!(step.get("ground_truth").is_none());
        let (_, view) = api.get(&format!("/sessions/{id}/transcript")).await;
        assert!(view["scenario_id"].is_null(), "scenario leaked before the end: {view}");
        let answer = truthful(world, target, &step["question"]);
        step = api.post(&format!("/sessions/{id}/answer"), json!({ "answer": answer })).await.1;
    }
    (id, step)
}

#[tokio::test]
async fn truthful_answers_reach_every_target() {
    let world = world();
    let api = Api::start(&world, StopRule::FixedTurns(4), ServiceConfig::default()).await;
    for target in 0..16 {
        let label = world.corpus.labels.get(target);
        let (id, done) = play(&api, &world, target).await;
        assert_eq!(done["status"], "done");
        assert_eq!(done["prediction"]["id"], label.id.as_str(), "target {target}: {done}");
        assert_eq!(done["ground_truth"]["id"], label.id.as_str());
        let top = done["top"].as_array().unwrap();
        assert_eq!(top[0], done["prediction"]);
        assert!(top.windows(2).all(|w| w[0]["probability"].as_f64() >= w[1]["probability"].as_f64()));
        let (_, view) = api.get(&format!("/sessions/{id}/transcript")).await;
        assert_eq!(view["scenario_id"], label.id.as_str());
    }
}

fn log_lines(dir: &Path) -> Vec<Value> {
    let mut files: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
        .iter()
        .flat_map(|f| {
            std::fs::read_to_string(f)
                .unwrap()
                .lines()
                .map(|l| serde_json::from_str(l).unwrap())
                .collect::<Vec<Value>>()
        })
        .collect()
}

#[tokio::test]
async fn ratings_are_validated_and_logged() {
    let world = world();
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig { log_dir: Some(dir.path().to_path_buf()), ..ServiceConfig::default() };
    let api = Api::start(&world, StopRule::Threshold(0.9), config).await;
    let (id, done) = play(&api, &world, 6).await;
    assert_eq!(done["status"], "done");

    let rating = format!("/sessions/{id}/rating");
    let (status, body) = api.post(&rating, json!({"naturalness": 6, "rationality": 3})).await;
    assert_error(status, &body, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, body) = api.post(&rating, json!({"naturalness": "high"})).await;
    assert_error(status, &body, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, ack) = api.post(&rating, json!({"naturalness": 4, "rationality": 2})).await;
    assert_eq!(status, StatusCode::OK, "{ack}");
    assert_eq!(ack["rating"], json!({"naturalness": 4, "rationality": 2}));
    let (status, body) = api.post(&rating, json!({"naturalness": 5, "rationality": 5})).await;
    assert_error(status, &body, StatusCode::CONFLICT);

    let lines = log_lines(dir.path());
    assert_eq!(lines.len(), 2, "{lines:?}");
    assert_eq!((lines[0]["kind"].as_str(), lines[0]["session_id"].as_str()), (Some("transcript"), Some(id.as_str())));
    assert_eq!(lines[0]["scenario_id"], world.corpus.labels.get(6).id.as_str());
    assert_eq!(lines[0]["prediction"], done["prediction"]["id"]);
    assert_eq!((lines[1]["kind"].as_str(), lines[1]["rationality"].as_u64()), (Some("rating"), Some(2)));
}
