use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use crowdlabel::annotators::{Connectors, PromptVariantId};
use crowdlabel::export::parse_export;
use crowdlabel::model::{AnnotatorConfig, AnnotatorSettings, CostModel, HumanDispatch, HumanSettings, LlmSettings};
use crowdlabel::persist::SnapshotStore;
use crowdlabel::scenario::Scenario;
use crowdlabel::transport::{ChatRequest, ChatResponse, ChatTransport};
use crowdlabel::Money;
use crowdlabel_service::server::{router, AppState, ROUND_HEADER};

struct Harness {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
    app: Router,
}

fn harness(connectors: Connectors) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let app = router(Arc::new(AppState::load(&root, connectors).unwrap()));
    Harness { _dir: dir, root, app }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, _, bytes) = raw(app, method, uri, body.map(|b| b.to_string())).await;
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, v)
}

async fn raw(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Option<String>, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.as_deref().is_some_and(|b| b.starts_with('{')) {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let round = resp.headers().get(ROUND_HEADER).map(|v| v.to_str().unwrap().to_string());
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    (status, round, bytes)
}

fn scenario(samples: usize) -> Value {
    json!({"scenario": Scenario { samples, task_id: "sim".into(), ..Scenario::default() }})
}

#[tokio::test]
async fn create_advance_and_read_back() {
    let h = harness(Connectors::default());
    let (status, body) = call(&h.app, "POST", "/tasks", Some(scenario(120))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["round"], 0);

    let (status, body) = call(&h.app, "POST", "/tasks/sim/advance", Some(json!({"rounds": 1}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["round"], 1);
    assert_eq!(body["outcomes"][0]["status"], "completed");

    let (_, summary) = call(&h.app, "GET", "/tasks/sim", None).await;
    assert_eq!(summary["round"], 1);
    assert!(summary["messages"].as_u64().unwrap() >= 1);

    let (_, msgs) = call(&h.app, "GET", "/tasks/sim/messages", None).await;
    assert_eq!(msgs["round"], 1);
    let all = msgs["messages"].as_array().unwrap().len();
    assert!(all >= 1);
    let (_, tail) = call(&h.app, "GET", "/tasks/sim/messages?since=1", None).await;
    assert_eq!(tail["messages"].as_array().unwrap().len(), all - 1);
    assert_eq!(tail["next_since"], all);

    let (_, metrics) = call(&h.app, "GET", "/tasks/sim/metrics", None).await;
    assert_eq!(metrics["round"], 1);
    assert_eq!(metrics["rounds"].as_array().unwrap().len(), 1);
    assert_eq!(metrics["confidence_histogram"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum::<u64>(), 120);
    assert_eq!(metrics["spent"], summary["spent"]);

    let (_, list) = call(&h.app, "GET", "/tasks", None).await;
    assert_eq!(list["tasks"][0]["task_id"], "sim");

    // every accepted call leaves a loadable snapshot
    let state = SnapshotStore::for_task(&h.root, "sim").unwrap().load_latest().unwrap();
    assert_eq!(state.round, 1);

    // a fresh service over the same directory sees the task
    let again = router(Arc::new(AppState::load(&h.root, Connectors::default()).unwrap()));
    let (_, summary) = call(&again, "GET", "/tasks/sim", None).await;
    assert_eq!(summary["round"], 1);
}

#[tokio::test]
async fn export_matches_metrics_and_fresh_export_is_uniform() {
    let h = harness(Connectors::default());
    call(&h.app, "POST", "/tasks", Some(scenario(60))).await;
    let (status, round, bytes) = raw(&h.app, "GET", "/tasks/sim/export", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(round.as_deref(), Some("0"));
    let fresh = parse_export(std::str::from_utf8(&bytes).unwrap()).unwrap();
    assert_eq!(fresh.len(), 60);
    assert!(fresh.iter().all(|r| (r.confidence - 1.0 / 3.0).abs() < 1e-12 && r.label_history.is_empty()));

    call(&h.app, "POST", "/tasks/sim/advance", Some(json!({"rounds": 3}))).await;
    let (_, _, a) = raw(&h.app, "GET", "/tasks/sim/export", None).await;
    let (_, _, b) = raw(&h.app, "GET", "/tasks/sim/export", None).await;
    assert_eq!(a, b);
    let (_, metrics) = call(&h.app, "GET", "/tasks/sim/metrics", None).await;
    let conf: std::collections::BTreeMap<String, f64> =
        serde_json::from_value::<Vec<(String, f64)>>(metrics["confidences"].clone()).unwrap().into_iter().collect();
    for rec in parse_export(std::str::from_utf8(&a).unwrap()).unwrap() {
        assert_eq!(conf[rec.sample_id.as_str()], rec.confidence);
    }
}

#[tokio::test]
async fn terminated_task_refuses_advance_with_reason() {
    let h = harness(Connectors::default());
    call(&h.app, "POST", "/tasks", Some(scenario(60))).await;
    let (status, body) = call(&h.app, "POST", "/tasks/sim/advance", Some(json!({"to_termination": true}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["outcomes"].as_array().unwrap().last().unwrap()["status"], "terminated");
    let (status, body) = call(&h.app, "POST", "/tasks/sim/advance", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["termination"], "all_converged");
    assert!(body["round"].as_u64().unwrap() > 0);

    let (status, body) = call(&h.app, "POST", "/tasks/sim/verification", Some(json!({"count": 3}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["samples"].as_array().unwrap().len(), 3);
    let (_, _, bytes) = raw(&h.app, "GET", "/tasks/sim/export", None).await;
    let flagged = parse_export(std::str::from_utf8(&bytes).unwrap()).unwrap().iter().filter(|r| r.human_verification_flag).count();
    assert_eq!(flagged, 3);
}

#[tokio::test]
async fn validation_errors_are_4xx() {
    let h = harness(Connectors::default());
    let (status, _) = call(&h.app, "GET", "/tasks/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let bad = json!({"scenario": {"classes": 1}});
    let (status, body) = call(&h.app, "POST", "/tasks", Some(bad)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    assert!(body["error"].is_string());
    let (status, _) = call(&h.app, "POST", "/tasks", Some(json!({}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let mut zero = Scenario { task_id: "z".into(), ..Scenario::default() };
    zero.budget = Money::ZERO;
    let (status, body) = call(&h.app, "POST", "/tasks", Some(json!({"scenario": zero}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("budget"));

    call(&h.app, "POST", "/tasks", Some(scenario(30))).await;
    let (status, _) = call(&h.app, "POST", "/tasks", Some(scenario(30))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&h.app, "POST", "/tasks/sim/advance", Some(json!({"rounds": 0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&h.app, "GET", "/tasks/sim/human-batches/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&h.app, "POST", "/tasks/sim/verification", Some(json!({"count": 2}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

fn task_json(annotator: AnnotatorConfig) -> Value {
    let classes = ["neg", "pos"];
    let rows: Vec<Value> = (0..40)
        .map(|i| {
            let mut row = json!({"id": format!("s{i:02}"), "text": format!("item number {i}"), "truth": classes[i % 2]});
            if i < 4 {
                row["gold"] = json!(classes[i % 2]);
            }
            row
        })
        .collect();
    json!({
        "task": {
            "task_id": "t",
            "class_names": classes,
            "budget": "10.00",
            "annotators": [annotator],
        },
        "dataset": rows,
    })
}

#[tokio::test]
async fn human_batch_round_trip_over_http() {
    let h = harness(Connectors::default());
    let human = AnnotatorConfig {
        id: "crowd".into(),
        pricing: CostModel::PerSample { rate: Money::from_micros(15_000) },
        settings: AnnotatorSettings::Human(HumanSettings { dispatch: HumanDispatch::Offline }),
    };
    let (status, body) = call(&h.app, "POST", "/tasks", Some(task_json(human))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let (_, body) = call(&h.app, "POST", "/tasks/t/advance", None).await;
    assert_eq!(body["outcomes"][0]["status"], "awaiting_human");
    let batch_id = body["outcomes"][0]["batch_id"].as_str().unwrap().to_string();
    assert_eq!(body["round"], 0);

    let (_, batches) = call(&h.app, "GET", "/tasks/t/human-batches", None).await;
    assert_eq!(batches["batches"][0]["batch_id"], batch_id.as_str());
    assert_eq!(batches["batches"][0]["open"], true);

    let (status, round, bytes) = raw(&h.app, "GET", &format!("/tasks/t/human-batches/{batch_id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(round.as_deref(), Some("0"));
    let file = String::from_utf8(bytes).unwrap();
    let filled: String = file
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i < 2 {
                format!("{l}\n")
            } else {
                let n: usize = l[1..3].parse().unwrap();
                format!("{l}{}\n", ["neg", "pos"][n % 2])
            }
        })
        .collect();
    let (status, _, bytes) = raw(&h.app, "POST", "/tasks/t/human-batches/import", Some(filled.clone())).await;
    let body: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["round"], 1);
    assert_eq!(body["outcome"]["status"], "completed");
    let (status, _, _) = raw(&h.app, "POST", "/tasks/t/human-batches/import", Some(filled)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

struct SlowChat {
    calls: Mutex<usize>,
}

impl ChatTransport for SlowChat {
    fn complete(&self, request: &ChatRequest) -> crowdlabel::Result<ChatResponse> {
        *self.calls.lock().unwrap() += 1;
        std::thread::sleep(Duration::from_millis(40));
        let args = if request.tool.as_ref().is_some_and(|t| t.name == "GenerateExamples") {
            r#"{"examples":[{"text":"x","label":"neg"}]}"#.to_string()
        } else {
            r#"{"label":"neg"}"#.to_string()
        };
        Ok(ChatResponse { content: None, tool_arguments: Some(args), usage: None })
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_advance_is_a_conflict() {
    let chat = Arc::new(SlowChat { calls: Mutex::new(0) });
    let h = harness(Connectors { default_chat: Some(chat), ..Default::default() });
    let llm = AnnotatorConfig {
        id: "llm".into(),
        pricing: CostModel::default_llm(),
        settings: AnnotatorSettings::Llm(LlmSettings {
            endpoint: "http://unused.invalid".into(),
            model: "m".into(),
            prompt_variant: PromptVariantId::Direct,
            token_env: "UNUSED".into(),
            parallelism: 1,
            max_retries: 0,
        }),
    };
    let (status, body) = call(&h.app, "POST", "/tasks", Some(task_json(llm))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");

    let first = {
        let app = h.app.clone();
        tokio::spawn(async move { call(&app, "POST", "/tasks/t/advance", None).await })
    };
    tokio::time::sleep(Duration::from_millis(30)).await;
    let (status, body) = call(&h.app, "POST", "/tasks/t/advance", None).await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");
    assert_eq!(body["round"], 0);
    // reads still answer while the advance runs
    let (status, summary) = call(&h.app, "GET", "/tasks/t", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["round"], 0);

    let (status, body) = first.await.unwrap();
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["round"], 1);
}
