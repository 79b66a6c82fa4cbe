use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use ground_core::dataset::{Example, Split};
use ground_core::grounder::Grounder;
use ground_core::models::ModelKind;
use ground_core::retrieval::{build_df, ground_retrieval, RetrievalConfig};
use ground_core::snapshot::{BBox, ElementRecord, PageSnapshot, Viewport};
use ground_core::training::{train, Corpus, TrainConfig};
use ground_service::{router, AppState, Artifacts, LoadError};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn element(id: &str, parent: Option<&str>, tag: &str, text: &str, attrs: &[(&str, &str)], bbox: [f64; 4], visible: bool) -> ElementRecord {
    ElementRecord {
        id: id.into(),
        parent_id: parent.map(Into::into),
        tag: tag.into(),
        text: text.into(),
        attributes: attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect::<BTreeMap<_, _>>(),
        bbox: BBox::from(bbox),
        visible,
        is_leaf: parent.is_some(),
    }
}

/// A small news header with a "Tip Us" anchor carrying class, id, and href.
fn news_page() -> PageSnapshot {
    PageSnapshot::from_parts(
        "news".into(),
        "http://example.test/news".into(),
        Viewport { width: 1000.0, height: 800.0 },
        "body".into(),
        vec![
            element("body", None, "body", "", &[], [0.0, 0.0, 1000.0, 800.0], false),
            element("home", Some("body"), "a", "Home", &[("id", "home-link")], [400.0, 54.0, 60.0, 20.0], true),
            element(
                "tip",
                Some("body"),
                "a",
                "Tip Us",
                &[("class", "dd-head"), ("id", "tip-link"), ("href", "submit_story/")],
                [500.0, 54.0, 60.0, 20.0],
                true,
            ),
            element("search", Some("body"), "input", "", &[("placeholder", "Search stories")], [600.0, 54.0, 120.0, 20.0], true),
        ],
    )
    .unwrap()
}

fn retrieval() -> Grounder {
    let config = RetrievalConfig::default();
    Grounder::Retrieval {
        df: build_df(&[news_page()], config.alpha).unwrap(),
        config,
    }
}

fn app_with(models: Vec<Grounder>) -> Router {
    router(Arc::new(AppState::new(vec![news_page()], models)), None)
}

fn app() -> Router {
    app_with(vec![retrieval()])
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn ground(app: &Router, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, "/ground", Some(body)).await
}

fn ids(v: &Value) -> Vec<&str> {
    v["ranked"].as_array().unwrap().iter().map(|r| r["element_id"].as_str().unwrap()).collect()
}

#[tokio::test]
async fn lists_pages_and_returns_snapshots() {
    let app = app();
    let (status, pages) = call(&app, Method::GET, "/pages", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(pages, json!([{"page_id": "news", "url": "http://example.test/news", "element_count": 4}]));

    let (status, page) = call(&app, Method::GET, "/pages/news", None).await;
    assert_eq!(status, StatusCode::OK);
    let parsed = ground_core::snapshot::load_snapshot(page.to_string().as_bytes()).unwrap();
    assert_eq!(parsed, news_page());

    let (status, err) = call(&app, Method::GET, "/pages/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "page_not_found");
}

#[tokio::test]
async fn health_reports_loaded_models() {
    let (status, body) = call(&app(), Method::GET, "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok", "models_loaded": ["retrieval"]}));
}

#[tokio::test]
async fn tip_us_grounds_to_the_anchor_and_matches_the_library() {
    let app = app();
    let (status, body) = ground(&app, json!({"page_id": "news", "command": "tip us", "model": "retrieval", "top_k": 3})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(ids(&body)[0], "tip");
    assert_eq!(body["model"], "retrieval");
    assert!(body["latency_ms"].as_f64().unwrap() >= 0.0);
    // bbox is echoed from the snapshot.
    assert_eq!(body["ranked"][0]["bbox"], json!([500.0, 54.0, 60.0, 20.0]));

    let config = RetrievalConfig::default();
    let df = build_df(&[news_page()], config.alpha).unwrap();
    let lib = ground_retrieval(&news_page(), "tip us", &df, &config).unwrap();
    let lib_ids: Vec<&str> = lib.ranked.iter().map(|r| r.element_id.as_str()).collect();
    assert_eq!(ids(&body), lib_ids);
    for (out, r) in body["ranked"].as_array().unwrap().iter().zip(&lib.ranked) {
        assert_eq!(out["score"].as_f64().unwrap(), r.score);
    }
}

#[tokio::test]
async fn top_k_beyond_candidates_returns_all_without_padding() {
    let app = app();
    let (status, body) = ground(&app, json!({"page_id": "news", "command": "home", "model": "retrieval", "top_k": 50})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ids(&body).len(), 3);
    let (_, one) = ground(&app, json!({"page_id": "news", "command": "home", "model": "retrieval", "top_k": 1})).await;
    assert_eq!(ids(&one), ["home"]);
}

#[tokio::test]
async fn repeated_requests_rank_identically() {
    let app = app();
    let req = json!({"page_id": "news", "command": "search stories tip", "model": "retrieval", "top_k": 10});
    let (_, a) = ground(&app, req.clone()).await;
    let (_, b) = ground(&app, req).await;
    assert_eq!(a["ranked"], b["ranked"]);
}

#[tokio::test]
async fn request_errors_carry_status_and_code() {
    let app = app();
    let cases = [
        (json!({"page_id": "nope", "command": "tip", "model": "retrieval"}), StatusCode::NOT_FOUND, "page_not_found"),
        (json!({"page_id": "news", "command": "tip", "model": "bogus"}), StatusCode::NOT_FOUND, "model_not_found"),
        (json!({"page_id": "news", "command": " ,. ", "model": "retrieval"}), StatusCode::UNPROCESSABLE_ENTITY, "empty_command"),
        (json!({"page_id": "news", "command": "tip", "model": "retrieval", "top_k": 0}), StatusCode::UNPROCESSABLE_ENTITY, "invalid_top_k"),
        (json!({"page_id": "news", "command": "tip", "model": "retrieval", "top_k": 51}), StatusCode::UNPROCESSABLE_ENTITY, "invalid_top_k"),
        (json!({"page_id": "news", "command": "tip", "model": "embedding"}), StatusCode::SERVICE_UNAVAILABLE, "model_not_loaded"),
        (json!({"page_id": "news"}), StatusCode::UNPROCESSABLE_ENTITY, "invalid_request"),
    ];
    for (body, status, code) in cases {
        let (got, err) = ground(&app, body.clone()).await;
        assert_eq!((got, err["code"].as_str()), (status, Some(code)), "{body}");
    }
}

#[tokio::test]
async fn cors_headers_are_present() {
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/ground")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app().oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}

#[tokio::test]
async fn serves_static_ui_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<!doctype html><title>playground</title>").unwrap();
    let app = router(Arc::new(AppState::new(vec![news_page()], vec![retrieval()])), Some(dir.path()));
    let (status, body) = call(&app, Method::GET, "/ui/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.as_str().unwrap().contains("playground"));
}

fn tiny_corpus() -> Corpus {
    let ex = |command: &str, target: &str, split| Example {
        page_id: "news".into(),
        command: command.into(),
        target_id: target.into(),
        split,
        kind: None,
    };
    Corpus::from_parts(
        vec![news_page()],
        vec![ex("tip us", "tip", Split::Train), ex("home", "home", Split::Train)],
    )
    .unwrap()
}

#[tokio::test]
async fn neural_models_return_probabilities() {
    let corpus = tiny_corpus();
    let config = TrainConfig {
        model: ModelKind::Embedding,
        max_epochs: 1,
        monitor: Split::Train,
        ..TrainConfig::default()
    };
    let outcome = train(&corpus, &config).unwrap();
    let app = app_with(vec![retrieval(), outcome.grounder]);
    let (status, body) = ground(&app, json!({"page_id": "news", "command": "tip us", "model": "embedding"})).await;
    assert_eq!(status, StatusCode::OK);
    let total: f64 = body["ranked"].as_array().unwrap().iter().map(|r| r["probability"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-6);
    let (_, health) = call(&app, Method::GET, "/healthz", None).await;
    assert_eq!(health["models_loaded"], json!(["retrieval", "embedding"]));
}

#[test]
fn loads_artifacts_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let snaps = dir.path().join("snapshots");
    std::fs::create_dir(&snaps).unwrap();
    std::fs::write(snaps.join("news.json"), news_page().to_json()).unwrap();
    let df_path = dir.path().join("df.tsv");
    retrieval().write(std::fs::File::create(&df_path).unwrap(), 0).unwrap();

    let corpus = tiny_corpus();
    let config = TrainConfig {
        model: ModelKind::Alignment,
        max_epochs: 1,
        monitor: Split::Train,
        ..TrainConfig::default()
    };
    let ckpt = dir.path().join("alignment.ckpt");
    train(&corpus, &config).unwrap().write_model(std::fs::File::create(&ckpt).unwrap()).unwrap();

    let artifacts = Artifacts {
        snapshots: snaps.clone(),
        checkpoints: vec![ckpt.clone()],
        df: Some(df_path),
        ..Artifacts::default()
    };
    let state = AppState::load(&artifacts).unwrap();
    assert_eq!(state.page_count(), 1);
    assert_eq!(state.model_kinds(), [ModelKind::Retrieval, ModelKind::Alignment]);

    let twice = Artifacts {
        checkpoints: vec![ckpt.clone(), ckpt],
        df: None,
        ..artifacts.clone()
    };
    assert!(matches!(AppState::load(&twice), Err(LoadError::DuplicateModel { .. })));
    let none = Artifacts {
        snapshots: snaps,
        ..Artifacts::default()
    };
    assert!(matches!(AppState::load(&none), Err(LoadError::NoModels)));
}
