use answervault::baseline::{CosineBaseline, EmbeddingProvider};
use answervault::corpus::{InputFormat, QuestionRecord};
use answervault::evaluate::{predict, validate_free_answer};
use answervault::siamese::{train, EncoderConfig, SiameseModel};
use answervault::synthetic::{embedding_table, generate, SyntheticSpec};
use answervault_serve::{router, ServiceState};
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixture() -> (Vec<QuestionRecord>, SiameseModel) {
    let spec = SyntheticSpec { records: 40, ..SyntheticSpec::default() };
    let data = generate(&spec);
    let config = EncoderConfig {
        vocab_size: 300,
        embed_dim: 8,
        hidden_dim: 8,
        max_len: 32,
        epochs: 2,
        batch_size: 8,
        ..EncoderConfig::default()
    };
    let model = train(&config, &data[..30], &[], InputFormat::OptionsOnly).unwrap().model;
    (data[30..].to_vec(), model)
}

fn app() -> (Router, Vec<QuestionRecord>, SiameseModel) {
    let (questions, model) = fixture();
    let baseline = CosineBaseline::new(EmbeddingProvider::LocalTable(embedding_table(&SyntheticSpec::default(), 16)));
    let state = ServiceState::new(questions.clone())
        .with_model(model.clone())
        .with_baseline(baseline)
        .with_threshold(0.9);
    (router(state, true), questions, model)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn health_reports_model_version() {
    let (app, _, model) = app();
    let (status, body) = call(&app, Method::GET, "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&body);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["model_version"], model.fingerprint()[..16]);
    assert_eq!(call(&app, Method::GET, "/health", None).await.1, body);

    let empty = router(ServiceState::new(Vec::new()), false);
    let (status, body) = call(&empty, Method::GET, "/health", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(json_of(&body)["status"], "unavailable");
}

#[tokio::test]
async fn question_pages_withhold_the_answer() {
    let (app, questions, _) = app();
    let (status, body) = call(&app, Method::GET, "/questions?offset=2&limit=1", None).await;
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&body);
    assert_eq!(v["total"], questions.len());
    assert_eq!(v["items"].as_array().unwrap().len(), 1);
    assert_eq!(v["items"][0]["id"], questions[2].id);
    assert!(!String::from_utf8_lossy(&body).contains("correct"));

    let (_, body) = call(&app, Method::GET, "/questions", None).await;
    let ids: Vec<_> = json_of(&body)["items"].as_array().unwrap().iter().map(|i| i["id"].clone()).collect();
    assert_eq!(ids.len(), questions.len());
    assert_eq!(ids[0], questions[0].id);

    let uri = format!("/questions?offset={}", questions.len());
    let (status, body) = call(&app, Method::GET, &uri, None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(json_of(&body)["items"].as_array().unwrap().is_empty());

    let (status, body) = call(&app, Method::GET, "/questions?limit=x", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(json_of(&body)["error"].is_string());
}

#[tokio::test]
async fn score_options_matches_offline_predict() {
    let (app, questions, model) = app();
    for q in &questions {
        let req = json!({ "question_id": q.id, "scorer": "siamese" });
        let (status, body) = call(&app, Method::POST, "/score-options", Some(req.clone())).await;
        assert_eq!(status, StatusCode::OK);
        let v = json_of(&body);
        let offline = predict(&model, q, InputFormat::OptionsOnly).unwrap();
        let served: Vec<f64> = v["scores"].as_array().unwrap().iter().map(|s| s.as_f64().unwrap()).collect();
        let bits = |xs: &[f64]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&served), bits(&offline.per_option_scores));
        assert_eq!(v["chosen_index"], offline.chosen_index);
        assert_eq!(call(&app, Method::POST, "/score-options", Some(req)).await.1, body);
    }
    let req = json!({ "question_id": questions[0].id, "scorer": "baseline" });
    let (status, body) = call(&app, Method::POST, "/score-options", Some(req)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&body)["scores"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn score_options_errors() {
    let (app, questions, _) = app();
    let (status, body) = call(&app, Method::POST, "/score-options", Some(json!({ "question_id": "nope" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(json_of(&body)["error"].as_str().unwrap().contains("nope"));
    let req = json!({ "question_id": questions[0].id, "scorer": "bm25" });
    assert_eq!(call(&app, Method::POST, "/score-options", Some(req)).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, Method::POST, "/score-options", Some(json!({ "id": 3 }))).await.0, StatusCode::BAD_REQUEST);

    let no_baseline = router(ServiceState::new(questions.clone()), false);
    let req = json!({ "question_id": questions[0].id, "scorer": "baseline" });
    assert_eq!(call(&no_baseline, Method::POST, "/score-options", Some(req)).await.0, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn validate_reference_answer_is_correct() {
    let (app, questions, model) = app();
    for q in &questions {
        let offline = predict(&model, q, InputFormat::OptionsOnly).unwrap();
        let req = json!({ "question_id": q.id, "user_answer": offline.reference_answer });
        let (status, body) = call(&app, Method::POST, "/validate", Some(req)).await;
        assert_eq!(status, StatusCode::OK);
        let v = json_of(&body);
        assert_eq!(v["is_correct"], true);
        assert_eq!(v["question_id"], q.id);
        let expected = validate_free_answer(&model, q, &offline.reference_answer, 0.9).unwrap();
        assert_eq!(v["free_answer_score"].as_f64().unwrap().to_bits(), expected.free_answer_score.unwrap().to_bits());
    }
}

#[tokio::test]
async fn validate_errors() {
    let (app, questions, _) = app();
    let id = &questions[0].id;
    for answer in ["", "   ", "?!"] {
        let req = json!({ "question_id": id, "user_answer": answer });
        let (status, body) = call(&app, Method::POST, "/validate", Some(req)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{answer:?}");
        assert!(json_of(&body)["error"].is_string());
    }
    let req = json!({ "question_id": "missing", "user_answer": "x" });
    assert_eq!(call(&app, Method::POST, "/validate", Some(req)).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, Method::GET, "/nowhere", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn cors_is_toggleable() {
    let (questions, model) = fixture();
    let state = ServiceState::new(questions).with_model(model);
    let request = || {
        Request::builder()
            .uri("/health")
            .header("origin", "http://localhost:5173")
            .body(Body::empty())
            .unwrap()
    };
    let open = router(state.clone(), true).oneshot(request()).await.unwrap();
    assert!(open.headers().contains_key("access-control-allow-origin"));
    let closed = router(state, false).oneshot(request()).await.unwrap();
    assert!(!closed.headers().contains_key("access-control-allow-origin"));
}
