use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::Engine;
use ganblend_cli::service::{router, AppState, TensorSummary};
use ganblend_core::checkpoint;
use ganblend_core::tensor::{decode_png_bytes, encode_png_bytes};
use ganblend_core::{describe_schedule, forward, init_random, synth_transfer, BlendSchedule, GeneratorConfig, NoiseSpec, Source};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    content_type: String,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|_| panic!("{}", String::from_utf8_lossy(&self.body)))
    }
}

async fn call(app: &Router, req: Request<Body>) -> Reply {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let content_type = res
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_owned())
        .unwrap_or_default();
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type,
        body,
    }
}

async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &Router, uri: &str, body: Value) -> Reply {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await
}

async fn upload(app: &Router, bytes: Vec<u8>) -> String {
    let req = Request::post("/api/models")
        .header(header::CONTENT_TYPE, "application/octet-stream")
        .body(Body::from(bytes))
        .unwrap();
    let reply = call(app, req).await;
    assert_eq!(reply.status, StatusCode::OK);
    reply.json()["id"].as_str().unwrap().to_owned()
}

/// Registers the base and transfer fixtures; returns their ids.
async fn with_fixtures(app: &Router) -> (String, String) {
    let base = init_random(&GeneratorConfig::desk(), 0);
    let transfer = synth_transfer(&base, 0.5, 1).unwrap();
    (upload(app, checkpoint::to_bytes(&base)).await, upload(app, checkpoint::to_bytes(&transfer)).await)
}

async fn wait_for_job(app: &Router, id: &str) -> Value {
    for _ in 0..600 {
        let status = get(app, &format!("/api/jobs/{id}")).await.json();
        if status["status"] != "running" {
            return status;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {id} did not finish");
}

fn png_field(v: &Value) -> Vec<u8> {
    base64::engine::general_purpose::STANDARD.decode(v.as_str().unwrap()).unwrap()
}

#[tokio::test]
async fn empty_registry_lists_nothing() {
    let app = router(AppState::new());
    let reply = get(&app, "/api/models").await;
    assert_eq!(reply.status, StatusCode::OK);
    assert_eq!(reply.json(), json!({ "models": [] }));
}

#[tokio::test]
async fn models_register_by_upload_and_by_path() {
    let app = router(AppState::new());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("base.gwt");
    checkpoint::save(&init_random(&GeneratorConfig::desk(), 0), &path).unwrap();

    let by_path = post_json(&app, "/api/models", json!({ "path": path })).await.json();
    let uploaded = upload(&app, std::fs::read(&path).unwrap()).await;
    assert_ne!(by_path["id"], json!(uploaded));
    let models = get(&app, "/api/models").await.json();
    assert_eq!(models["models"][0]["name"], "base");
    assert_eq!(models["models"][0]["max_resolution"], 64);
    assert_eq!(models["models"].as_array().unwrap().len(), 2);

    let bad = post_json(&app, "/api/models", json!({ "path": dir.path().join("nope.gwt") })).await;
    assert!(bad.status.is_client_error());
    assert!(bad.json()["error"].is_string());
    let req = Request::post("/api/models").body(Body::from(b"XXXX".to_vec())).unwrap();
    assert_eq!(call(&app, req).await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn zero_alpha_blend_samples_like_base() {
    let app = router(AppState::new());
    let (base, transfer) = with_fixtures(&app).await;
    let reply = post_json(
        &app,
        "/api/blend",
        json!({
            "base_id": base,
            "transfer_id": transfer,
            "schedule": {"kind": "table", "alphas": {"4": 0, "8": 0, "16": 0, "32": 0, "64": 0}},
        }),
    )
    .await;
    assert_eq!(reply.status, StatusCode::OK);
    let blend = reply.json()["id"].as_str().unwrap().to_owned();

    let uri = |id: &str| format!("/api/models/{id}/sample.png?seed=5&count=4&columns=2");
    let a = get(&app, &uri(&base)).await;
    let b = get(&app, &uri(&blend)).await;
    assert_eq!(a.content_type, "image/png");
    assert_eq!(a.body, b.body);
    assert_ne!(a.body, get(&app, &uri(&transfer)).await.body);
}

#[tokio::test]
async fn schedule_preview_rows() {
    let app = router(AppState::new());
    let rows = get(&app, "/api/schedule/preview?kind=swap&r_swap=16").await.json();
    let expected = describe_schedule(&BlendSchedule::swap(16, Source::Transfer), &GeneratorConfig::desk()).unwrap();
    assert_eq!(rows, serde_json::to_value(&expected).unwrap());
    assert_eq!(rows, json!([
        {"r": 4, "alpha": 1.0}, {"r": 8, "alpha": 1.0}, {"r": 16, "alpha": 1.0},
        {"r": 32, "alpha": 0.0}, {"r": 64, "alpha": 0.0},
    ]));

    let flipped = get(&app, "/api/schedule/preview?kind=swap&r_swap=16&low_source=base").await.json();
    assert_eq!(flipped[0]["alpha"], 0.0);
    assert_eq!(flipped[4]["alpha"], 1.0);

    let table = get(&app, "/api/schedule/preview?kind=table&alphas=4:0.3,8:0.3,16:0.3,32:0.3,64:0.3").await.json();
    assert!(table.as_array().unwrap().iter().all(|row| (row["alpha"].as_f64().unwrap() - 0.3).abs() < 1e-6));

    let smooth = get(&app, "/api/schedule/preview?kind=smoothstep&r_center=16&width_octaves=2").await.json();
    assert_eq!(smooth[2], json!({"r": 16, "alpha": 0.5}));

    assert_eq!(get(&app, "/api/schedule/preview?kind=swap&r_swap=3").await.status, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/api/schedule/preview?kind=nope").await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn activation_summary_shape() {
    let app = router(AppState::new());
    let (base, _) = with_fixtures(&app).await;
    let reply = get(&app, &format!("/api/models/{base}/activations?seed=2&tap_r=16")).await;
    let summary: TensorSummary = serde_json::from_slice(&reply.body).unwrap();
    assert_eq!(summary.shape, vec![32, 16, 16]);
    assert!(summary.min <= summary.mean as f32 && summary.mean as f32 <= summary.max);
    assert_eq!(get(&app, &format!("/api/models/{base}/activations?tap_r=12")).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/api/models/m99/activations?tap_r=16").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn projection_and_toonify_jobs() {
    let state = AppState::new();
    let app = router(Arc::clone(&state));
    let (base, transfer) = with_fixtures(&app).await;
    let blend = post_json(
        &app,
        "/api/blend",
        json!({"base_id": base, "transfer_id": transfer, "schedule": {"kind": "swap", "r_swap": 16}, "mapping": "base"}),
    )
    .await
    .json()["id"]
        .as_str()
        .unwrap()
        .to_owned();

    let image = forward(&init_random(&GeneratorConfig::desk(), 0), &[0.2; 64], NoiseSpec::new(1)).unwrap();
    let png = base64::engine::general_purpose::STANDARD.encode(encode_png_bytes(&image).unwrap());
    let cfg = json!({"steps": 2, "seed": 1});

    let job = post_json(&app, "/api/project", json!({"model_id": base, "png": png, "cfg": cfg})).await.json();
    let done = wait_for_job(&app, job["job_id"].as_str().unwrap()).await;
    assert_eq!(done["status"], "done", "{done}");
    let result = &done["result"];
    assert_eq!(result["latent"]["space"], "w");
    assert_eq!(result["latent"]["model_id"], json!(base));
    assert_eq!(result["loss_trace"].as_array().unwrap().len(), 2);
    let reconstruction = png_field(&result["reconstruction_png"]);

    let job = post_json(&app, "/api/toonify", json!({"base_id": base, "blended_id": blend, "png": png, "cfg": cfg})).await.json();
    let done = wait_for_job(&app, job["job_id"].as_str().unwrap()).await;
    assert_eq!(done["status"], "done", "{done}");
    assert_eq!(png_field(&done["result"]["reconstruction_png"]), reconstruction);
    let toon = png_field(&done["result"]["toonified_png"]);
    assert_ne!(toon, reconstruction);
    assert_eq!(decode_png_bytes(&toon).unwrap().size(), 64);

    let bad = post_json(&app, "/api/project", json!({"model_id": base, "png": png, "cfg": {"steps": 0}})).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    let bad = post_json(&app, "/api/project", json!({"model_id": base, "png": "%%%"})).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/api/jobs/j999").await.status, StatusCode::NOT_FOUND);
}
