use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use base64::Engine as _;
use gravekit::server::{router, AppState};
use gravekit::service::{Engine, EngineConfig};
use gravekit::store::Store;
use gravekit::synth::{self, SynthParams};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    app: Router,
    doc: String,
    truth: Vec<synth::PageTruth>,
    detections: String,
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body.map(|b| b.to_string()), None).await;
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, v)
}

async fn call_raw(app: &Router, method: Method, uri: &str, body: Option<String>, auth: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    if let Some(t) = auth {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let resp = app
        .clone()
        .oneshot(req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn fixture(pages: u32, token: Option<&str>) -> Fixture {
    let engine = Arc::new(Engine::new(Store::open_in_memory().unwrap(), EngineConfig::default()));
    let app = router(AppState::new(engine, token.map(str::to_string)));
    let doc = synth::document_id_for(9);
    let generated: Vec<_> = (0..pages)
        .map(|i| synth::generate_page(9, i, &SynthParams::default(), &doc).unwrap())
        .collect();
    let pages_json: Vec<Value> = generated
        .iter()
        .map(|p| json!({ "image_base64": base64::engine::general_purpose::STANDARD.encode(p.png()) }))
        .collect();
    let body = json!({ "id": doc, "title": "synthetic", "scale_mode": "per_drawing", "pages": pages_json });
    if token.is_none() {
        let (status, created) = call(&app, Method::POST, "/documents", Some(body)).await;
        assert_eq!(status, StatusCode::CREATED, "{created}");
        assert_eq!(created["page_count"], pages);
    }
    Fixture {
        app,
        doc,
        detections: generated.iter().map(|p| p.detection_lines()).collect(),
        truth: generated.into_iter().map(|p| p.truth).collect(),
    }
}

async fn assembled(pages: u32) -> Fixture {
    let f = fixture(pages, None).await;
    let (status, body) = call_raw(&f.app, Method::POST, &format!("/documents/{}/detections", f.doc), Some(f.detections.clone()), None).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let (status, job) = call(&f.app, Method::POST, &format!("/documents/{}/assemble", f.doc), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job_id = job["id"].as_str().unwrap().to_string();
    for _ in 0..500 {
        let (_, j) = call(&f.app, Method::GET, &format!("/jobs/{job_id}"), None).await;
        match j["state"].as_str().unwrap() {
            "running" => tokio::time::sleep(std::time::Duration::from_millis(10)).await,
            "done" => return f,
            other => panic!("job {other}: {j}"),
        }
    }
    panic!("assembly did not finish");
}

#[tokio::test]
async fn queue_orders_by_page_and_position() {
    let f = assembled(2).await;
    let (status, item) = call(&f.app, Method::GET, &format!("/documents/{}/queue/next", f.doc), None).await;
    assert_eq!(status, StatusCode::OK);
    let first_page: Vec<&synth::GraveTruth> = f.truth[0].graves.iter().collect();
    let top = first_page
        .iter()
        .map(|g| g.detection_id)
        .min_by(|a, b| {
            let bb = |id: u64| {
                let line = f.detections.lines().find(|l| l.contains(&format!("\"id\":{id},"))).unwrap();
                let v: Value = serde_json::from_str(line).unwrap();
                (v["bbox"][1].as_f64().unwrap(), v["bbox"][0].as_f64().unwrap())
            };
            bb(*a).partial_cmp(&bb(*b)).unwrap()
        })
        .unwrap();
    assert_eq!(item["record"]["tree"]["grave"]["id"], top);
    assert!(item["page_image_url"].as_str().unwrap().starts_with("/pages/"));
    // overlays travel as URLs, never as pixels
    let text = item.to_string();
    assert!(!text.contains("image_base64") && text.len() < 200_000);
    let crop = item["crops"]["grave"].as_str().unwrap();
    let (status, png) = call_raw(&f.app, Method::GET, crop, None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&png[1..4], b"PNG");
}

#[tokio::test]
async fn step_versioning_and_errors() {
    let f = assembled(1).await;
    let (_, item) = call(&f.app, Method::GET, &format!("/documents/{}/queue/next", f.doc), None).await;
    let id = item["record"]["record_id"].as_str().unwrap().to_string();
    let uri = format!("/records/{id}/step");

    // two clients see the same record; the second write is stale
    let (_, other) = call(&f.app, Method::GET, &format!("/documents/{}/queue/next", f.doc), None).await;
    assert_eq!(other["record"]["record_id"], item["record"]["record_id"]);
    let step1 = json!({"version": 1, "action": "advance", "payload": {"publication_grave_id": "A-1"}});
    let (status, r) = call(&f.app, Method::POST, &uri, Some(step1.clone())).await;
    assert_eq!(status, StatusCode::OK, "{r}");
    assert_eq!(r["version"], 2);
    let (_, before) = call_raw(&f.app, Method::GET, &format!("/records/{id}"), None, None).await;
    let (status, _) = call(&f.app, Method::POST, &uri, Some(step1)).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let bad = json!({"version": 2, "action": "advance", "payload": {"spines": "nope"}});
    let (status, e) = call(&f.app, Method::POST, &uri, Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{e}");
    let (status, _) = call(&f.app, Method::POST, &uri, Some(json!({"version": 2, "action": "fly"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, after) = call_raw(&f.app, Method::GET, &format!("/records/{id}"), None, None).await;
    assert_eq!(before, after);

    let (status, _) = call(&f.app, Method::POST, "/records/nope/step", Some(json!({"version": 1, "action": "back"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn spine_and_north_reach_the_response() {
    let f = assembled(3).await;
    let g = f
        .truth
        .iter()
        .flat_map(|p| &p.graves)
        .find(|g| !g.skeletons.is_empty() && g.north_angle_deg.is_some())
        .expect("a grave with a skeleton and an arrow");
    let id = format!("{}-g{}", f.doc, g.detection_id);
    let uri = format!("/records/{id}/step");
    let mut version = 1;
    let mut step = |payload: Value| {
        let body = json!({"version": version, "action": "advance", "payload": payload});
        version += 1;
        body
    };
    let (s, _) = call(&f.app, Method::POST, &uri, Some(step(json!({"publication_grave_id": g.grave_id})))).await;
    assert_eq!(s, StatusCode::OK);
    let spines: Vec<Value> = g
        .skeletons
        .iter()
        .map(|s| json!({"skeleton_id": s.detection_id, "start": [s.spine_start.x, s.spine_start.y], "end": [s.spine_end.x, s.spine_end.y]}))
        .collect();
    let (s, r) = call(&f.app, Method::POST, &uri, Some(step(json!({"spines": spines})))).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    let b = r["skeletons"][0]["bearing_deg"].as_f64().expect("bearing after step 2");
    let want = g.skeletons[0].bearing_deg.unwrap();
    assert!(gravekit_core::metric::circular_difference(b, want, 360.0) < 1.0, "{b} vs {want}");
    call(&f.app, Method::POST, &uri, Some(step(Value::Null))).await;
    call(&f.app, Method::POST, &uri, Some(step(Value::Null))).await;
    let (s, r) = call(&f.app, Method::POST, &uri, Some(step(json!({"angle_deg": 130})))).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["north"]["angle_deg"], 130.0);
    let spine = &g.skeletons[0];
    let d = spine.spine_end.sub(spine.spine_start);
    let expect = (gravekit_core::orient::image_angle(d.x, d.y).unwrap() - 130.0).rem_euclid(360.0);
    let got = r["skeletons"][0]["bearing_deg"].as_f64().unwrap();
    assert!((got - expect).abs() < 1e-9);
}

#[tokio::test]
async fn export_and_stats_endpoints() {
    let f = assembled(2).await;
    let (s, csv) = call_raw(&f.app, Method::GET, &format!("/documents/{}/export?format=csv&all=true", f.doc), None, None).await;
    assert_eq!(s, StatusCode::OK);
    let csv = String::from_utf8(csv).unwrap();
    let n: usize = f.truth.iter().map(|p| p.graves.len()).sum();
    assert_eq!(csv.lines().count(), n + 1);
    let (s, empty) = call_raw(&f.app, Method::GET, &format!("/documents/{}/export", f.doc), None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);
    let (s, _) = call_raw(&f.app, Method::GET, &format!("/documents/{}/export?format=xml", f.doc), None, None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, rose) = call(&f.app, Method::GET, &format!("/documents/{}/stats/rose?sector=30&all=true", f.doc), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(rose["counts"].as_array().unwrap().len(), 12);
    let (s, _) = call(&f.app, Method::GET, &format!("/documents/{}/stats/rose?sector=7", f.doc), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, outlines) = call(&f.app, Method::GET, &format!("/documents/{}/stats/outlines?all=true", f.doc), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(outlines.as_array().unwrap().len(), n);
    let (s, pca) = call(&f.app, Method::GET, &format!("/documents/{}/stats/pca?all=true&k=2", f.doc), None).await;
    assert_eq!(s, StatusCode::OK, "{pca}");
    assert_eq!(pca["points"].as_array().unwrap().len(), n);
    let (s, _) = call(&f.app, Method::GET, "/documents/none/stats/pca", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn bad_detections_are_rejected_whole() {
    let f = fixture(1, None).await;
    let page = gravekit::store::page_id(&f.doc, 0);
    let lines = format!(
        "{{\"page_id\":\"{page}\",\"label\":\"grave\",\"bbox\":[0,0,10,10],\"confidence\":0.9}}\n{{\"page_id\":\"{page}\",\"label\":\"dragon\",\"bbox\":[0,0,10,10],\"confidence\":0.9}}\n"
    );
    let (s, body) = call_raw(&f.app, Method::POST, &format!("/documents/{}/detections", f.doc), Some(lines), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(String::from_utf8_lossy(&body).contains("line 2"));
    let (_, job) = call(&f.app, Method::POST, &format!("/documents/{}/assemble", f.doc), None).await;
    let job_id = job["id"].as_str().unwrap();
    loop {
        let (_, j) = call(&f.app, Method::GET, &format!("/jobs/{job_id}"), None).await;
        if j["state"] != "running" {
            assert_eq!(j["report"]["graves"], 0);
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(5)).await;
    }
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let f = fixture(1, Some("s3cret")).await;
    let uri = format!("/documents/{}", f.doc);
    let (s, _) = call_raw(&f.app, Method::GET, &uri, None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call_raw(&f.app, Method::GET, &uri, None, Some("wrong")).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call_raw(&f.app, Method::GET, &uri, None, Some("s3cret")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sessions_track_the_queue_cursor() {
    let f = assembled(1).await;
    let (s, session) = call(&f.app, Method::POST, "/sessions", Some(json!({"document_id": f.doc}))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert!(session["queue_cursor"].is_null());
    let token = session["token"].as_str().unwrap();
    let req = Request::builder()
        .uri(format!("/documents/{}/queue/next", f.doc))
        .header("x-session", token)
        .body(Body::empty())
        .unwrap();
    let resp = f.app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let item: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    let (_, s) = call(&f.app, Method::GET, &format!("/sessions/{token}"), None).await;
    assert_eq!(s["queue_cursor"], item["record"]["record_id"]);
    let req = Request::builder()
        .uri(format!("/documents/{}/queue/next", f.doc))
        .header("x-session", "forged")
        .body(Body::empty())
        .unwrap();
    assert_eq!(f.app.clone().oneshot(req).await.unwrap().status(), StatusCode::NOT_FOUND);
}
