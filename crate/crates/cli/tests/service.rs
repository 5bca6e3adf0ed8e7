use std::path::Path;

use affordance::dataset::{read_dataset, Status};
use affordance::Pose;
use affordance_cli::config::{Config, Resolved};
use affordance_cli::pipeline::{self, Data};
use affordance_cli::serve::{router, AppState};
use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

fn workspace(dir: &Path) -> Resolved {
    pipeline::make_fixture(dir, 0).unwrap();
    let r = affordance_cli::config::load(Some(&dir.join("affordance.toml")), [], &[]).unwrap();
    pipeline::mine(&r, false).unwrap();
    r
}

fn app(r: &Resolved) -> Router {
    router(AppState::open(r).unwrap(), None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_owned())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn enc(scene: &str) -> String {
    scene.replace('/', "%2F")
}

fn first_hypothesis(r: &Resolved) -> (u64, String, Pose) {
    let ds = read_dataset(&r.path(&r.config.paths.dataset)).unwrap();
    let rec = ds
        .records
        .iter()
        .find(|x| x.status == Status::Hypothesis && !x.out_of_frame)
        .unwrap();
    (rec.id, rec.scene_id.clone(), rec.pose.clone())
}

#[tokio::test]
async fn scenes_and_records_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let r = workspace(dir.path());
    let app = app(&r);
    let (status, scenes) = call(&app, "GET", "/api/scenes", None).await;
    assert_eq!(status, StatusCode::OK);
    let scenes = scenes.as_array().unwrap();
    assert!(!scenes.is_empty());
    let scene = scenes[0]["scene_id"].as_str().unwrap();
    let (status, recs) = call(&app, "GET", &format!("/api/scenes/{}/records", enc(scene)), None).await;
    assert_eq!(status, StatusCode::OK);
    let recs = recs.as_array().unwrap();
    assert_eq!(recs.len() as u64, scenes[0]["records"].as_u64().unwrap());
    assert!(recs.iter().all(|r| r.get("features").is_none()));

    let req = Request::get(format!("/api/scenes/{}/image", enc(scene))).body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let png = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    assert_eq!(&png[1..4], b"PNG");

    assert_eq!(call(&app, "GET", "/api/scenes/nope/records", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/records/999999", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", "/api/records/999999/accept", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn reject_is_persisted_and_final() {
    let dir = tempfile::tempdir().unwrap();
    let r = workspace(dir.path());
    let (id, _, _) = first_hypothesis(&r);
    {
        let app = app(&r);
        let (status, rec) = call(&app, "POST", &format!("/api/records/{id}/reject"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(rec["status"], "rejected");
        let (_, rec) = call(&app, "GET", &format!("/api/records/{id}"), None).await;
        assert_eq!(rec["status"], "rejected");
        let (status, _) = call(&app, "POST", &format!("/api/records/{id}/accept"), None).await;
        assert_eq!(status, StatusCode::CONFLICT);
    }
    // a fresh server over the same file sees the acknowledged state
    let app = app(&r);
    let (_, rec) = call(&app, "GET", &format!("/api/records/{id}"), None).await;
    assert_eq!(rec["status"], "rejected");
    let on_disk = read_dataset(&r.path(&r.config.paths.dataset)).unwrap();
    assert_eq!(on_disk.get(id).unwrap().status, Status::Rejected);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_accept_and_reject_have_one_winner() {
    let dir = tempfile::tempdir().unwrap();
    let r = workspace(dir.path());
    let app = app(&r);
    let ds = read_dataset(&r.path(&r.config.paths.dataset)).unwrap();
    let ids: Vec<u64> = ds.records.iter().filter(|x| x.status == Status::Hypothesis).map(|x| x.id).take(20).collect();
    for id in ids {
        let accept = format!("/api/records/{id}/accept");
        let reject = format!("/api/records/{id}/reject");
        let (a, b) = tokio::join!(call(&app, "POST", &accept, None), call(&app, "POST", &reject, None));
        let mut codes = [a.0, b.0];
        codes.sort();
        assert_eq!(codes, [StatusCode::OK, StatusCode::CONFLICT], "record {id}");
        let winner = if a.0 == StatusCode::OK { "accepted" } else { "rejected" };
        let (_, rec) = call(&app, "GET", &format!("/api/records/{id}"), None).await;
        assert_eq!(rec["status"], winner);
        let on_disk = read_dataset(&r.path(&r.config.paths.dataset)).unwrap();
        assert_eq!(on_disk.get(id).unwrap().status.name(), winner);
    }
}

#[tokio::test]
async fn identity_adjust_keeps_joints() {
    let dir = tempfile::tempdir().unwrap();
    let r = workspace(dir.path());
    let (id, _, pose) = first_hypothesis(&r);
    let app = app(&r);
    let (status, rec) = call(&app, "POST", &format!("/api/records/{id}/adjust"), Some(r#"{"scale":1.0,"translate":[0,0]}"#)).await;
    assert_eq!(status, StatusCode::OK);
    let joints: Pose = serde_json::from_value(rec["pose"].clone()).unwrap();
    assert_eq!(joints, pose);
    assert_eq!(rec["status"], "adjusted");
    let on_disk = read_dataset(&r.path(&r.config.paths.dataset)).unwrap();
    let stored = on_disk.get(id).unwrap();
    assert!(stored.status.is_accepted());
    assert!(stored.features.is_some());
}

#[tokio::test]
async fn scale_and_translate_about_the_bbox_center() {
    let dir = tempfile::tempdir().unwrap();
    let r = workspace(dir.path());
    let (id, _, pose) = first_hypothesis(&r);
    let app = app(&r);
    let (status, rec) = call(&app, "POST", &format!("/api/records/{id}/adjust"), Some(r#"{"scale":2.0}"#)).await;
    assert_eq!(status, StatusCode::OK);
    let scaled: Pose = serde_json::from_value(rec["pose"].clone()).unwrap();
    let (a, b) = (pose.bbox(), scaled.bbox());
    assert!((b.height() - 2.0 * a.height()).abs() < 1e-9);
    assert!(a.center().distance(b.center()) < 1e-9);

    let (_, rec) = call(&app, "POST", &format!("/api/records/{id}/adjust"), Some(r#"{"translate":[10,5]}"#)).await;
    let moved: Pose = serde_json::from_value(rec["pose"].clone()).unwrap();
    for (p, q) in scaled.joints().iter().zip(moved.joints()) {
        assert!((q.x - p.x - 10.0).abs() < 1e-9 && (q.y - p.y - 5.0).abs() < 1e-9);
    }
    let replacement = json!({ "joints": serde_json::to_value(&pose).unwrap(), "scale": 0.5 }).to_string();
    let (_, rec) = call(&app, "POST", &format!("/api/records/{id}/adjust"), Some(&replacement)).await;
    assert_eq!(serde_json::from_value::<Pose>(rec["pose"].clone()).unwrap(), pose);
    assert_eq!(rec["adjustment"]["scale"], 0.5);
}

#[tokio::test]
async fn malformed_bodies_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let r = workspace(dir.path());
    let (id, scene, _) = first_hypothesis(&r);
    let app = app(&r);
    let adjust = format!("/api/records/{id}/adjust");
    for body in ["{", r#"{"scale":"big"}"#, r#"{"joints":[[1,2]]}"#, r#"{"bogus":1}"#] {
        assert_eq!(call(&app, "POST", &adjust, Some(body)).await.0, StatusCode::BAD_REQUEST, "{body}");
    }
    assert_eq!(call(&app, "POST", &adjust, Some(r#"{"scale":-1}"#)).await.0, StatusCode::BAD_REQUEST);
    let (_, rec) = call(&app, "GET", &format!("/api/records/{id}"), None).await;
    assert_eq!(rec["status"], "hypothesis");
    let predict = format!("/api/scenes/{}/predict", enc(&scene));
    assert_eq!(call(&app, "POST", &predict, Some("[]")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        call(&app, "POST", &predict, Some(r#"{"point":[10,10]}"#)).await.0,
        StatusCode::SERVICE_UNAVAILABLE
    );
}

#[tokio::test]
async fn manual_hypotheses_and_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let r = workspace(dir.path());
    let (_, scene, pose) = first_hypothesis(&r);
    // accept everything in frame so the models can be trained
    let mut data = Data::load(&r).unwrap();
    affordance::mining::auto_annotate(&mut data.dataset.records);
    affordance::dataset::write_dataset(&data.dataset, &data.path).unwrap();
    pipeline::cluster(&r).unwrap();
    pipeline::train_classifier_cmd(&r).unwrap();
    pipeline::train_vae_cmd(&r).unwrap();
    let app = app(&r);

    let body = json!({ "joints": serde_json::to_value(&pose).unwrap() }).to_string();
    let (status, rec) = call(&app, "POST", &format!("/api/scenes/{}/records", enc(&scene)), Some(&body)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(rec["source"], "manual");
    assert_eq!(rec["status"], "hypothesis");
    let id = rec["id"].as_u64().unwrap();
    let (_, fetched) = call(&app, "GET", &format!("/api/records/{id}"), None).await;
    assert_eq!(fetched, rec);
    assert_eq!(call(&app, "POST", "/api/scenes/none/records", Some(&body)).await.0, StatusCode::NOT_FOUND);

    let predict = format!("/api/scenes/{}/predict", enc(&scene));
    let (status, out) = call(&app, "POST", &predict, Some(r#"{"point":[40,40],"samples":5,"seed":3}"#)).await;
    assert_eq!(status, StatusCode::OK);
    let samples = out["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 5);
    assert!(samples.iter().all(|s| s["class"] == samples[0]["class"]));
    let (_, again) = call(&app, "POST", &predict, Some(r#"{"point":[40,40],"samples":5,"seed":3}"#)).await;
    assert_eq!(again, out);
    let (status, _) = call(&app, "POST", &predict, Some(r#"{"point":[4000,40]}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", "/api/scenes/none/predict", Some(r#"{"point":[1,1]}"#)).await.0, StatusCode::NOT_FOUND);
}

#[test]
fn defaults_match_reference_values() {
    let c = Config::default();
    assert_eq!((c.model.k, c.model.m, c.model.latent_dim), (30, 10, 30));
    assert_eq!((c.train.lr, c.train.beta1, c.train.beta2), (2e-4, 0.5, 0.999));
}
