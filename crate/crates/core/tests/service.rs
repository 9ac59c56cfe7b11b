mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{first_of, tiny_dataset, tiny_model};
use daa_core::phantom::{Dataset, DatasetManifest};
use daa_core::service::{router, ServiceState};

fn app(dataset: Option<Dataset>, model: bool) -> axum::Router {
    router(
        Arc::new(ServiceState {
            dataset,
            model: model.then(tiny_model),
        }),
        2,
    )
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn health_reports_loaded_state() {
    let (s, b) = call(&app(None, false), "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b["dataset_loaded"], false);
    let (_, b) = call(&app(Some(tiny_dataset(8)), true), "GET", "/health", None).await;
    assert_eq!(b["model_loaded"], true);
    assert_eq!(b["subjects"], 8);
}

#[tokio::test]
async fn missing_dataset_is_503_with_code() {
    let (s, b) = call(&app(None, false), "GET", "/subjects", None).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(b["code"], "dataset_not_loaded");
    assert!(b["message"].is_string());
}

#[tokio::test]
async fn empty_dataset_lists_nothing() {
    let empty = Dataset::new(
        DatasetManifest {
            class_names: vec!["NOR".into(), "DCM".into()],
            split_seed: 0,
            imbalance: None,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            excluded: Vec::new(),
            subjects: Default::default(),
            class_counts: Default::default(),
            vendor_counts: Default::default(),
        },
        Vec::new(),
    )
    .unwrap();
    let (s, b) = call(&app(Some(empty), false), "GET", "/subjects", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b, json!([]));
}

#[tokio::test]
async fn subjects_are_sorted_and_stable() {
    let a = app(Some(tiny_dataset(10)), false);
    let (s, first) = call(&a, "GET", "/subjects", None).await;
    assert_eq!(s, StatusCode::OK);
    let ids: Vec<&str> = first.as_array().unwrap().iter().map(|x| x["id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), 10);
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    let (_, second) = call(&a, "GET", "/subjects", None).await;
    assert_eq!(first, second);
}

#[tokio::test]
async fn subject_detail_and_unknown() {
    let d = tiny_dataset(8);
    let id = first_of(&d, 0);
    let a = app(Some(d), false);
    let (s, b) = call(&a, "GET", &format!("/subjects/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b["id"], id.as_str());
    assert_eq!(b["channels"].as_array().unwrap().len(), 12);
    let (s, b) = call(&a, "GET", "/subjects/nobody", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(b["code"], "unknown_subject");
}

#[tokio::test]
async fn generate_without_model_is_503() {
    let d = tiny_dataset(8);
    let id = first_of(&d, 0);
    let (s, b) = call(&app(Some(d), false), "POST", "/generate", Some(json!({"base_subject": id}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(b["code"], "model_not_loaded");
}

#[tokio::test]
async fn generate_is_deterministic_per_seed() {
    let d = tiny_dataset(12);
    let (nor, hcm) = (first_of(&d, 0), first_of(&d, 2));
    let a = app(Some(d), true);
    let req = json!({
        "base_subject": nor,
        "ops": [{"kind": "swap", "channel": 1, "donor_subject": hcm}, {"kind": "swap", "channel": 0, "donor_subject": hcm}],
        "seed": 5
    });
    let (s, one) = call(&a, "POST", "/generate", Some(req.clone())).await;
    assert_eq!(s, StatusCode::OK, "{one}");
    let (_, two) = call(&a, "POST", "/generate", Some(req)).await;
    assert_eq!(one["image"], two["image"]);
    assert_eq!(one, two);
    assert_eq!(one["target_label"], 2);
    assert_eq!(one["channels"].as_array().unwrap().len(), 12);
    let mean = one["difference_mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mean));
}

#[tokio::test]
async fn mixed_pathologies_are_422_with_violations() {
    let d = tiny_dataset(12);
    let (nor, dcm, hcm) = (first_of(&d, 0), first_of(&d, 1), first_of(&d, 2));
    let a = app(Some(d), true);
    let req = json!({
        "base_subject": nor,
        "ops": [{"kind": "swap", "channel": 1, "donor_subject": hcm}, {"kind": "swap", "channel": 0, "donor_subject": dcm}]
    });
    let (s, b) = call(&a, "POST", "/generate", Some(req)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(b["code"], "invalid_plan");
    let v = b["violations"].as_array().unwrap();
    assert!(v.iter().any(|x| x["code"] == "multiple_pathologies"), "{b}");
}

#[tokio::test]
async fn unknown_donor_is_404() {
    let d = tiny_dataset(8);
    let nor = first_of(&d, 0);
    let a = app(Some(d), true);
    let req = json!({"base_subject": nor, "ops": [{"kind": "swap", "channel": 1, "donor_subject": "ghost"}]});
    let (s, b) = call(&a, "POST", "/generate", Some(req)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(b["code"], "unknown_subject");
}

#[tokio::test]
async fn malformed_body_is_422() {
    let a = app(Some(tiny_dataset(8)), true);
    let (s, b) = call(&a, "POST", "/generate", Some(json!({"ops": 3}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(b["code"], "invalid_body");
}

#[tokio::test]
async fn unknown_route_is_404_json() {
    let (s, b) = call(&app(None, false), "GET", "/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(b["code"], "not_found");
}

#[tokio::test]
async fn dilation_traversal_is_monotone() {
    let d = tiny_dataset(8);
    let id = first_of(&d, 0);
    let a = app(Some(d), true);
    let (s, b) = call(&a, "POST", "/traverse", Some(json!({"subject": id, "channel": 0, "op": "dilate"}))).await;
    assert_eq!(s, StatusCode::OK, "{b}");
    let e = b["entries"].as_array().unwrap();
    assert_eq!(e.iter().map(|x| x["step"].as_u64().unwrap()).collect::<Vec<_>>(), [3, 6, 9]);
    let areas: Vec<u64> = e.iter().map(|x| x["factor_area"].as_u64().unwrap()).collect();
    assert!(areas.windows(2).all(|w| w[0] <= w[1]), "{areas:?}");
}

#[tokio::test]
async fn empty_steps_give_empty_list() {
    let d = tiny_dataset(8);
    let id = first_of(&d, 0);
    let a = app(Some(d), true);
    let (s, b) = call(&a, "POST", "/traverse", Some(json!({"subject": id, "channel": 0, "op": "erode", "steps": []}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b["entries"], json!([]));
}

#[tokio::test]
async fn erosion_to_empty_returns_partial_422() {
    let d = tiny_dataset(8);
    let id = first_of(&d, 0);
    let a = app(Some(d), true);
    let req = json!({"subject": id, "channel": 0, "op": "erode", "steps": [1, 20]});
    let (s, b) = call(&a, "POST", "/traverse", Some(req)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(b["code"], "empty_factor");
    assert!(b["warning"].as_str().unwrap().contains("20"));
    assert_eq!(b["entries"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn decreasing_steps_are_rejected() {
    let d = tiny_dataset(8);
    let id = first_of(&d, 0);
    let a = app(Some(d), true);
    let req = json!({"subject": id, "channel": 0, "op": "dilate", "steps": [6, 3]});
    let (s, b) = call(&a, "POST", "/traverse", Some(req)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(b["code"], "invalid_input");
}
