#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use improv_core::gateway::{MockFixtures, MockProvider, ProviderConfig};
use improv_core::story::StoryEngine;
use improv_core::{Gateway, TemplateRegistry};
use improv_server::{router, ApiConfig, AppState};
use serde_json::Value;
use tower::ServiceExt;

pub struct TestApp {
    pub router: Router,
    pub state: AppState,
    pub gateway: Gateway,
    pub dir: tempfile::TempDir,
}

pub fn app_with(fixtures: MockFixtures, latency: Duration, tweak: impl FnOnce(&mut ApiConfig)) -> TestApp {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ApiConfig::new(dir.path());
    tweak(&mut config);
    let provider = MockProvider::new(fixtures).with_latency(latency);
    let gateway = Gateway::with_provider(Arc::new(provider), ProviderConfig::mock());
    let engine = StoryEngine::deterministic(gateway.clone(), Arc::new(TemplateRegistry::builtin()));
    let state = AppState::with_engine(config, engine).unwrap();
    TestApp {
        router: router(state.clone()),
        state,
        gateway,
        dir,
    }
}

pub fn app() -> TestApp {
    app_with(MockFixtures::builtin(), Duration::ZERO, |_| {})
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes)
            .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }

    /// Asserts the documented error shape and returns the code.
    pub fn error_code(&self) -> String {
        let body = self.json();
        let obj = body.as_object().expect("error body is an object");
        assert_eq!(obj.len(), 2, "{body}");
        assert!(obj["message"].as_str().is_some_and(|m| !m.is_empty()), "{body}");
        obj["code"].as_str().expect("code").to_string()
    }
}

pub async fn send(router: &Router, request: Request<Body>) -> Reply {
    let response = router.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let bytes = to_bytes(response.into_body(), usize::MAX).await.unwrap().to_vec();
    Reply { status, headers, bytes }
}

pub async fn get(router: &Router, uri: &str) -> Reply {
    send(router, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post_json(router: &Router, uri: &str, body: Value) -> Reply {
    send(
        router,
        Request::builder()
            .method(Method::POST)
            .uri(uri)
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(body.to_string()))
            .unwrap(),
    )
    .await
}

pub async fn post_empty(router: &Router, uri: &str) -> Reply {
    send(router, Request::post(uri).body(Body::empty()).unwrap()).await
}

const BOUNDARY: &str = "improv-test-boundary";

pub fn multipart(parts: &[(&str, &str, &[u8])]) -> (String, Vec<u8>) {
    let mut body = Vec::new();
    for (name, filename, bytes) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        if filename.is_empty() {
            body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes());
        } else {
            body.extend_from_slice(
                format!(
                    "Content-Disposition: form-data; name=\"{name}\"; filename=\"{filename}\"\r\nContent-Type: application/octet-stream\r\n\r\n"
                )
                .as_bytes(),
            );
        }
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={BOUNDARY}"), body)
}

pub async fn upload(router: &Router, id: &str, parts: &[(&str, &str, &[u8])]) -> Reply {
    let (content_type, body) = multipart(parts);
    send(
        router,
        Request::post(format!("/sessions/{id}/performance"))
            .header(header::CONTENT_TYPE, content_type)
            .body(Body::from(body))
            .unwrap(),
    )
    .await
}

pub async fn create(router: &Router, seed: u64) -> Value {
    let reply = post_json(router, "/sessions", serde_json::json!({"seed": seed})).await;
    assert_eq!(reply.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&reply.bytes));
    reply.json()["session"].clone()
}
