use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

use labelwright::labelspace::{LabelSpace, Provenance};
use labelwright_cli::server::{serve, ReviewState};

struct Server {
    base: String,
    dir: tempfile::TempDir,
    _rt: tokio::runtime::Runtime,
}

/// Space with labels a..d and two pending borderline pairs (a,b) and (c,d).
fn seeded() -> LabelSpace {
    let mut s = LabelSpace::new();
    let ids: Vec<u64> = ["alpha", "beta", "gamma", "delta"]
        .iter()
        .map(|n| s.add_label(n, Provenance::ClusterSynthesis).unwrap())
        .collect();
    s.add_pair(ids[0], ids[1], 0.6, Some("Yes".into())).unwrap();
    s.add_pair(ids[2], ids[3], 0.55, None).unwrap();
    s
}

fn start(token: Option<&str>) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("space.json");
    let space = seeded();
    space.save(&path).unwrap();
    let state = Arc::new(ReviewState::new(
        space,
        path,
        vec![],
        vec![],
        token.map(String::from),
    ));
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    rt.spawn(serve(listener, state, None));
    Server { base, dir, _rt: rt }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

fn get(s: &Server, path: &str) -> (u16, Value) {
    let mut r = agent().get(format!("{}{path}", s.base)).call().unwrap();
    (r.status().as_u16(), r.body_mut().read_json().unwrap())
}

fn post(s: &Server, path: &str, body: Value) -> (u16, Value) {
    let mut r = agent()
        .post(format!("{}{path}", s.base))
        .send_json(body)
        .unwrap();
    (r.status().as_u16(), r.body_mut().read_json().unwrap())
}

#[test]
fn health_and_pending_queue() {
    let s = start(None);
    let (code, h) = get(&s, "/api/health");
    assert_eq!(code, 200);
    assert_eq!(h["status"], "ok");
    let (_, pairs) = get(&s, "/api/pairs");
    let pending = pairs["pairs"].as_array().unwrap();
    assert_eq!(pending.len(), 2);
    assert_eq!(pending[0]["name_a"], "alpha");
    assert_eq!(pending[0]["pair"]["judge_opinion"], "Yes");
}

#[test]
fn remove_b_bumps_version_and_persists() {
    let s = start(None);
    let (_, before) = get(&s, "/api/labels");
    let v0 = before["version"].as_u64().unwrap();
    let (code, out) = post(
        &s,
        "/api/pairs/0/resolution",
        json!({ "resolution": { "kind": "remove_b" }, "expected_version": v0 }),
    );
    assert_eq!(code, 200, "{out}");
    assert_eq!(out["version"].as_u64().unwrap(), v0 + 1);
    let (_, after) = get(&s, "/api/labels");
    assert_eq!(after["version"].as_u64().unwrap(), v0 + 1);
    assert_eq!(after["labels"][1]["status"], "removed");
    assert!(!after["active"].as_array().unwrap().contains(&json!("beta")));
    let (_, pairs) = get(&s, "/api/pairs");
    assert_eq!(pairs["pairs"].as_array().unwrap().len(), 1);
    let disk = LabelSpace::load(&s.dir.path().join("space.json")).unwrap();
    assert_eq!(disk.version(), v0 + 1);
}

#[test]
fn concurrent_identical_resolutions_mutate_once() {
    let s = start(None);
    let v0 = get(&s, "/api/labels").1["version"].as_u64().unwrap();
    let url = format!("{}/api/pairs/1/resolution", s.base);
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let url = url.clone();
            thread::spawn(move || {
                agent()
                    .post(&url)
                    .send_json(json!({ "resolution": { "kind": "remove_b" } }))
                    .unwrap()
                    .status()
                    .as_u16()
            })
        })
        .collect();
    let mut codes: Vec<u16> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    codes.sort();
    assert_eq!(codes, [200, 409, 409, 409, 409, 409, 409, 409]);
    let (_, labels) = get(&s, "/api/labels");
    assert_eq!(labels["version"].as_u64().unwrap(), v0 + 1);
}

#[test]
fn stale_version_conflicts() {
    let s = start(None);
    let (code, body) = post(
        &s,
        "/api/pairs/0/resolution",
        json!({ "resolution": { "kind": "keep_both" }, "expected_version": 1 }),
    );
    assert_eq!(code, 409);
    assert!(body["error"].as_str().unwrap().contains("stale"));
}

#[test]
fn rename_collision_and_missing_ids() {
    let s = start(None);
    let (code, body) = post(&s, "/api/labels/0/rename", json!({ "name": "Gamma" }));
    assert_eq!(code, 422, "{body}");
    let (code, _) = post(&s, "/api/labels/0/rename", json!({ "name": "alpha prime" }));
    assert_eq!(code, 200);
    assert_eq!(get(&s, "/api/labels").1["labels"][0]["name"], "alpha prime");
    assert_eq!(
        post(&s, "/api/labels/99/rename", json!({ "name": "x" })).0,
        404
    );
    assert_eq!(
        post(
            &s,
            "/api/pairs/7/resolution",
            json!({ "resolution": { "kind": "keep_both" } })
        )
        .0,
        404
    );
}

#[test]
fn rename_resolution_applies_to_target() {
    let s = start(None);
    let (code, _) = post(
        &s,
        "/api/pairs/0/resolution",
        json!({ "resolution": { "kind": "rename", "target": "b", "name": "beta ray" } }),
    );
    assert_eq!(code, 200);
    let labels = get(&s, "/api/labels").1;
    assert_eq!(labels["labels"][1]["name"], "beta ray");
}

#[test]
fn bearer_token_guards_api_but_not_health() {
    let s = start(Some("sesame"));
    assert_eq!(get(&s, "/api/health").0, 200);
    assert_eq!(get(&s, "/api/pairs").0, 401);
    let r = agent()
        .get(format!("{}/api/pairs", s.base))
        .header("Authorization", "Bearer sesame")
        .call()
        .unwrap();
    assert_eq!(r.status().as_u16(), 200);
}
