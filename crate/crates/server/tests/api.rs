use std::path::Path;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};
use slicereg_core::dataset::Dataset;
use slicereg_core::eval::phantom::{make_phantom, phantom_config, PhantomSpec};
use slicereg_core::session::Session;
use slicereg_server::{spawn, AppState, RunningServer};

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

fn spec(n_cases: usize) -> PhantomSpec {
    PhantomSpec {
        n_cases,
        volume_size: [20, 20, 20],
        voxel_mm: 3.0,
        slices_per_case: 3,
        slice_size: (24, 24),
        pixel_mm: 2.0,
        semi_axes_mm: [20.0, 16.0, 14.0],
        seed: 11,
    }
}

fn start(root: &Path, n_cases: usize) -> RunningServer {
    let ds = make_phantom(&spec(n_cases), &[], root).unwrap();
    let session = Session::open(Dataset::from_config_file(&ds.config_path).unwrap()).unwrap();
    spawn(AppState::new(Some(session), None)).unwrap()
}

fn get_json(c: &Client, s: &RunningServer, path: &str) -> (StatusCode, Value) {
    let r = c.get(s.url(path)).send().unwrap();
    (r.status(), r.json().unwrap())
}

fn post_json(c: &Client, s: &RunningServer, path: &str, body: Value) -> (StatusCode, Value) {
    let r = c.post(s.url(path)).json(&body).send().unwrap();
    (r.status(), r.json().unwrap())
}

fn slice_param(state: &Value, idx: usize, name: &str) -> f64 {
    state["slices"][idx]["params"][name].as_f64().unwrap()
}

#[test]
fn translate_action_updates_state() {
    let dir = tempfile::tempdir().unwrap();
    let s = start(dir.path(), 1);
    let c = Client::new();
    let (_, before) = get_json(&c, &s, "/api/state");
    let (st, out) = post_json(
        &c,
        &s,
        "/api/action",
        json!({"type": "translate", "frame": "patient", "axis": "z", "amount": 2.0}),
    );
    assert_eq!(st, StatusCode::OK);
    assert_eq!(out["changed"], json!(["s01"]));
    assert!(out["metric"]["value"].is_f64());
    assert_eq!(out["metric"]["is_best"], json!(false));
    let (_, after) = get_json(&c, &s, "/api/state");
    let d = slice_param(&after, 0, "tz") - slice_param(&before, 0, "tz");
    assert!((d - 2.0).abs() < 1e-12);
    assert_eq!(after["dirty"], json!(true));
    assert_eq!(slice_param(&after, 1, "tz"), 0.0);
}

#[test]
fn case_navigation_and_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let s = start(dir.path(), 2);
    let c = Client::new();
    let (_, cases) = get_json(&c, &s, "/api/cases");
    assert_eq!(cases["case_ids"], json!(["case001", "case002"]));
    let (st, body) = post_json(&c, &s, "/api/case/shift", json!({"direction": "prev"}));
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(body["code"], "at_boundary");
    post_json(&c, &s, "/api/action", json!({"type": "rotate", "frame": "slice", "axis": "n"}));
    let (st, body) = post_json(&c, &s, "/api/case/shift", json!({"direction": "next"}));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["case_id"], "case002");
    assert!(dir.path().join("outputs/case001/transforms.csv").is_file());
    let (st, body) = post_json(&c, &s, "/api/case/shift", json!({"direction": "next"}));
    assert_eq!((st, body["code"].as_str()), (StatusCode::CONFLICT, Some("at_boundary")));
    let (st, body) = post_json(&c, &s, "/api/case/select", json!({"case_id": "nope"}));
    assert_eq!((st, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (st, body) = post_json(&c, &s, "/api/case/select", json!({"case_id": "case001"}));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["slices"][0]["history_len"], 2);
}

#[test]
fn plots_are_png() {
    let dir = tempfile::tempdir().unwrap();
    let s = start(dir.path(), 1);
    let c = Client::new();
    for path in [
        "/api/plot/main",
        "/api/plot/main?slice_id=s02&label=resultant&format=contour",
        "/api/plot/main?label=resampled&format=none",
        "/api/plot/support?type=checkerboard",
        "/api/plot/support?type=resampled&slice_id=s03",
        "/api/plot/texture?slice_id=s01",
    ] {
        let r = c.get(s.url(path)).send().unwrap();
        assert_eq!(r.status(), StatusCode::OK, "{path}");
        assert_eq!(r.headers()["content-type"], "image/png");
        assert!(r.bytes().unwrap().starts_with(&PNG_SIGNATURE));
    }
    let (st, body) = get_json(&c, &s, "/api/plot/main?slice_id=zz");
    assert_eq!((st, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (st, body) = get_json(&c, &s, "/api/plot/main?format=sparkles");
    assert_eq!((st, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("malformed_body")));
}

#[test]
fn scene_textures_resolve() {
    let dir = tempfile::tempdir().unwrap();
    let s = start(dir.path(), 1);
    let c = Client::new();
    post_json(&c, &s, "/api/mode", json!({"mode": "macro"}));
    let (_, scene) = get_json(&c, &s, "/api/scene");
    assert_eq!(scene["bbox"]["corners"].as_array().unwrap().len(), 8);
    assert_eq!(scene["cameras"].as_array().unwrap().len(), 3);
    let slices = scene["slices"].as_array().unwrap();
    assert_eq!(slices.len(), 3);
    for sl in slices {
        assert_eq!(sl["corners"].as_array().unwrap().len(), 4);
        let r = c.get(s.url(sl["texture"].as_str().unwrap())).send().unwrap();
        assert_eq!(r.status(), StatusCode::OK);
    }
    post_json(&c, &s, "/api/mode", json!({"mode": "micro"}));
    let (_, scene) = get_json(&c, &s, "/api/scene");
    assert_eq!(scene["slices"].as_array().unwrap().len(), 1);
}

#[test]
fn metric_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let s = start(dir.path(), 1);
    let c = Client::new();
    let (_, nmi) = get_json(&c, &s, "/api/metric");
    assert_eq!(nmi["kind"], "nmi");
    assert!((nmi["value"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    let (_, sad) = get_json(&c, &s, "/api/metric?kind=sad");
    assert_eq!(sad["value"].as_f64(), Some(0.0));
    assert_eq!(sad["higher_is_better"], json!(false));
    let (st, body) = post_json(&c, &s, "/api/metric", json!({"kind": "sad", "bins": 32}));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["kind"], "sad");
    let (_, state) = get_json(&c, &s, "/api/state");
    assert_eq!((state["metric_kind"].as_str(), state["metric_bins"].as_u64()), (Some("sad"), Some(32)));
    let (st, _) = post_json(&c, &s, "/api/metric", json!({"kind": "nmi", "bins": 1}));
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[test]
fn history_actions_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let s = start(dir.path(), 1);
    let c = Client::new();
    let (st, body) = post_json(&c, &s, "/api/action", json!({"type": "undo"}));
    assert_eq!((st, body["code"].as_str()), (StatusCode::CONFLICT, Some("at_boundary")));
    post_json(&c, &s, "/api/action", json!({"type": "translate", "frame": "slice", "axis": "u", "amount": 3.0}));
    let (st, body) = post_json(&c, &s, "/api/action", json!({"type": "optimize"}));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["state"]["slices"][0]["cursor"], 0);
    assert_eq!(body["metric"]["is_best"], json!(true));
    let (st, body) = post_json(&c, &s, "/api/action", json!({"type": "reset"}));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["state"]["slices"][0]["history_len"], 2);
    let (st, body) = post_json(&c, &s, "/api/action", json!({"type": "spin"}));
    assert_eq!((st, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("malformed_body")));
}

#[test]
fn settings_endpoints_validate() {
    let dir = tempfile::tempdir().unwrap();
    let s = start(dir.path(), 1);
    let c = Client::new();
    let (st, body) = post_json(&c, &s, "/api/steps", json!({"translation_mm": 2.5, "rotation_deg": 0.5}));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["step_sizes"]["translation_mm"], 2.5);
    let (st, body) = post_json(&c, &s, "/api/steps", json!({"translation_mm": 20.0, "rotation_deg": 0.5}));
    assert_eq!((st, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_parameter")));
    let (st, body) = post_json(&c, &s, "/api/style", json!({"label_opacity": 0.8, "contour_width": 3}));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["styles"]["label_opacity"], 0.8);
    let (st, _) = post_json(&c, &s, "/api/style", json!({"shininess": 1}));
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, body) = post_json(&c, &s, "/api/slice/select", json!({"slice_id": "s03"}));
    assert_eq!((st, body["selected"].as_str()), (StatusCode::OK, Some("s03")));
    let r = c.post(s.url("/api/mode")).header("content-type", "application/json").body("{").send().unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    assert_eq!(r.json::<Value>().unwrap()["code"], "malformed_body");
}

#[test]
fn save_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let s = start(dir.path(), 1);
    let c = Client::new();
    let (st, report) = post_json(&c, &s, "/api/save", json!({}));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(report["labels"].as_array().unwrap().len(), 3);
    std::fs::remove_dir_all(dir.path().join("outputs")).unwrap();
    std::fs::write(dir.path().join("outputs"), b"").unwrap();
    post_json(&c, &s, "/api/action", json!({"type": "translate", "frame": "patient", "axis": "x"}));
    let (st, body) = post_json(&c, &s, "/api/save", json!({}));
    assert_eq!((st, body["code"].as_str()), (StatusCode::INTERNAL_SERVER_ERROR, Some("io_error")));
    let (_, state) = get_json(&c, &s, "/api/state");
    assert_eq!(state["dirty"], json!(true));
}

#[test]
fn config_upload_and_no_dataset() {
    let dir = tempfile::tempdir().unwrap();
    make_phantom(&spec(1), &[], dir.path()).unwrap();
    let s = spawn(AppState::new(None, None)).unwrap();
    let c = Client::new();
    let (st, body) = get_json(&c, &s, "/api/state");
    assert_eq!((st, body["code"].as_str()), (StatusCode::CONFLICT, Some("no_dataset")));
    let r = c.post(s.url("/api/config")).body("{not json").send().unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    assert_eq!(r.json::<Value>().unwrap()["code"], "malformed_config");
    let mut cfg = phantom_config();
    cfg["dataset_root"] = json!(dir.path().to_str().unwrap());
    let r = c.post(s.url("/api/config")).body(cfg.to_string()).send().unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.json::<Value>().unwrap()["case_id"], "case001");
    let (st, _) = get_json(&c, &s, "/api/state");
    assert_eq!(st, StatusCode::OK);
}

#[test]
fn landing_page_without_ui() {
    let s = spawn(AppState::new(None, None)).unwrap();
    let c = Client::new();
    let r = c.get(s.url("/")).send().unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert!(r.text().unwrap().contains("/api/action"));
    assert_eq!(c.get(s.url("/missing.js")).send().unwrap().status(), StatusCode::NOT_FOUND);
    let (st, body) = get_json(&c, &s, "/api/nothing");
    assert_eq!((st, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
}

#[test]
fn static_ui_is_served() {
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>client</html>").unwrap();
    std::fs::write(ui.path().join("app.js"), "console.log(1)").unwrap();
    let s = spawn(AppState::new(None, Some(ui.path().to_path_buf()))).unwrap();
    let c = Client::new();
    let r = c.get(s.url("/")).send().unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.text().unwrap(), "<html>client</html>");
    let r = c.get(s.url("/app.js")).send().unwrap();
    assert!(r.headers()["content-type"].to_str().unwrap().contains("javascript"));
    assert_eq!(c.get(s.url("/missing.js")).send().unwrap().status(), StatusCode::NOT_FOUND);
}

#[test]
fn concurrent_actions_all_apply() {
    let dir = tempfile::tempdir().unwrap();
    let s = start(dir.path(), 1);
    let url = s.url("/api/action");
    let threads: Vec<_> = (0..4)
        .map(|_| {
            let url = url.clone();
            std::thread::spawn(move || {
                let c = Client::new();
                for _ in 0..5 {
                    let r = c
                        .post(&url)
                        .json(&json!({"type": "translate", "frame": "patient", "axis": "y", "amount": 0.5}))
                        .send()
                        .unwrap();
                    assert_eq!(r.status(), StatusCode::OK);
                    // Reads interleave with the writes.
                    let _ = Client::new().get(url.replace("/api/action", "/api/plot/main")).send().unwrap();
                }
            })
        })
        .collect();
    for t in threads {
        t.join().unwrap();
    }
    let (_, state) = get_json(&Client::new(), &s, "/api/state");
    assert_eq!(state["slices"][0]["history_len"], 21);
    assert!((slice_param(&state, 0, "ty") - 10.0).abs() < 1e-9);
}
