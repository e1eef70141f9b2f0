use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use proptest::prelude::*;
use serde_json::{json, Value};
use tower::ServiceExt;

use feudalnav_core::demos::DemoTrajectory;
use feudalnav_core::world::procgen;
use feudalnav_core::{FloorPlan, Pose};
use feudalnav_service::{router, AppState, ErrorBody, STRIP_HEIGHT};

fn plans() -> Vec<FloorPlan> {
    let mut p = procgen::suite(2, 300);
    p.push(FloorPlan::empty_room("open", 12.0, 12.0));
    p
}

fn app(dir: &std::path::Path) -> Router {
    router(AppState::new(plans(), dir.to_path_buf()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn create(app: &Router, plan: &str, seed: u64) -> String {
    let (s, v) = call(app, "POST", "/sessions", Some(json!({"plan": plan, "seed": seed}))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["step"], 0);
    v["id"].as_str().unwrap().to_string()
}

fn pose(v: &Value) -> (f64, f64, f64) {
    (v["x"].as_f64().unwrap(), v["y"].as_f64().unwrap(), v["heading_deg"].as_f64().unwrap())
}

fn assert_error(status: StatusCode, v: &Value, expected: StatusCode, code: &str) {
    assert_eq!(status, expected, "{v}");
    let body: ErrorBody = serde_json::from_value(v.clone()).unwrap();
    assert_eq!(body.code, code);
    assert!(!body.message.is_empty());
}

#[tokio::test]
async fn scripted_forty_click_session_replays_from_its_demo_file() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, "proc-0300", 3).await;
    let mut live = Vec::new();
    for k in 0..40u64 {
        let ray = (k * 37 + 11) % 128;
        let (s, v) = call(&app, "POST", &format!("/sessions/{id}/click"), Some(json!({"ray": ray}))).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        assert_eq!(v["step"], k + 1);
        live.push(pose(&v["pose"]));
    }
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/finalize"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["frames"], 41);
    let demo = DemoTrajectory::load(std::path::Path::new(v["path"].as_str().unwrap())).unwrap();
    assert_eq!(demo.frames.len(), 41);
    for (k, (x, y, h)) in live.iter().enumerate() {
        let p = demo.frames[k + 1].pose;
        assert!((p.x - x).abs() <= 1e-9 && (p.y - y).abs() <= 1e-9, "frame {}", k + 1);
        assert!((p.heading.degrees() - h).abs() <= 1e-9);
    }
    for (k, f) in demo.frames.iter().take(40).enumerate() {
        assert_eq!(f.click as u64, (k as u64 * 37 + 11) % 128);
    }

    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/finalize"), None).await;
    assert_error(s, &v, StatusCode::CONFLICT, "conflict");
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/click"), Some(json!({"ray": 3}))).await;
    assert_error(s, &v, StatusCode::CONFLICT, "conflict");
}

#[tokio::test]
async fn center_click_moves_forward_and_ray_zero_turns_left() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, "open", 0).await;
    let (_, before) = call(&app, "GET", &format!("/sessions/{id}/view"), None).await;
    let (x0, y0, _) = pose(&before["pose"]);
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/click"), Some(json!({"ray": 64}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["action"], "MoveForward");
    let (x1, y1, _) = pose(&v["pose"]);
    assert!((((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt() - 0.25).abs() < 1e-12);

    let (_, v) = call(&app, "POST", &format!("/sessions/{id}/click"), Some(json!({"ray": 0}))).await;
    assert_eq!(v["action"], "TurnLeft");
    assert_eq!(v["step"], 2);
}

#[tokio::test]
async fn view_carries_decodable_images() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, "proc-0301", 1).await;
    let (s, v) = call(&app, "GET", &format!("/sessions/{id}/view"), None).await;
    assert_eq!(s, StatusCode::OK);
    let b64 = base64::engine::general_purpose::STANDARD;
    let strip = b64.decode(v["strip"].as_str().unwrap()).unwrap();
    let header = format!("P6\n128 {STRIP_HEIGHT}\n255\n");
    assert!(strip.starts_with(header.as_bytes()));
    assert_eq!(strip.len(), header.len() + 128 * STRIP_HEIGHT * 3);
    let mpm = b64.decode(v["mpm"].as_str().unwrap()).unwrap();
    assert!(mpm.starts_with(b"P5\n64 64\n255\n"));
    // the initial observation is already stamped
    assert!(mpm[b"P5\n64 64\n255\n".len()..].iter().any(|&p| p > 0));
}

#[tokio::test]
async fn errors_use_code_and_message() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (s, v) = call(&app, "POST", "/sessions", Some(json!({"plan": "nowhere"}))).await;
    assert_error(s, &v, StatusCode::NOT_FOUND, "not_found");
    let (s, v) = call(&app, "GET", "/sessions/deadbeef/view", None).await;
    assert_error(s, &v, StatusCode::NOT_FOUND, "not_found");
    let (s, v) = call(&app, "POST", "/sessions", Some(json!({"plan": "open", "mode": "agent_autopilot"}))).await;
    assert_error(s, &v, StatusCode::CONFLICT, "conflict");

    let id = create(&app, "open", 0).await;
    assert_eq!(id.len(), 32);
    for bad in [json!({"ray": 128}), json!({"ray": -1})] {
        let (s, v) = call(&app, "POST", &format!("/sessions/{id}/click"), Some(bad)).await;
        assert_error(s, &v, StatusCode::BAD_REQUEST, "bad_request");
    }
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/finalize"), None).await;
    assert_error(s, &v, StatusCode::CONFLICT, "conflict");
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/step"), None).await;
    assert_error(s, &v, StatusCode::CONFLICT, "conflict");
}

#[tokio::test]
async fn same_seed_gives_same_initial_view() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let a = create(&app, "proc-0300", 9).await;
    let b = create(&app, "proc-0300", 9).await;
    assert_ne!(a, b);
    let (_, va) = call(&app, "GET", &format!("/sessions/{a}/view"), None).await;
    let (_, vb) = call(&app, "GET", &format!("/sessions/{b}/view"), None).await;
    assert_eq!(va["strip"], vb["strip"]);
    assert_eq!(va["pose"], vb["pose"]);
}

fn replay_alone(plan: &FloorPlan, seed: u64, clicks: &[usize]) -> Vec<(f64, f64, f64)> {
    // Reference: the same clicks against a fresh single-session server.
    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
    let dir = tempfile::tempdir().unwrap();
    rt.block_on(async {
        let app = router(AppState::new(vec![plan.clone()], dir.path().to_path_buf()));
        let id = create(&app, &plan.id, seed).await;
        let mut out = Vec::new();
        for &r in clicks {
            let (_, v) = call(&app, "POST", &format!("/sessions/{id}/click"), Some(json!({"ray": r}))).await;
            out.push(pose(&v["pose"]));
        }
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn interleaved_sessions_do_not_interfere(
        a in proptest::collection::vec(0usize..128, 1..15),
        b in proptest::collection::vec(0usize..128, 1..15),
        order in proptest::collection::vec(any::<bool>(), 30),
    ) {
        let plan = procgen::suite(1, 300).remove(0);
        let expect_a = replay_alone(&plan, 1, &a);
        let expect_b = replay_alone(&plan, 2, &b);
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (got_a, got_b) = rt.block_on(async {
            let app = router(AppState::new(vec![plan.clone()], dir.path().to_path_buf()));
            let ia = create(&app, &plan.id, 1).await;
            let ib = create(&app, &plan.id, 2).await;
            let (mut ga, mut gb) = (Vec::new(), Vec::new());
            let mut turn = order.iter().cycle();
            while ga.len() < a.len() || gb.len() < b.len() {
                let pick_a = gb.len() == b.len() || (ga.len() < a.len() && *turn.next().unwrap());
                let (id, clicks, got) = if pick_a { (&ia, &a, &mut ga) } else { (&ib, &b, &mut gb) };
                let (_, v) = call(&app, "POST", &format!("/sessions/{id}/click"), Some(json!({"ray": clicks[got.len()]}))).await;
                assert_eq!(v["step"].as_u64().unwrap(), got.len() as u64 + 1);
                got.push(pose(&v["pose"]));
            }
            (ga, gb)
        });
        prop_assert_eq!(got_a, expect_a);
        prop_assert_eq!(got_b, expect_b);
    }
}

#[test]
fn start_pose_sits_on_the_plan_seed() {
    let plan = FloorPlan::empty_room("open", 12.0, 12.0);
    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
    let dir = tempfile::tempdir().unwrap();
    rt.block_on(async {
        let app = router(AppState::new(vec![plan.clone()], dir.path().to_path_buf()));
        let id = create(&app, "open", 2).await;
        let (_, v) = call(&app, "GET", &format!("/sessions/{id}/view"), None).await;
        let (x, y, h) = pose(&v["pose"]);
        let expected = Pose::new(plan.seed.x, plan.seed.y, 30f64.to_radians());
        assert_eq!((x, y), (expected.x, expected.y));
        assert!((h - 30.0).abs() < 1e-9);
    });
}

#[tokio::test]
async fn autopilot_session_steps_with_a_trained_waynet() {
    use feudalnav_core::pipeline::{collect_corpus, train};
    use feudalnav_core::worker::WorkerKind;
    use feudalnav_core::{Config, InputVariant, MapVariant};
    use feudalnav_service::Autopilot;

    let cfg = Config {
        seed: 3,
        train_plans: 2,
        demos_per_plan: 1,
        demo_frames: 60,
        encoder_epochs: 1,
        imitator_epochs: 10,
        isomap_points: 60,
        waynet_epochs: 1,
        worker_epochs: 1,
        ..Config::default()
    };
    let demos = collect_corpus(&cfg).unwrap();
    let mut models = train(&cfg, &demos, &[(MapVariant::H, InputVariant::RgbdM, WorkerKind::Det)]).unwrap();
    let waynet = models.waynets.remove(&(InputVariant::RgbdM, MapVariant::H)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::with_models(plans(), dir.path().to_path_buf(), cfg.sensor(), models.hlm, Some(Autopilot { waynet })));

    let (s, v) = call(&app, "POST", "/sessions", Some(json!({"plan": "proc-0300", "seed": 1, "mode": "agent_autopilot"}))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let id = v["id"].as_str().unwrap().to_string();

    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/click"), Some(json!({"ray": 64}))).await;
    assert_error(s, &v, StatusCode::CONFLICT, "conflict");

    let plan = plans().into_iter().find(|p| p.id == "proc-0300").unwrap();
    let (_, v) = call(&app, "GET", &format!("/sessions/{id}/view"), None).await;
    let (x, y, h) = pose(&v["pose"]);
    let mut prev = Pose::new(x, y, h.to_radians());
    for k in 1..=12u64 {
        let (s, v) = call(&app, "POST", &format!("/sessions/{id}/step"), None).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        assert_eq!(v["step"], k);
        assert!(v["ray"].as_u64().unwrap() < 128);
        let action: feudalnav_core::Action = serde_json::from_value(v["action"].clone()).unwrap();
        let expected = feudalnav_core::world::step(&plan, &prev, action);
        let now = pose(&v["pose"]);
        assert!((now.0 - expected.x).abs() < 1e-9 && (now.1 - expected.y).abs() < 1e-9, "step {k}");
        assert!(plan.reachable(expected.position()), "step {k} left free space");
        prev = expected;
    }
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/finalize"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let demo = DemoTrajectory::load(std::path::Path::new(v["path"].as_str().unwrap())).unwrap();
    assert_eq!(demo.frames.len(), 13);
}
