mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn sfc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfc")).args(args).env("SFC_LOG_LEVEL", "warn").output().expect("spawn sfc")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run(scenario: &Path, report: &Path, extra: &[&str]) -> Output {
    let dispatch = common::fixture("demo3/dispatch.xml");
    let mut args = vec!["scenario", "run", path(scenario), "--dispatch", path(&dispatch), "--report", path(report)];
    args.extend_from_slice(extra);
    sfc(&args)
}

#[test]
fn scenario_run_passes_demo3() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let o = run(&common::fixture("demo3/scenario.json"), &report, &[]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["verdict"], "pass");
    assert_eq!(v["first_divergence"], Value::Null);
    assert_eq!(v["finished_goods"].as_array().unwrap().len(), 3);
    assert!(chrono::DateTime::parse_from_rfc3339(v["generated_at"].as_str().unwrap()).is_ok());
}

#[test]
fn noisy_run_uses_the_skeleton_rule() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let o = run(&common::fixture("demo3/scenario.json"), &report, &["--seed", "5", "--drop", "0.1", "--dup", "0.2"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["match_rule"], "skeleton");
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

#[test]
fn unregistered_ticket_fails_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc: Value =
        serde_json::from_str(&std::fs::read_to_string(common::fixture("demo3/scenario.json")).unwrap()).unwrap();
    doc["tags"].as_array_mut().unwrap().push(json!({
        "tag_ref": "T-9", "initial_xy": [10, -5], "kind": "build_ticket", "order_kind": "customer",
        "order_id": 1001, "product_id": 77, "route_id": 1, "ticket_id": 9
    }));
    let t0 = common::T0;
    doc["script"].as_array_mut().unwrap().push(json!({
        "tag": "T-9", "data_point": "DP2",
        "arrive_time_us": t0 + 30 * common::MIN, "depart_time_us": t0 + 32 * common::MIN
    }));
    let scenario = write_json(dir.path(), "stray.json", &doc);
    let report = dir.path().join("report.json");
    let o = run(&scenario, &report, &[]);
    assert_eq!(code(&o), 1, "{}", text(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["verdict"], "fail");
    let d = &v["first_divergence"];
    assert_eq!(d["ticket_id"], 9, "{d}");
    let actual = d["actual"].as_str().unwrap();
    assert!(actual.starts_with("(OutOfRoute,") && actual.contains("DP2"), "{actual}");
    assert_eq!(d["expected"], Value::Null);
    let stray: Vec<&Value> = v["transitions"].as_array().unwrap().iter().filter(|t| t["ticket_id"] == 9).collect();
    assert_eq!(stray.len(), 1, "one anomaly per episode");
    assert_eq!(stray[0]["detail"], sfc_core::engine::UNREGISTERED_TICKET);
}

#[test]
fn bad_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"data_points\": [").unwrap();
    let o = run(&broken, &report, &[]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    assert!(!report.exists());

    let o = run(&common::fixture("demo3/scenario.json"), &report, &["--drop", "1.5"]);
    assert_eq!(code(&o), 2, "{}", text(&o));

    let o = sfc(&["serve", "--config", path(&broken)]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    assert!(text(&o).contains("line"), "{}", text(&o));
}

#[test]
fn serve_reports_a_taken_port() {
    let dir = tempfile::tempdir().unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let mut cfg: Value =
        serde_json::from_str(&std::fs::read_to_string(common::fixture("demo3/service.json")).unwrap()).unwrap();
    cfg["api_listen"] = taken.local_addr().unwrap().to_string().into();
    cfg["log_path"] = Value::Null;
    cfg["dispatch_file"] = Value::Null;
    let p = write_json(dir.path(), "service.json", &cfg);
    let o = sfc(&["serve", "--config", path(&p)]);
    assert_eq!(code(&o), 3, "{}", text(&o));
}

#[test]
fn order_status_against_a_live_service() {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
    let service = rt.block_on(async {
        let mut cfg = common::external_config(vec![sfc_core::service::ReaderLink {
            data_point_id: "DP7".into(),
            work_center_id: "WC-EXIT".into(),
            reader_endpoint: "127.0.0.1:9".into(),
        }]);
        cfg.reconnect_initial_ms = 1000;
        cfg.reconnect_max_ms = 1000;
        let s = sfc_core::service::Service::start(cfg).await.unwrap();
        use sfc_core::erp::EngineAccess;
        s.handle().import_dispatch(common::demo3_dispatch()).await.unwrap();
        s
    });
    let api = format!("http://{}", service.api_addr());

    let o = sfc(&["order-status", "SO-1001", "--api", &api]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2, "{out}");
    assert!(lines[0].starts_with("SO-1001 P-77 qty 1 route R-1"), "{out}");
    assert!(lines[1].starts_with("T-1  step 0/4"), "{out}");

    let o = sfc(&["order-status", "SO-4040", "--api", &api]);
    assert_eq!(code(&o), 4, "{}", text(&o));

    service.shutdown();
    drop(rt);
    let o = sfc(&["order-status", "SO-1001", "--api", &api]);
    assert_eq!(code(&o), 5, "{}", text(&o));
}
