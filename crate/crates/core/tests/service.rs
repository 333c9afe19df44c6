mod common;

use std::time::Duration;

use common::Rig;
use serde_json::Value;
use sfc_core::service::{ServeError, Service};
use sfc_core::sim::SimHost;
use sfc_core::sim::SimWorld;

async fn get(url: &str) -> (u16, String) {
    let r = reqwest::get(url).await.expect("request");
    (r.status().as_u16(), r.text().await.unwrap())
}

async fn get_json(url: &str) -> (u16, Value) {
    let (s, t) = get(url).await;
    (s, serde_json::from_str(&t).unwrap_or_else(|e| panic!("{url}: {e}: {t}")))
}

/// A valid config whose one reader never answers.
fn offline_config() -> sfc_core::service::ServiceConfig {
    common::external_config(vec![sfc_core::service::ReaderLink {
        data_point_id: "DP7".into(),
        work_center_id: "WC-EXIT".into(),
        reader_endpoint: format!("127.0.0.1:{}", free_port()),
    }])
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn orders_answer_quickly() {
    let rig = Rig::start(common::demo3_scenario(false), Some(common::demo3_dispatch())).await;
    let started = std::time::Instant::now();
    let (status, v) = get_json(&format!("{}/api/orders", rig.base())).await;
    assert!(started.elapsed() < Duration::from_secs(2));
    assert_eq!(status, 200);
    assert_eq!(v["orders"].as_array().unwrap().len(), 3);
    assert!(sfc_core::erp::shape::conforms(&v, &common::shape("orders")).is_ok());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn serves_the_station_ui() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<!doctype html><title>station</title>\n").unwrap();
    let ui = dir.path().to_path_buf();
    let rig = Rig::start_with(common::demo3_scenario(false), None, move |mut c| {
        c.ui_dir = Some(ui);
        c
    })
    .await;
    let (status, body) = get(&format!("{}/ui/index.html", rig.base())).await;
    assert_eq!((status, body.contains("station")), (200, true));
    let (status, _) = get(&format!("{}/ui/", rig.base())).await;
    assert_eq!(status, 200, "directory index");
    // the API stays reachable next to the static tree
    assert_eq!(get(&format!("{}/api/datapoints", rig.base())).await.0, 200);
}

async fn next_line(resp: &mut reqwest::Response, buf: &mut Vec<u8>) -> Value {
    loop {
        if let Some(pos) = buf.iter().position(|&b| b == b'\n') {
            let line: Vec<u8> = buf.drain(..=pos).collect();
            return serde_json::from_slice(&line).unwrap();
        }
        let chunk = tokio::time::timeout(Duration::from_secs(5), resp.chunk())
            .await
            .expect("event within 5 s")
            .unwrap()
            .expect("stream still open");
        buf.extend_from_slice(&chunk);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn events_stream_backlog_then_live() {
    let mut rig = Rig::start(common::demo3_scenario(false), Some(common::demo3_dispatch())).await;
    rig.step(1).await;
    let backlog = rig.service.handle().event_count();
    assert!(backlog > 0, "first cycle puts T-1 in the DP2 buffer");

    let mut resp = reqwest::get(format!("{}/api/events", rig.base())).await.unwrap();
    assert_eq!(resp.status().as_u16(), 200);
    assert_eq!(resp.headers()["content-type"], sfc_core::erp::CONTENT_NDJSON);
    let mut buf = Vec::new();
    let mut seen = Vec::new();
    for _ in 0..backlog {
        seen.push(next_line(&mut resp, &mut buf).await);
    }
    assert_eq!(seen[0]["kind"], "Arrived");

    // T-3 shows up at the 1-minute mark
    while rig.service.handle().event_count() == backlog {
        rig.step(20).await;
    }
    let live = next_line(&mut resp, &mut buf).await;
    assert!(sfc_core::erp::shape::conforms(&live, &common::shape("event")).is_ok(), "{live}");
    assert_eq!(live["ticket_id"], 3);

    // a cursor skips what the client already has
    let mut resumed = reqwest::get(format!("{}/api/events?since={backlog}", rig.base())).await.unwrap();
    let mut buf2 = Vec::new();
    assert_eq!(next_line(&mut resumed, &mut buf2).await, live);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn controllers_wait_for_late_readers() {
    let mut scenario = common::demo3_scenario(false);
    let ports: Vec<u16> = scenario.data_points.iter().map(|_| free_port()).collect();
    scenario.data_points = std::mem::take(&mut scenario.data_points)
        .into_iter()
        .zip(&ports)
        .map(|(dp, p)| dp.with_endpoint(format!("127.0.0.1:{p}")))
        .collect();
    let links = scenario
        .data_points
        .iter()
        .map(|d| sfc_core::service::ReaderLink {
            data_point_id: d.data_point_id().into(),
            work_center_id: d.work_center_id().into(),
            reader_endpoint: d.listen_endpoint().into(),
        })
        .collect();
    let service = Service::start(common::external_config(links)).await.expect("starts with readers down");
    let handle = service.handle().clone();
    let stats = handle.stats();

    let deadline = tokio::time::Instant::now() + Duration::from_secs(5);
    while stats.connect_attempts() < 3 * ports.len() as u64 {
        assert!(tokio::time::Instant::now() < deadline, "controllers stopped retrying");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    assert_eq!(stats.sessions(), 0);
    let (status, _) = get(&format!("http://{}/api/orders", service.api_addr())).await;
    assert_eq!(status, 200, "API is up while readers are not");

    let host = SimHost::start(SimWorld::new(scenario), None).await.unwrap();
    assert!(host.hub().wait_started(ports.len(), Duration::from_secs(5)).await);
    let deadline = tokio::time::Instant::now() + Duration::from_secs(5);
    while stats.sessions() < ports.len() {
        assert!(tokio::time::Instant::now() < deadline);
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    service.shutdown();
}

#[tokio::test]
async fn bad_config_binds_nothing() {
    let port = free_port();
    let mut cfg = offline_config();
    cfg.api_listen = format!("127.0.0.1:{port}");
    cfg.tick_interval_ms = 0;
    let err = Service::start(cfg).await.err().expect("rejected");
    assert!(matches!(err, ServeError::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
    std::net::TcpListener::bind(("127.0.0.1", port)).expect("port left free");
}

#[tokio::test]
async fn port_in_use_is_a_bind_error() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let mut cfg = offline_config();
    cfg.api_listen = taken.local_addr().unwrap().to_string();
    let err = Service::start(cfg).await.err().expect("bind fails");
    assert!(matches!(err, ServeError::Bind { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[tokio::test]
async fn malformed_dispatch_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dispatch.xml");
    std::fs::write(&path, "<DispatchList>").unwrap();
    let mut cfg = offline_config();
    cfg.dispatch_file = Some(path);
    let err = Service::start(cfg).await.err().expect("rejected");
    assert!(matches!(err, ServeError::Dispatch(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
}
