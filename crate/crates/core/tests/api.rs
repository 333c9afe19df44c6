mod common;

use std::sync::Mutex;

use common::{demo3_engine_at, MIN, SEC, T0};
use serde_json::{json, Value};
use sfc_core::engine::Engine;
use sfc_core::erp::{handle, shape::conforms, ApiResponse, CONTENT_JSON, CONTENT_NDJSON, CONTENT_XML};

fn call(e: &Mutex<Engine>, method: &str, target: &str, body: &[u8]) -> ApiResponse {
    futures_lite(handle(e, method, target, body))
}

// `handle` never awaits anything that needs a reactor for Mutex<Engine>.
fn futures_lite<F: std::future::Future>(f: F) -> F::Output {
    tokio::runtime::Builder::new_current_thread().build().unwrap().block_on(f)
}

fn json_of(r: &ApiResponse) -> Value {
    assert_eq!(r.content_type, CONTENT_JSON);
    r.body_json().expect("json body")
}

fn assert_shape(v: &Value, name: &str) {
    if let Err(e) = conforms(v, &common::shape(name)) {
        panic!("{name}: {e}\n{v:#}");
    }
}

fn engine_at(at: u64) -> Mutex<Engine> {
    Mutex::new(demo3_engine_at(at))
}

fn empty() -> Mutex<Engine> {
    Mutex::new(Engine::new(common::demo3_engine_config()))
}

#[test]
fn dispatch_push_and_echo() {
    let e = empty();
    let r = call(&e, "GET", "/api/dispatch", b"");
    assert_eq!(r.status, 404);
    assert_shape(&json_of(&r), "error");

    let r = call(&e, "POST", "/api/dispatch", &common::demo3_dispatch_xml());
    assert_eq!(r.status, 200);
    let v = json_of(&r);
    assert_shape(&v, "dispatch_summary");
    assert_eq!(v["summary"], json!({"orders": 3, "tickets": 3, "routes": 2}));

    let r = call(&e, "GET", "/api/dispatch", b"");
    assert_eq!((r.status, r.content_type), (200, CONTENT_XML));
    let echoed = sfc_core::erp::parse_dispatch_xml(&r.body).unwrap();
    assert_eq!(echoed, common::demo3_dispatch());

    // the same list again is accepted unchanged
    assert_eq!(call(&e, "POST", "/api/dispatch", &common::demo3_dispatch_xml()).status, 200);
}

#[test]
fn dispatch_errors_are_typed() {
    let e = empty();
    let xml = String::from_utf8(common::demo3_dispatch_xml()).unwrap();

    let r = call(&e, "POST", "/api/dispatch", xml.replace("</Route>\n  <Route", "</Rout>\n  <Route").as_bytes());
    let v = json_of(&r);
    assert_eq!((r.status, v["kind"].as_str()), (400, Some("XmlSyntaxError")));
    assert!(v["line"].as_u64().unwrap() > 1);
    assert_shape(&v, "error");

    let r = call(&e, "POST", "/api/dispatch", xml.replacen(" qty=\"1\"", "", 1).as_bytes());
    let v = json_of(&r);
    assert_eq!((r.status, v["kind"].as_str()), (400, Some("SchemaError")));
    assert_eq!(v["path"], "/DispatchList/Order[@id='SO-1001']/Product");

    let r = call(&e, "POST", "/api/dispatch", xml.replacen("<RouteRef id=\"R-2\"/>", "<RouteRef id=\"R-9\"/>", 1).as_bytes());
    let v = json_of(&r);
    assert_eq!((r.status, v["kind"].as_str()), (400, Some("SemanticError")));
    assert!(v["path"].as_str().unwrap().contains("SO-1002"), "{v}");
    assert!(v["error"].as_str().unwrap().contains("R-9"));
}

#[test]
fn reimport_changing_an_in_flight_ticket_conflicts() {
    let e = engine_at(T0 + 30 * SEC);
    let xml = String::from_utf8(common::demo3_dispatch_xml()).unwrap();
    let changed = xml.replacen("<RouteRef id=\"R-1\"/>", "<RouteRef id=\"R-2\"/>", 1);
    let r = call(&e, "POST", "/api/dispatch", changed.as_bytes());
    let v = json_of(&r);
    assert_eq!(r.status, 409);
    assert_eq!(v["tickets"], json!(["T-1"]));
    assert_shape(&v, "error");
}

#[test]
fn orders_and_status_shapes() {
    let e = engine_at(T0 + 20 * MIN);
    let v = json_of(&call(&e, "GET", "/api/orders", b""));
    assert_shape(&v, "orders");
    let states: Vec<&str> = v["orders"].as_array().unwrap().iter().map(|o| o["state"].as_str().unwrap()).collect();
    assert_eq!(states, ["in progress"; 3]);

    for code in ["SO-1001", "SO-1002", "MTS-2001"] {
        let r = call(&e, "GET", &format!("/api/orders/{code}/status"), b"");
        assert_eq!(r.status, 200);
        let v = json_of(&r);
        assert_shape(&v, "order_status");
        assert_eq!(v["order"], code);
        assert_eq!(v["generated_at_us"], T0 + 20 * MIN);
    }
    let v = json_of(&call(&e, "GET", "/api/orders/SO-1001/status", b""));
    let t = &v["tickets"][0];
    assert_eq!((t["current_seq"].as_u64(), t["status"].as_str()), (Some(2), Some("in operation")));
    assert_eq!(t["current_work_center"], "WC-ASM");

    let r = call(&e, "GET", "/api/orders/SO-9999/status", b"");
    assert_eq!(r.status, 404);
    assert_shape(&json_of(&r), "error");
    // numeric id alone resolves when unambiguous
    assert_eq!(call(&e, "GET", "/api/orders/1002/status", b"").status, 200);
}

#[test]
fn data_points_and_buffers() {
    let e = engine_at(T0 + 30 * SEC);
    let v = json_of(&call(&e, "GET", "/api/datapoints", b""));
    assert_shape(&v, "datapoints");
    let dps = v["data_points"].as_array().unwrap();
    assert_eq!(dps.len(), 7);
    assert_eq!(dps.iter().filter(|d| d["exit_gate"] == true).count(), 1);

    let v = json_of(&call(&e, "GET", "/api/datapoints/DP2/buffer", b""));
    assert_shape(&v, "buffer");
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0]["ticket"].as_str(), rows[0]["delayed"].as_bool()), (Some("T-1"), Some(false)));

    let r = call(&e, "GET", "/api/datapoints/DP9/buffer", b"");
    assert_eq!(r.status, 404);

    // 90 s in, both R-1 tickets wait past the planned 1-minute start
    let e = engine_at(T0 + 90 * SEC);
    let v = json_of(&call(&e, "GET", "/api/datapoints/DP2/buffer", b""));
    let rows: Vec<(&str, bool)> =
        v["rows"].as_array().unwrap().iter().map(|r| (r["ticket"].as_str().unwrap(), r["delayed"] == true)).collect();
    assert_eq!(rows, [("T-1", true), ("T-3", true)]);
}

#[test]
fn alerts_cursor_and_snapshot() {
    let e = Mutex::new(Engine::new(common::demo3_engine_config()));
    {
        let mut eng = e.lock().unwrap();
        eng.import_dispatch(common::demo3_dispatch()).unwrap();
        // nobody shows up: every first step starts late
        eng.tick(T0 + 12 * MIN).unwrap();
        eng.detect_delays(T0 + 12 * MIN).unwrap();
    }
    let v = json_of(&call(&e, "GET", "/api/alerts", b""));
    assert_shape(&v, "alerts");
    assert_eq!(v["alerts"].as_array().unwrap().len(), 3);
    assert_eq!(v["next_cursor"], 3);
    let v = json_of(&call(&e, "GET", "/api/alerts?since=2", b""));
    assert_eq!(v["alerts"].as_array().unwrap().len(), 1);
    let v = json_of(&call(&e, "GET", "/api/alerts?since=3", b""));
    assert!(v["alerts"].as_array().unwrap().is_empty());
    assert_eq!(call(&e, "GET", "/api/alerts?since=x", b"").status, 400);

    let v = json_of(&call(&e, "GET", "/api/snapshot?since=1", b""));
    assert_shape(&v, "snapshot");
    assert_eq!(v["buffers"].as_object().unwrap().len(), 7);
    assert_eq!(v["alerts"].as_array().unwrap().len(), 2);
}

#[test]
fn events_backlog_as_ndjson() {
    let e = engine_at(T0 + 20 * MIN);
    let r = call(&e, "GET", "/api/events", b"");
    assert_eq!((r.status, r.content_type), (200, CONTENT_NDJSON));
    let lines: Vec<Value> =
        String::from_utf8(r.body).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), e.lock().unwrap().transitions().len());
    for l in &lines {
        assert_shape(l, "event");
    }
    let r = call(&e, "GET", "/api/events?since=3", b"");
    assert_eq!(String::from_utf8(r.body).unwrap().lines().count(), lines.len() - 3);
}

#[test]
fn manual_override() {
    let e = engine_at(T0 + 5 * MIN);
    let body = |ticket: &str, wc: &str, op: &str, reason: &str| {
        json!({"ticket": ticket, "workCenter": wc, "operator": op, "reason": reason}).to_string()
    };
    let r = call(&e, "POST", "/api/override", body("T-1", "WC-ASM", "ana", "reader at DP3 down").as_bytes());
    assert_eq!(r.status, 200, "{:?}", r.body_json());
    let v = json_of(&r);
    assert_shape(&v, "override");
    let kinds: Vec<&str> = v["transitions"].as_array().unwrap().iter().map(|t| t["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["CompletedOp", "ManualOverride"]);
    let last = &v["transitions"][1];
    assert_eq!((last["seq"].as_u64(), last["data_point_id"].as_str()), (Some(2), Some("DP3")));

    let status = json_of(&call(&e, "GET", "/api/orders/SO-1001/status", b""));
    let hist = status["tickets"][0]["history"].as_array().unwrap();
    assert_eq!(hist.last().unwrap()["kind"], "ManualOverride");

    for (b, code, kind) in [
        (body("T-1", "WC-PNT", "ana", " "), 422, "EmptyReason"),
        (body("T-1", "WC-PNT", "", "x"), 422, "EmptyOperator"),
        (body("T-1", "WC-UPH", "ana", "x"), 422, "NotOnRoute"),
        (body("T-1", "WC-CUT", "ana", "x"), 422, "OverrideNotForward"),
        (body("T-9", "WC-PNT", "ana", "x"), 404, "UnknownTicket"),
    ] {
        let r = call(&e, "POST", "/api/override", b.as_bytes());
        let v = json_of(&r);
        assert_eq!((r.status, v["kind"].as_str()), (code, Some(kind)), "{b}");
        assert_shape(&v, "error");
    }
    let r = call(&e, "POST", "/api/override", br#"{"ticket": "T-1"}"#);
    assert_eq!(r.status, 400);
    let r = call(&e, "POST", "/api/override", br#"{"ticket":"T-1","workCenter":"WC-PNT","operator":"a","reason":"b","x":1}"#);
    assert_eq!(r.status, 400, "unknown fields rejected");
}

#[test]
fn routing_errors() {
    let e = empty();
    assert_eq!(call(&e, "DELETE", "/api/orders", b"").status, 405);
    assert_eq!(call(&e, "POST", "/api/orders/SO-1/status", b"").status, 405);
    assert_eq!(call(&e, "GET", "/api/nothing", b"").status, 404);
    assert_eq!(call(&e, "GET", "/elsewhere", b"").status, 404);
    assert_eq!(call(&e, "GET", "/api/finished-goods/export", b"").content_type, CONTENT_XML);
}

/// Captured payloads for the station screen live in fixtures/api/samples.
/// They must keep matching what the API produces; set
/// SFC_REFRESH_FIXTURES=1 to rewrite them after an intended change.
#[test]
fn station_samples_match_the_api() {
    let samples = [
        ("buffer_midrun", T0 + 30 * SEC, "/api/datapoints/DP2/buffer"),
        ("buffer_delayed", T0 + 90 * SEC, "/api/datapoints/DP2/buffer"),
        ("buffer_empty", T0 + 30 * SEC, "/api/datapoints/DP1/buffer"),
        ("order_status_midrun", T0 + 20 * MIN, "/api/orders/SO-1001/status"),
    ];
    let refresh = std::env::var_os("SFC_REFRESH_FIXTURES").is_some();
    for (name, at, target) in samples {
        let v = json_of(&call(&engine_at(at), "GET", target, b""));
        let path = common::fixture(&format!("api/samples/{name}.json"));
        let text = serde_json::to_string_pretty(&v).unwrap() + "\n";
        if refresh {
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(&path, &text).unwrap();
        }
        let frozen = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        assert_eq!(text, frozen, "{name} drifted from the API");
    }
}
