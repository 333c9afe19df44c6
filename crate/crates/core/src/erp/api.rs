use std::future::Future;
use std::sync::{Arc, Mutex};

use percent_encoding::percent_decode_str;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::xml::{export_finished_goods_xml, parse_dispatch_xml, serialize_dispatch_xml};
use super::GatewayError;
use crate::engine::{DispatchList, Engine, EngineError, ImportSummary, WipBook, WipTransition};

pub const CONTENT_JSON: &str = "application/json";
pub const CONTENT_XML: &str = "application/xml";
pub const CONTENT_NDJSON: &str = "application/x-ndjson";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OverrideRequest {
    pub ticket: String,
    pub work_center: String,
    pub operator: String,
    pub reason: String,
}

/// What the gateway needs from the engine. Reads go to snapshots; the two
/// mutations must be applied through the engine's serialized sequence.
pub trait EngineAccess: Send + Sync {
    fn snapshot(&self) -> Arc<WipBook>;
    fn events_since(&self, cursor: usize) -> Vec<WipTransition>;
    fn import_dispatch(&self, list: DispatchList) -> impl Future<Output = Result<ImportSummary, EngineError>> + Send;
    fn manual_override(&self, req: OverrideRequest)
        -> impl Future<Output = Result<Vec<WipTransition>, EngineError>> + Send;
}

/// Direct access to an in-process engine; the mutex is the serialized
/// sequence.
impl EngineAccess for Mutex<Engine> {
    fn snapshot(&self) -> Arc<WipBook> {
        Arc::new(self.lock().expect("engine lock").snapshot())
    }

    fn events_since(&self, cursor: usize) -> Vec<WipTransition> {
        let e = self.lock().expect("engine lock");
        e.transitions().get(cursor..).map(<[_]>::to_vec).unwrap_or_default()
    }

    async fn import_dispatch(&self, list: DispatchList) -> Result<ImportSummary, EngineError> {
        self.lock().expect("engine lock").import_dispatch(list)
    }

    async fn manual_override(&self, req: OverrideRequest) -> Result<Vec<WipTransition>, EngineError> {
        let mut e = self.lock().expect("engine lock");
        let now = e.book().clock_us();
        e.manual_override(&req.ticket, &req.work_center, &req.operator, &req.reason, now)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiResponse {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl ApiResponse {
    fn json(status: u16, generated_at_us: u64, value: Value) -> Self {
        let mut obj = match value {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert("data".into(), other);
                m
            }
        };
        obj.insert("generated_at_us".into(), json!(generated_at_us));
        ApiResponse { status, content_type: CONTENT_JSON, body: serde_json::to_vec(&Value::Object(obj)).expect("json") }
    }

    fn error(status: u16, generated_at_us: u64, kind: &str, message: String, extra: Value) -> Self {
        let mut v = json!({ "error": message, "kind": kind });
        if let (Value::Object(m), Value::Object(x)) = (&mut v, extra) {
            m.extend(x);
        }
        Self::json(status, generated_at_us, v)
    }

    pub fn body_json(&self) -> Option<Value> {
        serde_json::from_slice(&self.body).ok()
    }
}

fn engine_error(at: u64, e: EngineError) -> ApiResponse {
    let status = match &e {
        EngineError::UnknownOrder(_) | EngineError::UnknownTicket(_) | EngineError::UnknownDataPoint(_) => 404,
        EngineError::InFlightConflict(_) => 409,
        EngineError::EmptyReason
        | EngineError::EmptyOperator
        | EngineError::NotOnRoute { .. }
        | EngineError::OverrideNotForward { .. } => 422,
        EngineError::DuplicateTicket(_) | EngineError::UnknownRouteRef { .. } | EngineError::InvalidDispatch(_) => 400,
        _ => 500,
    };
    let kind = format!("{e:?}").split(['(', ' ', '{']).next().unwrap_or("EngineError").to_string();
    let extra = match &e {
        EngineError::InFlightConflict(tickets) => json!({ "tickets": tickets }),
        _ => json!({}),
    };
    ApiResponse::error(status, at, &kind, e.to_string(), extra)
}

fn gateway_error(at: u64, e: GatewayError) -> ApiResponse {
    let extra = match &e {
        GatewayError::XmlSyntax { line, column, .. } => json!({ "line": line, "column": column }),
        GatewayError::Schema { path, .. } | GatewayError::Semantic { path, .. } => json!({ "path": path }),
    };
    ApiResponse::error(400, at, e.kind(), e.to_string(), extra)
}

fn query_param<'a>(query: &'a str, key: &str) -> Option<&'a str> {
    query.split('&').filter_map(|kv| kv.split_once('=')).find(|(k, _)| *k == key).map(|(_, v)| v)
}

fn cursor(query: &str, at: u64) -> Result<usize, ApiResponse> {
    match query_param(query, "since") {
        None | Some("") => Ok(0),
        Some(v) => v.parse().map_err(|_| {
            ApiResponse::error(400, at, "BadRequest", format!("since={v:?} is not a cursor"), json!({}))
        }),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

/// Routes one request. `target` is the path with optional query string.
/// Pure with respect to transport, testable without a server.
pub async fn handle<A: EngineAccess>(engine: &A, method: &str, target: &str, body: &[u8]) -> ApiResponse {
    let snap = engine.snapshot();
    let at = snap.clock_us();
    let (path, query) = target.split_once('?').unwrap_or((target, ""));
    let segments: Vec<String> =
        path.trim_matches('/').split('/').map(|s| percent_decode_str(s).decode_utf8_lossy().into_owned()).collect();
    let segs: Vec<&str> = segments.iter().map(String::as_str).collect();
    let not_found = || ApiResponse::error(404, at, "NotFound", format!("no such endpoint {path}"), json!({}));

    match (method, segs.as_slice()) {
        ("GET", ["api", "orders"]) => ApiResponse::json(200, at, json!({ "orders": snap.orders_summary() })),
        ("GET", ["api", "orders", id, "status"]) => match snap.order_status(id) {
            Ok(status) => ApiResponse::json(200, at, to_value(&status)),
            Err(e) => engine_error(at, e),
        },
        ("GET", ["api", "datapoints"]) => {
            let cfg = snap.config();
            let dps: Vec<Value> = cfg
                .data_points
                .iter()
                .map(|(dp, wc)| {
                    json!({ "data_point_id": dp, "work_center_id": wc, "exit_gate": *dp == cfg.exit_data_point_id })
                })
                .collect();
            ApiResponse::json(200, at, json!({ "data_points": dps }))
        }
        ("GET", ["api", "datapoints", id, "buffer"]) => match snap.buffer_contents(id, at) {
            Ok(rows) => ApiResponse::json(
                200,
                at,
                json!({
                    "data_point_id": id,
                    "work_center_id": snap.config().work_center(id),
                    "rows": rows,
                }),
            ),
            Err(e) => engine_error(at, e),
        },
        ("GET", ["api", "alerts"]) => match cursor(query, at) {
            Ok(since) => {
                let (alerts, next) = snap.alerts_since(since);
                ApiResponse::json(200, at, json!({ "since": since, "next_cursor": next, "alerts": alerts }))
            }
            Err(r) => r,
        },
        ("GET", ["api", "snapshot"]) => match cursor(query, at) {
            Ok(since) => {
                let (alerts, next) = snap.alerts_since(since);
                let mut buffers = Map::new();
                for dp in snap.config().data_points.keys() {
                    let rows = snap.buffer_contents(dp, at).unwrap_or_default();
                    buffers.insert(dp.clone(), to_value(&rows));
                }
                ApiResponse::json(
                    200,
                    at,
                    json!({
                        "orders": snap.orders_summary(),
                        "since": since,
                        "next_cursor": next,
                        "alerts": alerts,
                        "buffers": buffers,
                    }),
                )
            }
            Err(r) => r,
        },
        ("GET", ["api", "events"]) => match cursor(query, at) {
            Ok(since) => {
                let mut out = Vec::new();
                for t in engine.events_since(since) {
                    serde_json::to_writer(&mut out, &t).expect("json");
                    out.push(b'\n');
                }
                ApiResponse { status: 200, content_type: CONTENT_NDJSON, body: out }
            }
            Err(r) => r,
        },
        ("GET", ["api", "finished-goods", "export"]) => {
            let plant = snap.plant_id().unwrap_or("");
            ApiResponse { status: 200, content_type: CONTENT_XML, body: export_finished_goods_xml(plant, snap.finished_goods()) }
        }
        ("GET", ["api", "dispatch"]) => match snap.dispatch() {
            Some(d) => ApiResponse { status: 200, content_type: CONTENT_XML, body: serialize_dispatch_xml(&d.list).into_bytes() },
            None => ApiResponse::error(404, at, "NoDispatch", "no dispatch list imported".into(), json!({})),
        },
        ("POST", ["api", "dispatch"]) => match parse_dispatch_xml(body) {
            Ok(list) => match engine.import_dispatch(list).await {
                Ok(summary) => {
                    let at = engine.snapshot().clock_us();
                    ApiResponse::json(200, at, json!({ "summary": summary }))
                }
                Err(e) => engine_error(at, e),
            },
            Err(e) => gateway_error(at, e),
        },
        ("POST", ["api", "override"]) => {
            let req: OverrideRequest = match serde_json::from_slice(body) {
                Ok(r) => r,
                Err(e) => return ApiResponse::error(400, at, "BadRequest", format!("override body: {e}"), json!({})),
            };
            match engine.manual_override(req).await {
                Ok(transitions) => {
                    let at = engine.snapshot().clock_us();
                    ApiResponse::json(200, at, json!({ "transitions": transitions }))
                }
                Err(e) => engine_error(at, e),
            }
        }
        (_, ["api", ..]) => {
            let known = matches!(
                segs.as_slice(),
                ["api", "orders"]
                    | ["api", "orders", _, "status"]
                    | ["api", "datapoints"]
                    | ["api", "datapoints", _, "buffer"]
                    | ["api", "alerts"]
                    | ["api", "snapshot"]
                    | ["api", "events"]
                    | ["api", "finished-goods", "export"]
                    | ["api", "dispatch"]
                    | ["api", "override"]
            );
            if known {
                ApiResponse::error(405, at, "MethodNotAllowed", format!("{method} not allowed on {path}"), json!({}))
            } else {
                not_found()
            }
        }
        _ => not_found(),
    }
}
