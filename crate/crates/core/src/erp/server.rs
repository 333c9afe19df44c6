use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::State;
use axum::http::{header, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{any, get};
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::broadcast;
use tokio_stream::wrappers::BroadcastStream;
use tokio_stream::StreamExt;
use tower_http::services::ServeDir;

use super::api::{handle, ApiResponse, EngineAccess, CONTENT_NDJSON};
use crate::engine::WipTransition;

/// Shared state of the HTTP front. `live` carries every committed
/// transition with its position in the global transition log.
pub struct ApiState<A> {
    pub engine: Arc<A>,
    pub live: Option<broadcast::Sender<(usize, WipTransition)>>,
}

impl<A> Clone for ApiState<A> {
    fn clone(&self) -> Self {
        ApiState { engine: self.engine.clone(), live: self.live.clone() }
    }
}

fn into_response(r: ApiResponse) -> Response {
    let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, r.content_type)], r.body).into_response()
}

async fn any_request<A: EngineAccess + 'static>(
    State(state): State<ApiState<A>>,
    method: Method,
    uri: Uri,
    body: Bytes,
) -> Response {
    let target = uri.path_and_query().map_or(uri.path(), |pq| pq.as_str());
    into_response(handle(&*state.engine, method.as_str(), target, &body).await)
}

fn line(t: &WipTransition) -> Bytes {
    let mut v = serde_json::to_vec(t).expect("json");
    v.push(b'\n');
    Bytes::from(v)
}

/// Line-delimited JSON: the backlog from `since`, then live transitions
/// until the client goes away or falls too far behind to be served.
async fn events<A: EngineAccess + 'static>(State(state): State<ApiState<A>>, uri: Uri) -> Response {
    let Some(live) = state.live.as_ref() else {
        let target = uri.path_and_query().map_or(uri.path(), |pq| pq.as_str());
        return into_response(handle(&*state.engine, "GET", target, &[]).await);
    };
    let since: usize = match uri.query().and_then(|q| q.split('&').find_map(|kv| kv.strip_prefix("since="))) {
        None | Some("") => 0,
        Some(v) => match v.parse() {
            Ok(n) => n,
            Err(_) => return into_response(handle(&*state.engine, "GET", &format!("/api/events?since={v}"), &[]).await),
        },
    };
    let rx = live.subscribe();
    let backlog = state.engine.events_since(since);
    let resume = since + backlog.len();
    let head = tokio_stream::iter(backlog.into_iter().map(|t| Ok::<_, Infallible>(line(&t))));
    let tail = BroadcastStream::new(rx)
        .take_while(|r| r.is_ok())
        .filter_map(move |r| match r {
            Ok((idx, t)) if idx >= resume => Some(Ok(line(&t))),
            _ => None,
        });
    Response::builder()
        .status(StatusCode::OK)
        .header(header::CONTENT_TYPE, CONTENT_NDJSON)
        .body(Body::from_stream(head.chain(tail)))
        .expect("response")
}

pub fn router<A: EngineAccess + 'static>(state: ApiState<A>, ui_dir: Option<PathBuf>) -> Router {
    let mut r = Router::new()
        .route("/api/events", get(events::<A>))
        .fallback(any(any_request::<A>))
        .with_state(state);
    if let Some(dir) = ui_dir {
        r = r.nest_service("/ui", ServeDir::new(dir));
    }
    r
}

/// Binds `addr` and serves the API in a background task.
pub async fn serve_api(
    addr: &str,
    app: Router,
) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let task = tokio::spawn(async move { axum::serve(listener, app).await });
    Ok((local, task))
}
