use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::{debug, info, warn};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, Notify};

use super::noise::apply_noise;
use super::world::SimWorld;
use super::SimError;
use crate::llrp::{build_tag_report, encode_message, Framer, LlrpMessage, MessageType, Parameter, ReadEvent};

/// LLRP status codes the simulated reader answers with.
pub mod status {
    pub const SUCCESS: u16 = 0;
    pub const PARAMETER_ERROR: u16 = 100;
    pub const MISSING_PARAMETER: u16 = 103;
    pub const UNSUPPORTED_MESSAGE: u16 = 109;
    pub const UNSUPPORTED_VERSION: u16 = 110;
    pub const INVALID_STATE: u16 = 400;
}

type CycleSender = mpsc::UnboundedSender<(u64, Arc<Vec<ReadEvent>>)>;

/// Fan-out point between the single clock owner and the reader sessions.
/// Sessions only ever receive immutable per-cycle snapshots.
#[derive(Debug, Default)]
pub struct ReaderHub {
    subscribers: Mutex<HashMap<String, Vec<CycleSender>>>,
    now_us: AtomicU64,
    started: AtomicUsize,
    started_changed: Notify,
}

impl ReaderHub {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn now_us(&self) -> u64 {
        self.now_us.load(Ordering::SeqCst)
    }

    /// Number of sessions currently streaming reports.
    pub fn started_sessions(&self) -> usize {
        self.started.load(Ordering::SeqCst)
    }

    pub async fn wait_started(&self, n: usize, timeout: Duration) -> bool {
        let wait = async {
            loop {
                let notified = self.started_changed.notified();
                if self.started_sessions() >= n {
                    return;
                }
                notified.await;
            }
        };
        tokio::time::timeout(timeout, wait).await.is_ok()
    }

    /// Publishes one cycle's reads; each data point's subscribers receive
    /// that data point's subset, including an empty list.
    pub fn publish(&self, now_us: u64, reads: &[ReadEvent]) {
        self.now_us.store(now_us, Ordering::SeqCst);
        let mut subs = self.subscribers.lock().expect("hub lock");
        for (dp, senders) in subs.iter_mut() {
            let mine: Arc<Vec<ReadEvent>> =
                Arc::new(reads.iter().filter(|r| r.data_point_id.as_deref() == Some(dp.as_str())).cloned().collect());
            senders.retain(|s| s.send((now_us, mine.clone())).is_ok());
        }
    }

    fn subscribe(&self, data_point_id: &str) -> mpsc::UnboundedReceiver<(u64, Arc<Vec<ReadEvent>>)> {
        let (tx, rx) = mpsc::unbounded_channel();
        self.subscribers.lock().expect("hub lock").entry(data_point_id.to_string()).or_default().push(tx);
        self.started.fetch_add(1, Ordering::SeqCst);
        self.started_changed.notify_waiters();
        rx
    }

    fn unsubscribed(&self) {
        self.started.fetch_sub(1, Ordering::SeqCst);
        self.started_changed.notify_waiters();
    }
}

/// A bound LLRP reader for one data point.
pub struct ReaderEndpoint {
    data_point_id: String,
    listener: TcpListener,
}

impl ReaderEndpoint {
    pub async fn bind(data_point_id: impl Into<String>, addr: &str) -> Result<Self, SimError> {
        let data_point_id = data_point_id.into();
        let listener = TcpListener::bind(addr)
            .await
            .map_err(|e| SimError::Io(format!("bind {addr} for {data_point_id}: {e}")))?;
        Ok(ReaderEndpoint { data_point_id, listener })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener")
    }

    /// Accepts controller connections forever, one session at a time per
    /// connection.
    pub async fn run(self, hub: Arc<ReaderHub>) {
        loop {
            match self.listener.accept().await {
                Ok((stream, peer)) => {
                    info!("reader {}: controller connected from {peer}", self.data_point_id);
                    let dp = self.data_point_id.clone();
                    let hub = hub.clone();
                    tokio::spawn(async move {
                        if let Err(e) = run_session(stream, &dp, hub).await {
                            debug!("reader {dp}: session ended: {e}");
                        }
                    });
                }
                Err(e) => {
                    warn!("reader {}: accept failed: {e}", self.data_point_id);
                    tokio::time::sleep(Duration::from_millis(50)).await;
                }
            }
        }
    }
}

#[derive(Debug, Default)]
struct Lifecycle {
    rospec: Option<u32>,
    enabled: bool,
}

struct Session<'a> {
    stream: TcpStream,
    dp: &'a str,
    hub: Arc<ReaderHub>,
    next_id: u32,
}

impl Session<'_> {
    async fn send(&mut self, msg: &LlrpMessage) -> std::io::Result<()> {
        let bytes = encode_message(msg).map_err(|e| std::io::Error::other(e.to_string()))?;
        self.stream.write_all(&bytes).await
    }

    fn fresh_id(&mut self) -> u32 {
        self.next_id = self.next_id.wrapping_add(1);
        self.next_id
    }

    async fn error_and_close(&mut self, code: u16, text: impl Into<String>) -> std::io::Result<()> {
        let id = self.fresh_id();
        let msg = LlrpMessage::new(
            MessageType::ERROR_MESSAGE,
            id,
            vec![Parameter::LlrpStatus { code, description: text.into() }],
        );
        self.send(&msg).await?;
        self.stream.shutdown().await
    }
}

async fn run_session(stream: TcpStream, dp: &str, hub: Arc<ReaderHub>) -> std::io::Result<()> {
    let mut s = Session { stream, dp, hub, next_id: 0 };
    let hello_id = s.fresh_id();
    let hello = LlrpMessage::new(
        MessageType::READER_EVENT_NOTIFICATION,
        hello_id,
        vec![Parameter::ReaderEventNotificationData(vec![
            Parameter::UtcTimestamp(s.hub.now_us()),
            Parameter::ConnectionAttemptEvent { status: 0 },
        ])],
    );
    s.send(&hello).await?;

    let mut framer = Framer::new();
    let mut state = Lifecycle::default();
    let mut reports: Option<mpsc::UnboundedReceiver<(u64, Arc<Vec<ReadEvent>>)>> = None;
    let mut buf = vec![0u8; 4096];

    let result = loop {
        let cycle = async {
            match reports.as_mut() {
                Some(rx) => rx.recv().await,
                None => std::future::pending().await,
            }
        };
        tokio::select! {
            n = s.stream.read(&mut buf) => {
                let n = match n {
                    Ok(0) => break Ok(()),
                    Ok(n) => n,
                    Err(e) => break Err(e),
                };
                let msgs = match framer.feed(&buf[..n]) {
                    Ok(m) => m,
                    Err(e) => {
                        let code = if matches!(e, crate::llrp::LlrpError::BadVersion(_)) {
                            status::UNSUPPORTED_VERSION
                        } else {
                            status::PARAMETER_ERROR
                        };
                        break s.error_and_close(code, e.to_string()).await;
                    }
                };
                let mut close = false;
                for msg in msgs {
                    match handle_request(&mut s, &mut state, &mut reports, msg).await? {
                        Flow::Continue => {}
                        Flow::Close => {
                            close = true;
                            break;
                        }
                    }
                }
                if close {
                    break Ok(());
                }
            }
            Some((_now, reads)) = cycle => {
                if !reads.is_empty() {
                    let id = s.fresh_id();
                    let report = build_tag_report(&reads, id);
                    if let Err(e) = s.send(&report).await {
                        break Err(e);
                    }
                }
            }
        }
    };
    if reports.is_some() {
        s.hub.unsubscribed();
    }
    result
}

enum Flow {
    Continue,
    Close,
}

async fn handle_request(
    s: &mut Session<'_>,
    state: &mut Lifecycle,
    reports: &mut Option<mpsc::UnboundedReceiver<(u64, Arc<Vec<ReadEvent>>)>>,
    msg: LlrpMessage,
) -> std::io::Result<Flow> {
    let ok = |ty: MessageType, id: u32| LlrpMessage::new(ty, id, vec![Parameter::success_status()]);
    let rospec_id = msg.parameters.iter().find_map(|p| match p {
        Parameter::RoSpecId(id) => Some(*id),
        _ => None,
    });
    match msg.msg_type {
        MessageType::KEEPALIVE => {
            s.send(&LlrpMessage::new(MessageType::KEEPALIVE_ACK, msg.msg_id, vec![])).await?;
        }
        MessageType::KEEPALIVE_ACK => {}
        MessageType::GET_READER_CAPABILITIES => {
            s.send(&ok(MessageType::GET_READER_CAPABILITIES_RESPONSE, msg.msg_id)).await?;
        }
        MessageType::SET_READER_CONFIG => {
            s.send(&ok(MessageType::SET_READER_CONFIG_RESPONSE, msg.msg_id)).await?;
        }
        MessageType::ADD_ROSPEC => {
            let spec = msg.parameters.iter().find_map(|p| match p {
                Parameter::RoSpec { rospec_id, .. } => Some(*rospec_id),
                _ => None,
            });
            let Some(id) = spec else {
                s.error_and_close(status::MISSING_PARAMETER, "ADD_ROSPEC without ROSpec").await?;
                return Ok(Flow::Close);
            };
            state.rospec = Some(id);
            state.enabled = false;
            s.send(&ok(MessageType::ADD_ROSPEC_RESPONSE, msg.msg_id)).await?;
        }
        MessageType::ENABLE_ROSPEC | MessageType::START_ROSPEC | MessageType::DELETE_ROSPEC => {
            let matches = state.rospec.is_some() && rospec_id.is_none_or(|id| Some(id) == state.rospec || id == 0);
            let legal = match msg.msg_type {
                MessageType::START_ROSPEC => matches && state.enabled,
                _ => matches,
            };
            if !legal {
                let text = format!("{} not valid in current ROSpec state", msg.msg_type.0);
                s.error_and_close(status::INVALID_STATE, text).await?;
                return Ok(Flow::Close);
            }
            let reply = msg.msg_type.response().expect("request types have responses");
            match msg.msg_type {
                MessageType::ENABLE_ROSPEC => state.enabled = true,
                MessageType::START_ROSPEC => {
                    s.send(&ok(reply, msg.msg_id)).await?;
                    if reports.is_none() {
                        *reports = Some(s.hub.subscribe(s.dp));
                        info!("reader {}: ROSpec started", s.dp);
                    }
                    return Ok(Flow::Continue);
                }
                _ => {
                    *state = Lifecycle::default();
                    if reports.take().is_some() {
                        s.hub.unsubscribed();
                    }
                }
            }
            s.send(&ok(reply, msg.msg_id)).await?;
        }
        MessageType::CLOSE_CONNECTION => {
            s.send(&ok(MessageType::CLOSE_CONNECTION_RESPONSE, msg.msg_id)).await?;
            s.stream.shutdown().await?;
            return Ok(Flow::Close);
        }
        other => {
            s.error_and_close(status::UNSUPPORTED_MESSAGE, format!("unsupported message type {}", other.0)).await?;
            return Ok(Flow::Close);
        }
    }
    Ok(Flow::Continue)
}

/// Runs one reader endpoint per data point of a scenario and drives the
/// shared clock. The host is the only owner of the world state.
pub struct SimHost {
    world: SimWorld,
    hub: Arc<ReaderHub>,
    addrs: Vec<(String, SocketAddr)>,
}

impl SimHost {
    /// Binds every data point's `listen_endpoint`; `override_addr`, when
    /// given, replaces them all (use `127.0.0.1:0` for ephemeral ports).
    pub async fn start(world: SimWorld, override_addr: Option<&str>) -> Result<Self, SimError> {
        let hub = ReaderHub::new();
        let mut addrs = Vec::new();
        for dp in &world.scenario().data_points {
            let addr = override_addr.unwrap_or(dp.listen_endpoint());
            let ep = ReaderEndpoint::bind(dp.data_point_id(), addr).await?;
            addrs.push((dp.data_point_id().to_string(), ep.local_addr()));
            tokio::spawn(ep.run(hub.clone()));
        }
        Ok(SimHost { world, hub, addrs })
    }

    pub fn hub(&self) -> &Arc<ReaderHub> {
        &self.hub
    }

    pub fn addrs(&self) -> &[(String, SocketAddr)] {
        &self.addrs
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }

    /// Steps the world to `now_us`, applies noise and publishes the cycle.
    /// Returns the published reads.
    pub fn advance(&mut self, now_us: u64) -> Result<Vec<ReadEvent>, SimError> {
        let raw = self.world.step_world(now_us)?;
        let cycle = self.world.cycle_index(now_us);
        let reads = apply_noise(&raw, &self.world.scenario().noise, cycle);
        self.hub.publish(now_us, &reads);
        Ok(reads)
    }
}
