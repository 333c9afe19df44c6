use std::sync::atomic::Ordering;
use std::time::Duration;

use log::{info, warn};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

use super::actor::EngineHandle;
use super::config::ReaderLink;
use crate::llrp::{encode_message, parse_tag_report, Framer, LlrpMessage, MessageType, Parameter};

pub const ROSPEC_ID: u32 = 1;
const RESPONSE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, thiserror::Error)]
pub enum LinkError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("reader closed the connection")]
    Closed,
    #[error("engine task has stopped")]
    EngineGone,
}

#[derive(Debug, Clone, Copy)]
pub struct Backoff {
    pub initial: Duration,
    pub max: Duration,
}

impl Backoff {
    pub fn next(&self, current: Duration) -> Duration {
        (current * 2).min(self.max)
    }
}

struct Link {
    stream: TcpStream,
    framer: Framer,
    pending: std::collections::VecDeque<LlrpMessage>,
    next_id: u32,
    buf: Vec<u8>,
}

impl Link {
    async fn send(&mut self, ty: MessageType, params: Vec<Parameter>) -> Result<u32, LinkError> {
        self.next_id = self.next_id.wrapping_add(1);
        let msg = LlrpMessage::new(ty, self.next_id, params);
        let bytes = encode_message(&msg).map_err(|e| LinkError::Protocol(e.to_string()))?;
        self.stream.write_all(&bytes).await?;
        Ok(self.next_id)
    }

    async fn recv(&mut self) -> Result<LlrpMessage, LinkError> {
        loop {
            if let Some(m) = self.pending.pop_front() {
                return Ok(m);
            }
            let n = self.stream.read(&mut self.buf).await?;
            if n == 0 {
                return Err(LinkError::Closed);
            }
            let msgs = self.framer.feed(&self.buf[..n]).map_err(|e| LinkError::Protocol(e.to_string()))?;
            self.pending.extend(msgs);
        }
    }

    /// Sends a request and waits for its response; reports arriving in
    /// between are kept for the main loop.
    async fn request(&mut self, ty: MessageType, params: Vec<Parameter>) -> Result<(), LinkError> {
        let id = self.send(ty, params).await?;
        let want = ty.response().expect("request type");
        let mut held = Vec::new();
        let outcome = tokio::time::timeout(RESPONSE_TIMEOUT, async {
            loop {
                let m = self.recv().await?;
                match m.msg_type {
                    t if t == want && m.msg_id == id => return check_status(&m),
                    MessageType::ERROR_MESSAGE => return Err(protocol_error(&m)),
                    MessageType::KEEPALIVE => {
                        self.send_ack(m.msg_id).await?;
                    }
                    _ => held.push(m),
                }
            }
        })
        .await
        .map_err(|_| LinkError::Protocol(format!("no response to message type {}", ty.0)))?;
        for m in held.into_iter().rev() {
            self.pending.push_front(m);
        }
        outcome
    }

    async fn send_ack(&mut self, id: u32) -> Result<(), LinkError> {
        let bytes = encode_message(&LlrpMessage::new(MessageType::KEEPALIVE_ACK, id, vec![]))
            .map_err(|e| LinkError::Protocol(e.to_string()))?;
        self.stream.write_all(&bytes).await?;
        Ok(())
    }
}

fn protocol_error(m: &LlrpMessage) -> LinkError {
    let (code, text) = m.status().unwrap_or((0, ""));
    LinkError::Protocol(format!("reader error {code}: {text}"))
}

fn check_status(m: &LlrpMessage) -> Result<(), LinkError> {
    match m.status() {
        Some((0, _)) => Ok(()),
        Some(_) => Err(protocol_error(m)),
        None => Err(LinkError::Protocol(format!("response type {} without LLRPStatus", m.msg_type.0))),
    }
}

/// One connection's life: handshake, ROSpec set-up, then reports until the
/// link fails. `streamed` is set once the ROSpec is running, so the caller
/// can reset its backoff.
async fn session(link_cfg: &ReaderLink, engine: &EngineHandle, streamed: &mut bool) -> Result<(), LinkError> {
    let stream = TcpStream::connect(&link_cfg.reader_endpoint).await?;
    stream.set_nodelay(true)?;
    let mut link =
        Link { stream, framer: Framer::new(), pending: Default::default(), next_id: 0, buf: vec![0u8; 8192] };

    let hello = tokio::time::timeout(RESPONSE_TIMEOUT, link.recv())
        .await
        .map_err(|_| LinkError::Protocol("no READER_EVENT_NOTIFICATION".into()))??;
    if hello.msg_type != MessageType::READER_EVENT_NOTIFICATION {
        return Err(LinkError::Protocol(format!("expected READER_EVENT_NOTIFICATION, got {}", hello.msg_type.0)));
    }
    let accepted = hello.parameters.iter().flat_map(Parameter::children).any(|p| {
        matches!(p, Parameter::ConnectionAttemptEvent { status: 0 })
    });
    if !accepted {
        return Err(LinkError::Protocol("reader refused the connection".into()));
    }

    let spec = Parameter::RoSpec { rospec_id: ROSPEC_ID, priority: 0, current_state: 0, children: vec![] };
    link.request(MessageType::ADD_ROSPEC, vec![spec]).await?;
    link.request(MessageType::ENABLE_ROSPEC, vec![Parameter::RoSpecId(ROSPEC_ID)]).await?;
    link.request(MessageType::START_ROSPEC, vec![Parameter::RoSpecId(ROSPEC_ID)]).await?;
    info!("controller {}: streaming from {}", link_cfg.data_point_id, link_cfg.reader_endpoint);

    *streamed = true;
    let stats = engine.stats();
    stats.sessions.fetch_add(1, Ordering::SeqCst);
    let result = async {
        loop {
            let m = link.recv().await?;
            match m.msg_type {
                MessageType::RO_ACCESS_REPORT => {
                    let mut reads = parse_tag_report(&m).map_err(|e| LinkError::Protocol(e.to_string()))?;
                    for r in &mut reads {
                        r.data_point_id = Some(link_cfg.data_point_id.clone());
                    }
                    if !engine.submit_reads(reads) {
                        return Err(LinkError::EngineGone);
                    }
                }
                MessageType::KEEPALIVE => link.send_ack(m.msg_id).await?,
                MessageType::ERROR_MESSAGE => return Err(protocol_error(&m)),
                other => log::debug!("controller {}: ignoring message type {}", link_cfg.data_point_id, other.0),
            }
        }
    }
    .await;
    stats.sessions.fetch_sub(1, Ordering::SeqCst);
    result
}

/// Keeps one reader connected for as long as the engine runs, with
/// exponential backoff between attempts.
pub async fn run_controller(link_cfg: ReaderLink, engine: EngineHandle, backoff: Backoff) {
    let mut delay = backoff.initial;
    loop {
        engine.stats().connect_attempts.fetch_add(1, Ordering::SeqCst);
        let mut streamed = false;
        match session(&link_cfg, &engine, &mut streamed).await {
            Err(LinkError::EngineGone) => return,
            Err(e) => warn!("controller {}: {e}; retrying", link_cfg.data_point_id),
            Ok(()) => {}
        }
        if streamed {
            delay = backoff.initial;
        }
        tokio::time::sleep(delay).await;
        delay = backoff.next(delay);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_to_the_cap() {
        let b = Backoff { initial: Duration::from_millis(200), max: Duration::from_millis(1000) };
        let mut d = b.initial;
        let mut seen = vec![d];
        for _ in 0..4 {
            d = b.next(d);
            seen.push(d);
        }
        let ms: Vec<u128> = seen.iter().map(Duration::as_millis).collect();
        assert_eq!(ms, [200, 400, 800, 1000, 1000]);
    }
}
