use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{debug, warn};
use tokio::sync::{broadcast, mpsc, oneshot};

use super::config::ClockSource;
use crate::engine::{DispatchList, Engine, EngineError, ImportSummary, WipBook, WipTransition};
use crate::erp::{EngineAccess, OverrideRequest};
use crate::llrp::ReadEvent;

const BATCH_LIMIT: usize = 256;
const LIVE_CAPACITY: usize = 4096;

pub fn wall_clock_us() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_micros() as u64)
}

/// Counters exposed for health checks and tests.
#[derive(Debug, Default)]
pub struct ServiceStats {
    pub reads_ingested: AtomicU64,
    pub read_errors: AtomicU64,
    pub connect_attempts: AtomicU64,
    /// reader sessions currently streaming reports
    pub sessions: AtomicUsize,
}

impl ServiceStats {
    pub fn reads_ingested(&self) -> u64 {
        self.reads_ingested.load(Ordering::SeqCst)
    }

    pub fn read_errors(&self) -> u64 {
        self.read_errors.load(Ordering::SeqCst)
    }

    pub fn sessions(&self) -> usize {
        self.sessions.load(Ordering::SeqCst)
    }

    pub fn connect_attempts(&self) -> u64 {
        self.connect_attempts.load(Ordering::SeqCst)
    }
}

enum Command {
    Reads(Vec<ReadEvent>),
    Tick(u64),
    Import(DispatchList, oneshot::Sender<Result<ImportSummary, EngineError>>),
    Override(OverrideRequest, oneshot::Sender<Result<Vec<WipTransition>, EngineError>>),
    Barrier(oneshot::Sender<()>),
}

struct Shared {
    snapshot: RwLock<Arc<WipBook>>,
    events: RwLock<Vec<WipTransition>>,
    live: broadcast::Sender<(usize, WipTransition)>,
    stats: ServiceStats,
}

/// Cloneable front of the engine task. Every mutation is a message to the
/// one task that owns the engine; reads are served from the last snapshot.
#[derive(Clone)]
pub struct EngineHandle {
    tx: mpsc::UnboundedSender<Command>,
    shared: Arc<Shared>,
}

impl EngineHandle {
    /// Spawns the engine task.
    pub fn spawn(engine: Engine, clock: ClockSource) -> (Self, tokio::task::JoinHandle<()>) {
        let (tx, rx) = mpsc::unbounded_channel();
        let (live, _) = broadcast::channel(LIVE_CAPACITY);
        let shared = Arc::new(Shared {
            snapshot: RwLock::new(Arc::new(engine.snapshot())),
            events: RwLock::new(Vec::new()),
            live,
            stats: ServiceStats::default(),
        });
        let mut actor = Actor { engine, clock, external_now: 0, shared: shared.clone() };
        actor.publish();
        let task = tokio::spawn(actor.run(rx));
        (EngineHandle { tx, shared }, task)
    }

    pub fn stats(&self) -> &ServiceStats {
        &self.shared.stats
    }

    pub fn live(&self) -> broadcast::Sender<(usize, WipTransition)> {
        self.shared.live.clone()
    }

    pub fn submit_reads(&self, reads: Vec<ReadEvent>) -> bool {
        self.tx.send(Command::Reads(reads)).is_ok()
    }

    /// Moves the engine clock to `now_us`, expiring presence and raising
    /// delay alerts. In wall-clock mode the service does this itself.
    pub fn tick(&self, now_us: u64) -> bool {
        self.tx.send(Command::Tick(now_us)).is_ok()
    }

    /// Resolves once every command sent before it has been applied and
    /// published.
    pub async fn sync(&self) {
        let (tx, rx) = oneshot::channel();
        if self.tx.send(Command::Barrier(tx)).is_ok() {
            let _ = rx.await;
        }
    }

    pub fn event_count(&self) -> usize {
        self.shared.events.read().expect("events lock").len()
    }
}

fn gone() -> EngineError {
    EngineError::Log("engine task has stopped".into())
}

impl EngineAccess for EngineHandle {
    fn snapshot(&self) -> Arc<WipBook> {
        self.shared.snapshot.read().expect("snapshot lock").clone()
    }

    fn events_since(&self, cursor: usize) -> Vec<WipTransition> {
        self.shared.events.read().expect("events lock").get(cursor..).map(<[_]>::to_vec).unwrap_or_default()
    }

    async fn import_dispatch(&self, list: DispatchList) -> Result<ImportSummary, EngineError> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(Command::Import(list, tx)).map_err(|_| gone())?;
        rx.await.map_err(|_| gone())?
    }

    async fn manual_override(&self, req: OverrideRequest) -> Result<Vec<WipTransition>, EngineError> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(Command::Override(req, tx)).map_err(|_| gone())?;
        rx.await.map_err(|_| gone())?
    }
}

struct Actor {
    engine: Engine,
    clock: ClockSource,
    external_now: u64,
    shared: Arc<Shared>,
}

impl Actor {
    fn now(&self) -> u64 {
        match self.clock {
            ClockSource::Wall => wall_clock_us(),
            ClockSource::External => self.external_now.max(self.engine.book().clock_us()),
        }
    }

    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Command>) {
        while let Some(first) = rx.recv().await {
            let mut batch = vec![first];
            while batch.len() < BATCH_LIMIT {
                match rx.try_recv() {
                    Ok(c) => batch.push(c),
                    Err(_) => break,
                }
            }
            // replies wait until the effects are visible to readers
            let mut replies: Vec<Box<dyn FnOnce() + Send>> = Vec::new();
            for cmd in batch {
                self.apply(cmd, &mut replies);
            }
            self.publish();
            for r in replies {
                r();
            }
        }
        debug!("engine task: all handles dropped");
    }

    fn apply(&mut self, cmd: Command, replies: &mut Vec<Box<dyn FnOnce() + Send>>) {
        match cmd {
            Command::Reads(reads) => {
                let now = self.now();
                for ev in &reads {
                    if let Err(e) = self.engine.apply_read(ev, now) {
                        self.shared.stats.read_errors.fetch_add(1, Ordering::SeqCst);
                        warn!("read from {:?} rejected: {e}", ev.data_point_id);
                    }
                }
                self.shared.stats.reads_ingested.fetch_add(reads.len() as u64, Ordering::SeqCst);
            }
            Command::Tick(now) => {
                self.external_now = self.external_now.max(now);
                if let Err(e) = self.engine.tick(now).and_then(|_| self.engine.detect_delays(now)) {
                    warn!("tick at {now}: {e}");
                }
            }
            Command::Import(list, tx) => {
                let r = self.engine.import_dispatch(list);
                replies.push(Box::new(move || {
                    let _ = tx.send(r);
                }));
            }
            Command::Override(req, tx) => {
                let now = self.now();
                let r = self.engine.manual_override(&req.ticket, &req.work_center, &req.operator, &req.reason, now);
                replies.push(Box::new(move || {
                    let _ = tx.send(r);
                }));
            }
            Command::Barrier(tx) => replies.push(Box::new(move || {
                let _ = tx.send(());
            })),
        }
    }

    fn publish(&mut self) {
        let (base, fresh) = self.engine.drain_transitions();
        if !fresh.is_empty() {
            let mut events = self.shared.events.write().expect("events lock");
            debug_assert_eq!(events.len(), base);
            for (i, t) in fresh.into_iter().enumerate() {
                // no receivers is fine
                let _ = self.shared.live.send((base + i, t.clone()));
                events.push(t);
            }
        }
        *self.shared.snapshot.write().expect("snapshot lock") = Arc::new(self.engine.snapshot());
    }
}
