//! WIP tracking: dispatch import, per-ticket routing state machines, delay
//! detection and the exit gate.
//!
//! Every mutation is split into a decision, which reads state and emits
//! [`LogRecord`]s, and a reducer, which is the only code that changes
//! state. Replaying a persisted log therefore runs the reducer alone.

mod dispatch;
mod log;
mod query;
mod state;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dispatch::{code_to_id, DispatchIndex, DispatchList, OrderPlan, Route, RouteStep, TicketPlan};
pub use log::{decode_log, read_log, LogRecord, LogWriter};
pub use query::{
    BufferRow, OrderStatus, OrderSummary, StepView, TicketStatus, WipBook, STATUS_EXITED, STATUS_IN_OPERATION,
    STATUS_NOT_STARTED, STATUS_QUEUED,
};
pub use state::{AlertKind, DelayAlert, FinishedGoodsRecord, StepState, StepStatus, TransitionKind, WipState, WipTransition};

use crate::llrp::ReadEvent;
use crate::tag::{decode_tag, BuildTicketData, DecodedTag, ProductTagData, TagError};

pub const DEFAULT_PRESENCE_TIMEOUT_S: u64 = 10;
pub const DEFAULT_DELAY_GRACE_S: u64 = 300;
pub const UNREGISTERED_TICKET: &str = "unregistered ticket";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("ticket {0} appears more than once in the dispatch list")]
    DuplicateTicket(String),
    #[error("order {order} references unknown route {route_id}")]
    UnknownRouteRef { order: String, route_id: u32 },
    #[error("dispatch would change in-flight tickets: {}", .0.join(", "))]
    InFlightConflict(Vec<String>),
    #[error("invalid dispatch list: {0}")]
    InvalidDispatch(String),
    #[error("undecodable tag: {0}")]
    UndecodableTag(#[from] TagError),
    #[error("unknown data point {0}")]
    UnknownDataPoint(String),
    #[error("unknown order {0}")]
    UnknownOrder(String),
    #[error("unknown ticket {0}")]
    UnknownTicket(String),
    #[error("work center {work_center} is not on the route of ticket {ticket}")]
    NotOnRoute { ticket: String, work_center: String },
    #[error("override of ticket {ticket} to {work_center} would not move it forward")]
    OverrideNotForward { ticket: String, work_center: String },
    #[error("override reason must not be empty")]
    EmptyReason,
    #[error("override operator must not be empty")]
    EmptyOperator,
    #[error("build ticket read at the exit gate")]
    NotProductTag,
    #[error("product tag read at {0}, which is not the exit gate")]
    ProductOffExit(String),
    #[error("event log: {0}")]
    Log(String),
}

/// Static engine parameters. Times are microseconds internally; the JSON
/// form uses seconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    pub presence_timeout_us: u64,
    pub delay_grace_us: u64,
    pub exit_data_point_id: String,
    /// data point id to work center id
    pub data_points: BTreeMap<String, String>,
}

impl EngineConfig {
    pub fn new<I, A, B>(exit_data_point_id: impl Into<String>, data_points: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        EngineConfig {
            presence_timeout_us: DEFAULT_PRESENCE_TIMEOUT_S * 1_000_000,
            delay_grace_us: DEFAULT_DELAY_GRACE_S * 1_000_000,
            exit_data_point_id: exit_data_point_id.into(),
            data_points: data_points.into_iter().map(|(a, b)| (a.into(), b.into())).collect(),
        }
    }

    pub fn with_presence_timeout_s(mut self, s: u64) -> Self {
        self.presence_timeout_us = s * 1_000_000;
        self
    }

    pub fn with_delay_grace_s(mut self, s: u64) -> Self {
        self.delay_grace_us = s * 1_000_000;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.data_points.contains_key(&self.exit_data_point_id) {
            return Err(format!("exit data point {} is not among the data points", self.exit_data_point_id));
        }
        if self.presence_timeout_us == 0 {
            return Err("presence_timeout_s must be positive".into());
        }
        Ok(())
    }

    pub fn work_center(&self, data_point_id: &str) -> Option<&str> {
        self.data_points.get(data_point_id).map(String::as_str)
    }

    /// First data point (by id) that serves `work_center_id`.
    pub fn data_point_for(&self, work_center_id: &str) -> Option<&str> {
        self.data_points.iter().find(|(_, wc)| *wc == work_center_id).map(|(dp, _)| dp.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportSummary {
    pub orders: usize,
    pub tickets: usize,
    pub routes: usize,
}

enum Located {
    Current,
    Forward(u32),
    Behind(u32),
    NotOnRoute,
}

fn locate(st: &WipState, route: &Route, wc: &str) -> Located {
    let cur = st.current_seq;
    if let (Some(plan), Some(s)) = (route.step(cur), st.current()) {
        if plan.work_center_id == wc && matches!(s.status, StepStatus::Queued | StepStatus::Started) {
            return Located::Current;
        }
    }
    if let Some(s) = route.steps.iter().find(|s| s.seq > cur && s.work_center_id == wc) {
        return Located::Forward(s.seq);
    }
    match route.steps.iter().rev().find(|s| s.work_center_id == wc) {
        Some(s) => Located::Behind(s.seq),
        None => Located::NotOnRoute,
    }
}

#[derive(Debug)]
pub struct Engine {
    book: WipBook,
    /// (last_seen_us, ticket_id) of every ticket whose current step is Queued
    queued: BTreeSet<(u64, u64)>,
    /// last sighting of unregistered tickets per data point
    strangers: HashMap<(u64, String), u64>,
    raised: HashSet<(u64, u32, AlertKind)>,
    exited_units: HashSet<(u64, u64)>,
    transitions: Vec<WipTransition>,
    /// global index of `transitions[0]`; earlier ones were drained
    transition_base: usize,
    records: Option<Vec<LogRecord>>,
    sink: Option<LogWriter>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        Engine {
            book: WipBook {
                config: Arc::new(config),
                dispatch: None,
                tickets: BTreeMap::new(),
                alerts: Vec::new(),
                finished: Vec::new(),
                transition_count: 0,
                clock_us: 0,
            },
            queued: BTreeSet::new(),
            strangers: HashMap::new(),
            raised: HashSet::new(),
            exited_units: HashSet::new(),
            transitions: Vec::new(),
            transition_base: 0,
            records: Some(Vec::new()),
            sink: None,
        }
    }

    /// Rebuilds an engine by folding `records` through the reducer.
    pub fn replay(config: EngineConfig, records: impl IntoIterator<Item = LogRecord>) -> Self {
        let mut engine = Engine::new(config);
        for r in records {
            engine.apply(&r);
            if let Some(kept) = engine.records.as_mut() {
                kept.push(r);
            }
        }
        engine
    }

    /// Replays the log at `path` (if any) and appends new records to it.
    pub fn open(config: EngineConfig, path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let records = read_log(&path)?;
        let mut engine = Engine::replay(config, records);
        engine.sink = Some(LogWriter::open_append(path)?);
        Ok(engine)
    }

    /// Stops keeping records in memory; use with a file sink for long runs.
    pub fn without_record_retention(mut self) -> Self {
        self.records = None;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.book.config
    }

    pub fn book(&self) -> &WipBook {
        &self.book
    }

    pub fn snapshot(&self) -> WipBook {
        self.book.clone()
    }

    /// Records committed since start (including replayed ones), when kept.
    pub fn records(&self) -> Option<&[LogRecord]> {
        self.records.as_deref()
    }

    /// Transitions still held in memory (all of them unless drained).
    pub fn transitions(&self) -> &[WipTransition] {
        &self.transitions
    }

    /// Hands over the retained transitions with the global index of the
    /// first one; a long-running owner keeps the log elsewhere.
    pub fn drain_transitions(&mut self) -> (usize, Vec<WipTransition>) {
        let base = self.transition_base;
        let out = std::mem::take(&mut self.transitions);
        self.transition_base += out.len();
        (base, out)
    }

    pub fn order_status(&self, order: &str) -> Result<OrderStatus, EngineError> {
        self.book.order_status(order)
    }

    pub fn buffer_contents(&self, data_point_id: &str, now_us: u64) -> Result<Vec<BufferRow>, EngineError> {
        self.book.buffer_contents(data_point_id, now_us)
    }

    // ---- reducer ----

    fn apply(&mut self, record: &LogRecord) {
        match record {
            LogRecord::Dispatch(list) => self.apply_dispatch(list),
            LogRecord::Transition(t) => self.apply_transition(t),
            LogRecord::Seen { ticket_id, data_point_id, at_us } => {
                self.book.clock_us = self.book.clock_us.max(*at_us);
                let Some(st) = self.book.tickets.get_mut(ticket_id) else {
                    self.strangers.insert((*ticket_id, data_point_id.clone()), *at_us);
                    return;
                };
                let st = Arc::make_mut(st);
                st.seen_at.insert(data_point_id.clone(), *at_us);
                if let Some((seq, last)) = st.queued() {
                    let step = st.step_mut(seq).expect("queued step exists");
                    if step.data_point_id.as_deref() == Some(data_point_id) && *at_us > last {
                        step.last_seen_us = Some(*at_us);
                        self.queued.remove(&(last, *ticket_id));
                        self.queued.insert((*at_us, *ticket_id));
                    }
                }
            }
            LogRecord::Alert(a) => {
                self.book.clock_us = self.book.clock_us.max(a.raised_at_us);
                self.raised.insert((a.ticket_id, a.seq, a.kind));
                self.book.alerts.push(a.clone());
            }
            LogRecord::FinishedGood(f) => {
                self.book.clock_us = self.book.clock_us.max(f.exited_at_us);
                self.exited_units.insert((f.product_id, f.serial));
                self.book.finished.push(f.clone());
            }
        }
    }

    fn apply_dispatch(&mut self, list: &DispatchList) {
        let index = DispatchIndex::new(list.clone());
        let mut tickets = BTreeMap::new();
        for order in &list.orders {
            let route = index.route(order.route_id);
            for t in &order.tickets {
                let kept = self.book.tickets.remove(&t.ticket_id).filter(|st| st.has_history());
                let st = kept.unwrap_or_else(|| Arc::new(WipState::new(t, order.order, order.route_id, &route.steps)));
                tickets.insert(t.ticket_id, st);
            }
        }
        for (id, st) in &self.book.tickets {
            if let Some((_, last)) = st.queued() {
                self.queued.remove(&(last, *id));
            }
        }
        self.book.tickets = tickets;
        self.book.dispatch = Some(Arc::new(index));
    }

    fn apply_transition(&mut self, t: &WipTransition) {
        self.book.clock_us = self.book.clock_us.max(t.at_us);
        self.book.transition_count += 1;
        self.transitions.push(t.clone());
        let Some(st) = self.book.tickets.get_mut(&t.ticket_id) else { return };
        let st = Arc::make_mut(st);
        if let Some((_, last)) = st.queued() {
            if matches!(t.kind, TransitionKind::Arrived | TransitionKind::ManualOverride | TransitionKind::StartedOp) {
                self.queued.remove(&(last, t.ticket_id));
            }
        }
        if let Some(step) = t.seq.and_then(|seq| st.step_mut(seq)) {
            match t.kind {
                TransitionKind::Arrived | TransitionKind::ManualOverride => {
                    step.status = StepStatus::Queued;
                    step.data_point_id = t.data_point_id.clone();
                    step.arrived_us = Some(t.at_us);
                    step.last_seen_us = Some(t.at_us);
                    st.current_seq = st.current_seq.max(t.seq.unwrap_or(0));
                    self.queued.insert((t.at_us, t.ticket_id));
                }
                TransitionKind::StartedOp => {
                    step.status = StepStatus::Started;
                    step.started_us = Some(t.at_us);
                }
                TransitionKind::CompletedOp => {
                    step.status = StepStatus::Done;
                    step.completed_us = Some(t.at_us);
                }
                TransitionKind::Skipped => step.status = StepStatus::Skipped,
                _ => {}
            }
        }
        if t.kind == TransitionKind::Exited {
            st.exited_us = Some(t.at_us);
        }
        st.history.push(t.clone());
    }

    // ---- decisions ----

    fn commit(&mut self, record: LogRecord) -> Result<(), EngineError> {
        if let Some(sink) = self.sink.as_mut() {
            sink.append(&record)?;
        }
        self.apply(&record);
        if let Some(kept) = self.records.as_mut() {
            kept.push(record);
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<(), EngineError> {
        match self.sink.as_mut() {
            Some(sink) => sink.flush(),
            None => Ok(()),
        }
    }

    fn transition(
        &mut self,
        ticket_id: u64,
        kind: TransitionKind,
        seq: Option<u32>,
        data_point_id: Option<&str>,
        at_us: u64,
        detail: impl Into<String>,
    ) -> Result<(), EngineError> {
        let at_us = match self.book.tickets.get(&ticket_id) {
            Some(st) => at_us.max(st.last_at()),
            None => at_us,
        };
        self.commit(LogRecord::Transition(WipTransition {
            ticket_id,
            kind,
            seq,
            data_point_id: data_point_id.map(str::to_string),
            at_us,
            detail: detail.into(),
        }))
    }

    fn ticket_state(&self, ticket_id: u64) -> Arc<WipState> {
        self.book.tickets[&ticket_id].clone()
    }

    fn route_of(&self, st: &WipState) -> Route {
        self.book.dispatch.as_ref().expect("tickets imply a dispatch").route(st.route_id).clone()
    }

    /// Fires StartedOp for every queued ticket not seen for longer than the
    /// presence timeout. The transition is stamped at the moment presence
    /// lapsed, not when the lapse was noticed.
    fn sweep(&mut self, t: u64) -> Result<(), EngineError> {
        let timeout = self.book.config.presence_timeout_us;
        while let Some(&(last, id)) = self.queued.first() {
            if last + timeout >= t {
                break;
            }
            let st = self.ticket_state(id);
            let seq = st.current_seq;
            let dp = st.current().and_then(|s| s.data_point_id.clone());
            self.transition(id, TransitionKind::StartedOp, Some(seq), dp.as_deref(), last + timeout, "left input buffer")?;
            debug_assert!(!self.queued.contains(&(last, id)));
        }
        Ok(())
    }

    /// Moves a ticket forward to step `to`, closing its current step and
    /// marking any steps in between as skipped.
    fn advance(
        &mut self,
        st: &WipState,
        to: u32,
        data_point_id: Option<&str>,
        at: u64,
        kind: TransitionKind,
        detail: String,
    ) -> Result<(), EngineError> {
        let id = st.ticket_id;
        let route = self.route_of(st);
        if let Some(cur) = st.current() {
            let dp = cur.data_point_id.clone();
            if cur.status == StepStatus::Queued {
                self.transition(id, TransitionKind::StartedOp, Some(cur.seq), dp.as_deref(), at, "left input buffer")?;
            }
            if matches!(cur.status, StepStatus::Queued | StepStatus::Started) {
                self.transition(id, TransitionKind::CompletedOp, Some(cur.seq), dp.as_deref(), at, "")?;
            }
        }
        for seq in st.current_seq + 1..to {
            let wc = &route.step(seq).expect("seq within route").work_center_id;
            self.transition(id, TransitionKind::Skipped, Some(seq), None, at, format!("no read at {wc}"))?;
        }
        self.transition(id, kind, Some(to), data_point_id, at, detail)
    }

    /// Logs a route anomaly once per presence episode at a data point.
    fn anomaly(&mut self, st: &WipState, kind: TransitionKind, dp: &str, t: u64, detail: String) -> Result<(), EngineError> {
        let timeout = self.book.config.presence_timeout_us;
        if st.seen_at.get(dp).is_some_and(|&prev| t <= prev + timeout) {
            return Ok(());
        }
        self.transition(st.ticket_id, kind, None, Some(dp), t, detail)
    }

    fn unregistered(&mut self, ticket_id: u64, dp: &str, t: u64) -> Result<(), EngineError> {
        let timeout = self.book.config.presence_timeout_us;
        let key = (ticket_id, dp.to_string());
        if !self.strangers.get(&key).is_some_and(|&prev| t <= prev + timeout) {
            self.transition(ticket_id, TransitionKind::OutOfRoute, None, Some(dp), t, UNREGISTERED_TICKET)?;
        }
        self.seen(ticket_id, dp, t)
    }

    fn seen(&mut self, ticket_id: u64, dp: &str, at_us: u64) -> Result<(), EngineError> {
        self.commit(LogRecord::Seen { ticket_id, data_point_id: dp.to_string(), at_us })
    }

    fn ticket_read(&mut self, b: &BuildTicketData, dp: &str, wc: &str, t: u64) -> Result<(), EngineError> {
        if !self.book.tickets.contains_key(&b.ticket_id) {
            return self.unregistered(b.ticket_id, dp, t);
        }
        let st = self.ticket_state(b.ticket_id);
        let at = t.max(st.last_at());
        if st.exited_us.is_some() {
            self.anomaly(&st, TransitionKind::StaleRead, dp, at, "ticket already exited".into())?;
        } else {
            let route = self.route_of(&st);
            match locate(&st, &route, wc) {
                Located::Current => {}
                Located::Forward(j) => self.advance(&st, j, Some(dp), at, TransitionKind::Arrived, String::new())?,
                Located::Behind(seq) => {
                    self.anomaly(&st, TransitionKind::StaleRead, dp, at, format!("step {seq} at {wc} already passed"))?
                }
                Located::NotOnRoute => {
                    let detail = format!("{wc} is not on route {}", route.code);
                    self.anomaly(&st, TransitionKind::OutOfRoute, dp, at, detail)?
                }
            }
        }
        self.seen(b.ticket_id, dp, t)
    }

    fn exit_ticket_read(&mut self, b: &BuildTicketData, dp: &str, t: u64) -> Result<(), EngineError> {
        if !self.book.tickets.contains_key(&b.ticket_id) {
            return self.unregistered(b.ticket_id, dp, t);
        }
        let st = self.ticket_state(b.ticket_id);
        self.anomaly(&st, TransitionKind::OutOfRoute, dp, t, "build ticket at exit gate".into())?;
        self.seen(b.ticket_id, dp, t)
    }

    fn exit_product(&mut self, p: &ProductTagData, dp: &str, t: u64) -> Result<Option<FinishedGoodsRecord>, EngineError> {
        let unknown = || EngineError::UnknownOrder(format!("{:?} {}", p.order.kind, p.order.order_id));
        let d = self.book.dispatch.clone().ok_or_else(unknown)?;
        let order = d.order_by_ref(&p.order).ok_or_else(unknown)?;
        if self.exited_units.contains(&(p.product_id, p.serial)) {
            return Ok(None);
        }
        let record = FinishedGoodsRecord {
            product_id: p.product_id,
            serial: p.serial,
            order: p.order,
            order_code: order.code.clone(),
            product_code: order.product_code.clone(),
            exited_at_us: t,
        };
        self.commit(LogRecord::FinishedGood(record.clone()))?;
        let last = d.route(order.route_id).len();
        for ticket in &order.tickets {
            let st = self.ticket_state(ticket.ticket_id);
            if st.exited_us.is_some() || st.current_seq != last {
                continue;
            }
            let cur = st.current().expect("current step exists");
            let step_dp = cur.data_point_id.clone();
            let (id, seq) = (st.ticket_id, cur.seq);
            if cur.status == StepStatus::Queued {
                self.transition(id, TransitionKind::StartedOp, Some(seq), step_dp.as_deref(), t, "left input buffer")?;
            }
            if matches!(cur.status, StepStatus::Queued | StepStatus::Started) {
                self.transition(id, TransitionKind::CompletedOp, Some(seq), step_dp.as_deref(), t, "")?;
            }
            let detail = format!("product {} serial {}", order.product_code, p.serial);
            self.transition(id, TransitionKind::Exited, None, Some(dp), t, detail)?;
        }
        Ok(Some(record))
    }

    fn locate_read<'a>(&self, ev: &'a ReadEvent) -> Result<(&'a str, String, DecodedTag), EngineError> {
        let dp = ev.data_point_id.as_deref().ok_or_else(|| EngineError::UnknownDataPoint("(none)".into()))?;
        let wc = self.config().work_center(dp).ok_or_else(|| EngineError::UnknownDataPoint(dp.to_string()))?.to_string();
        let tag = decode_tag(&ev.epc)?;
        Ok((dp, wc, tag))
    }

    fn mark(&self) -> usize {
        self.transition_base + self.transitions.len()
    }

    fn since(&self, mark: usize) -> Vec<WipTransition> {
        self.transitions[mark - self.transition_base..].to_vec()
    }

    /// Applies one read. Decisions use the read's own timestamp; `now_us`
    /// stands in when the reader supplied none.
    pub fn apply_read(&mut self, ev: &ReadEvent, now_us: u64) -> Result<Vec<WipTransition>, EngineError> {
        let (dp, wc, tag) = self.locate_read(ev)?;
        let t = if ev.first_seen_utc_us == 0 { now_us } else { ev.first_seen_utc_us };
        let mark = self.mark();
        let exit = dp == self.config().exit_data_point_id;
        if let DecodedTag::Product(_) = tag {
            if !exit {
                return Err(EngineError::ProductOffExit(dp.to_string()));
            }
        }
        self.sweep(t)?;
        let result = match (&tag, exit) {
            (DecodedTag::BuildTicket(b), false) => self.ticket_read(b, dp, &wc, t),
            (DecodedTag::BuildTicket(b), true) => self.exit_ticket_read(b, dp, t),
            (DecodedTag::Product(p), _) => self.exit_product(p, dp, t).map(|_| ()),
        };
        self.flush()?;
        result.map(|()| self.since(mark))
    }

    /// Handles a read at the exit gate, returning the new finished-goods
    /// record, or `None` for a repeat read of a unit already recorded.
    pub fn record_exit(&mut self, ev: &ReadEvent, now_us: u64) -> Result<Option<FinishedGoodsRecord>, EngineError> {
        let (dp, _, tag) = self.locate_read(ev)?;
        if dp != self.config().exit_data_point_id {
            return Err(EngineError::UnknownDataPoint(format!("{dp} is not the exit gate")));
        }
        let t = if ev.first_seen_utc_us == 0 { now_us } else { ev.first_seen_utc_us };
        self.sweep(t)?;
        let out = match tag {
            DecodedTag::Product(p) => self.exit_product(&p, dp, t),
            DecodedTag::BuildTicket(b) => self.exit_ticket_read(&b, dp, t).and(Err(EngineError::NotProductTag)),
        };
        self.flush()?;
        out
    }

    /// Advances the engine clock without a read.
    pub fn tick(&mut self, now_us: u64) -> Result<Vec<WipTransition>, EngineError> {
        let mark = self.mark();
        self.sweep(now_us)?;
        self.book.clock_us = self.book.clock_us.max(now_us);
        self.flush()?;
        Ok(self.since(mark))
    }

    pub fn detect_delays(&mut self, now_us: u64) -> Result<Vec<DelayAlert>, EngineError> {
        let Some(d) = self.book.dispatch.clone() else { return Ok(Vec::new()) };
        let grace = self.book.config.delay_grace_us;
        let mut raised = Vec::new();
        for st in self.book.tickets.values() {
            let route = d.route(st.route_id);
            for (plan, s) in route.steps.iter().zip(&st.steps) {
                let late_start = matches!(s.status, StepStatus::Pending | StepStatus::Queued)
                    && now_us > plan.planned_start_us + grace;
                let late_finish =
                    !matches!(s.status, StepStatus::Done | StepStatus::Skipped) && now_us > plan.planned_end_us + grace;
                for (late, kind, planned) in [
                    (late_start, AlertKind::LateStart, plan.planned_start_us),
                    (late_finish, AlertKind::LateFinish, plan.planned_end_us),
                ] {
                    if late && !self.raised.contains(&(st.ticket_id, plan.seq, kind)) {
                        raised.push(DelayAlert {
                            ticket_id: st.ticket_id,
                            seq: plan.seq,
                            kind,
                            planned_us: planned,
                            observed_or_now_us: now_us,
                            raised_at_us: now_us,
                        });
                    }
                }
            }
        }
        for a in &raised {
            self.commit(LogRecord::Alert(a.clone()))?;
        }
        self.flush()?;
        Ok(raised)
    }

    pub fn manual_override(
        &mut self,
        ticket: &str,
        work_center_id: &str,
        operator: &str,
        reason: &str,
        now_us: u64,
    ) -> Result<Vec<WipTransition>, EngineError> {
        if operator.trim().is_empty() {
            return Err(EngineError::EmptyOperator);
        }
        if reason.trim().is_empty() {
            return Err(EngineError::EmptyReason);
        }
        let d = self.book.dispatch.clone().ok_or_else(|| EngineError::UnknownTicket(ticket.to_string()))?;
        let id = d.ticket_by_code(ticket).ok_or_else(|| EngineError::UnknownTicket(ticket.to_string()))?;
        let st = self.ticket_state(id);
        let route = self.route_of(&st);
        let not_forward =
            || EngineError::OverrideNotForward { ticket: st.code.clone(), work_center: work_center_id.to_string() };
        let to = match locate(&st, &route, work_center_id) {
            Located::NotOnRoute => {
                return Err(EngineError::NotOnRoute { ticket: st.code.clone(), work_center: work_center_id.to_string() })
            }
            _ if st.exited_us.is_some() => return Err(not_forward()),
            Located::Forward(j) => j,
            Located::Current | Located::Behind(_) => return Err(not_forward()),
        };
        // validated first so a rejected override leaves no trace
        let mark = self.mark();
        self.sweep(now_us)?;
        let st = self.ticket_state(id);
        let dp = self.config().data_point_for(work_center_id).map(str::to_string);
        let detail = format!("operator: {}; reason: {}", operator.trim(), reason.trim());
        self.advance(&st, to, dp.as_deref(), now_us.max(st.last_at()), TransitionKind::ManualOverride, detail)?;
        self.flush()?;
        Ok(self.since(mark))
    }

    /// Registers a dispatch list. Tickets without history take the new
    /// plan; a ticket already on the floor must appear unchanged.
    pub fn import_dispatch(&mut self, list: DispatchList) -> Result<ImportSummary, EngineError> {
        list.validate()?;
        let summary = ImportSummary { orders: list.orders.len(), tickets: list.ticket_count(), routes: list.routes.len() };
        if let Some(cur) = self.book.dispatch.clone() {
            if cur.list == list {
                return Ok(summary);
            }
            let next = DispatchIndex::new(list.clone());
            let mut conflicts = Vec::new();
            for st in self.book.tickets.values().filter(|s| s.has_history()) {
                let before = cur.order_of_ticket(st.ticket_id).map(|o| (o.order, o.product_id, cur.route(o.route_id)));
                let after = next.order_of_ticket(st.ticket_id).map(|o| (o.order, o.product_id, next.route(o.route_id)));
                if before != after || next.ticket_code(st.ticket_id) != Some(st.code.as_str()) {
                    conflicts.push(st.code.clone());
                }
            }
            if !conflicts.is_empty() {
                return Err(EngineError::InFlightConflict(conflicts));
            }
        }
        self.commit(LogRecord::Dispatch(list))?;
        self.flush()?;
        Ok(summary)
    }
}
