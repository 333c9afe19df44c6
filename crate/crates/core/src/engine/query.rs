use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dispatch::{DispatchIndex, OrderPlan};
use super::state::{DelayAlert, FinishedGoodsRecord, StepStatus, WipState, WipTransition};
use super::{EngineConfig, EngineError};
use crate::tag::OrderKind;

/// Immutable view of engine state between two mutations. Cheap to clone:
/// per-ticket state is shared until the next mutation touches it.
#[derive(Debug, Clone)]
pub struct WipBook {
    pub(crate) config: Arc<EngineConfig>,
    pub(crate) dispatch: Option<Arc<DispatchIndex>>,
    pub(crate) tickets: BTreeMap<u64, Arc<WipState>>,
    pub(crate) alerts: Vec<DelayAlert>,
    pub(crate) finished: Vec<FinishedGoodsRecord>,
    pub(crate) transition_count: usize,
    pub(crate) clock_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderSummary {
    pub order: String,
    pub order_id: u64,
    pub kind: OrderKind,
    pub product: String,
    pub product_id: u64,
    pub quantity: u32,
    pub route: String,
    pub tickets: usize,
    pub tickets_exited: usize,
    pub finished_goods: usize,
    pub state: String,
    pub alerts: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepView {
    pub seq: u32,
    pub work_center: String,
    pub status: StepStatus,
    pub planned_start_us: u64,
    pub planned_end_us: u64,
    pub data_point_id: Option<String>,
    pub arrived_us: Option<u64>,
    pub started_us: Option<u64>,
    pub completed_us: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketStatus {
    pub ticket: String,
    pub ticket_id: u64,
    pub current_seq: u32,
    pub current_work_center: Option<String>,
    pub status: String,
    pub delayed: bool,
    pub exited_us: Option<u64>,
    pub steps: Vec<StepView>,
    pub alerts: Vec<DelayAlert>,
    pub history: Vec<WipTransition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderStatus {
    pub order: String,
    pub order_id: u64,
    pub kind: OrderKind,
    pub product: String,
    pub product_id: u64,
    pub quantity: u32,
    pub route: String,
    pub tickets: Vec<TicketStatus>,
    pub finished_goods: Vec<FinishedGoodsRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferRow {
    pub ticket: String,
    pub ticket_id: u64,
    pub order: String,
    pub product: String,
    pub product_id: u64,
    pub seq: u32,
    pub work_center: String,
    pub queued_since_us: u64,
    pub delayed: bool,
}

pub const STATUS_NOT_STARTED: &str = "not started";
pub const STATUS_QUEUED: &str = "queued";
pub const STATUS_IN_OPERATION: &str = "in operation";
pub const STATUS_EXITED: &str = "exited";

impl WipBook {
    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn dispatch(&self) -> Option<&DispatchIndex> {
        self.dispatch.as_deref()
    }

    pub fn ticket(&self, ticket_id: u64) -> Option<&WipState> {
        self.tickets.get(&ticket_id).map(|t| &**t)
    }

    pub fn tickets(&self) -> impl Iterator<Item = &WipState> {
        self.tickets.values().map(|t| &**t)
    }

    pub fn alerts(&self) -> &[DelayAlert] {
        &self.alerts
    }

    /// Alerts raised at or after position `cursor`, with the next cursor.
    pub fn alerts_since(&self, cursor: usize) -> (&[DelayAlert], usize) {
        let from = cursor.min(self.alerts.len());
        (&self.alerts[from..], self.alerts.len())
    }

    pub fn finished_goods(&self) -> &[FinishedGoodsRecord] {
        &self.finished
    }

    pub fn transition_count(&self) -> usize {
        self.transition_count
    }

    pub fn clock_us(&self) -> u64 {
        self.clock_us
    }

    pub fn plant_id(&self) -> Option<&str> {
        self.dispatch().map(|d| d.list.plant_id.as_str())
    }

    pub fn orders_summary(&self) -> Vec<OrderSummary> {
        let Some(d) = self.dispatch() else { return Vec::new() };
        d.orders()
            .map(|o| {
                let states: Vec<&WipState> = o.tickets.iter().filter_map(|t| self.ticket(t.ticket_id)).collect();
                let exited = states.iter().filter(|s| s.exited_us.is_some()).count();
                let state = if exited == states.len() {
                    "completed"
                } else if states.iter().all(|s| s.current_seq == 0) {
                    STATUS_NOT_STARTED
                } else {
                    "in progress"
                };
                OrderSummary {
                    order: o.code.clone(),
                    order_id: o.order.order_id,
                    kind: o.order.kind,
                    product: o.product_code.clone(),
                    product_id: o.product_id,
                    quantity: o.quantity,
                    route: d.route(o.route_id).code.clone(),
                    tickets: o.tickets.len(),
                    tickets_exited: exited,
                    finished_goods: self.finished.iter().filter(|f| f.order == o.order).count(),
                    state: state.into(),
                    alerts: self.alerts.iter().filter(|a| o.tickets.iter().any(|t| t.ticket_id == a.ticket_id)).count(),
                }
            })
            .collect()
    }

    pub fn order_status(&self, order: &str) -> Result<OrderStatus, EngineError> {
        let d = self.dispatch().ok_or_else(|| EngineError::UnknownOrder(order.to_string()))?;
        let plan = d.order_by_code(order).ok_or_else(|| EngineError::UnknownOrder(order.to_string()))?;
        Ok(self.status_of(d, plan))
    }

    fn status_of(&self, d: &DispatchIndex, plan: &OrderPlan) -> OrderStatus {
        let route = d.route(plan.route_id);
        let tickets = plan
            .tickets
            .iter()
            .filter_map(|t| self.ticket(t.ticket_id))
            .map(|st| {
                let steps = route
                    .steps
                    .iter()
                    .zip(&st.steps)
                    .map(|(plan, s)| StepView {
                        seq: plan.seq,
                        work_center: plan.work_center_id.clone(),
                        status: s.status,
                        planned_start_us: plan.planned_start_us,
                        planned_end_us: plan.planned_end_us,
                        data_point_id: s.data_point_id.clone(),
                        arrived_us: s.arrived_us,
                        started_us: s.started_us,
                        completed_us: s.completed_us,
                    })
                    .collect();
                let alerts: Vec<DelayAlert> = self.alerts.iter().filter(|a| a.ticket_id == st.ticket_id).cloned().collect();
                let status = if st.exited_us.is_some() {
                    STATUS_EXITED
                } else {
                    match st.current().map(|s| s.status) {
                        None => STATUS_NOT_STARTED,
                        Some(StepStatus::Queued) => STATUS_QUEUED,
                        Some(StepStatus::Started) => STATUS_IN_OPERATION,
                        Some(StepStatus::Done) => "done",
                        Some(StepStatus::Pending | StepStatus::Skipped) => unreachable!("current step is never pending"),
                    }
                };
                TicketStatus {
                    ticket: st.code.clone(),
                    ticket_id: st.ticket_id,
                    current_seq: st.current_seq,
                    current_work_center: route.step(st.current_seq).map(|s| s.work_center_id.clone()),
                    status: status.into(),
                    delayed: !alerts.is_empty(),
                    exited_us: st.exited_us,
                    steps,
                    alerts,
                    history: st.history.clone(),
                }
            })
            .collect();
        OrderStatus {
            order: plan.code.clone(),
            order_id: plan.order.order_id,
            kind: plan.order.kind,
            product: plan.product_code.clone(),
            product_id: plan.product_id,
            quantity: plan.quantity,
            route: route.code.clone(),
            tickets,
            finished_goods: self.finished.iter().filter(|f| f.order == plan.order).cloned().collect(),
        }
    }

    /// Tickets waiting in the input buffer of `data_point_id`, earliest
    /// arrival first.
    pub fn buffer_contents(&self, data_point_id: &str, now_us: u64) -> Result<Vec<BufferRow>, EngineError> {
        if self.config.work_center(data_point_id).is_none() {
            return Err(EngineError::UnknownDataPoint(data_point_id.to_string()));
        }
        let Some(d) = self.dispatch() else { return Ok(Vec::new()) };
        let timeout = self.config.presence_timeout_us;
        let mut rows: Vec<BufferRow> = self
            .tickets()
            .filter_map(|st| {
                let (seq, last_seen) = st.queued()?;
                let step = st.current()?;
                if step.data_point_id.as_deref() != Some(data_point_id) || last_seen + timeout < now_us {
                    return None;
                }
                let order = d.order_of_ticket(st.ticket_id)?;
                let planned = d.route(st.route_id).step(seq)?;
                Some(BufferRow {
                    ticket: st.code.clone(),
                    ticket_id: st.ticket_id,
                    order: order.code.clone(),
                    product: order.product_code.clone(),
                    product_id: order.product_id,
                    seq,
                    work_center: planned.work_center_id.clone(),
                    queued_since_us: step.arrived_us.unwrap_or(last_seen),
                    delayed: now_us > planned.planned_start_us,
                })
            })
            .collect();
        rows.sort_by_key(|r| (r.queued_since_us, r.ticket_id));
        Ok(rows)
    }
}
