use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dispatch::{RouteStep, TicketPlan};
use crate::tag::OrderRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransitionKind {
    Arrived,
    StartedOp,
    CompletedOp,
    Skipped,
    OutOfRoute,
    StaleRead,
    ManualOverride,
    Exited,
}

impl TransitionKind {
    /// Kinds that always name a route step.
    pub fn carries_seq(self) -> bool {
        matches!(
            self,
            TransitionKind::Arrived
                | TransitionKind::StartedOp
                | TransitionKind::CompletedOp
                | TransitionKind::Skipped
                | TransitionKind::ManualOverride
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WipTransition {
    pub ticket_id: u64,
    pub kind: TransitionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_point_id: Option<String>,
    pub at_us: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Pending,
    Queued,
    Started,
    Done,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepState {
    pub seq: u32,
    pub status: StepStatus,
    pub data_point_id: Option<String>,
    pub arrived_us: Option<u64>,
    pub last_seen_us: Option<u64>,
    pub started_us: Option<u64>,
    pub completed_us: Option<u64>,
}

impl StepState {
    fn pending(seq: u32) -> Self {
        StepState {
            seq,
            status: StepStatus::Pending,
            data_point_id: None,
            arrived_us: None,
            last_seen_us: None,
            started_us: None,
            completed_us: None,
        }
    }
}

/// Progress of one build ticket along its route.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WipState {
    pub ticket_id: u64,
    pub code: String,
    pub order: OrderRef,
    pub route_id: u32,
    /// 0 before the first arrival, otherwise the furthest step reached.
    pub current_seq: u32,
    pub steps: Vec<StepState>,
    pub exited_us: Option<u64>,
    pub history: Vec<WipTransition>,
    /// Last read time per data point, for presence and anomaly suppression.
    pub seen_at: BTreeMap<String, u64>,
}

impl WipState {
    pub fn new(ticket: &TicketPlan, order: OrderRef, route_id: u32, steps: &[RouteStep]) -> Self {
        WipState {
            ticket_id: ticket.ticket_id,
            code: ticket.code.clone(),
            order,
            route_id,
            current_seq: 0,
            steps: steps.iter().map(|s| StepState::pending(s.seq)).collect(),
            exited_us: None,
            history: Vec::new(),
            seen_at: BTreeMap::new(),
        }
    }

    pub fn step(&self, seq: u32) -> Option<&StepState> {
        self.steps.get(seq.checked_sub(1)? as usize)
    }

    pub(crate) fn step_mut(&mut self, seq: u32) -> Option<&mut StepState> {
        self.steps.get_mut(seq.checked_sub(1)? as usize)
    }

    pub fn current(&self) -> Option<&StepState> {
        self.step(self.current_seq)
    }

    pub fn last_at(&self) -> u64 {
        self.history.last().map_or(0, |t| t.at_us)
    }

    pub fn has_history(&self) -> bool {
        !self.history.is_empty()
    }

    /// Queued step and its last sighting, if the ticket waits in a buffer.
    pub fn queued(&self) -> Option<(u32, u64)> {
        let s = self.current()?;
        (s.status == StepStatus::Queued).then(|| (s.seq, s.last_seen_us.unwrap_or(0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AlertKind {
    LateStart,
    LateFinish,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayAlert {
    pub ticket_id: u64,
    pub seq: u32,
    pub kind: AlertKind,
    pub planned_us: u64,
    pub observed_or_now_us: u64,
    pub raised_at_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinishedGoodsRecord {
    pub product_id: u64,
    pub serial: u64,
    pub order: OrderRef,
    pub order_code: String,
    pub product_code: String,
    pub exited_at_us: u64,
}
