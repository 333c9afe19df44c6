use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::tag::OrderRef;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteStep {
    pub seq: u32,
    pub work_center_id: String,
    pub planned_start_us: u64,
    pub planned_end_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub route_id: u32,
    pub code: String,
    pub steps: Vec<RouteStep>,
}

impl Route {
    pub fn step(&self, seq: u32) -> Option<&RouteStep> {
        self.steps.get(seq.checked_sub(1)? as usize)
    }

    pub fn len(&self) -> u32 {
        self.steps.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketPlan {
    pub ticket_id: u64,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderPlan {
    pub order: OrderRef,
    pub code: String,
    pub product_id: u64,
    pub product_code: String,
    pub quantity: u32,
    pub route_id: u32,
    pub tickets: Vec<TicketPlan>,
}

/// The ERP's daily plan. Textual codes are kept next to the numeric ids the
/// tags carry so the API and XML exports can speak the ERP's language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchList {
    pub dispatch_date: NaiveDate,
    pub plant_id: String,
    pub routes: Vec<Route>,
    pub orders: Vec<OrderPlan>,
}

/// Numeric id carried on tags for a textual code: the trailing decimal
/// digits, so "SO-1001" is 1001 and "T-7" is 7.
pub fn code_to_id(code: &str) -> Option<u64> {
    let digits: String = code.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    digits.chars().rev().collect::<String>().parse().ok()
}

impl DispatchList {
    pub fn route(&self, route_id: u32) -> Option<&Route> {
        self.routes.iter().find(|r| r.route_id == route_id)
    }

    pub fn ticket_count(&self) -> usize {
        self.orders.iter().map(|o| o.tickets.len()).sum()
    }

    /// Structural and referential checks shared by the XML parser and the
    /// engine import.
    pub fn validate(&self) -> Result<(), EngineError> {
        let mut route_ids = HashSet::new();
        for r in &self.routes {
            if !route_ids.insert(r.route_id) {
                return Err(EngineError::InvalidDispatch(format!("route id {} defined twice", r.code)));
            }
            if r.steps.is_empty() {
                return Err(EngineError::InvalidDispatch(format!("route {} has no steps", r.code)));
            }
            let mut prev_end = None;
            for (i, s) in r.steps.iter().enumerate() {
                if s.seq as usize != i + 1 {
                    return Err(EngineError::InvalidDispatch(format!(
                        "route {} step {}: seq must run 1, 2, 3, ... (expected {})",
                        r.code,
                        s.seq,
                        i + 1
                    )));
                }
                if s.planned_start_us >= s.planned_end_us {
                    return Err(EngineError::InvalidDispatch(format!(
                        "route {} step {}: plannedEnd must be after plannedStart",
                        r.code, s.seq
                    )));
                }
                if prev_end.is_some_and(|end| s.planned_start_us < end) {
                    return Err(EngineError::InvalidDispatch(format!(
                        "route {} step {}: planned interval overlaps the previous step",
                        r.code, s.seq
                    )));
                }
                prev_end = Some(s.planned_end_us);
            }
        }

        let mut tickets = HashSet::new();
        let mut orders = HashSet::new();
        for o in &self.orders {
            if !orders.insert(o.order) {
                return Err(EngineError::InvalidDispatch(format!("order {} listed twice", o.code)));
            }
            if !route_ids.contains(&o.route_id) {
                return Err(EngineError::UnknownRouteRef { order: o.code.clone(), route_id: o.route_id });
            }
            if o.tickets.is_empty() {
                return Err(EngineError::InvalidDispatch(format!("order {} has no tickets", o.code)));
            }
            if (o.quantity as usize) < o.tickets.len() {
                return Err(EngineError::InvalidDispatch(format!(
                    "order {}: quantity {} is below its {} tickets",
                    o.code,
                    o.quantity,
                    o.tickets.len()
                )));
            }
            for t in &o.tickets {
                if !tickets.insert(t.ticket_id) {
                    return Err(EngineError::DuplicateTicket(t.code.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Lookup tables derived from an imported dispatch list.
#[derive(Debug, Clone)]
pub struct DispatchIndex {
    pub list: DispatchList,
    routes: HashMap<u32, usize>,
    orders_by_ref: HashMap<OrderRef, usize>,
    orders_by_code: BTreeMap<String, usize>,
    ticket_order: HashMap<u64, usize>,
    ticket_codes: HashMap<String, u64>,
}

impl DispatchIndex {
    pub fn new(list: DispatchList) -> Self {
        let routes = list.routes.iter().enumerate().map(|(i, r)| (r.route_id, i)).collect();
        let orders_by_ref = list.orders.iter().enumerate().map(|(i, o)| (o.order, i)).collect();
        let orders_by_code = list.orders.iter().enumerate().map(|(i, o)| (o.code.clone(), i)).collect();
        let mut ticket_order = HashMap::new();
        let mut ticket_codes = HashMap::new();
        for (i, o) in list.orders.iter().enumerate() {
            for t in &o.tickets {
                ticket_order.insert(t.ticket_id, i);
                ticket_codes.insert(t.code.clone(), t.ticket_id);
            }
        }
        DispatchIndex { list, routes, orders_by_ref, orders_by_code, ticket_order, ticket_codes }
    }

    pub fn route(&self, route_id: u32) -> &Route {
        &self.list.routes[self.routes[&route_id]]
    }

    pub fn order_of_ticket(&self, ticket_id: u64) -> Option<&OrderPlan> {
        self.ticket_order.get(&ticket_id).map(|&i| &self.list.orders[i])
    }

    pub fn order_by_ref(&self, order: &OrderRef) -> Option<&OrderPlan> {
        self.orders_by_ref.get(order).map(|&i| &self.list.orders[i])
    }

    /// Finds an order by its ERP code, falling back to the numeric id.
    pub fn order_by_code(&self, code: &str) -> Option<&OrderPlan> {
        if let Some(&i) = self.orders_by_code.get(code) {
            return Some(&self.list.orders[i]);
        }
        let id: u64 = code.parse().ok()?;
        let mut hits = self.list.orders.iter().filter(|o| o.order.order_id == id);
        let first = hits.next()?;
        hits.next().is_none().then_some(first)
    }

    pub fn ticket_by_code(&self, code: &str) -> Option<u64> {
        self.ticket_codes.get(code).copied().or_else(|| {
            let id: u64 = code.parse().ok()?;
            self.ticket_order.contains_key(&id).then_some(id)
        })
    }

    pub fn ticket_code(&self, ticket_id: u64) -> Option<&str> {
        let order = self.order_of_ticket(ticket_id)?;
        order.tickets.iter().find(|t| t.ticket_id == ticket_id).map(|t| t.code.as_str())
    }

    pub fn orders(&self) -> impl Iterator<Item = &OrderPlan> {
        self.list.orders.iter()
    }
}
