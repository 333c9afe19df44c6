//! Expected engine output for a scripted scenario, derived by walking the
//! script directly. Shares no code with the simulator or the engine beyond
//! the plain data types, so the two can check each other.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::engine::{AlertKind, DispatchList, TransitionKind as K};
use crate::sim::{Point, Scenario, Target};
use crate::tag::DecodedTag;

/// (kind, seq, data point, at_us) as logged for one ticket.
pub type Entry = (K, Option<u32>, Option<String>, u64);

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Expected {
    pub histories: BTreeMap<u64, Vec<Entry>>,
    /// (product_id, serial, exited_at_us)
    pub finished: Vec<(u64, u64, u64)>,
    /// (raised_at_us, ticket_id, seq, kind), sorted
    pub alerts: Vec<(u64, u64, u32, AlertKind)>,
}

struct Walk {
    wcs: Vec<String>,
    plan: Vec<(u64, u64)>,
    cur: usize,
    dp: Option<String>,
    queued_last: Option<u64>,
    exited: bool,
    seen: HashMap<String, u64>,
    /// (kind, seq, dp, at, came from a presence lapse)
    log: Vec<(K, Option<u32>, Option<String>, u64, bool)>,
}

impl Walk {
    fn push(&mut self, k: K, seq: usize, dp: Option<String>, at: u64, lapsed: bool) {
        self.log.push((k, (seq > 0).then_some(seq as u32), dp, at, lapsed));
    }
    fn lapse(&mut self, t: u64, timeout: u64) {
        if let Some(last) = self.queued_last.filter(|&l| l + timeout < t) {
            self.queued_last = None;
            self.push(K::StartedOp, self.cur, self.dp.clone(), last + timeout, true);
        }
    }
    fn close(&mut self, t: u64) {
        if self.queued_last.take().is_some() {
            self.push(K::StartedOp, self.cur, self.dp.clone(), t, false);
        }
        if self.cur > 0 {
            self.push(K::CompletedOp, self.cur, self.dp.clone(), t, false);
        }
    }
    fn episode(&mut self, k: K, dp: &str, t: u64, timeout: u64) {
        if self.seen.get(dp).is_none_or(|&p| t > p + timeout) {
            self.push(k, 0, Some(dp.into()), t, false);
        }
    }
}

fn position(s: &Scenario, tag: usize, t: u64) -> Option<Point> {
    let at = |w: &crate::sim::Waypoint| match &w.target {
        Target::Position(p) => *p,
        Target::DataPoint(id) => s.data_point(id).expect("validated").antenna_xy(),
    };
    let legs: Vec<_> = s.waypoints_for(&s.tags[tag].tag_ref).collect();
    let mut from = (s.tags[tag].initial_xy, 0u64);
    for (n, w) in legs.iter().enumerate() {
        if t < w.arrive_time_us {
            if n == 0 {
                return Some(from.0);
            }
            let f = (t - from.1) as f64 / (w.arrive_time_us - from.1) as f64;
            let to = at(w);
            return Some(Point::new(from.0.x + (to.x - from.0.x) * f, from.0.y + (to.y - from.0.y) * f));
        }
        if t < w.depart_time_us {
            return Some(at(w));
        }
        from = (at(w), w.depart_time_us);
    }
    if legs.is_empty() {
        Some(from.0)
    } else {
        None
    }
}

pub fn expect(s: &Scenario, d: &DispatchList, exit_dp: &str, timeout: u64, grace: u64) -> Expected {
    let mut walks: BTreeMap<u64, Walk> = BTreeMap::new();
    for o in &d.orders {
        let r = d.routes.iter().find(|r| r.route_id == o.route_id).expect("validated dispatch");
        for tk in &o.tickets {
            let w = Walk {
                wcs: r.steps.iter().map(|st| st.work_center_id.clone()).collect(),
                plan: r.steps.iter().map(|st| (st.planned_start_us, st.planned_end_us)).collect(),
                cur: 0,
                dp: None,
                queued_last: None,
                exited: false,
                seen: HashMap::new(),
                log: Vec::new(),
            };
            walks.insert(tk.ticket_id, w);
        }
    }
    let mut out = Expected::default();
    let mut units = HashSet::new();
    let times: Vec<u64> = s.cycle_times().collect();
    for &t in &times {
        let here: Vec<Option<Point>> = (0..s.tags.len()).map(|i| position(s, i, t)).collect();
        for dpc in &s.data_points {
            let (dp, wc) = (dpc.data_point_id(), dpc.work_center_id());
            for (i, tag) in s.tags.iter().enumerate() {
                let Some(p) = here[i] else { continue };
                if ((p.x - dpc.antenna_xy().x).powi(2) + (p.y - dpc.antenna_xy().y).powi(2)).sqrt() > dpc.read_radius_m()
                {
                    continue;
                }
                match tag.payload {
                    DecodedTag::BuildTicket(b) => {
                        let Some(w) = walks.get_mut(&b.ticket_id) else { continue };
                        w.lapse(t, timeout);
                        let k = w.wcs.iter().position(|c| c == wc).map(|k| k + 1);
                        match k {
                            _ if dp == exit_dp => w.episode(K::OutOfRoute, dp, t, timeout),
                            _ if w.exited => w.episode(K::StaleRead, dp, t, timeout),
                            None => w.episode(K::OutOfRoute, dp, t, timeout),
                            Some(k) if k < w.cur => w.episode(K::StaleRead, dp, t, timeout),
                            Some(k) if k == w.cur => w.queued_last = w.queued_last.map(|_| t),
                            Some(k) => {
                                w.close(t);
                                for skip in w.cur + 1..k {
                                    w.push(K::Skipped, skip, None, t, false);
                                }
                                w.cur = k;
                                w.dp = Some(dp.into());
                                w.queued_last = Some(t);
                                w.push(K::Arrived, k, Some(dp.into()), t, false);
                            }
                        }
                        w.seen.insert(dp.into(), t);
                    }
                    DecodedTag::Product(pt) if dp == exit_dp => {
                        let Some(o) = d.orders.iter().find(|o| o.order == pt.order) else { continue };
                        if !units.insert((pt.product_id, pt.serial)) {
                            continue;
                        }
                        out.finished.push((pt.product_id, pt.serial, t));
                        for tk in &o.tickets {
                            let w = walks.get_mut(&tk.ticket_id).expect("registered");
                            w.lapse(t, timeout);
                            if !w.exited && w.cur == w.wcs.len() {
                                w.close(t);
                                w.exited = true;
                                w.push(K::Exited, 0, Some(dp.into()), t, false);
                            }
                        }
                    }
                    DecodedTag::Product(_) => {}
                }
            }
        }
    }
    let last = times.last().copied().unwrap_or(0);
    for (&id, w) in &mut walks {
        w.lapse(last, timeout);
        // a step leaves Pending/Queued (or is finished) once a transition
        // visible to the delay check at time t has been logged for it
        let by = |seq: usize, kinds: &[K], t: u64| {
            w.log.iter().any(|(k, s, _, at, lapsed)| {
                *s == Some(seq as u32) && kinds.contains(k) && (*at < t || (*at == t && !lapsed))
            })
        };
        for (n, &(ps, pe)) in w.plan.iter().enumerate() {
            let first_after = |deadline: u64| times.iter().copied().find(|&t| t > deadline);
            if let Some(t) = first_after(ps + grace).filter(|&t| !by(n + 1, &[K::StartedOp, K::Skipped, K::CompletedOp], t)) {
                out.alerts.push((t, id, n as u32 + 1, AlertKind::LateStart));
            }
            if let Some(t) = first_after(pe + grace).filter(|&t| !by(n + 1, &[K::CompletedOp, K::Skipped], t)) {
                out.alerts.push((t, id, n as u32 + 1, AlertKind::LateFinish));
            }
        }
        out.histories.insert(id, w.log.iter().map(|(k, s, dp, at, _)| (*k, *s, dp.clone(), *at)).collect());
    }
    out.alerts.sort();
    out
}
