use super::scenario::{DataPointConfig, Point, Scenario, Target, Waypoint};
use super::SimError;
use crate::llrp::ReadEvent;

/// True iff the tag lies within the data point's input-buffer circle.
pub fn in_read_zone(tag_xy: Point, dp: &DataPointConfig) -> bool {
    tag_xy.distance(dp.antenna_xy()) <= dp.read_radius_m()
}

/// Scripted floor state. Tag positions are a pure function of the script
/// and time:
///
/// * before its first waypoint a tag rests at its initial position;
/// * during `[arrive, depart)` of a waypoint it sits at the target (the
///   antenna position for data-point targets);
/// * between waypoints it moves linearly from one target to the next;
/// * after its last departure it has left the floor.
#[derive(Debug, Clone)]
pub struct SimWorld {
    scenario: Scenario,
    paths: Vec<Vec<(Point, u64, u64)>>,
    last_now: Option<u64>,
}

impl SimWorld {
    pub fn new(scenario: Scenario) -> Self {
        let paths = scenario
            .tags
            .iter()
            .map(|t| {
                scenario
                    .waypoints_for(&t.tag_ref)
                    .map(|w| (target_point(&scenario, w), w.arrive_time_us, w.depart_time_us))
                    .collect()
            })
            .collect();
        SimWorld { scenario, paths, last_now: None }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn cycle_index(&self, now_us: u64) -> u64 {
        (now_us - self.scenario.clock.start_us) / self.scenario.clock.cycle_us
    }

    /// Position of tag `idx` at `t`, or `None` once it has left the floor.
    pub fn position_at(&self, idx: usize, t: u64) -> Option<Point> {
        let path = &self.paths[idx];
        let Some(&(_, arrive0, _)) = path.first() else {
            return Some(self.scenario.tags[idx].initial_xy);
        };
        if t < arrive0 {
            return Some(self.scenario.tags[idx].initial_xy);
        }
        for (i, &(p, arrive, depart)) in path.iter().enumerate() {
            if t < arrive {
                let (prev, _, prev_depart) = path[i - 1];
                let frac = (t - prev_depart) as f64 / (arrive - prev_depart) as f64;
                return Some(prev.lerp(p, frac));
            }
            if t < depart {
                return Some(p);
            }
        }
        None
    }

    /// Raw reads for every data point at `now_us`, before noise: one read
    /// per tag inside each zone, ordered by data point then tag.
    pub fn step_world(&mut self, now_us: u64) -> Result<Vec<ReadEvent>, SimError> {
        let clock = self.scenario.clock;
        if now_us < clock.start_us || (now_us - clock.start_us) % clock.cycle_us != 0 {
            return Err(SimError::Misaligned { now_us, start_us: clock.start_us, cycle_us: clock.cycle_us });
        }
        if let Some(last) = self.last_now {
            if now_us < last {
                return Err(SimError::ClockRegression { now_us, last_us: last });
            }
        }
        self.last_now = Some(now_us);

        let positions: Vec<Option<Point>> = (0..self.scenario.tags.len()).map(|i| self.position_at(i, now_us)).collect();
        let mut reads = Vec::new();
        for dp in &self.scenario.data_points {
            for (tag, pos) in self.scenario.tags.iter().zip(&positions) {
                if pos.is_some_and(|p| in_read_zone(p, dp)) {
                    reads.push(ReadEvent {
                        epc: tag.image.as_bytes().to_vec(),
                        data_point_id: Some(dp.data_point_id().to_string()),
                        antenna_id: 1,
                        first_seen_utc_us: now_us,
                        peak_rssi: self.scenario.noise.rssi_mean_dbm,
                        seen_count: 1,
                    });
                }
            }
        }
        Ok(reads)
    }
}

fn target_point(scenario: &Scenario, w: &Waypoint) -> Point {
    match &w.target {
        Target::Position(p) => *p,
        Target::DataPoint(id) => scenario.data_point(id).expect("validated at load").antenna_xy(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::load_scenario;

    fn dp_at(x: f64, y: f64) -> DataPointConfig {
        DataPointConfig::new("DP", "WC", Point::new(x, y), "127.0.0.1:0")
    }

    #[test]
    fn zone_membership() {
        let dp = dp_at(10.0, 10.0);
        assert!(in_read_zone(Point::new(10.0, 10.0), &dp));
        assert!(in_read_zone(Point::new(12.0, 12.0), &dp));
        assert!(!in_read_zone(Point::new(10.0, 14.0), &dp));
        assert!(in_read_zone(Point::new(10.0, 13.6), &dp));
    }

    const ONE_TAG: &str = r#"{
      "data_points": [
        {"data_point_id": "DP2", "work_center_id": "WC-CUT", "antenna_xy": [30, 10]},
        {"data_point_id": "DP3", "work_center_id": "WC-ASM", "antenna_xy": [50, 10]}
      ],
      "tags": [
        {"tag_ref": "T-1", "kind": "build_ticket", "order_kind": "customer", "order_id": 1001,
         "product_id": 77, "route_id": 1, "ticket_id": 1, "initial_xy": [0, 0]}
      ],
      "script": [
        {"tag": "T-1", "data_point": "DP2", "arrive_time_us": 1000000, "depart_time_us": 2500000},
        {"tag": "T-1", "data_point": "DP3", "arrive_time_us": 2500000, "depart_time_us": 3000000}
      ],
      "clock": {"start_us": 0, "cycle_us": 500000}
    }"#;

    #[test]
    fn dwell_produces_ceil_d_over_cycle_reads() {
        let sc = load_scenario(ONE_TAG).unwrap();
        let mut w = SimWorld::new(sc);
        let mut at_dp2 = Vec::new();
        let mut at_dp3 = Vec::new();
        for t in (0..=4_000_000).step_by(500_000) {
            for r in w.step_world(t).unwrap() {
                match r.data_point_id.as_deref() {
                    Some("DP2") => at_dp2.push(t),
                    Some("DP3") => at_dp3.push(t),
                    _ => unreachable!(),
                }
            }
        }
        // 1.5 s dwell -> 3 reads, 0.5 s dwell -> 1 read
        assert_eq!(at_dp2, vec![1_000_000, 1_500_000, 2_000_000]);
        assert_eq!(at_dp3, vec![2_500_000]);
    }

    #[test]
    fn nothing_before_first_waypoint_and_after_last() {
        let mut w = SimWorld::new(load_scenario(ONE_TAG).unwrap());
        assert!(w.step_world(500_000).unwrap().is_empty());
        assert!(w.step_world(3_000_000).unwrap().is_empty());
    }

    #[test]
    fn clock_rules() {
        let mut w = SimWorld::new(load_scenario(ONE_TAG).unwrap());
        w.step_world(1_000_000).unwrap();
        assert!(matches!(w.step_world(500_000), Err(SimError::ClockRegression { .. })));
        assert!(matches!(w.step_world(1_250_000), Err(SimError::Misaligned { .. })));
    }

    #[test]
    fn interpolates_between_waypoints() {
        let doc = ONE_TAG.replace(r#""arrive_time_us": 2500000"#, r#""arrive_time_us": 4500000"#)
            .replace(r#""depart_time_us": 3000000"#, r#""depart_time_us": 5000000"#);
        let w = SimWorld::new(load_scenario(&doc).unwrap());
        let mid = w.position_at(0, 3_500_000).unwrap();
        assert!((mid.x - 40.0).abs() < 1e-9 && (mid.y - 10.0).abs() < 1e-9);
    }
}
