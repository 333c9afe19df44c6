#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use sfc_core::engine::DispatchList;
use sfc_core::erp::{parse_dispatch_xml, EngineAccess};
use sfc_core::service::{ClockSource, ReaderLink, Service, ServiceConfig};
use sfc_core::sim::{load_scenario_file, Scenario, SimHost, SimWorld};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn demo3_scenario(late: bool) -> Scenario {
    let name = if late { "demo3/scenario-late.json" } else { "demo3/scenario.json" };
    load_scenario_file(fixture(name)).expect("demo3 scenario")
}

pub fn demo3_dispatch_xml() -> Vec<u8> {
    std::fs::read(fixture("demo3/dispatch.xml")).expect("dispatch fixture")
}

pub fn demo3_dispatch() -> DispatchList {
    parse_dispatch_xml(&demo3_dispatch_xml()).expect("dispatch parses")
}

pub fn shape(name: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(fixture(&format!("api/{name}.shape.json"))).expect("shape fixture");
    serde_json::from_str(&text).expect("shape json")
}

pub fn links_for(host: &SimHost) -> Vec<ReaderLink> {
    host.addrs()
        .iter()
        .map(|(dp, addr)| ReaderLink {
            data_point_id: dp.clone(),
            work_center_id: host.world().scenario().data_point(dp).unwrap().work_center_id().to_string(),
            reader_endpoint: addr.to_string(),
        })
        .collect()
}

pub fn external_config(links: Vec<ReaderLink>) -> ServiceConfig {
    ServiceConfig {
        api_listen: "127.0.0.1:0".into(),
        data_points: links,
        exit_data_point_id: "DP7".into(),
        presence_timeout_s: 10,
        delay_grace_s: 300,
        log_path: None,
        ui_dir: None,
        dispatch_file: None,
        clock: ClockSource::External,
        tick_interval_ms: 1000,
        reconnect_initial_ms: 20,
        reconnect_max_ms: 200,
    }
}

/// Simulated readers and a service wired to them, on ephemeral ports,
/// with the scenario clock driven by the test.
pub struct Rig {
    pub host: SimHost,
    pub service: Service,
    pub times: Vec<u64>,
    pub cursor: usize,
    pub published: u64,
}

impl Rig {
    pub async fn start(scenario: Scenario, dispatch: Option<DispatchList>) -> Rig {
        Self::start_with(scenario, dispatch, |c| c).await
    }

    pub async fn start_with(
        scenario: Scenario,
        dispatch: Option<DispatchList>,
        adjust: impl FnOnce(ServiceConfig) -> ServiceConfig,
    ) -> Rig {
        let times: Vec<u64> = scenario.cycle_times().collect();
        let host = SimHost::start(SimWorld::new(scenario), Some("127.0.0.1:0")).await.expect("sim host");
        let n = host.addrs().len();
        let service = Service::start(adjust(external_config(links_for(&host)))).await.expect("service");
        if let Some(d) = dispatch {
            service.handle().import_dispatch(d).await.expect("import");
        }
        assert!(host.hub().wait_started(n, Duration::from_secs(10)).await, "readers did not all start");
        Rig { host, service, times, cursor: 0, published: 0 }
    }

    pub fn base(&self) -> String {
        format!("http://{}", self.service.api_addr())
    }

    pub fn done(&self) -> bool {
        self.cursor >= self.times.len()
    }

    /// Advances `cycles` reader cycles, waits until the service has taken
    /// in every published read, then ticks the engine to the last cycle
    /// time. Returns that time and the reads of each cycle.
    pub async fn step(&mut self, cycles: usize) -> (u64, Vec<Vec<sfc_core::llrp::ReadEvent>>) {
        let mut batches = Vec::new();
        let mut now = self.times[self.cursor.min(self.times.len() - 1)];
        for _ in 0..cycles {
            if self.done() {
                break;
            }
            now = self.times[self.cursor];
            self.cursor += 1;
            let reads = self.host.advance(now).expect("advance");
            self.published += reads.len() as u64;
            batches.push(reads);
        }
        let handle = self.service.handle();
        let deadline = tokio::time::Instant::now() + Duration::from_secs(10);
        while handle.stats().reads_ingested() < self.published {
            assert!(tokio::time::Instant::now() < deadline, "service never ingested all reads");
            tokio::time::sleep(Duration::from_millis(1)).await;
        }
        handle.tick(now);
        handle.sync().await;
        (now, batches)
    }
}

pub fn demo3_engine_config() -> sfc_core::engine::EngineConfig {
    let s = demo3_scenario(false);
    sfc_core::engine::EngineConfig::new(
        "DP7",
        s.data_points.iter().map(|d| (d.data_point_id().to_string(), d.work_center_id().to_string())),
    )
}

/// Feeds an engine the noise-free reads of `scenario` for every cycle up to
/// and including `until_us`, ticking and checking delays after each cycle.
pub fn drive(engine: &mut sfc_core::engine::Engine, world: &mut SimWorld, from_us: u64, until_us: u64) {
    let cycle = world.scenario().clock.cycle_us;
    let mut now = from_us;
    while now <= until_us {
        for r in world.step_world(now).expect("step") {
            let _ = engine.apply_read(&r, now);
        }
        engine.tick(now).expect("tick");
        engine.detect_delays(now).expect("delays");
        now += cycle;
    }
}

pub const T0: u64 = 1_362_556_800_000_000;
pub const SEC: u64 = 1_000_000;
pub const MIN: u64 = 60 * SEC;

/// A demo3 engine with the dispatch imported, run up to `at_us`.
pub fn demo3_engine_at(at_us: u64) -> sfc_core::engine::Engine {
    let mut e = sfc_core::engine::Engine::new(demo3_engine_config());
    e.import_dispatch(demo3_dispatch()).unwrap();
    let mut w = SimWorld::new(demo3_scenario(false));
    drive(&mut e, &mut w, T0, at_us);
    e
}
