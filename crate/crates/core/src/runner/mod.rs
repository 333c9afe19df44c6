//! Scripted end-to-end runs: simulated readers and the engine in one
//! process on a logical clock, checked against the script oracle.

pub mod oracle;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{
    DelayAlert, DispatchList, Engine, EngineConfig, EngineError, FinishedGoodsRecord, TransitionKind, WipTransition,
    DEFAULT_DELAY_GRACE_S, DEFAULT_PRESENCE_TIMEOUT_S,
};
use crate::llrp::{build_tag_report, encode_message, parse_tag_report, Framer};
use crate::sim::{apply_noise, Scenario, SimError, SimWorld, Target};
use crate::tag::DecodedTag;
use oracle::Entry;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub drop_probability: Option<f64>,
    pub duplicate_probability: Option<f64>,
    /// defaults to the one data point product tags are scripted to visit
    pub exit_data_point_id: Option<String>,
    pub presence_timeout_s: u64,
    pub delay_grace_s: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: None,
            drop_probability: None,
            duplicate_probability: None,
            exit_data_point_id: None,
            presence_timeout_s: DEFAULT_PRESENCE_TIMEOUT_S,
            delay_grace_s: DEFAULT_DELAY_GRACE_S,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    /// every transition, alert and finished good, timestamps included
    Exact,
    /// per ticket: the sequence of Arrived (seq, data point) and Exited
    Skeleton,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    /// "transitions", "alerts" or "finished_goods"
    pub section: String,
    pub ticket_id: Option<u64>,
    pub index: usize,
    pub expected: Option<String>,
    pub actual: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub generated_at: String,
    pub verdict: &'static str,
    pub match_rule: MatchRule,
    pub exit_data_point_id: String,
    pub cycles: u64,
    pub reads: u64,
    pub read_errors: Vec<String>,
    pub expected_transition_count: usize,
    pub transitions: Vec<WipTransition>,
    pub alerts: Vec<DelayAlert>,
    pub finished_goods: Vec<FinishedGoodsRecord>,
    pub first_divergence: Option<Divergence>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.first_divergence.is_none()
    }
}

pub struct RunOutcome {
    pub report: RunReport,
    pub engine: Engine,
    pub expected: oracle::Expected,
}

fn exit_point(scenario: &Scenario, opts: &RunOptions) -> Result<String, RunError> {
    if let Some(dp) = &opts.exit_data_point_id {
        return match scenario.data_point(dp) {
            Some(_) => Ok(dp.clone()),
            None => Err(RunError::Setup(format!("exit data point {dp} is not in the scenario"))),
        };
    }
    let mut found: Vec<&str> = scenario
        .script
        .iter()
        .filter(|w| scenario.tag(&w.tag).is_some_and(|t| matches!(t.payload, DecodedTag::Product(_))))
        .filter_map(|w| match &w.target {
            Target::DataPoint(id) => Some(id.as_str()),
            Target::Position(_) => None,
        })
        .collect();
    found.sort_unstable();
    found.dedup();
    match found.as_slice() {
        [one] => Ok(one.to_string()),
        _ => Err(RunError::Setup(format!(
            "cannot infer the exit gate: product tags visit {found:?}; name it explicitly"
        ))),
    }
}

fn entry(t: &WipTransition) -> Entry {
    (t.kind, t.seq, t.data_point_id.clone(), t.at_us)
}

fn show<T: std::fmt::Debug>(v: Option<&T>) -> Option<String> {
    v.map(|x| format!("{x:?}"))
}

fn first_mismatch<T: PartialEq + std::fmt::Debug>(
    section: &str,
    ticket_id: Option<u64>,
    want: &[T],
    got: &[T],
) -> Option<Divergence> {
    let n = want.len().max(got.len());
    (0..n).find(|&i| want.get(i) != got.get(i)).map(|i| Divergence {
        section: section.into(),
        ticket_id,
        index: i,
        expected: show(want.get(i)),
        actual: show(got.get(i)),
    })
}

fn skeleton(h: &[Entry]) -> Vec<Entry> {
    h.iter()
        .filter(|e| matches!(e.0, TransitionKind::Arrived | TransitionKind::Exited))
        .map(|(k, s, dp, _)| (*k, *s, dp.clone(), 0))
        .collect()
}

/// Runs `scenario` against `dispatch` to completion and judges the result.
pub fn run_scenario(mut scenario: Scenario, dispatch: DispatchList, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    if let Some(seed) = opts.seed {
        scenario.noise.rng_seed = seed;
    }
    if let Some(p) = opts.drop_probability {
        scenario.noise.drop_probability = p;
    }
    if let Some(p) = opts.duplicate_probability {
        scenario.noise.duplicate_probability = p;
    }
    scenario.noise.validate()?;
    let exit = exit_point(&scenario, opts)?;
    let config = EngineConfig::new(
        exit.clone(),
        scenario.data_points.iter().map(|d| (d.data_point_id().to_string(), d.work_center_id().to_string())),
    )
    .with_presence_timeout_s(opts.presence_timeout_s)
    .with_delay_grace_s(opts.delay_grace_s);
    config.validate().map_err(RunError::Setup)?;

    let timeout = config.presence_timeout_us;
    let grace = config.delay_grace_us;
    let expected = oracle::expect(&scenario, &dispatch, &exit, timeout, grace);

    let mut engine = Engine::new(config);
    engine.import_dispatch(dispatch)?;
    let noise = scenario.noise;
    let dp_ids: Vec<String> = scenario.data_points.iter().map(|d| d.data_point_id().to_string()).collect();
    let mut framers: BTreeMap<String, Framer> = dp_ids.iter().map(|d| (d.clone(), Framer::new())).collect();
    let times: Vec<u64> = scenario.cycle_times().collect();
    let mut world = SimWorld::new(scenario);
    let (mut reads_total, mut msg_id) = (0u64, 0u32);
    let mut read_errors = Vec::new();

    for &now in &times {
        let raw = world.step_world(now)?;
        let reads = apply_noise(&raw, &noise, world.cycle_index(now));
        reads_total += reads.len() as u64;
        for dp in &dp_ids {
            let mine: Vec<_> = reads.iter().filter(|r| r.data_point_id.as_deref() == Some(dp)).cloned().collect();
            if mine.is_empty() {
                continue;
            }
            // through the wire format, as a controller would see it
            msg_id = msg_id.wrapping_add(1);
            let bytes = encode_message(&build_tag_report(&mine, msg_id)).map_err(|e| RunError::Setup(e.to_string()))?;
            let framer = framers.get_mut(dp).expect("framer per data point");
            for msg in framer.feed(&bytes).map_err(|e| RunError::Setup(e.to_string()))? {
                for mut ev in parse_tag_report(&msg).map_err(|e| RunError::Setup(e.to_string()))? {
                    ev.data_point_id = Some(dp.clone());
                    if let Err(e) = engine.apply_read(&ev, now) {
                        read_errors.push(format!("{now} {dp}: {e}"));
                    }
                }
            }
        }
        engine.tick(now)?;
        engine.detect_delays(now)?;
    }

    let transitions = engine.transitions().to_vec();
    let mut actual: BTreeMap<u64, Vec<Entry>> = BTreeMap::new();
    for t in &transitions {
        actual.entry(t.ticket_id).or_default().push(entry(t));
    }
    let lossless = noise.is_lossless();
    let rule = if lossless { MatchRule::Exact } else { MatchRule::Skeleton };
    let mut ids: Vec<u64> = actual.keys().chain(expected.histories.keys()).copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let empty = Vec::new();
    let mut divergence = ids.iter().find_map(|id| {
        let want = expected.histories.get(id).unwrap_or(&empty);
        let got = actual.get(id).unwrap_or(&empty);
        match rule {
            MatchRule::Exact => first_mismatch("transitions", Some(*id), want, got),
            MatchRule::Skeleton => first_mismatch("transitions", Some(*id), &skeleton(want), &skeleton(got)),
        }
    });
    let book = engine.book();
    let got_fg: Vec<(u64, u64, u64)> =
        book.finished_goods().iter().map(|f| (f.product_id, f.serial, f.exited_at_us)).collect();
    if divergence.is_none() {
        divergence = match rule {
            MatchRule::Exact => first_mismatch("finished_goods", None, &expected.finished, &got_fg),
            MatchRule::Skeleton => {
                let units = |v: &[(u64, u64, u64)]| {
                    let mut u: Vec<(u64, u64)> = v.iter().map(|x| (x.0, x.1)).collect();
                    u.sort_unstable();
                    u
                };
                first_mismatch("finished_goods", None, &units(&expected.finished), &units(&got_fg))
            }
        };
    }
    if divergence.is_none() && lossless {
        let mut got: Vec<_> = book.alerts().iter().map(|a| (a.raised_at_us, a.ticket_id, a.seq, a.kind)).collect();
        got.sort();
        divergence = first_mismatch("alerts", None, &expected.alerts, &got);
    }

    let report = RunReport {
        generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        verdict: if divergence.is_none() { "pass" } else { "fail" },
        match_rule: rule,
        exit_data_point_id: exit,
        cycles: times.len() as u64,
        reads: reads_total,
        read_errors,
        expected_transition_count: expected.histories.values().map(Vec::len).sum(),
        transitions,
        alerts: book.alerts().to_vec(),
        finished_goods: book.finished_goods().to_vec(),
        first_divergence: divergence,
    };
    Ok(RunOutcome { report, engine, expected })
}
