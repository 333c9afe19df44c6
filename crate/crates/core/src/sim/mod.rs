//! Simulated physical layer: scripted tag movement across the shop floor,
//! RF noise, and LLRP reader endpoints serving each data point.

mod noise;
mod scenario;
mod session;
mod world;

use thiserror::Error;

pub use noise::{apply_noise, NoiseModel};
pub use scenario::{
    load_scenario, load_scenario_file, Clock, DataPointConfig, Point, Scenario, ScenarioTag, Target, Waypoint,
    BAND_KHZ, DEFAULT_CYCLE_US, DEFAULT_READ_RADIUS_M,
};
pub use session::{status, ReaderEndpoint, ReaderHub, SimHost};
pub use world::{in_read_zone, SimWorld};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("scenario invalid: {0}")]
    Validation(String),
    #[error("data point {data_point_id}: {frequency_khz} kHz outside the permitted 865700-867500 kHz band")]
    Band { data_point_id: String, frequency_khz: u32 },
    #[error("clock regression: {now_us} is before {last_us}")]
    ClockRegression { now_us: u64, last_us: u64 },
    #[error("time {now_us} is not on a read cycle (start {start_us}, period {cycle_us})")]
    Misaligned { now_us: u64, start_us: u64, cycle_us: u64 },
    #[error("{0}")]
    Io(String),
}
