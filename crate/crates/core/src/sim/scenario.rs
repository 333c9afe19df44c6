use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::noise::NoiseModel;
use super::SimError;
use crate::tag::{
    encode_build_ticket, encode_product_tag, BuildTicketData, DecodedTag, OrderKind, OrderRef, ProductTagData,
    TagMemoryImage,
};

/// Permitted UHF band (865.7 – 867.5 MHz).
pub const BAND_KHZ: std::ops::RangeInclusive<u32> = 865_700..=867_500;
pub const DEFAULT_FREQUENCY_KHZ: u32 = 866_300;
pub const DEFAULT_ANTENNA_HEIGHT_M: f64 = 5.0;
pub const DEFAULT_READ_RADIUS_M: f64 = 3.6;
pub const DEFAULT_CYCLE_US: u64 = 500_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(self, to: Point, t: f64) -> Point {
        Point { x: self.x + (to.x - self.x) * t, y: self.y + (to.y - self.y) * t }
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// One reader/antenna set hung above a work center's input buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPointConfig {
    data_point_id: String,
    work_center_id: String,
    antenna_xy: Point,
    antenna_height_m: f64,
    read_radius_m: f64,
    listen_endpoint: String,
    frequency_khz: u32,
}

impl DataPointConfig {
    pub fn new(
        data_point_id: impl Into<String>,
        work_center_id: impl Into<String>,
        antenna_xy: Point,
        listen_endpoint: impl Into<String>,
    ) -> Self {
        DataPointConfig {
            data_point_id: data_point_id.into(),
            work_center_id: work_center_id.into(),
            antenna_xy,
            antenna_height_m: DEFAULT_ANTENNA_HEIGHT_M,
            read_radius_m: DEFAULT_READ_RADIUS_M,
            listen_endpoint: listen_endpoint.into(),
            frequency_khz: DEFAULT_FREQUENCY_KHZ,
        }
    }

    pub fn with_radius(mut self, read_radius_m: f64) -> Result<Self, SimError> {
        if !(read_radius_m > 0.0 && read_radius_m.is_finite()) {
            return Err(SimError::Validation(format!(
                "data point {}: read_radius_m must be positive, got {read_radius_m}",
                self.data_point_id
            )));
        }
        self.read_radius_m = read_radius_m;
        Ok(self)
    }

    pub fn with_frequency(mut self, frequency_khz: u32) -> Result<Self, SimError> {
        if !BAND_KHZ.contains(&frequency_khz) {
            return Err(SimError::Band { data_point_id: self.data_point_id, frequency_khz });
        }
        self.frequency_khz = frequency_khz;
        Ok(self)
    }

    pub fn with_height(mut self, antenna_height_m: f64) -> Self {
        self.antenna_height_m = antenna_height_m;
        self
    }

    pub fn with_endpoint(mut self, listen_endpoint: impl Into<String>) -> Self {
        self.listen_endpoint = listen_endpoint.into();
        self
    }

    pub fn data_point_id(&self) -> &str {
        &self.data_point_id
    }
    pub fn work_center_id(&self) -> &str {
        &self.work_center_id
    }
    pub fn antenna_xy(&self) -> Point {
        self.antenna_xy
    }
    pub fn antenna_height_m(&self) -> f64 {
        self.antenna_height_m
    }
    pub fn read_radius_m(&self) -> f64 {
        self.read_radius_m
    }
    pub fn listen_endpoint(&self) -> &str {
        &self.listen_endpoint
    }
    pub fn frequency_khz(&self) -> u32 {
        self.frequency_khz
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTag {
    pub tag_ref: String,
    pub payload: DecodedTag,
    pub image: TagMemoryImage,
    pub initial_xy: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    DataPoint(String),
    Position(Point),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub tag: String,
    pub target: Target,
    pub arrive_time_us: u64,
    pub depart_time_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clock {
    pub start_us: u64,
    #[serde(default = "default_cycle")]
    pub cycle_us: u64,
    /// Last cycle time the runner evaluates; defaults to one minute after
    /// the final scripted departure.
    #[serde(default)]
    pub end_us: Option<u64>,
}

fn default_cycle() -> u64 {
    DEFAULT_CYCLE_US
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub data_points: Vec<DataPointConfig>,
    pub tags: Vec<ScenarioTag>,
    pub script: Vec<Waypoint>,
    pub noise: NoiseModel,
    pub clock: Clock,
}

impl Scenario {
    pub fn data_point(&self, id: &str) -> Option<&DataPointConfig> {
        self.data_points.iter().find(|d| d.data_point_id == id)
    }

    pub fn tag(&self, tag_ref: &str) -> Option<&ScenarioTag> {
        self.tags.iter().find(|t| t.tag_ref == tag_ref)
    }

    pub fn waypoints_for<'a>(&'a self, tag_ref: &'a str) -> impl Iterator<Item = &'a Waypoint> + 'a {
        self.script.iter().filter(move |w| w.tag == tag_ref)
    }

    pub fn end_us(&self) -> u64 {
        self.clock.end_us.unwrap_or_else(|| {
            let last = self.script.iter().map(|w| w.depart_time_us).max().unwrap_or(self.clock.start_us);
            last + 60_000_000
        })
    }

    /// Cycle timestamps from clock start to `end_us`, inclusive.
    pub fn cycle_times(&self) -> impl Iterator<Item = u64> {
        let Clock { start_us, cycle_us, .. } = self.clock;
        let end = self.end_us();
        (0..).map(move |i| start_us + i * cycle_us).take_while(move |&t| t <= end)
    }
}

// ---- document format ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    data_points: Vec<DataPointDoc>,
    tags: Vec<TagDoc>,
    script: Vec<WaypointDoc>,
    #[serde(default)]
    noise: NoiseModel,
    clock: Clock,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataPointDoc {
    data_point_id: String,
    work_center_id: String,
    antenna_xy: Point,
    #[serde(default = "default_height")]
    antenna_height_m: f64,
    #[serde(default = "default_radius")]
    read_radius_m: f64,
    #[serde(default = "default_endpoint")]
    listen_endpoint: String,
    #[serde(default = "default_frequency")]
    frequency_khz: u32,
}

fn default_height() -> f64 {
    DEFAULT_ANTENNA_HEIGHT_M
}
fn default_radius() -> f64 {
    DEFAULT_READ_RADIUS_M
}
fn default_endpoint() -> String {
    format!("127.0.0.1:{}", crate::llrp::DEFAULT_READER_PORT)
}
fn default_frequency() -> u32 {
    DEFAULT_FREQUENCY_KHZ
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum OrderKindDoc {
    Customer,
    MakeToStock,
}

impl From<OrderKindDoc> for OrderKind {
    fn from(k: OrderKindDoc) -> Self {
        match k {
            OrderKindDoc::Customer => OrderKind::CustomerSalesOrder,
            OrderKindDoc::MakeToStock => OrderKind::InternalMakeToStock,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TagPayloadDoc {
    BuildTicket { order_kind: OrderKindDoc, order_id: u64, product_id: u64, route_id: u32, ticket_id: u64 },
    Product { order_kind: OrderKindDoc, order_id: u64, product_id: u64, serial: u64 },
}

#[derive(Debug, Serialize, Deserialize)]
struct TagDoc {
    tag_ref: String,
    initial_xy: Point,
    #[serde(flatten)]
    payload: TagPayloadDoc,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WaypointDoc {
    tag: String,
    #[serde(default)]
    data_point: Option<String>,
    #[serde(default)]
    position: Option<Point>,
    arrive_time_us: u64,
    depart_time_us: u64,
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<Scenario, SimError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    load_scenario(&text)
}

/// Parses and validates a scenario document. Tag images are written here
/// through the tag codec; nothing downstream writes tags over the air.
pub fn load_scenario(document: &str) -> Result<Scenario, SimError> {
    let doc: ScenarioDoc = serde_json::from_str(document).map_err(|e| SimError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let mut data_points = Vec::with_capacity(doc.data_points.len());
    let mut seen_dp = HashSet::new();
    for d in doc.data_points {
        if !seen_dp.insert(d.data_point_id.clone()) {
            return Err(SimError::Validation(format!("duplicate data point {}", d.data_point_id)));
        }
        let dp = DataPointConfig::new(d.data_point_id, d.work_center_id, d.antenna_xy, d.listen_endpoint)
            .with_height(d.antenna_height_m)
            .with_radius(d.read_radius_m)?
            .with_frequency(d.frequency_khz)?;
        data_points.push(dp);
    }

    let mut tags = Vec::with_capacity(doc.tags.len());
    let mut seen_tag = HashSet::new();
    for t in doc.tags {
        if !seen_tag.insert(t.tag_ref.clone()) {
            return Err(SimError::Validation(format!("duplicate tag {}", t.tag_ref)));
        }
        let (payload, image) = match t.payload {
            TagPayloadDoc::BuildTicket { order_kind, order_id, product_id, route_id, ticket_id } => {
                let data = BuildTicketData {
                    order: OrderRef { kind: order_kind.into(), order_id },
                    product_id,
                    route_id,
                    ticket_id,
                };
                (DecodedTag::BuildTicket(data), encode_build_ticket(&data))
            }
            TagPayloadDoc::Product { order_kind, order_id, product_id, serial } => {
                let data = ProductTagData { order: OrderRef { kind: order_kind.into(), order_id }, product_id, serial };
                (DecodedTag::Product(data), encode_product_tag(&data))
            }
        };
        tags.push(ScenarioTag { tag_ref: t.tag_ref, payload, image, initial_xy: t.initial_xy });
    }

    let mut script = Vec::with_capacity(doc.script.len());
    let mut last_depart: HashMap<String, u64> = HashMap::new();
    for (i, w) in doc.script.into_iter().enumerate() {
        let name = format!("waypoint #{i} (tag {})", w.tag);
        if !seen_tag.contains(&w.tag) {
            return Err(SimError::Validation(format!("{name}: unknown tag")));
        }
        let target = match (w.data_point, w.position) {
            (Some(dp), None) => {
                if !seen_dp.contains(&dp) {
                    return Err(SimError::Validation(format!("{name}: unknown data point {dp}")));
                }
                Target::DataPoint(dp)
            }
            (None, Some(p)) => Target::Position(p),
            _ => return Err(SimError::Validation(format!("{name}: exactly one of data_point or position required"))),
        };
        if w.arrive_time_us >= w.depart_time_us {
            return Err(SimError::Validation(format!(
                "{name}: arrive_time_us {} must be before depart_time_us {}",
                w.arrive_time_us, w.depart_time_us
            )));
        }
        if let Some(&prev) = last_depart.get(&w.tag) {
            if w.arrive_time_us < prev {
                return Err(SimError::Validation(format!(
                    "{name}: arrives at {} before the previous waypoint departs at {prev}",
                    w.arrive_time_us
                )));
            }
        }
        last_depart.insert(w.tag.clone(), w.depart_time_us);
        script.push(Waypoint { tag: w.tag, target, arrive_time_us: w.arrive_time_us, depart_time_us: w.depart_time_us });
    }

    doc.noise.validate()?;
    if doc.clock.cycle_us == 0 {
        return Err(SimError::Validation("clock.cycle_us must be positive".into()));
    }

    Ok(Scenario { data_points, tags, script, noise: doc.noise, clock: doc.clock })
}
