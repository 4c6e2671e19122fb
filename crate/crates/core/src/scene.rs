//! Traffic scene types, scene-file ingestion and nearest-object slotting.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec2};

/// Vehicle slots in the risk vector.
pub const VEHICLE_SLOTS: usize = 30;
/// Pedestrian slots in the risk vector.
pub const PEDESTRIAN_SLOTS: usize = 10;
/// Total slot count: vehicles first, then pedestrians.
pub const SLOT_COUNT: usize = VEHICLE_SLOTS + PEDESTRIAN_SLOTS;

/// Number of road-condition categories.
pub const ROAD_CLASSES: u8 = 6;

/// Allowed deviation of frame spacing from `1 / frequency`.
pub const TIMESTAMP_TOLERANCE: f64 = 1e-6;

/// Planar kinematic snapshot. Heading is in radians, counterclockwise from +x,
/// normalized to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub acceleration: Vec2,
    pub heading: f64,
}

impl KinematicState {
    /// Builds a validated state; the heading is wrapped into `(-pi, pi]`.
    pub fn new(position: Vec2, velocity: Vec2, acceleration: Vec2, heading: f64) -> Result<Self> {
        let state = KinematicState {
            position,
            velocity,
            acceleration,
            heading: wrap_angle(heading),
        };
        state.validate()?;
        Ok(state)
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.position.is_finite()
            && self.velocity.is_finite()
            && self.acceleration.is_finite()
            && self.heading.is_finite();
        if !finite {
            return Err(Error::Validation("non-finite kinematic component".into()));
        }
        if !(self.heading > -std::f64::consts::PI && self.heading <= std::f64::consts::PI) {
            return Err(Error::Validation(format!(
                "heading {} outside (-pi, pi]",
                self.heading
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Vehicle,
    Pedestrian,
}

impl ObjectKind {
    /// Footprint (length, width) used when a log omits dimensions.
    pub fn default_footprint(self) -> (f64, f64) {
        match self {
            ObjectKind::Vehicle => (4.8, 2.0),
            ObjectKind::Pedestrian => (0.6, 0.6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficObject {
    pub id: String,
    pub kind: ObjectKind,
    pub state: KinematicState,
    pub length: f64,
    pub width: f64,
}

impl TrafficObject {
    /// Object with the default footprint for its kind.
    pub fn new(id: impl Into<String>, kind: ObjectKind, state: KinematicState) -> Self {
        let (length, width) = kind.default_footprint();
        TrafficObject {
            id: id.into(),
            kind,
            state,
            length,
            width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.state.validate()?;
        if !(self.length > 0.0 && self.width > 0.0 && self.length.is_finite() && self.width.is_finite()) {
            return Err(Error::Validation(format!(
                "object {} has non-positive footprint {}x{}",
                self.id, self.length, self.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub timestamp: f64,
    pub ego: KinematicState,
    pub objects: Vec<TrafficObject>,
    /// Road condition class in `1..=6`.
    pub road_condition: u8,
}

impl Frame {
    pub fn validate(&self) -> Result<()> {
        if !self.timestamp.is_finite() {
            return Err(Error::Validation("non-finite timestamp".into()));
        }
        if !(1..=ROAD_CLASSES).contains(&self.road_condition) {
            return Err(Error::Validation(format!(
                "road condition {} outside 1..={ROAD_CLASSES}",
                self.road_condition
            )));
        }
        self.ego.validate()?;
        let mut ids = HashSet::with_capacity(self.objects.len());
        for obj in &self.objects {
            obj.validate()?;
            if !ids.insert(obj.id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate object id {} at t={}",
                    obj.id, self.timestamp
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    /// Sampling frequency in Hz.
    pub frequency: f64,
    pub frames: Vec<Frame>,
}

impl Scenario {
    pub fn new(id: impl Into<String>, frequency: f64, frames: Vec<Frame>) -> Result<Self> {
        let scenario = Scenario {
            id: id.into(),
            frequency,
            frames,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::Validation(format!(
                "frequency {} must be positive",
                self.frequency
            )));
        }
        let step = 1.0 / self.frequency;
        for (i, frame) in self.frames.iter().enumerate() {
            frame.validate()?;
            if i > 0 {
                let dt = frame.timestamp - self.frames[i - 1].timestamp;
                if dt <= 0.0 {
                    return Err(Error::Validation(format!(
                        "timestamps not strictly increasing at frame {i} (t={})",
                        frame.timestamp
                    )));
                }
                if (dt - step).abs() > TIMESTAMP_TOLERANCE {
                    return Err(Error::Validation(format!(
                        "frame spacing {dt} at frame {i} differs from 1/{} s",
                        self.frequency
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Subjective risk ratings of one scenario: one row per participant, one
/// column per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingPanel {
    pub scenario_id: String,
    pub ratings: Vec<Vec<u8>>,
}

impl RatingPanel {
    pub fn participants(&self) -> usize {
        self.ratings.len()
    }

    pub fn frames(&self) -> usize {
        self.ratings.first().map_or(0, Vec::len)
    }
}

/// Checks a panel against its scenario and merges rating 5 into 4.
pub fn validate_panel(panel: &RatingPanel, scenario: &Scenario) -> Result<RatingPanel> {
    let mut checked = panel.clone();
    for (p, row) in checked.ratings.iter_mut().enumerate() {
        if row.len() != scenario.frames.len() {
            return Err(Error::Dimension {
                expected: scenario.frames.len(),
                found: row.len(),
                context: "rating panel columns vs scenario frames",
            });
        }
        for (f, cell) in row.iter_mut().enumerate() {
            match *cell {
                1..=4 => {}
                5 => *cell = 4,
                other => {
                    return Err(Error::Validation(format!(
                        "rating {other} of participant {p} at frame {f} outside 1..=5"
                    )))
                }
            }
        }
    }
    Ok(checked)
}

/// Fills the 40 risk slots: the 30 nearest vehicles then the 10 nearest
/// pedestrians, each sorted by center distance to the ego (ties by id).
pub fn nearest_objects(frame: &Frame) -> [Option<&TrafficObject>; SLOT_COUNT] {
    let ego = frame.ego.position;
    let by_distance = |a: &&TrafficObject, b: &&TrafficObject| {
        let da = a.state.position.distance(ego);
        let db = b.state.position.distance(ego);
        da.partial_cmp(&db).unwrap_or(Ordering::Equal).then_with(|| a.id.cmp(&b.id))
    };

    let mut slots = [None; SLOT_COUNT];
    for (kind, offset, capacity) in [
        (ObjectKind::Vehicle, 0, VEHICLE_SLOTS),
        (ObjectKind::Pedestrian, VEHICLE_SLOTS, PEDESTRIAN_SLOTS),
    ] {
        let mut group: Vec<&TrafficObject> =
            frame.objects.iter().filter(|o| o.kind == kind).collect();
        group.sort_by(by_distance);
        for (i, obj) in group.into_iter().take(capacity).enumerate() {
            slots[offset + i] = Some(obj);
        }
    }
    slots
}

// Scene file records ------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RecordId {
    Text(String),
    Int(i64),
}

#[derive(Debug, Serialize, Deserialize)]
struct EgoRecord {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    ax: f64,
    ay: f64,
    heading_deg: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectRecord {
    id: RecordId,
    kind: ObjectKind,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    ax: f64,
    ay: f64,
    heading_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    len: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wid: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRecord {
    t: f64,
    ego: EgoRecord,
    road: i64,
    #[serde(default)]
    objects: Vec<ObjectRecord>,
}

fn state_from(x: f64, y: f64, vx: f64, vy: f64, ax: f64, ay: f64, heading_deg: f64) -> Result<KinematicState> {
    KinematicState::new(
        Vec2::new(x, y),
        Vec2::new(vx, vy),
        Vec2::new(ax, ay),
        heading_deg.to_radians(),
    )
}

impl FrameRecord {
    fn into_frame(self) -> Result<Frame> {
        let e = self.ego;
        let ego = state_from(e.x, e.y, e.vx, e.vy, e.ax, e.ay, e.heading_deg)?;
        let road_condition = u8::try_from(self.road)
            .map_err(|_| Error::Validation(format!("road condition {} out of range", self.road)))?;
        let objects = self
            .objects
            .into_iter()
            .map(|o| {
                let state = state_from(o.x, o.y, o.vx, o.vy, o.ax, o.ay, o.heading_deg)?;
                let (dl, dw) = o.kind.default_footprint();
                Ok(TrafficObject {
                    id: match o.id {
                        RecordId::Text(s) => s,
                        RecordId::Int(i) => i.to_string(),
                    },
                    kind: o.kind,
                    state,
                    length: o.len.unwrap_or(dl),
                    width: o.wid.unwrap_or(dw),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Frame {
            timestamp: self.t,
            ego,
            objects,
            road_condition,
        })
    }

    fn from_frame(frame: &Frame) -> Self {
        let s = &frame.ego;
        FrameRecord {
            t: frame.timestamp,
            ego: EgoRecord {
                x: s.position.x,
                y: s.position.y,
                vx: s.velocity.x,
                vy: s.velocity.y,
                ax: s.acceleration.x,
                ay: s.acceleration.y,
                heading_deg: s.heading.to_degrees(),
            },
            road: i64::from(frame.road_condition),
            objects: frame
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    id: RecordId::Text(o.id.clone()),
                    kind: o.kind,
                    x: o.state.position.x,
                    y: o.state.position.y,
                    vx: o.state.velocity.x,
                    vy: o.state.velocity.y,
                    ax: o.state.acceleration.x,
                    ay: o.state.acceleration.y,
                    heading_deg: o.state.heading.to_degrees(),
                    len: Some(o.length),
                    wid: Some(o.width),
                })
                .collect(),
        }
    }
}

/// Default sampling frequency assumed for single-frame files.
pub const DEFAULT_FREQUENCY: f64 = 10.0;

/// Parses a JSON Lines scene stream. The frequency is inferred from the
/// first frame spacing.
pub fn parse_scenario(reader: impl Read, id: &str, source: &Path) -> Result<Scenario> {
    let mut frames = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FrameRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: source.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        frames.push(record.into_frame()?);
    }
    let frequency = match frames.as_slice() {
        [a, b, ..] if b.timestamp > a.timestamp => 1.0 / (b.timestamp - a.timestamp),
        [_, _, ..] => {
            return Err(Error::Validation(format!(
                "timestamps not strictly increasing at frame 1 in {}",
                source.display()
            )))
        }
        _ => DEFAULT_FREQUENCY,
    };
    // Snap to the nearest 1e-6 Hz so that re-serialized files infer the same value.
    let frequency = (frequency * 1e6).round() / 1e6;
    Scenario::new(id, frequency, frames)
}

/// Loads and validates a scene file; the scenario id is the file stem.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scenario")
        .to_string();
    parse_scenario(file, &id, path)
}

pub fn write_scenario_to(scenario: &Scenario, mut writer: impl Write) -> Result<()> {
    for frame in &scenario.frames {
        serde_json::to_writer(&mut writer, &FrameRecord::from_frame(frame))?;
        writer.write_all(b"\n").map_err(|e| Error::io("<scene stream>", e))?;
    }
    Ok(())
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_scenario_to(scenario, &mut writer)?;
    writer.flush().map_err(|e| Error::io(path, e))
}

// Rating panel CSV --------------------------------------------------------
//
// Header row names each column `<scenario id>@<frame index>`; every further
// row is one participant. A single file may hold several scenarios.

pub fn write_panels(panels: &[RatingPanel], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let participants = panels.first().map_or(0, RatingPanel::participants);
    if let Some(bad) = panels.iter().find(|p| p.participants() != participants) {
        return Err(Error::Dimension {
            expected: participants,
            found: bad.participants(),
            context: "participants per panel in one file",
        });
    }
    let mut writer = csv::Writer::from_path(path)?;
    let header: Vec<String> = panels
        .iter()
        .flat_map(|p| (0..p.frames()).map(move |f| format!("{}@{f}", p.scenario_id)))
        .collect();
    writer.write_record(&header)?;
    for row in 0..participants {
        let record: Vec<String> = panels
            .iter()
            .flat_map(|p| p.ratings[row].iter().map(u8::to_string))
            .collect();
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_panels(path: impl AsRef<Path>) -> Result<Vec<RatingPanel>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();

    // (scenario id, column range)
    let mut groups: Vec<(String, usize, usize)> = Vec::new();
    for (col, name) in header.iter().enumerate() {
        let (sid, frame) = name.rsplit_once('@').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("column `{name}` is not `<scenario>@<frame>`"),
        })?;
        let frame: usize = frame.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("bad frame index in `{name}`"),
        })?;
        match groups.last_mut() {
            Some((id, start, end)) if id == sid && frame == *end - *start => *end += 1,
            _ => {
                if frame != 0 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: 1,
                        message: format!("columns of `{sid}` must start at frame 0"),
                    });
                }
                groups.push((sid.to_string(), col, col + 1));
            }
        }
    }

    let mut panels: Vec<RatingPanel> = groups
        .iter()
        .map(|(id, _, _)| RatingPanel {
            scenario_id: id.clone(),
            ratings: Vec::new(),
        })
        .collect();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: row_idx + 2,
                message: format!("expected {} cells, found {}", header.len(), record.len()),
            });
        }
        let cells = record
            .iter()
            .map(|c| {
                c.trim().parse::<u8>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: row_idx + 2,
                    message: format!("non-integer rating `{c}`"),
                })
            })
            .collect::<Result<Vec<u8>>>()?;
        for (panel, (_, start, end)) in panels.iter_mut().zip(&groups) {
            panel.ratings.push(cells[*start..*end].to_vec());
        }
    }
    Ok(panels)
}
