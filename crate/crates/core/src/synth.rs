//! Seeded synthetic traffic clips and rater panels.
//!
//! Agents move on a straight multi-lane road along +x (lanes 3.5 m apart),
//! which is also the world frame of the emitted clip. The ego and the traffic follow an intelligent-driver car-following law; leads,
//! cut-ins and pedestrians follow scripted acceleration segments. Every
//! acceleration is held constant over one 0.1 s frame.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dspr::RiskVector;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scene::{Frame, KinematicState, ObjectKind, RatingPanel, Scenario, TrafficObject};

pub const FREQUENCY: f64 = 10.0;
pub const LANE_WIDTH: f64 = 3.5;
pub const MAX_SPEED: f64 = 40.0;
pub const MAX_ACCEL: f64 = 6.0;
/// Clip length of the default suite (s).
pub const SUITE_DURATION: f64 = 15.0;
/// Clips per kind in the default suite.
pub const SUITE_CLIPS_PER_KIND: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    FreeFlow,
    LeadBrake,
    CutIn,
    CrossingPed,
    Mixed,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::FreeFlow,
        ScenarioKind::LeadBrake,
        ScenarioKind::CutIn,
        ScenarioKind::CrossingPed,
        ScenarioKind::Mixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::FreeFlow => "free_flow",
            ScenarioKind::LeadBrake => "lead_brake",
            ScenarioKind::CutIn => "cut_in",
            ScenarioKind::CrossingPed => "crossing_ped",
            ScenarioKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy)]
enum Behavior {
    /// Constant velocity.
    Cruise,
    /// Car following toward a desired speed.
    Follow { desired: f64 },
    /// Scripted lead: brake at `start` to standstill, wait, then recover.
    Brake { start: f64, decel: f64, hold: f64, desired: f64 },
    /// Car following plus a lateral move of `shift` metres over `duration`.
    CutIn { start: f64, duration: f64, shift: f64, desired: f64 },
    /// Pedestrian crossing along `dir` (+1 or -1 in y) after `start`.
    Cross { start: f64, speed: f64, dir: f64 },
}

#[derive(Debug, Clone)]
struct Agent {
    id: String,
    kind: ObjectKind,
    pos: Vec2,
    vel: Vec2,
    acc: Vec2,
    heading: f64,
    length: f64,
    width: f64,
    behavior: Behavior,
    stopped_at: Option<f64>,
}

impl Agent {
    fn vehicle(id: String, x: f64, lane: f64, speed: f64, behavior: Behavior) -> Self {
        Agent {
            id,
            kind: ObjectKind::Vehicle,
            pos: Vec2::new(x, lane * LANE_WIDTH),
            vel: Vec2::new(speed, 0.0),
            acc: Vec2::ZERO,
            heading: 0.0,
            length: 4.8,
            width: 2.0,
            behavior,
            stopped_at: None,
        }
    }

    fn pedestrian(id: String, pos: Vec2, vel: Vec2, behavior: Behavior) -> Self {
        Agent {
            id,
            kind: ObjectKind::Pedestrian,
            pos,
            vel,
            acc: Vec2::ZERO,
            heading: if vel.norm() > 0.0 { vel.y.atan2(vel.x) } else { PI / 2.0 },
            length: 0.6,
            width: 0.6,
            behavior,
            stopped_at: None,
        }
    }
}

// Intelligent driver model constants.
const IDM_MAX_ACCEL: f64 = 1.5;
const IDM_COMFORT_DECEL: f64 = 2.5;
const IDM_MIN_GAP: f64 = 2.0;
const IDM_HEADWAY: f64 = 1.4;

fn idm(speed: f64, desired: f64, leader: Option<(f64, f64)>) -> f64 {
    let free = 1.0 - (speed / desired.max(0.1)).powi(4);
    let interaction = leader.map_or(0.0, |(gap, lead_speed)| {
        let dv = speed - lead_speed;
        let s_star = IDM_MIN_GAP
            + (speed * IDM_HEADWAY + speed * dv / (2.0 * (IDM_MAX_ACCEL * IDM_COMFORT_DECEL).sqrt())).max(0.0);
        (s_star / gap.max(0.1)).powi(2)
    });
    IDM_MAX_ACCEL * (free - interaction)
}

/// Nearest agent ahead in the same lane band: (bumper gap, longitudinal speed).
fn leader_of(agents: &[Agent], i: usize) -> Option<(f64, f64)> {
    let me = &agents[i];
    agents
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .filter(|(_, o)| {
            let band = 0.5 * (me.width + o.width) + 0.3;
            o.pos.x > me.pos.x && (o.pos.y - me.pos.y).abs() < band
        })
        .map(|(_, o)| (o.pos.x - me.pos.x - 0.5 * (me.length + o.length), o.vel.x))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

fn control(agents: &[Agent], i: usize, t: f64, dt: f64) -> Vec2 {
    let a = &agents[i];
    let speed = a.vel.x;
    let mut acc = match a.behavior {
        Behavior::Cruise => Vec2::ZERO,
        Behavior::Follow { desired } => Vec2::new(idm(speed, desired, leader_of(agents, i)), 0.0),
        Behavior::Brake { start, decel, hold, desired } => {
            let ax = if t < start {
                0.0
            } else if let Some(stop) = a.stopped_at {
                if t < stop + hold {
                    0.0
                } else {
                    idm(speed, desired, leader_of(agents, i))
                }
            } else {
                -decel
            };
            Vec2::new(ax, 0.0)
        }
        Behavior::CutIn { start, duration, shift, desired } => {
            let lateral = 4.0 * shift / (duration * duration);
            let ay = if t < start || t >= start + duration - 1e-9 {
                0.0
            } else if t < start + 0.5 * duration - 1e-9 {
                lateral
            } else {
                -lateral
            };
            Vec2::new(idm(speed, desired, leader_of(agents, i)), ay)
        }
        Behavior::Cross { start, speed: walk, dir } => {
            if t < start {
                Vec2::ZERO
            } else {
                let target = walk * dir;
                let dv = target - a.vel.y;
                Vec2::new(0.0, (dv / dt).clamp(-3.0, 3.0))
            }
        }
    };
    acc.x = acc.x.clamp(-MAX_ACCEL, MAX_ACCEL);
    acc.y = acc.y.clamp(-MAX_ACCEL, MAX_ACCEL);
    // never reverse: stop exactly within the frame instead
    if a.kind == ObjectKind::Vehicle && a.vel.x + acc.x * dt < 0.0 {
        acc.x = -a.vel.x / dt;
    }
    acc
}

struct World {
    agents: Vec<Agent>,
    road: u8,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn add_adjacent_traffic(rng: &mut ChaCha8Rng, agents: &mut Vec<Agent>, ego_speed: f64, count: usize, speed_spread: f64) {
    for n in 0..count {
        let lane = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let x = uniform(rng, -40.0, 60.0);
        let too_close = agents
            .iter()
            .any(|a| (a.pos.y - lane * LANE_WIDTH).abs() < 0.5 && (a.pos.x - x).abs() < 12.0);
        if too_close {
            continue;
        }
        let speed = (ego_speed + uniform(rng, -speed_spread, speed_spread)).clamp(3.0, 30.0);
        agents.push(Agent::vehicle(
            format!("t{n}"),
            x,
            lane,
            speed,
            Behavior::Follow { desired: speed },
        ));
    }
}

fn build_world(kind: ScenarioKind, rng: &mut ChaCha8Rng) -> World {
    let mut agents = Vec::new();
    let road = match kind {
        ScenarioKind::FreeFlow => {
            let v = uniform(rng, 8.0, 22.0);
            agents.push(Agent::vehicle("ego".into(), 0.0, 0.0, v, Behavior::Cruise));
            // Outer lanes at matched speed keep every object outside the domains.
            for n in 0..rng.random_range(2..5) {
                let lane = if n % 2 == 0 { 2.2 } else { -2.2 };
                let x = uniform(rng, -40.0, 40.0) + 25.0 * n as f64;
                agents.push(Agent::vehicle(format!("v{n}"), x, lane, v, Behavior::Cruise));
            }
            if rng.random_bool(0.5) {
                let x = uniform(rng, 90.0, 130.0);
                agents.push(Agent::vehicle("lead".into(), x, 0.0, v, Behavior::Cruise));
            }
            if rng.random_bool(0.5) { 1 } else { 2 }
        }
        ScenarioKind::LeadBrake => {
            let v = uniform(rng, 10.0, 20.0);
            agents.push(Agent::vehicle("ego".into(), 0.0, 0.0, v, Behavior::Follow { desired: v }));
            let gap = uniform(rng, 25.0, 45.0);
            agents.push(Agent::vehicle(
                "lead".into(),
                gap,
                0.0,
                v,
                Behavior::Brake {
                    start: uniform(rng, 1.5, 5.0),
                    decel: uniform(rng, 2.5, 6.0),
                    hold: uniform(rng, 1.0, 3.0),
                    desired: v,
                },
            ));
            let extra = rng.random_range(0..3);
            add_adjacent_traffic(rng, &mut agents, v, extra, 4.0);
            if rng.random_bool(0.5) { 1 } else { 2 }
        }
        ScenarioKind::CutIn => {
            let v = uniform(rng, 12.0, 20.0);
            agents.push(Agent::vehicle("ego".into(), 0.0, 0.0, v, Behavior::Follow { desired: v }));
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let cutter_speed = v - uniform(rng, -1.0, 6.0);
            agents.push(Agent::vehicle(
                "cutter".into(),
                uniform(rng, 6.0, 25.0),
                side,
                cutter_speed,
                Behavior::CutIn {
                    start: uniform(rng, 1.0, 5.0),
                    duration: uniform(rng, 2.0, 3.5),
                    shift: -side * LANE_WIDTH,
                    desired: cutter_speed,
                },
            ));
            let extra = rng.random_range(0..3);
            add_adjacent_traffic(rng, &mut agents, v, extra, 3.0);
            2
        }
        ScenarioKind::CrossingPed => {
            let v = uniform(rng, 7.0, 14.0);
            agents.push(Agent::vehicle("ego".into(), 0.0, 0.0, v, Behavior::Follow { desired: v }));
            let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let walk = uniform(rng, 1.1, 1.8);
            let start = uniform(rng, 0.5, 4.0);
            let x = v * (start + 5.0 / walk) + uniform(rng, -15.0, 10.0);
            agents.push(Agent::pedestrian(
                "ped".into(),
                Vec2::new(x.max(15.0), -dir * 6.0),
                Vec2::ZERO,
                Behavior::Cross { start, speed: walk, dir },
            ));
            for n in 0..rng.random_range(0..3) {
                let y = if rng.random_bool(0.5) { 7.5 } else { -7.5 };
                let vx = if rng.random_bool(0.5) { 1.3 } else { -1.3 };
                agents.push(Agent::pedestrian(
                    format!("walker{n}"),
                    Vec2::new(uniform(rng, -10.0, 60.0), y),
                    Vec2::new(vx, 0.0),
                    Behavior::Cruise,
                ));
            }
            [3, 4, 5][rng.random_range(0..3)]
        }
        ScenarioKind::Mixed => {
            let v = uniform(rng, 10.0, 18.0);
            agents.push(Agent::vehicle("ego".into(), 0.0, 0.0, v, Behavior::Follow { desired: v }));
            let extra = rng.random_range(2..5);
            add_adjacent_traffic(rng, &mut agents, v, extra, 6.0);
            if rng.random_bool(0.6) {
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let cutter_speed = v - uniform(rng, 0.0, 5.0);
                agents.push(Agent::vehicle(
                    "cutter".into(),
                    uniform(rng, 8.0, 30.0),
                    side,
                    cutter_speed,
                    Behavior::CutIn {
                        start: uniform(rng, 2.0, 8.0),
                        duration: uniform(rng, 2.0, 3.5),
                        shift: -side * LANE_WIDTH,
                        desired: cutter_speed,
                    },
                ));
            }
            if rng.random_bool(0.6) {
                let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let walk = uniform(rng, 1.1, 1.8);
                let start = uniform(rng, 3.0, 8.0);
                let x = v * (start + 5.0 / walk) + uniform(rng, -10.0, 20.0);
                agents.push(Agent::pedestrian(
                    "ped".into(),
                    Vec2::new(x.max(15.0), -dir * 6.0),
                    Vec2::ZERO,
                    Behavior::Cross { start, speed: walk, dir },
                ));
            }
            6
        }
    };
    World { agents, road }
}

/// Generates one clip of `kind` lasting `duration` seconds at 10 Hz.
pub fn gen_scenario(id: &str, kind: ScenarioKind, duration: f64, seed: u64) -> Result<Scenario> {
    if !(duration >= 2.0 && duration.is_finite()) {
        return Err(Error::InvalidArgument(format!("duration {duration} s must be >= 2 s")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let World { mut agents, road } = build_world(kind, &mut rng);
    let dt = 1.0 / FREQUENCY;
    let n_frames = (duration * FREQUENCY).round() as usize;

    let mut frames = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let t = k as f64 * dt;
        let accs: Vec<Vec2> = (0..agents.len()).map(|i| control(&agents, i, t, dt)).collect();
        for (a, acc) in agents.iter_mut().zip(&accs) {
            a.acc = *acc;
        }

        let snapshot = |a: &Agent| {
            KinematicState::new(a.pos, a.vel, a.acc, a.heading)
        };
        let ego = snapshot(&agents[0])?;
        let objects = agents[1..]
            .iter()
            .map(|a| {
                Ok(TrafficObject {
                    id: a.id.clone(),
                    kind: a.kind,
                    state: snapshot(a)?,
                    length: a.length,
                    width: a.width,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        frames.push(Frame {
            timestamp: k as f64 / FREQUENCY,
            ego,
            objects,
            road_condition: road,
        });

        for a in agents.iter_mut() {
            a.pos += a.vel * dt + a.acc * (0.5 * dt * dt);
            a.vel += a.acc * dt;
            if a.kind == ObjectKind::Vehicle && a.vel.x.abs() < 1e-9 {
                a.vel.x = 0.0;
            }
            let speed = a.vel.norm();
            if speed > MAX_SPEED {
                a.vel = a.vel * (MAX_SPEED / speed);
            }
            if speed > 0.5 {
                a.heading = a.vel.y.atan2(a.vel.x);
            }
            if let Behavior::Brake { start, .. } = a.behavior {
                if t >= start && a.stopped_at.is_none() && a.vel.x <= 0.0 {
                    a.stopped_at = Some(t + dt);
                }
            }
        }
    }
    Scenario::new(id, FREQUENCY, frames)
}

/// Derives a per-clip seed from a suite seed.
pub fn clip_seed(suite_seed: u64, index: usize) -> u64 {
    // splitmix64 step
    let mut z = suite_seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The default suite: 8 clips of each kind, 15 s each.
pub fn default_suite(seed: u64) -> Result<Vec<Scenario>> {
    let mut out = Vec::new();
    for (k, kind) in ScenarioKind::ALL.into_iter().enumerate() {
        for i in 0..SUITE_CLIPS_PER_KIND {
            let index = k * SUITE_CLIPS_PER_KIND + i;
            let id = format!("{}_{i:02}", kind.as_str());
            out.push(gen_scenario(&id, kind, SUITE_DURATION, clip_seed(seed, index))?);
        }
    }
    Ok(out)
}

/// A synthetic rater: quantizes the aggregate risk with personal cut-points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterProfile {
    pub cut_points: [f64; 3],
    pub bias: f64,
    pub noise_sd: f64,
    /// Reaction delay in frames.
    pub reaction_lag: usize,
}

pub const DEFAULT_CUT_POINTS: [f64; 3] = [5.0, 20.0, 60.0];
pub const DEFAULT_RATERS: usize = 12;
pub const DEFAULT_NOISE_SD: f64 = 0.3;
pub const DEFAULT_LAG: usize = 2;
/// Log-scale spread of the personal cut-point factors in the default panel.
pub const DEFAULT_SENSITIVITY_SPREAD: f64 = 0.35;

impl RaterProfile {
    pub fn new(cut_points: [f64; 3], bias: f64, noise_sd: f64, reaction_lag: usize) -> Result<Self> {
        let profile = RaterProfile {
            cut_points,
            bias,
            noise_sd,
            reaction_lag,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = self.cut_points;
        if !(a < b && b < c) {
            return Err(Error::InvalidArgument(format!(
                "cut-points {:?} must be strictly ascending",
                self.cut_points
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite() && self.bias.is_finite()) {
            return Err(Error::InvalidArgument("noise_sd must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Noise-free rating for an aggregate risk value.
    pub fn quantize(&self, aggregate: f64) -> u8 {
        1 + self.cut_points.iter().filter(|&&c| c < aggregate).count() as u8
    }
}

/// Panel of `count` raters whose cut-points are the defaults scaled by
/// factors spread evenly on a log scale over `exp(+-spread)`.
pub fn default_panel(count: usize, noise_sd: f64, spread: f64) -> Vec<RaterProfile> {
    (0..count)
        .map(|j| {
            let u = if count > 1 {
                -spread + 2.0 * spread * j as f64 / (count - 1) as f64
            } else {
                0.0
            };
            let f = u.exp();
            RaterProfile {
                cut_points: DEFAULT_CUT_POINTS.map(|c| c * f),
                bias: 0.0,
                noise_sd,
                reaction_lag: DEFAULT_LAG,
            }
        })
        .collect()
}

/// Rates every frame of a clip from its risk series. The aggregate is the
/// largest slot value.
pub fn simulate_raters(scenario_id: &str, risks: &[RiskVector], profiles: &[RaterProfile], seed: u64) -> Result<RatingPanel> {
    if profiles.is_empty() {
        return Err(Error::InvalidArgument("at least one rater profile required".into()));
    }
    for p in profiles {
        p.validate()?;
    }
    let aggregate: Vec<f64> = risks.iter().map(RiskVector::max).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ratings = profiles
        .iter()
        .map(|p| {
            let noise = Normal::new(0.0, p.noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok((0..aggregate.len())
                .map(|t| {
                    let g = aggregate[t.saturating_sub(p.reaction_lag)];
                    let eps = if p.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    let value = f64::from(p.quantize(g)) + p.bias + eps;
                    value.round().clamp(1.0, 4.0) as u8
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<u8>>>>()?;
    Ok(RatingPanel {
        scenario_id: scenario_id.to_string(),
        ratings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dspr::{risk_series, DsprModel};

    #[test]
    fn kinds_parse() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.as_str().parse::<ScenarioKind>().unwrap(), k);
        }
        assert!("rally".parse::<ScenarioKind>().is_err());
    }

    #[test]
    fn short_duration_rejected() {
        assert!(gen_scenario("x", ScenarioKind::Mixed, 1.5, 0).is_err());
    }

    #[test]
    fn deterministic_and_valid() {
        for kind in ScenarioKind::ALL {
            let a = gen_scenario("x", kind, 10.0, 42).unwrap();
            let b = gen_scenario("x", kind, 10.0, 42).unwrap();
            assert_eq!(a, b);
            a.validate().unwrap();
            assert_eq!(a.frames.len(), 100);
            for f in &a.frames {
                for s in std::iter::once(&f.ego).chain(f.objects.iter().map(|o| &o.state)) {
                    assert!(s.speed() <= MAX_SPEED + 1e-9);
                    assert!(s.acceleration.norm() <= MAX_ACCEL * 2f64.sqrt() + 1e-9);
                }
            }
        }
    }

    #[test]
    fn identical_noise_free_raters_agree() {
        let s = gen_scenario("m", ScenarioKind::Mixed, 5.0, 3).unwrap();
        let risks = risk_series(&DsprModel::default(), &s);
        let profile = RaterProfile::new(DEFAULT_CUT_POINTS, 0.0, 0.0, 2).unwrap();
        let panel = simulate_raters("m", &risks, &vec![profile; 5], 1).unwrap();
        for f in 0..panel.frames() {
            assert!(panel.ratings.iter().all(|r| r[f] == panel.ratings[0][f]));
        }
    }

    #[test]
    fn low_aggregate_rates_one() {
        let risks = vec![RiskVector::zeros(); 20];
        let panel = simulate_raters("z", &risks, &default_panel(4, 0.0, 0.3), 0).unwrap();
        assert!(panel.ratings.iter().flatten().all(|&r| r == 1));
    }

    #[test]
    fn cut_points_must_ascend() {
        assert!(RaterProfile::new([5.0, 5.0, 60.0], 0.0, 0.3, 2).is_err());
        assert!(RaterProfile::new([5.0, 20.0, 60.0], 0.0, -1.0, 2).is_err());
    }

    #[test]
    fn rater_needs_profiles() {
        assert!(simulate_raters("z", &[RiskVector::zeros()], &[], 0).is_err());
    }
}
