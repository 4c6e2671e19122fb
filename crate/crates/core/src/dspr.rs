//! The perceived-risk model: decay coefficients, observation sensitivity,
//! kinetic energy terms and their composition into the 40-slot risk vector.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bearing, contact_angle, first_contact, propagate, rpd_dimensions, RpdTier};
use crate::params::DsprParams;
use crate::scene::{nearest_objects, Frame, KinematicState, ObjectKind, Scenario, TrafficObject, SLOT_COUNT};

/// Time decay: `t_p / (t_p + t_r)`, in `[0.5, 1]`.
pub fn time_decay(t_r: f64, horizon: f64) -> Result<f64> {
    if !(0.0..=horizon).contains(&t_r) {
        return Err(Error::InvalidArgument(format!(
            "activation time {t_r} outside [0, {horizon}]"
        )));
    }
    Ok(horizon / (horizon + t_r))
}

/// Direction-dependent observation sensitivity for a bearing in `[0, pi]`.
///
/// Evaluated exactly as the piecewise formula is written; the two branches
/// do not meet at `pi/2` (0.5 from the left, 3.3 at and right of it with the
/// default constants).
pub fn observation_sensitivity(theta: f64, params: &DsprParams) -> Result<f64> {
    if !(0.0..=PI).contains(&theta) {
        return Err(Error::InvalidArgument(format!("bearing {theta} outside [0, pi]")));
    }
    let (a, b, c) = (params.sens_a, params.sens_b, params.sens_c);
    Ok(if theta < FRAC_PI_2 {
        a * ((2.0 * theta).cos() + 1.0) + b * (1.0 - (4.0 * theta).cos()) + c
    } else {
        a * ((2.0 * theta - PI).cos() + 1.0) + b * (1.0 - (4.0 * theta - PI).cos()) + c
    })
}

fn spatial_term(theta: f64, distance: f64, l_s: f64, w_s: f64, params: &DsprParams) -> f64 {
    let raw = (l_s - theta.sin() * (l_s - w_s)) / distance.max(params.min_distance);
    if params.clamp_spatial {
        raw.min(1.0)
    } else {
        raw
    }
}

/// Spatial decay pair `(alpha_ss, alpha_ws)`.
///
/// Both numerators use the strong-domain dimensions at the current ego speed.
/// A strong-domain contact leaves `alpha_ws = 1`.
pub fn spatial_decay(
    tier: RpdTier,
    theta_init: f64,
    d_init: f64,
    theta_contact: f64,
    d_at_contact: f64,
    ego_speed: f64,
    params: &DsprParams,
) -> (f64, f64) {
    let (l_s, w_s) = rpd_dimensions(ego_speed, RpdTier::Strong, params);
    let alpha_ss = spatial_term(theta_init, d_init, l_s, w_s, params);
    let alpha_ws = match tier {
        RpdTier::Strong => 1.0,
        RpdTier::Weak => spatial_term(theta_contact, d_at_contact, l_s, w_s, params),
    };
    (alpha_ss, alpha_ws)
}

/// Speeds entering the relative kinetic energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeMotion {
    /// `|v_ego - v_obj|`
    pub rel_speed: f64,
    /// `|v_ego| + |v_obj|`
    pub speed_sum: f64,
    /// Projection of `v_obj - v_ego` on the ego-to-object direction;
    /// negative when closing.
    pub closing_projection: f64,
}

impl RelativeMotion {
    pub fn between(ego: &KinematicState, obj: &KinematicState) -> Self {
        let rel_v = obj.velocity - ego.velocity;
        let offset = obj.position - ego.position;
        let dist = offset.norm();
        let closing_projection = if dist > 0.0 {
            rel_v.dot(offset * (1.0 / dist))
        } else {
            // coincident centers: treat the full relative speed as closing
            -rel_v.norm()
        };
        RelativeMotion {
            rel_speed: rel_v.norm(),
            speed_sum: ego.speed() + obj.speed(),
            closing_projection,
        }
    }
}

/// Relative kinetic energy of an activated object, with both states already
/// propagated to the activation time.
pub fn relative_kinetic_energy(
    ego_at: &KinematicState,
    obj_at: &KinematicState,
    kind: ObjectKind,
    params: &DsprParams,
) -> f64 {
    energy_from_motion(&RelativeMotion::between(ego_at, obj_at), kind, params)
}

pub fn energy_from_motion(m: &RelativeMotion, kind: ObjectKind, params: &DsprParams) -> f64 {
    let beta = params.beta;
    let severity = beta * (m.rel_speed + m.speed_sum);
    let exposure = if m.closing_projection < 0.0 {
        (1.0 - beta) * m.closing_projection.abs() + beta * m.speed_sum
    } else {
        beta * m.speed_sum
    };
    0.5 * params.mass(kind) * exposure * severity
}

/// Background energy perceived from the ego's own motion.
pub fn background_energy(ego: &KinematicState, kind: ObjectKind, params: &DsprParams) -> f64 {
    let v = params.beta * ego.speed();
    0.5 * params.mass(kind) * v * v
}

/// Per-object decomposition of the risk value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskBreakdown {
    pub slot: usize,
    pub object_id: String,
    pub triggered: bool,
    pub tier: Option<RpdTier>,
    pub t_r: Option<f64>,
    pub alpha_t: f64,
    pub alpha_ss: f64,
    pub alpha_ws: f64,
    pub s_theta: f64,
    /// Relative kinetic energy when triggered, background energy otherwise.
    pub energy: f64,
    pub risk: f64,
}

/// Risk of one traffic object for the current ego state.
pub fn object_risk(ego: &KinematicState, obj: &TrafficObject, params: &DsprParams) -> RiskBreakdown {
    let (theta_init, d_init) = bearing(ego, obj, params);
    // theta is folded into [0, pi] by construction
    let s_theta = observation_sensitivity(theta_init.clamp(0.0, PI), params).unwrap_or(params.sens_c);

    let strong = first_contact(ego, obj, RpdTier::Strong, params);
    let contact = if strong.triggered() {
        strong
    } else {
        first_contact(ego, obj, RpdTier::Weak, params)
    };

    let Some(time) = contact.time() else {
        let energy = background_energy(ego, obj.kind, params);
        return RiskBreakdown {
            slot: 0,
            object_id: obj.id.clone(),
            triggered: false,
            tier: None,
            t_r: None,
            alpha_t: 1.0,
            alpha_ss: 1.0,
            alpha_ws: 1.0,
            s_theta,
            energy,
            risk: s_theta * energy,
        };
    };

    let ego_at = propagate(ego, time);
    let obj_at = propagate(&obj.state, time);
    let alpha_t = time_decay(time.clamp(0.0, params.horizon), params.horizon).unwrap_or(0.5);
    let theta_contact = contact_angle(&contact, &ego_at).unwrap_or(theta_init);
    let d_at = obj_at.position.distance(ego_at.position);
    let (alpha_ss, alpha_ws) = spatial_decay(
        contact.tier,
        theta_init,
        d_init,
        theta_contact,
        d_at,
        ego.speed(),
        params,
    );
    let energy = relative_kinetic_energy(&ego_at, &obj_at, obj.kind, params);
    RiskBreakdown {
        slot: 0,
        object_id: obj.id.clone(),
        triggered: true,
        tier: Some(contact.tier),
        t_r: Some(time),
        alpha_t,
        alpha_ss,
        alpha_ws,
        s_theta,
        energy,
        risk: alpha_t * alpha_ss * alpha_ws * s_theta * energy,
    }
}

/// The 40-slot risk vector; empty slots hold 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskVector {
    values: Vec<f64>,
}

impl RiskVector {
    pub fn zeros() -> Self {
        RiskVector {
            values: vec![0.0; SLOT_COUNT],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != SLOT_COUNT {
            return Err(Error::Dimension {
                expected: SLOT_COUNT,
                found: values.len(),
                context: "risk vector",
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite risk value".into()));
        }
        Ok(RiskVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest slot value.
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Risk vector of a frame together with the per-slot breakdowns of the
/// occupied slots.
pub fn risk_vector(frame: &Frame, params: &DsprParams) -> (RiskVector, Vec<RiskBreakdown>) {
    let mut values = vec![0.0; SLOT_COUNT];
    let mut breakdowns = Vec::new();
    for (slot, obj) in nearest_objects(frame).into_iter().enumerate() {
        if let Some(obj) = obj {
            let mut b = object_risk(&frame.ego, obj, params);
            b.slot = slot;
            values[slot] = params.slot_weights[slot] * b.risk;
            breakdowns.push(b);
        }
    }
    (RiskVector { values }, breakdowns)
}

/// One row of the risk dump CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskDumpRow {
    pub model: String,
    pub t: f64,
    pub slot: usize,
    pub object: Option<String>,
    pub triggered: bool,
    pub tier: Option<RpdTier>,
    pub t_r: Option<f64>,
    pub alpha_t: Option<f64>,
    pub alpha_ss: Option<f64>,
    pub alpha_ws: Option<f64>,
    pub s_theta: Option<f64>,
    pub energy: Option<f64>,
    pub risk: f64,
}

/// A per-frame producer of 40-slot risk vectors.
pub trait RiskModel: Sync {
    fn name(&self) -> &str;

    fn vector(&self, frame: &Frame) -> RiskVector;

    /// Rows of the risk dump for one frame, one per slot.
    fn dump_rows(&self, frame: &Frame) -> Vec<RiskDumpRow> {
        let slots = nearest_objects(frame);
        self.vector(frame)
            .values()
            .iter()
            .enumerate()
            .map(|(slot, &risk)| RiskDumpRow {
                model: self.name().to_string(),
                t: frame.timestamp,
                slot,
                object: slots[slot].map(|o| o.id.clone()),
                triggered: risk > 0.0,
                tier: None,
                t_r: None,
                alpha_t: None,
                alpha_ss: None,
                alpha_ws: None,
                s_theta: None,
                energy: None,
                risk,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct DsprModel {
    pub params: DsprParams,
}

impl DsprModel {
    pub fn new(params: DsprParams) -> Self {
        DsprModel { params }
    }
}

impl RiskModel for DsprModel {
    fn name(&self) -> &str {
        "dspr"
    }

    fn vector(&self, frame: &Frame) -> RiskVector {
        risk_vector(frame, &self.params).0
    }

    fn dump_rows(&self, frame: &Frame) -> Vec<RiskDumpRow> {
        let (vector, breakdowns) = risk_vector(frame, &self.params);
        let mut rows: Vec<RiskDumpRow> = (0..SLOT_COUNT)
            .map(|slot| RiskDumpRow {
                model: "dspr".into(),
                t: frame.timestamp,
                slot,
                object: None,
                triggered: false,
                tier: None,
                t_r: None,
                alpha_t: None,
                alpha_ss: None,
                alpha_ws: None,
                s_theta: None,
                energy: None,
                risk: 0.0,
            })
            .collect();
        for b in breakdowns {
            let row = &mut rows[b.slot];
            row.object = Some(b.object_id);
            row.triggered = b.triggered;
            row.tier = b.tier;
            row.t_r = b.t_r;
            if b.triggered {
                row.alpha_t = Some(b.alpha_t);
                row.alpha_ss = Some(b.alpha_ss);
                row.alpha_ws = Some(b.alpha_ws);
            }
            row.s_theta = Some(b.s_theta);
            row.energy = Some(b.energy);
            row.risk = vector.values()[b.slot];
        }
        rows
    }
}

/// Risk vectors of every frame, computed in parallel, in frame order.
pub fn risk_series(model: &dyn RiskModel, scenario: &Scenario) -> Vec<RiskVector> {
    scenario.frames.par_iter().map(|f| model.vector(f)).collect()
}

pub fn write_risk_dump(model: &dyn RiskModel, scenario: &Scenario, writer: impl Write) -> Result<()> {
    let rows: Vec<Vec<RiskDumpRow>> = scenario.frames.par_iter().map(|f| model.dump_rows(f)).collect();
    let mut w = csv::Writer::from_writer(writer);
    for row in rows.into_iter().flatten() {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<risk dump>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use approx::assert_relative_eq;

    fn st(x: f64, y: f64, vx: f64, vy: f64, heading: f64) -> KinematicState {
        KinematicState::new(Vec2::new(x, y), Vec2::new(vx, vy), Vec2::ZERO, heading).unwrap()
    }

    #[test]
    fn time_decay_values() {
        assert_eq!(time_decay(0.0, 4.0).unwrap(), 1.0);
        assert_eq!(time_decay(4.0, 4.0).unwrap(), 0.5);
        assert_relative_eq!(time_decay(2.0, 4.0).unwrap(), 2.0 / 3.0);
        assert!(time_decay(4.1, 4.0).is_err());
        assert!(time_decay(-0.1, 4.0).is_err());
    }

    #[test]
    fn sensitivity_values() {
        let p = DsprParams::default();
        assert_relative_eq!(observation_sensitivity(0.0, &p).unwrap(), 2.5);
        assert_relative_eq!(observation_sensitivity(PI / 4.0, &p).unwrap(), 2.3, epsilon = 1e-12);
        assert_relative_eq!(observation_sensitivity(PI, &p).unwrap(), 1.3, epsilon = 1e-12);
        assert_relative_eq!(observation_sensitivity(FRAC_PI_2, &p).unwrap(), 3.3, epsilon = 1e-12);
        assert!(observation_sensitivity(-0.01, &p).is_err());
        assert!(observation_sensitivity(3.2, &p).is_err());
    }

    #[test]
    fn spatial_decay_examples() {
        let p = DsprParams::default();
        let (ss, ws) = spatial_decay(RpdTier::Strong, 0.0, 30.0, 0.0, 5.0, 0.0, &p);
        assert_relative_eq!(ss, 0.32, epsilon = 1e-12);
        assert_eq!(ws, 1.0);
        let (ss, _) = spatial_decay(RpdTier::Strong, FRAC_PI_2, 10.0, 0.0, 5.0, 0.0, &p);
        assert_relative_eq!(ss, 0.4, epsilon = 1e-12);
        let (ss, _) = spatial_decay(RpdTier::Strong, 0.0, 2.0, 0.0, 5.0, 0.0, &p);
        assert_eq!(ss, 1.0);
        let raw = DsprParams {
            clamp_spatial: false,
            ..p.clone()
        };
        let (ss, _) = spatial_decay(RpdTier::Strong, 0.0, 2.0, 0.0, 5.0, 0.0, &raw);
        assert_relative_eq!(ss, 4.8, epsilon = 1e-12);
        let (_, ws) = spatial_decay(RpdTier::Weak, 0.0, 30.0, FRAC_PI_2, 20.0, 0.0, &p);
        assert_relative_eq!(ws, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn energy_examples() {
        let p = DsprParams::default();
        let ego = st(0.0, 0.0, 10.0, 0.0, 0.0);
        let closing = st(20.0, 0.0, -10.0, 0.0, PI);
        assert_relative_eq!(relative_kinetic_energy(&ego, &closing, ObjectKind::Vehicle, &p), 240.0, epsilon = 1e-9);
        let ego_back = st(0.0, 0.0, -10.0, 0.0, PI);
        let receding = st(20.0, 0.0, 10.0, 0.0, 0.0);
        assert_relative_eq!(relative_kinetic_energy(&ego_back, &receding, ObjectKind::Vehicle, &p), 28.8, epsilon = 1e-9);
        let rest = st(0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(relative_kinetic_energy(&rest, &st(5.0, 0.0, 0.0, 0.0, 0.0), ObjectKind::Vehicle, &p), 0.0);
    }

    #[test]
    fn background_examples() {
        let p = DsprParams::default();
        let ego = st(0.0, 0.0, 10.0, 0.0, 0.0);
        assert_relative_eq!(background_energy(&ego, ObjectKind::Vehicle, &p), 3.6, epsilon = 1e-12);
        assert_relative_eq!(background_energy(&ego, ObjectKind::Pedestrian, &p), 7.2, epsilon = 1e-12);
        assert_eq!(background_energy(&st(0.0, 0.0, 0.0, 0.0, 0.0), ObjectKind::Vehicle, &p), 0.0);
    }

    #[test]
    fn receding_object_gets_background_risk() {
        let p = DsprParams::default();
        let ego = st(0.0, 0.0, 10.0, 0.0, 0.0);
        let obj = TrafficObject::new("b", ObjectKind::Vehicle, st(-60.0, 0.0, -5.0, 0.0, PI));
        let b = object_risk(&ego, &obj, &p);
        assert!(!b.triggered);
        let expected = observation_sensitivity(PI, &p).unwrap() * background_energy(&ego, ObjectKind::Vehicle, &p);
        assert_relative_eq!(b.risk, expected, epsilon = 1e-12);
    }

    #[test]
    fn overlapping_object_has_unit_time_decay() {
        let p = DsprParams::default();
        let ego = st(0.0, 0.0, 5.0, 0.0, 0.0);
        let obj = TrafficObject::new("o", ObjectKind::Vehicle, st(6.0, 0.0, 0.0, 0.0, 0.0));
        let b = object_risk(&ego, &obj, &p);
        assert_eq!(b.tier, Some(RpdTier::Strong));
        assert_eq!(b.t_r, Some(0.0));
        assert_eq!(b.alpha_t, 1.0);
    }

    #[test]
    fn empty_frame_is_zero_and_weights_scale() {
        let frame = Frame {
            timestamp: 0.0,
            ego: st(0.0, 0.0, 0.0, 0.0, 0.0),
            objects: vec![],
            road_condition: 1,
        };
        let p = DsprParams::default();
        assert_eq!(risk_vector(&frame, &p).0, RiskVector::zeros());

        let frame = Frame {
            objects: vec![TrafficObject::new("v", ObjectKind::Vehicle, st(30.0, 0.0, -10.0, 0.0, PI))],
            ..frame
        };
        let base = risk_vector(&frame, &p).0;
        let mut weights = vec![1.0; SLOT_COUNT];
        weights[0] = 2.0;
        let doubled = risk_vector(&frame, &DsprParams { slot_weights: weights, ..p }).0;
        assert_relative_eq!(doubled.values()[0], 2.0 * base.values()[0]);
        assert!(base.values()[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dump_has_one_row_per_slot() {
        let frame = Frame {
            timestamp: 0.0,
            ego: st(0.0, 0.0, 10.0, 0.0, 0.0),
            objects: vec![TrafficObject::new("v", ObjectKind::Vehicle, st(30.0, 0.0, -10.0, 0.0, PI))],
            road_condition: 1,
        };
        let scenario = Scenario::new("s", 10.0, vec![frame]).unwrap();
        let mut out = Vec::new();
        write_risk_dump(&DsprModel::default(), &scenario, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + SLOT_COUNT);
        assert!(text.starts_with("model,t,slot,object,triggered,tier,t_r,alpha_t,alpha_ss,alpha_ws,s_theta,energy,risk"));
        assert!(text.lines().nth(1).unwrap().contains(",v,true,strong,"));
    }
}
