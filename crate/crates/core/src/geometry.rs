//! Constant-acceleration propagation, oriented rectangles and the
//! risk-perception-domain contact solver.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::DsprParams;
use crate::scene::{KinematicState, TrafficObject};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(angle: f64) -> Self {
        Vec2::new(angle.cos(), angle.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Left-hand normal (rotated +90 degrees).
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid can return exactly 2*pi for tiny negative inputs
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Angle of `point` seen from `observer`, measured from its heading and
/// folded to `[0, pi]` (0 dead ahead, pi dead astern).
pub fn relative_bearing(observer: &KinematicState, point: Vec2) -> f64 {
    let rel = point - observer.position;
    if rel.norm() == 0.0 {
        return 0.0;
    }
    let forward = Vec2::from_angle(observer.heading);
    rel.dot(forward.perp()).atan2(rel.dot(forward)).abs()
}

/// Advances a state under constant acceleration. Heading is unchanged.
pub fn propagate(state: &KinematicState, dt: f64) -> KinematicState {
    KinematicState {
        position: state.position + state.velocity * dt + state.acceleration * (0.5 * dt * dt),
        velocity: state.velocity + state.acceleration * dt,
        acceleration: state.acceleration,
        heading: state.heading,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: Vec2,
    pub half_length: f64,
    pub half_width: f64,
    pub heading: f64,
}

impl OrientedRect {
    pub fn new(center: Vec2, length: f64, width: f64, heading: f64) -> Self {
        OrientedRect {
            center,
            half_length: 0.5 * length,
            half_width: 0.5 * width,
            heading,
        }
    }

    pub fn of_object(obj: &TrafficObject, state: &KinematicState) -> Self {
        OrientedRect::new(state.position, obj.length, obj.width, state.heading)
    }

    fn axes(&self) -> (Vec2, Vec2) {
        let forward = Vec2::from_angle(self.heading);
        (forward, forward.perp())
    }

    /// Corners in counterclockwise order.
    pub fn corners(&self) -> [Vec2; 4] {
        let (f, l) = self.axes();
        let a = f * self.half_length;
        let b = l * self.half_width;
        [
            self.center + a - b,
            self.center + a + b,
            self.center - a + b,
            self.center - a - b,
        ]
    }

    fn radius_along(&self, axis: Vec2) -> f64 {
        let (f, l) = self.axes();
        self.half_length * f.dot(axis).abs() + self.half_width * l.dot(axis).abs()
    }

    /// Largest gap between the two projections over the four candidate
    /// separating axes. Positive means disjoint; `<= 0` means the rectangles
    /// touch or overlap. Continuous in the rectangle parameters.
    pub fn separation(&self, other: &OrientedRect) -> f64 {
        let (f1, l1) = self.axes();
        let (f2, l2) = other.axes();
        let d = other.center - self.center;
        [f1, l1, f2, l2]
            .into_iter()
            .map(|axis| d.dot(axis).abs() - self.radius_along(axis) - other.radius_along(axis))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn intersects(&self, other: &OrientedRect) -> bool {
        self.separation(other) <= 0.0
    }

    /// Maps a point into this rectangle, clamping to its boundary.
    fn clamp_point(&self, p: Vec2) -> Vec2 {
        let (f, l) = self.axes();
        let rel = p - self.center;
        let u = rel.dot(f).clamp(-self.half_length, self.half_length);
        let v = rel.dot(l).clamp(-self.half_width, self.half_width);
        self.center + f * u + l * v
    }

    /// Vertices of the intersection polygon (Sutherland-Hodgman clipping).
    pub fn clip(&self, other: &OrientedRect) -> Vec<Vec2> {
        let mut poly: Vec<Vec2> = self.corners().to_vec();
        let clip = other.corners();
        for i in 0..4 {
            if poly.is_empty() {
                break;
            }
            let (a, b) = (clip[i], clip[(i + 1) % 4]);
            let edge = b - a;
            let inside = |p: Vec2| edge.cross(p - a) >= 0.0;
            let input = std::mem::take(&mut poly);
            for j in 0..input.len() {
                let cur = input[j];
                let prev = input[(j + input.len() - 1) % input.len()];
                let (cin, pin) = (inside(cur), inside(prev));
                if cin != pin {
                    let denom = edge.cross(cur - prev);
                    if denom != 0.0 {
                        let t = edge.cross(a - prev) / denom;
                        poly.push(prev + (cur - prev) * t);
                    }
                }
                if cin {
                    poly.push(cur);
                }
            }
        }
        poly
    }
}

/// Tier of the risk perception domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RpdTier {
    Strong,
    Weak,
}

impl RpdTier {
    pub fn as_str(self) -> &'static str {
        match self {
            RpdTier::Strong => "strong",
            RpdTier::Weak => "weak",
        }
    }
}

/// Full (length, width) of a domain for a given ego speed.
pub fn rpd_dimensions(speed: f64, tier: RpdTier, params: &DsprParams) -> (f64, f64) {
    match tier {
        RpdTier::Weak => (
            2.0 * (params.ego_length + params.thw_weak * speed),
            5.0 * params.ego_width,
        ),
        RpdTier::Strong => (
            2.0 * (params.ego_length + params.thw_strong * speed),
            2.0 * params.ego_width,
        ),
    }
}

/// Risk perception domain centered on the ego and aligned with its heading.
pub fn rpd_rect(ego: &KinematicState, tier: RpdTier, params: &DsprParams) -> OrientedRect {
    let (length, width) = rpd_dimensions(ego.speed(), tier, params);
    OrientedRect::new(ego.position, length, width, ego.heading)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    /// Time from now until the object first touches the domain (s).
    pub time: f64,
    /// Representative point of the contact region in world coordinates.
    pub point: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactResult {
    pub tier: RpdTier,
    pub contact: Option<Contact>,
}

impl ContactResult {
    pub fn triggered(&self) -> bool {
        self.contact.is_some()
    }

    pub fn time(&self) -> Option<f64> {
        self.contact.map(|c| c.time)
    }
}

fn gap_at(ego: &KinematicState, obj: &TrafficObject, tier: RpdTier, params: &DsprParams, t: f64) -> f64 {
    let e = propagate(ego, t);
    let o = propagate(&obj.state, t);
    rpd_rect(&e, tier, params).separation(&OrientedRect::of_object(obj, &o))
}

fn contact_point(ego: &KinematicState, obj: &TrafficObject, tier: RpdTier, params: &DsprParams, t: f64) -> Vec2 {
    let e = propagate(ego, t);
    let o = propagate(&obj.state, t);
    let rpd = rpd_rect(&e, tier, params);
    let body = OrientedRect::of_object(obj, &o);
    let poly = body.clip(&rpd);
    if poly.is_empty() {
        return rpd.clamp_point(o.position);
    }
    let sum = poly.iter().fold(Vec2::ZERO, |acc, &p| acc + p);
    sum * (1.0 / poly.len() as f64)
}

/// Earliest time in `[0, horizon]` at which the object's rectangle touches
/// the chosen domain, both propagated under constant acceleration.
///
/// The horizon is sampled every `scan_step`; the first bracket containing a
/// contact is bisected down to `time_tolerance` and finished with one secant
/// step on the (continuous) separation gap.
pub fn first_contact(
    ego: &KinematicState,
    obj: &TrafficObject,
    tier: RpdTier,
    params: &DsprParams,
) -> ContactResult {
    let horizon = params.horizon;
    let gap = |t: f64| gap_at(ego, obj, tier, params, t);
    let hit = |time: f64, probe: f64| ContactResult {
        tier,
        contact: Some(Contact {
            time,
            point: contact_point(ego, obj, tier, params, probe),
        }),
    };

    let mut g_lo = gap(0.0);
    if g_lo <= 0.0 {
        return hit(0.0, 0.0);
    }
    let steps = (horizon / params.scan_step - 1e-9).ceil().max(1.0) as usize;
    let mut lo = 0.0;
    for k in 1..=steps {
        let hi_t = (k as f64 * params.scan_step).min(horizon);
        let g_hi_sample = gap(hi_t);
        if g_hi_sample > 0.0 {
            lo = hi_t;
            g_lo = g_hi_sample;
            continue;
        }
        let (mut lo_t, mut hi, mut g_hi) = (lo, hi_t, g_hi_sample);
        while hi - lo_t > params.time_tolerance {
            let mid = 0.5 * (lo_t + hi);
            let g_mid = gap(mid);
            if g_mid <= 0.0 {
                hi = mid;
                g_hi = g_mid;
            } else {
                lo_t = mid;
                g_lo = g_mid;
            }
        }
        let t = if g_lo > g_hi {
            (lo_t + (hi - lo_t) * g_lo / (g_lo - g_hi)).clamp(lo_t, hi)
        } else {
            hi
        };
        return hit(t, hi);
    }
    ContactResult {
        tier,
        contact: None,
    }
}

/// Initial bearing in `[0, pi]` and center distance (floored at
/// `min_distance`) of an object from the ego.
pub fn bearing(ego: &KinematicState, obj: &TrafficObject, params: &DsprParams) -> (f64, f64) {
    let d = obj.state.position.distance(ego.position);
    if d == 0.0 {
        return (0.0, params.min_distance);
    }
    (relative_bearing(ego, obj.state.position), d.max(params.min_distance))
}

/// Bearing of the contact point in the ego frame at activation time.
pub fn contact_angle(contact: &ContactResult, ego_at_contact: &KinematicState) -> Result<f64> {
    let c = contact
        .contact
        .ok_or_else(|| Error::InvalidArgument("contact angle of an untriggered object".into()))?;
    Ok(relative_bearing(ego_at_contact, c.point))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ObjectKind;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn st(x: f64, y: f64, vx: f64, vy: f64, ax: f64, ay: f64, heading: f64) -> KinematicState {
        KinematicState::new(Vec2::new(x, y), Vec2::new(vx, vy), Vec2::new(ax, ay), heading).unwrap()
    }

    fn vehicle(state: KinematicState) -> TrafficObject {
        TrafficObject::new("o", ObjectKind::Vehicle, state)
    }

    #[test]
    fn propagate_uniform_and_accelerated() {
        let s = propagate(&st(0.0, 0.0, 10.0, 0.0, 0.0, 0.0, 0.0), 1.0);
        assert_eq!(s.position, Vec2::new(10.0, 0.0));
        let s = propagate(&st(0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0), 2.0);
        assert_eq!(s.position, Vec2::new(4.0, 0.0));
        assert_eq!(s.velocity, Vec2::new(4.0, 0.0));
        let s0 = st(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.3);
        assert_eq!(propagate(&s0, 0.0), s0);
    }

    #[test]
    fn rpd_dimensions_match_direct_substitution() {
        let p = DsprParams::default();
        let (l, w) = rpd_dimensions(10.0, RpdTier::Weak, &p);
        assert_relative_eq!(l, 57.6, epsilon = 1e-12);
        assert_relative_eq!(w, 10.0);
        let (l, w) = rpd_dimensions(10.0, RpdTier::Strong, &p);
        assert_relative_eq!(l, 33.6, epsilon = 1e-12);
        assert_relative_eq!(w, 4.0);
        assert_relative_eq!(rpd_dimensions(0.0, RpdTier::Weak, &p).0, 9.6);
        assert_relative_eq!(rpd_dimensions(0.0, RpdTier::Strong, &p).0, 9.6);
    }

    #[test]
    fn rpd_rect_follows_ego_pose() {
        let p = DsprParams::default();
        let ego = st(3.0, 4.0, 0.0, 10.0, 0.0, 0.0, PI / 2.0);
        let r = rpd_rect(&ego, RpdTier::Strong, &p);
        assert_eq!(r.center, Vec2::new(3.0, 4.0));
        assert_relative_eq!(r.half_length, 16.8, epsilon = 1e-12);
        assert_relative_eq!(r.half_width, 2.0);
    }

    #[test]
    fn head_on_contact_time() {
        let p = DsprParams::default();
        let ego = st(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let obj = vehicle(st(30.0, 0.0, -10.0, 0.0, 0.0, 0.0, PI));
        for tier in [RpdTier::Weak, RpdTier::Strong] {
            let c = first_contact(&ego, &obj, tier, &p);
            assert_relative_eq!(c.time().unwrap(), 2.28, max_relative = 1e-9);
        }
    }

    #[test]
    fn initial_overlap_is_immediate() {
        let p = DsprParams::default();
        let ego = st(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let obj = vehicle(st(5.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0));
        let c = first_contact(&ego, &obj, RpdTier::Strong, &p);
        assert_eq!(c.time(), Some(0.0));
    }

    #[test]
    fn receding_object_never_triggers() {
        let p = DsprParams::default();
        let ego = st(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let obj = vehicle(st(30.0, 0.0, 10.0, 0.0, 0.0, 0.0, 0.0));
        assert!(!first_contact(&ego, &obj, RpdTier::Weak, &p).triggered());
    }

    #[test]
    fn bearing_cases() {
        let p = DsprParams::default();
        let ego = st(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let (t, d) = bearing(&ego, &vehicle(st(20.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)), &p);
        assert_eq!((t, d), (0.0, 20.0));
        let (t, d) = bearing(&ego, &vehicle(st(0.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0)), &p);
        assert_relative_eq!(t, PI / 2.0);
        assert_relative_eq!(d, 10.0);
        let (t, d) = bearing(&ego, &vehicle(st(10.0, -10.0, 0.0, 0.0, 0.0, 0.0, 0.0)), &p);
        assert_relative_eq!(t, PI / 4.0);
        assert_relative_eq!(d, 200f64.sqrt());
        let (t, d) = bearing(&ego, &vehicle(st(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)), &p);
        assert_eq!((t, d), (0.0, p.min_distance));
    }

    #[test]
    fn bearing_uses_ego_heading() {
        let p = DsprParams::default();
        let ego = st(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, PI / 2.0);
        let (t, _) = bearing(&ego, &vehicle(st(0.0, 15.0, 0.0, 0.0, 0.0, 0.0, 0.0)), &p);
        assert_relative_eq!(t, 0.0, epsilon = 1e-12);
        let (t, _) = bearing(&ego, &vehicle(st(0.0, -15.0, 0.0, 0.0, 0.0, 0.0, 0.0)), &p);
        assert_relative_eq!(t, PI, epsilon = 1e-12);
    }

    fn angle_of(ego: KinematicState, obj: KinematicState) -> f64 {
        let p = DsprParams::default();
        let obj = vehicle(obj);
        let c = first_contact(&ego, &obj, RpdTier::Weak, &p);
        let ego_at = propagate(&ego, c.time().unwrap());
        contact_angle(&c, &ego_at).unwrap()
    }

    #[test]
    fn contact_angles_front_side_rear() {
        let ego = st(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let front = angle_of(ego, st(30.0, 0.0, -10.0, 0.0, 0.0, 0.0, PI));
        assert!(front.abs() < 1e-3, "{front}");
        let right = angle_of(ego, st(0.0, -30.0, 0.0, 10.0, 0.0, 0.0, PI / 2.0));
        assert!((right - PI / 2.0).abs() < 1e-3, "{right}");
        let rear = angle_of(ego, st(-30.0, 0.0, 10.0, 0.0, 0.0, 0.0, 0.0));
        assert!((rear - PI).abs() < 1e-3, "{rear}");
    }

    #[test]
    fn contact_angle_requires_trigger() {
        let c = ContactResult {
            tier: RpdTier::Weak,
            contact: None,
        };
        assert!(contact_angle(&c, &KinematicState::default()).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn clip_of_nested_rect_is_inner() {
        let outer = OrientedRect::new(Vec2::ZERO, 10.0, 10.0, 0.0);
        let inner = OrientedRect::new(Vec2::new(1.0, 1.0), 2.0, 2.0, 0.3);
        let poly = inner.clip(&outer);
        assert_eq!(poly.len(), 4);
        let disjoint = OrientedRect::new(Vec2::new(50.0, 0.0), 2.0, 2.0, 0.0);
        assert!(disjoint.clip(&outer).is_empty());
    }

    proptest! {
        #[test]
        fn propagate_composes(
            x in -50.0..50.0f64, y in -50.0..50.0f64,
            vx in -30.0..30.0f64, vy in -30.0..30.0f64,
            ax in -6.0..6.0f64, ay in -6.0..6.0f64,
            a in 0.0..3.0f64, b in 0.0..3.0f64,
        ) {
            let s = st(x, y, vx, vy, ax, ay, 0.0);
            let direct = propagate(&s, a + b);
            let chained = propagate(&propagate(&s, a), b);
            prop_assert!((direct.position - chained.position).norm() < 1e-9);
            prop_assert!((direct.velocity - chained.velocity).norm() < 1e-9);
        }

        #[test]
        fn strong_contact_implies_earlier_weak_contact(
            x in -60.0..60.0f64, y in -30.0..30.0f64,
            vx in -20.0..20.0f64, vy in -10.0..10.0f64,
            ego_v in 0.0..20.0f64, heading in -3.0..3.0f64,
        ) {
            let p = DsprParams::default();
            let ego = st(0.0, 0.0, ego_v, 0.0, 0.0, 0.0, 0.0);
            let obj = vehicle(st(x, y, vx, vy, 0.0, 0.0, heading));
            let strong = first_contact(&ego, &obj, RpdTier::Strong, &p);
            let weak = first_contact(&ego, &obj, RpdTier::Weak, &p);
            if let Some(ts) = strong.time() {
                let tw = weak.time();
                prop_assert!(tw.is_some());
                prop_assert!(tw.unwrap() <= ts + p.time_tolerance);
            }
        }
    }
}
