//! Inverse time-to-collision baseline with the same slotting as the
//! perceived-risk vector.

use crate::dspr::{RelativeMotion, RiskModel, RiskVector};
use crate::scene::{nearest_objects, Frame, KinematicState, SLOT_COUNT};

pub const DEFAULT_INV_TTC_CAP: f64 = 10.0;

/// `min(closing rate / range, cap)`, or 0 when the pair is not closing.
pub fn inverse_ttc(ego: &KinematicState, obj: &KinematicState, cap: f64, min_range: f64) -> f64 {
    let closing = -RelativeMotion::between(ego, obj).closing_projection;
    if closing <= 0.0 {
        return 0.0;
    }
    let range = obj.position.distance(ego.position).max(min_range);
    (closing / range).min(cap)
}

pub fn inverse_ttc_vector(frame: &Frame, cap: f64, min_range: f64) -> RiskVector {
    let mut values = vec![0.0; SLOT_COUNT];
    for (slot, obj) in nearest_objects(frame).into_iter().enumerate() {
        if let Some(obj) = obj {
            values[slot] = inverse_ttc(&frame.ego, &obj.state, cap, min_range);
        }
    }
    RiskVector::from_values(values).unwrap_or_else(|_| RiskVector::zeros())
}

#[derive(Debug, Clone)]
pub struct TtcModel {
    pub cap: f64,
    pub min_range: f64,
}

impl Default for TtcModel {
    fn default() -> Self {
        TtcModel {
            cap: DEFAULT_INV_TTC_CAP,
            min_range: 0.1,
        }
    }
}

impl RiskModel for TtcModel {
    fn name(&self) -> &str {
        "ttc"
    }

    fn vector(&self, frame: &Frame) -> RiskVector {
        inverse_ttc_vector(frame, self.cap, self.min_range)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::scene::{ObjectKind, TrafficObject};
    use approx::assert_relative_eq;

    fn st(x: f64, vx: f64) -> KinematicState {
        KinematicState::new(Vec2::new(x, 0.0), Vec2::new(vx, 0.0), Vec2::ZERO, 0.0).unwrap()
    }

    #[test]
    fn closing_pair() {
        assert_relative_eq!(inverse_ttc(&st(0.0, 0.0), &st(20.0, -5.0), 10.0, 0.1), 0.25);
    }

    #[test]
    fn receding_pair_is_zero() {
        assert_eq!(inverse_ttc(&st(0.0, 0.0), &st(20.0, 5.0), 10.0, 0.1), 0.0);
    }

    #[test]
    fn cap_applies() {
        assert_eq!(inverse_ttc(&st(0.0, 0.0), &st(0.1, -100.0), 10.0, 0.1), 10.0);
    }

    #[test]
    fn doubling_closing_rate_doubles_value() {
        let a = inverse_ttc(&st(0.0, 0.0), &st(40.0, -3.0), 10.0, 0.1);
        let b = inverse_ttc(&st(0.0, 0.0), &st(40.0, -6.0), 10.0, 0.1);
        assert_relative_eq!(b, 2.0 * a);
    }

    #[test]
    fn slots_follow_distance_order() {
        let frame = Frame {
            timestamp: 0.0,
            ego: st(0.0, 0.0),
            objects: vec![
                TrafficObject::new("far", ObjectKind::Vehicle, st(40.0, -4.0)),
                TrafficObject::new("near", ObjectKind::Vehicle, st(20.0, -4.0)),
                TrafficObject::new("p", ObjectKind::Pedestrian, st(10.0, -1.0)),
            ],
            road_condition: 1,
        };
        let v = inverse_ttc_vector(&frame, 10.0, 0.1);
        assert_relative_eq!(v.values()[0], 0.2);
        assert_relative_eq!(v.values()[1], 0.1);
        assert_relative_eq!(v.values()[30], 0.1);
    }
}
