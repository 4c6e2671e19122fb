use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{ObjectKind, SLOT_COUNT};

/// Constants of the perceived-risk model plus solver tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsprParams {
    /// Ego length (m).
    pub ego_length: f64,
    /// Ego width (m).
    pub ego_width: f64,
    /// Prediction horizon (s).
    pub horizon: f64,
    /// Time-headway threshold of the weak domain (s).
    pub thw_weak: f64,
    /// Time-headway threshold of the strong domain (s).
    pub thw_strong: f64,
    pub sens_a: f64,
    pub sens_b: f64,
    pub sens_c: f64,
    /// Balance between absolute and relative speed in the energy terms.
    pub beta: f64,
    pub mass_vehicle: f64,
    pub mass_pedestrian: f64,
    /// Per-slot sensitivity weights.
    pub slot_weights: Vec<f64>,
    /// Distance floor (m).
    pub min_distance: f64,
    /// Coarse scan step of the contact solver (s).
    pub scan_step: f64,
    /// Bracket width at which contact refinement stops (s).
    pub time_tolerance: f64,
    /// Clamp spatial decay coefficients to at most 1.
    pub clamp_spatial: bool,
}

impl Default for DsprParams {
    fn default() -> Self {
        DsprParams {
            ego_length: 4.8,
            ego_width: 2.0,
            horizon: 4.0,
            thw_weak: 2.4,
            thw_strong: 1.2,
            sens_a: 1.0,
            sens_b: 0.4,
            sens_c: 0.5,
            beta: 0.12,
            mass_vehicle: 5.0,
            mass_pedestrian: 10.0,
            slot_weights: vec![1.0; SLOT_COUNT],
            min_distance: 0.1,
            scan_step: 0.01,
            time_tolerance: 1e-3,
            clamp_spatial: true,
        }
    }
}

impl DsprParams {
    pub fn mass(&self, kind: ObjectKind) -> f64 {
        match kind {
            ObjectKind::Vehicle => self.mass_vehicle,
            ObjectKind::Pedestrian => self.mass_pedestrian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ego_length", self.ego_length),
            ("ego_width", self.ego_width),
            ("horizon", self.horizon),
            ("mass_vehicle", self.mass_vehicle),
            ("mass_pedestrian", self.mass_pedestrian),
            ("min_distance", self.min_distance),
            ("scan_step", self.scan_step),
            ("time_tolerance", self.time_tolerance),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.thw_strong >= 0.0 && self.thw_strong <= self.thw_weak && self.thw_weak.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= thw_strong ({}) <= thw_weak ({})",
                self.thw_strong, self.thw_weak
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidArgument(format!("beta {} outside (0, 1)", self.beta)));
        }
        if ![self.sens_a, self.sens_b, self.sens_c].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite sensitivity constant".into()));
        }
        if self.slot_weights.len() != SLOT_COUNT {
            return Err(Error::Dimension {
                expected: SLOT_COUNT,
                found: self.slot_weights.len(),
                context: "slot weights",
            });
        }
        if self.slot_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("slot weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        DsprParams::default().validate().unwrap();
    }

    #[test]
    fn rejects_inverted_headways() {
        let p = DsprParams {
            thw_strong: 3.0,
            ..DsprParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn rejects_beta_out_of_range() {
        let p = DsprParams {
            beta: 1.0,
            ..DsprParams::default()
        };
        assert!(p.validate().is_err());
    }
}
