use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::RoadUserClass;

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logistic injury coefficients for one road-user class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmCoefficients {
    pub beta0: f64,
    /// Slope per m/s of impact speed; must be positive.
    pub beta1: f64,
    /// Vulnerability multiplier; 1 for vehicle occupants.
    pub kappa: f64,
}

impl HarmCoefficients {
    pub const fn new(beta0: f64, beta1: f64, kappa: f64) -> Self {
        Self { beta0, beta1, kappa }
    }

    fn eval(&self, speed: f64, multiplier: f64) -> f64 {
        (self.kappa * multiplier * logistic(self.beta0 + self.beta1 * speed)).min(1.0)
    }
}

/// Maps impact speed to a harm value in `[0, 1]` per affected party.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarmModel {
    pub car: HarmCoefficients,
    pub truck: HarmCoefficients,
    pub pedestrian: HarmCoefficients,
    pub cyclist: HarmCoefficients,
    /// Extra factor on harm to the ego occupants when the partner is a truck.
    pub truck_mass_ratio: f64,
}

impl Default for HarmModel {
    fn default() -> Self {
        let occupant = HarmCoefficients::new(-5.0, 0.25, 1.0);
        let vulnerable = HarmCoefficients::new(-3.5, 0.35, 1.0);
        Self { car: occupant, truck: occupant, pedestrian: vulnerable, cyclist: vulnerable, truck_mass_ratio: 1.5 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum HarmModelError {
    #[error("harm.{class}.beta1 = {value} must be > 0")]
    NonPositiveSlope { class: RoadUserClass, value: f64 },
    #[error("harm.{class}.kappa = {value} must be 1 for vehicle occupants")]
    VehicleKappa { class: RoadUserClass, value: f64 },
    #[error("harm.{class}.kappa = {value} must be >= 1 for vulnerable road users")]
    VruKappa { class: RoadUserClass, value: f64 },
    #[error("harm.truck_mass_ratio = {0} must be >= 1")]
    MassRatio(f64),
    #[error("harm.{class} has non-finite coefficients")]
    NonFinite { class: RoadUserClass },
}

impl HarmModel {
    pub fn coefficients(&self, class: RoadUserClass) -> &HarmCoefficients {
        match class {
            RoadUserClass::Car => &self.car,
            RoadUserClass::Truck => &self.truck,
            RoadUserClass::Pedestrian => &self.pedestrian,
            RoadUserClass::Cyclist => &self.cyclist,
        }
    }

    pub fn validate(&self) -> Result<(), HarmModelError> {
        for class in RoadUserClass::ALL {
            let c = self.coefficients(class);
            if ![c.beta0, c.beta1, c.kappa].iter().all(|v| v.is_finite()) {
                return Err(HarmModelError::NonFinite { class });
            }
            if !(c.beta1 > 0.0) {
                return Err(HarmModelError::NonPositiveSlope { class, value: c.beta1 });
            }
            if class.is_vru() {
                if c.kappa < 1.0 {
                    return Err(HarmModelError::VruKappa { class, value: c.kappa });
                }
            } else if c.kappa != 1.0 {
                return Err(HarmModelError::VehicleKappa { class, value: c.kappa });
            }
        }
        if !(self.truck_mass_ratio >= 1.0) {
            return Err(HarmModelError::MassRatio(self.truck_mass_ratio));
        }
        Ok(())
    }
}

/// Harm to the ego occupants and to the other party for an impact at
/// `relative_speed` (m/s). Negative speeds are treated as zero.
pub fn harm(ego: RoadUserClass, other: RoadUserClass, relative_speed: f64, model: &HarmModel) -> (f64, f64) {
    let v = relative_speed.max(0.0);
    let mass = if other == RoadUserClass::Truck { model.truck_mass_ratio } else { 1.0 };
    let to_ego = model.coefficients(ego).eval(v, mass);
    let to_other = model.coefficients(other).eval(v, 1.0);
    (to_ego, to_other)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use RoadUserClass::*;

    #[test]
    fn zero_speed_car_pair() {
        let (e, o) = harm(Car, Car, 0.0, &HarmModel::default());
        // 1 / (1 + e^5)
        assert!((e - 0.006_692_850_924_284_856).abs() < 1e-15);
        assert_eq!(e, o);
    }

    #[test]
    fn saturates() {
        let (e, o) = harm(Car, Pedestrian, 1e4, &HarmModel::default());
        assert_eq!((e, o), (1.0, 1.0));
    }

    #[test]
    fn truck_partner_scales_ego_harm() {
        let m = HarmModel::default();
        let (car, _) = harm(Car, Car, 8.0, &m);
        let (truck, _) = harm(Car, Truck, 8.0, &m);
        assert!((truck - 1.5 * car).abs() < 1e-15);
    }

    #[test]
    fn validation_rules() {
        let mut m = HarmModel::default();
        assert_eq!(m.validate(), Ok(()));
        m.cyclist.beta1 = 0.0;
        assert!(matches!(m.validate(), Err(HarmModelError::NonPositiveSlope { class: Cyclist, .. })));
        let mut m = HarmModel::default();
        m.truck.kappa = 2.0;
        assert!(matches!(m.validate(), Err(HarmModelError::VehicleKappa { .. })));
        let mut m = HarmModel::default();
        m.pedestrian.kappa = 0.5;
        assert!(matches!(m.validate(), Err(HarmModelError::VruKappa { .. })));
    }

    proptest! {
        #[test]
        fn vulnerable_partner_harmed_more(v in 0.0f64..200.0) {
            let m = HarmModel::default();
            let (_, ped) = harm(Car, Pedestrian, v, &m);
            let (_, car) = harm(Car, Car, v, &m);
            prop_assert!(ped > car || (ped == 1.0 && car == 1.0));
        }

        #[test]
        fn nondecreasing_in_speed(v in 0.0f64..100.0, dv in 0.0f64..10.0, a in 0usize..4, b in 0usize..4) {
            let m = HarmModel::default();
            let (e0, o0) = harm(RoadUserClass::ALL[a], RoadUserClass::ALL[b], v, &m);
            let (e1, o1) = harm(RoadUserClass::ALL[a], RoadUserClass::ALL[b], v + dv, &m);
            prop_assert!(e1 >= e0 && o1 >= o0);
            prop_assert!((0.0..=1.0).contains(&e1) && (0.0..=1.0).contains(&o1));
        }
    }
}
