//! Per-road-user risk: collision probability times harm.
//!
//! For every candidate ego trajectory and every forecast road user we
//! integrate the forecast position density over the collision region
//! ([`collision_probability`]), evaluate a logistic harm model at the implied
//! impact speed ([`harm`]) and aggregate the per-step products over the
//! horizon into a [`RiskProfile`].

mod harm;
mod profile;
mod quadrature;

pub use harm::{harm, logistic, HarmCoefficients, HarmModel, HarmModelError};
pub use profile::{
    aggregate_agent_risk, build_risk_profile, AgentForecast, Aggregation, RiskAttribution, RiskConfig,
    RiskProfile,
};
pub use quadrature::{collision_probability, rectangle_probability, GaussLegendre};

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RiskError {
    #[error("trajectory has {ego} steps but forecast has {forecast}")]
    LengthMismatch { ego: usize, forecast: usize },
    #[error("invalid forecast distribution at step {step}: {reason}")]
    InvalidDistribution { step: usize, reason: String },
}

/// Risk of a single outcome: probability times harm.
pub fn risk(probability: f64, harm: f64) -> f64 {
    probability * harm
}
