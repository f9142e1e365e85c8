//! Risk-aware ethical trajectory planning for simulated automated vehicles.
//!
//! The pipeline is: forecast every road user ([`prediction`]), turn the
//! forecasts into per-road-user risk for each sampled ego trajectory
//! ([`risk`]), score the candidates with a comfort cost plus the
//! utility-principle cost and pick the cheapest one ([`planner`]), and run
//! that loop over scenario suites while accounting harm per road-user group
//! ([`simulation`]).

// NaN must fail validation, so comparisons are negated on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod par;
pub mod planner;
pub mod prediction;
pub mod rng;
pub mod risk;
pub mod scenario;
pub mod simulation;
pub mod synth;

pub use geometry::Vec2;
pub use scenario::{Agent, AgentState, Footprint, GoalRegion, RoadUserClass, Scenario};
