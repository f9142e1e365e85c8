//! Candidate sampling in the reference path's frame, cost scoring and
//! trajectory selection.
//!
//! Every planning step samples one candidate per combination of terminal
//! lateral offset, terminal speed and horizon (quintic lateral profile,
//! quartic longitudinal profile), checks them against kinematic limits and
//! the lanelet union, scores each with a comfort cost `J_origin` and the
//! utility cost built from its risk profile, and picks the cheapest feasible
//! one.

mod cost;
mod frenet;
mod sampling;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::par::{self, Parallelism};
use crate::risk::{build_risk_profile, AgentForecast, GaussLegendre, HarmModel, RiskConfig, RiskError, RiskProfile};
use crate::scenario::Footprint;

pub use cost::{
    cost_j, cost_j_mean, cost_origin, cost_total, cost_utility, score_candidates, select_trajectory, CostBreakdown, JMeanMode,
    ScoredCandidate, Selection, UtilityMode,
};
pub use frenet::{PathError, PathFrame, Polynomial, ReferencePath};
pub use sampling::{feasibility_check, sample_candidates, CandidateTrajectory, FeasibilityViolation, FrenetState, TrajectoryPose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Terminal lateral offsets, meters.
    pub lateral_offsets: Vec<f64>,
    /// Terminal speeds as multiples of the current speed.
    pub speed_factors: Vec<f64>,
    /// Horizons, seconds.
    pub horizons: Vec<f64>,
    /// Lower bound on the speed the factors apply to, so a stopped ego can
    /// pull away.
    pub min_base_speed: f64,
    pub w_jerk: f64,
    pub w_time: f64,
    pub w_lat: f64,
    pub w_vel: f64,
    pub v_target: f64,
    pub a_max: f64,
    pub v_max: f64,
    pub kappa_max: f64,
    pub omega_o: f64,
    pub omega_u: f64,
    pub j_mean_mode: JMeanMode,
    pub utility_mode: UtilityMode,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            lateral_offsets: vec![-3.0, -1.5, 0.0, 1.5, 3.0],
            speed_factors: vec![0.8, 1.0, 1.2],
            horizons: vec![2.0, 3.0],
            min_base_speed: 1.0,
            w_jerk: 1e-4,
            w_time: 0.005,
            w_lat: 0.002,
            w_vel: 0.002,
            v_target: 10.0,
            a_max: 8.0,
            v_max: 20.0,
            kappa_max: 0.3,
            omega_o: 1.0,
            omega_u: 1.0,
            j_mean_mode: JMeanMode::PerRoadUser,
            utility_mode: UtilityMode::Total,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |field: &'static str, reason: &str| Err(PlannerError::Config { field, reason: reason.into() });
        for (field, set) in [("lateral_offsets", &self.lateral_offsets), ("speed_factors", &self.speed_factors), ("horizons", &self.horizons)] {
            if set.is_empty() {
                return bad(field, "must not be empty");
            }
            if set.iter().any(|v| !v.is_finite()) {
                return bad(field, "must be finite");
            }
        }
        if self.horizons.iter().any(|&t| t <= 0.0) {
            return bad("horizons", "must be positive");
        }
        if self.speed_factors.iter().any(|&f| f < 0.0) {
            return bad("speed_factors", "must be non-negative");
        }
        for (field, v) in [
            ("min_base_speed", self.min_base_speed),
            ("w_jerk", self.w_jerk),
            ("w_time", self.w_time),
            ("w_lat", self.w_lat),
            ("w_vel", self.w_vel),
            ("v_target", self.v_target),
            ("omega_o", self.omega_o),
            ("omega_u", self.omega_u),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(field, "must be finite and non-negative");
            }
        }
        for (field, v) in [("a_max", self.a_max), ("v_max", self.v_max), ("kappa_max", self.kappa_max)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(field, "must be finite and positive");
            }
        }
        if self.omega_o == 0.0 && self.omega_u == 0.0 {
            return bad("omega_o", "omega_o and omega_u must not both be zero");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("invalid planner.{field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("candidate {candidate}: risks present but the ego risk vector is empty")]
    EmptyEgoRiskVector { candidate: usize },
    #[error("cohort-mean reference requires the cohort of candidate costs")]
    MissingCohort,
    #[error("no feasible trajectory")]
    NoFeasibleTrajectory,
}

/// Inputs of one planning step that do not come from the planner config.
#[derive(Debug, Clone, Copy)]
pub struct PlanningContext<'a> {
    pub path: &'a ReferencePath,
    pub lanelets: &'a [Vec<Vec2>],
    pub ego_shape: &'a Footprint,
    pub forecasts: &'a [AgentForecast],
    pub harm: &'a HarmModel,
    pub risk: &'a RiskConfig,
    pub rule: &'a GaussLegendre,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub candidates: Vec<CandidateTrajectory>,
    pub profiles: Vec<RiskProfile>,
    pub costs: Vec<CostBreakdown>,
    /// `None` when no candidate is feasible.
    pub selection: Option<Selection>,
}

impl PlanOutcome {
    pub fn chosen(&self) -> Option<(&CandidateTrajectory, &CostBreakdown)> {
        self.selection.as_ref().map(|s| (&self.candidates[s.chosen], &self.costs[s.chosen]))
    }
}

/// Samples, checks, scores and selects. Candidates are scored in parallel
/// under [`Parallelism::Parallel`]; the result does not depend on the mode.
pub fn plan(start: &FrenetState, ctx: &PlanningContext, config: &PlannerConfig, mode: Parallelism) -> Result<PlanOutcome, PlannerError> {
    let mut candidates = sample_candidates(start, ctx.path, config, ctx.dt);
    for c in &mut candidates {
        c.violations = feasibility_check(c, ctx.lanelets, config);
    }
    let profiles = par::map(mode, &candidates, |c| {
        build_risk_profile(c.id, &c.states(), ctx.ego_shape, ctx.forecasts, ctx.harm, ctx.risk, ctx.rule, ctx.dt)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let costs = score_candidates(&candidates, &profiles, config, ctx.dt)?;
    let scored: Vec<ScoredCandidate> = candidates
        .iter()
        .zip(&costs)
        .map(|(c, cost)| ScoredCandidate { id: c.id, feasible: c.feasible(), cost: *cost })
        .collect();
    let selection = match select_trajectory(&scored) {
        Ok(s) => Some(s),
        Err(PlannerError::NoFeasibleTrajectory) => None,
        Err(e) => return Err(e),
    };
    Ok(PlanOutcome { candidates, profiles, costs, selection })
}

pub const CANDIDATE_LOG_HEADER: &str = "step,id,d_t,v_t,horizon,violations,j_origin,j,j_mean,j_utility,j_risk,chosen";

/// One CSV row per candidate. Violation codes are `;`-separated.
pub fn write_candidate_log<W: Write>(out: &mut W, step: usize, outcome: &PlanOutcome) -> io::Result<()> {
    let chosen = outcome.selection.as_ref().map(|s| s.chosen);
    for (i, (c, k)) in outcome.candidates.iter().zip(&outcome.costs).enumerate() {
        let codes: Vec<&str> = c.violations.iter().map(|v| v.as_str()).collect();
        writeln!(
            out,
            "{step},{},{},{},{},{},{},{},{},{},{},{}",
            c.id,
            c.d_t,
            c.v_t,
            c.horizon,
            codes.join(";"),
            k.j_origin,
            k.j,
            k.j_mean,
            k.j_utility,
            k.j_risk,
            u8::from(chosen == Some(i)),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prediction::{GaussianStep, PredictedDistribution};
    use crate::scenario::{AgentState, RoadUserClass};

    #[test]
    fn default_config_is_valid() {
        PlannerConfig::default().validate().unwrap();
        let bad = PlannerConfig { omega_o: 0.0, omega_u: 0.0, ..PlannerConfig::default() };
        assert!(matches!(bad.validate(), Err(PlannerError::Config { field: "omega_o", .. })));
        let empty = PlannerConfig { horizons: vec![], ..PlannerConfig::default() };
        assert!(matches!(empty.validate(), Err(PlannerError::Config { field: "horizons", .. })));
    }

    fn setup() -> (ReferencePath, Vec<Vec<Vec2>>) {
        let path = ReferencePath::new(&[Vec2::new(0.0, 0.0), Vec2::new(200.0, 0.0)]).unwrap();
        let lane = vec![vec![Vec2::new(0.0, -5.0), Vec2::new(200.0, -5.0), Vec2::new(200.0, 5.0), Vec2::new(0.0, 5.0)]];
        (path, lane)
    }

    /// A stationary pedestrian straight ahead in the ego lane.
    fn blocker(x: f64) -> AgentForecast {
        let g = GaussianStep { mu_x: x, mu_y: 0.0, sigma_x: 0.3, sigma_y: 0.3, rho: 0.0 };
        AgentForecast {
            agent_id: "p".into(),
            class: RoadUserClass::Pedestrian,
            shape: Footprint::new(0.6, 0.6),
            current: AgentState::new(x, 0.0, 0.0, 0.0),
            distribution: PredictedDistribution { steps: vec![g; 12] },
        }
    }

    fn run(config: &PlannerConfig, mode: Parallelism) -> PlanOutcome {
        let (path, lane) = setup();
        let forecasts = [blocker(30.0)];
        let ctx = PlanningContext {
            path: &path,
            lanelets: &lane,
            ego_shape: &Footprint::new(4.5, 2.0),
            forecasts: &forecasts,
            harm: &HarmModel::default(),
            risk: &RiskConfig::default(),
            rule: GaussLegendre::default_rule(),
            dt: 0.25,
        };
        let start = FrenetState { s: 10.0, s_d: 10.0, ..FrenetState::default() };
        plan(&start, &ctx, config, mode).unwrap()
    }

    #[test]
    fn ethical_weight_steers_around_blocker() {
        let base = PlannerConfig { omega_u: 0.0, ..PlannerConfig::default() };
        let ethical = PlannerConfig { omega_u: 1.0, j_mean_mode: JMeanMode::CohortMean, ..PlannerConfig::default() };
        let b = run(&base, Parallelism::Sequential);
        let e = run(&ethical, Parallelism::Sequential);
        let (cb, kb) = b.chosen().unwrap();
        let (ce, ke) = e.chosen().unwrap();
        assert_eq!(cb.d_t, 0.0);
        assert!(kb.j > 0.0);
        assert!(ke.j < kb.j, "{ke:?} vs {kb:?}");
        assert_ne!(ce.id, cb.id);
    }

    #[test]
    fn modes_agree() {
        let c = PlannerConfig::default();
        assert_eq!(run(&c, Parallelism::Sequential), run(&c, Parallelism::Parallel));
    }

    #[test]
    fn candidate_log_rows() {
        let out = run(&PlannerConfig::default(), Parallelism::Sequential);
        let mut buf = Vec::new();
        write_candidate_log(&mut buf, 3, &out).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 30);
        assert_eq!(rows.iter().filter(|r| r.ends_with(",1")).count(), 1);
        assert!(rows.iter().all(|r| r.split(',').count() == CANDIDATE_LOG_HEADER.split(',').count()));
    }
}
