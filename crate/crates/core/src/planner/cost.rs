//! Comfort cost and the utility-principle risk cost stack.

use serde::{Deserialize, Serialize};

use crate::risk::RiskProfile;

use super::sampling::CandidateTrajectory;
use super::{PlannerConfig, PlannerError};

/// Reference value the utility cost of a candidate is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JMeanMode {
    /// `(sum R_i + sum R_j) / N_r` of the candidate's own profile.
    #[default]
    PerRoadUser,
    /// Mean `J` over all feasible candidates of the planning step.
    CohortMean,
}

/// What the utility cost returns above the reference value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityMode {
    /// `J`.
    #[default]
    Total,
    /// `J_mean`.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub j_origin: f64,
    pub j: f64,
    pub j_mean: f64,
    pub j_utility: f64,
    pub j_risk: f64,
    pub omega_o: f64,
    pub omega_u: f64,
}

/// Comfort and progress cost:
/// `w_jerk * sum(jerk^2) dt + w_time * T + w_lat * d_T^2 + w_vel * (v_T - v_target)^2`.
pub fn cost_origin(candidate: &CandidateTrajectory, config: &PlannerConfig, dt: f64) -> f64 {
    let jerk: f64 = candidate.poses.iter().map(|p| p.jerk * p.jerk).sum::<f64>() * dt;
    let dv = candidate.v_t - config.v_target;
    config.w_jerk * jerk + config.w_time * candidate.horizon + config.w_lat * candidate.d_t * candidate.d_t + config.w_vel * dv * dv
}

/// Total risk of a candidate: every ego risk plus every imposed risk.
pub fn cost_j(profile: &RiskProfile) -> f64 {
    let sum = |v: &[f64]| v.iter().fold(0.0, |acc, r| acc + r);
    sum(&profile.ego_risks) + sum(&profile.imposed_risks)
}

/// `cohort` holds `J` of every feasible candidate; it is required in
/// cohort-mean mode and ignored otherwise.
pub fn cost_j_mean(profile: &RiskProfile, mode: JMeanMode, cohort: Option<&[f64]>) -> Result<f64, PlannerError> {
    match mode {
        JMeanMode::PerRoadUser => {
            let j = cost_j(profile);
            match profile.ego_risks.len() {
                0 if j == 0.0 => Ok(0.0),
                0 => Err(PlannerError::EmptyEgoRiskVector { candidate: profile.candidate_id }),
                n => Ok(j / n as f64),
            }
        }
        JMeanMode::CohortMean => {
            let c = cohort.ok_or(PlannerError::MissingCohort)?;
            Ok(if c.is_empty() { 0.0 } else { c.iter().fold(0.0, |acc, j| acc + j) / c.len() as f64 })
        }
    }
}

/// Zero at or below the reference value.
pub fn cost_utility(j: f64, j_mean: f64, mode: UtilityMode) -> f64 {
    if j <= j_mean {
        0.0
    } else {
        match mode {
            UtilityMode::Total => j,
            UtilityMode::Reference => j_mean,
        }
    }
}

pub fn cost_total(j_origin: f64, j_utility: f64, config: &PlannerConfig) -> f64 {
    config.omega_o * j_origin + config.omega_u * j_utility
}

/// Full breakdown for every candidate. Infeasible candidates are scored too
/// (for logging) but do not enter the cohort.
pub fn score_candidates(
    candidates: &[CandidateTrajectory],
    profiles: &[RiskProfile],
    config: &PlannerConfig,
    dt: f64,
) -> Result<Vec<CostBreakdown>, PlannerError> {
    let js: Vec<f64> = profiles.iter().map(cost_j).collect();
    let cohort: Vec<f64> = candidates.iter().zip(&js).filter(|(c, _)| c.feasible()).map(|(_, j)| *j).collect();
    candidates
        .iter()
        .zip(profiles)
        .zip(&js)
        .map(|((c, p), &j)| {
            let j_origin = cost_origin(c, config, dt);
            let j_mean = cost_j_mean(p, config.j_mean_mode, Some(&cohort))?;
            let j_utility = cost_utility(j, j_mean, config.utility_mode);
            Ok(CostBreakdown {
                j_origin,
                j,
                j_mean,
                j_utility,
                j_risk: cost_total(j_origin, j_utility, config),
                omega_o: config.omega_o,
                omega_u: config.omega_u,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub id: usize,
    pub feasible: bool,
    pub cost: CostBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Index of the chosen entry.
    pub chosen: usize,
    /// Feasible entries best first, then infeasible ones by id.
    pub ranking: Vec<usize>,
}

/// Minimum `J_risk` over feasible candidates, ties broken by lower
/// `J_origin`, then lower id.
pub fn select_trajectory(scored: &[ScoredCandidate]) -> Result<Selection, PlannerError> {
    let mut feasible: Vec<usize> = (0..scored.len()).filter(|&i| scored[i].feasible).collect();
    feasible.sort_by(|&a, &b| {
        let (x, y) = (&scored[a], &scored[b]);
        x.cost
            .j_risk
            .total_cmp(&y.cost.j_risk)
            .then(x.cost.j_origin.total_cmp(&y.cost.j_origin))
            .then(x.id.cmp(&y.id))
    });
    let chosen = *feasible.first().ok_or(PlannerError::NoFeasibleTrajectory)?;
    let mut infeasible: Vec<usize> = (0..scored.len()).filter(|&i| !scored[i].feasible).collect();
    infeasible.sort_by_key(|&i| scored[i].id);
    feasible.extend(infeasible);
    Ok(Selection { chosen, ranking: feasible })
}
