use serde::{Deserialize, Serialize};

use crate::prediction::PredictedDistribution;
use crate::scenario::{AgentState, Footprint, RoadUserClass};

use super::harm::{harm, HarmModel};
use super::quadrature::{collision_probability, GaussLegendre};
use super::RiskError;

/// How per-step risks of one road user are folded over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Worst single step.
    #[default]
    Max,
    /// `1 - prod(1 - r_t)`: chance that at least one step's risk materializes.
    SurvivalProduct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskConfig {
    pub quadrature_nodes: usize,
    pub aggregation: Aggregation,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self { quadrature_nodes: 24, aggregation: Aggregation::Max }
    }
}

impl RiskConfig {
    pub fn rule(&self) -> GaussLegendre {
        if self.quadrature_nodes == 24 {
            GaussLegendre::default_rule().clone()
        } else {
            GaussLegendre::new(self.quadrature_nodes.max(1))
        }
    }
}

/// A forecast road user as seen by the risk module.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentForecast {
    pub agent_id: String,
    pub class: RoadUserClass,
    pub shape: Footprint,
    /// State at prediction time; anchors the speed proxy of the first step.
    pub current: AgentState,
    pub distribution: PredictedDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RiskAttribution {
    pub ego_av: f64,
    pub third_party: f64,
    pub vru: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RiskProfile {
    pub candidate_id: usize,
    pub agent_ids: Vec<String>,
    /// Risk to the ego occupants from each partner (one entry per agent).
    pub ego_risks: Vec<f64>,
    /// Risk imposed on each road user (one entry per agent).
    pub imposed_risks: Vec<f64>,
    pub attribution: RiskAttribution,
}

impl RiskProfile {
    pub fn from_vectors(ego_risks: Vec<f64>, imposed_risks: Vec<f64>) -> Self {
        Self { ego_risks, imposed_risks, ..Self::default() }
    }
}

/// Folds per-step probabilities and harms of one agent into (ego-side,
/// other-side) risk.
pub fn aggregate_agent_risk(p: &[f64], harm_ego: &[f64], harm_other: &[f64], agg: Aggregation) -> (f64, f64) {
    let fold = |h: &[f64]| -> f64 {
        let per_step = p.iter().zip(h).map(|(p, h)| super::risk(*p, *h));
        match agg {
            Aggregation::Max => per_step.fold(0.0, f64::max),
            Aggregation::SurvivalProduct => 1.0 - per_step.fold(1.0, |acc, r| acc * (1.0 - r)),
        }
    };
    (fold(harm_ego).clamp(0.0, 1.0), fold(harm_other).clamp(0.0, 1.0))
}

/// Risk profile of one ego trajectory against every forecast road user.
///
/// `ego` holds the planned ego states at `dt, 2dt, ...`; forecast step `t`
/// lines up with `ego[t - 1]`. When the two horizons differ only the common
/// prefix is scored.
#[allow(clippy::too_many_arguments)]
pub fn build_risk_profile(
    candidate_id: usize,
    ego: &[AgentState],
    ego_shape: &Footprint,
    forecasts: &[AgentForecast],
    model: &HarmModel,
    config: &RiskConfig,
    rule: &GaussLegendre,
    dt: f64,
) -> Result<RiskProfile, RiskError> {
    let mut profile = RiskProfile { candidate_id, ..RiskProfile::default() };
    for f in forecasts {
        let n = ego.len().min(f.distribution.steps.len());
        let dist = PredictedDistribution { steps: f.distribution.steps[..n].to_vec() };
        let p = collision_probability(&ego[..n], ego_shape, &dist, &f.shape, rule)?;

        let (mut h_ego, mut h_other) = (Vec::with_capacity(n), Vec::with_capacity(n));
        let mut prev = f.current.position();
        for (pose, step) in ego[..n].iter().zip(&dist.steps) {
            let agent_velocity = (step.mean() - prev) * (1.0 / dt);
            prev = step.mean();
            let rel = (pose.velocity() - agent_velocity).norm();
            let (he, ho) = harm(RoadUserClass::Car, f.class, rel, model);
            h_ego.push(he);
            h_other.push(ho);
        }
        let (r_ego, r_other) = aggregate_agent_risk(&p, &h_ego, &h_other, config.aggregation);

        profile.agent_ids.push(f.agent_id.clone());
        profile.ego_risks.push(r_ego);
        profile.imposed_risks.push(r_other);
        profile.attribution.ego_av += r_ego;
        if f.class.is_vru() {
            profile.attribution.vru += r_other;
        } else {
            profile.attribution.third_party += r_other;
        }
    }
    Ok(profile)
}
