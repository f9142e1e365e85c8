//! Closed-loop evaluation: forecast, plan, execute one step, advance the
//! replayed road users, and account collisions and harm.

mod suite;

use std::collections::BTreeSet;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::OrientedRect;
use crate::planner::{plan, write_candidate_log, CostBreakdown, FrenetState, PathError, PlannerConfig, PlannerError, PlanningContext, ReferencePath};
use crate::prediction::{constant_velocity_predict, predict, Params, PredictedDistribution, PredictionError, Scene, TrackHistory};
use crate::par::Parallelism;
use crate::risk::{harm, AgentForecast, HarmModel, HarmModelError, RiskConfig};
use crate::scenario::{Agent, AgentState, Footprint, RoadUserClass, Scenario, TrackError};

pub use suite::{
    evaluate_suite, write_comparison_csv, SuiteMetrics, SuiteReport, Variant, COMPARISON_HEADER,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantVelocityConfig {
    /// Position standard deviation one step ahead, meters.
    pub sigma0: f64,
    /// Added standard deviation per further step, meters.
    pub sigma_growth: f64,
}

impl Default for ConstantVelocityConfig {
    fn default() -> Self {
        Self { sigma0: 0.3, sigma_growth: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    ConstantVelocity(ConstantVelocityConfig),
    AttentionLstm(Params),
}

impl Predictor {
    pub fn history_len(&self, fallback: usize) -> usize {
        match self {
            Self::ConstantVelocity(_) => fallback,
            Self::AttentionLstm(p) => p.config.history_len,
        }
    }

    pub fn forecast(
        &self,
        target: &TrackHistory,
        neighbors: &[TrackHistory],
        horizon: usize,
        dt: f64,
    ) -> Result<PredictedDistribution, PredictionError> {
        match self {
            Self::ConstantVelocity(c) => Ok(constant_velocity_predict(target, horizon, dt, c.sigma0, c.sigma_growth)),
            Self::AttentionLstm(p) => predict(p, &Scene { target: target.clone(), neighbors: neighbors.to_vec() }),
        }
    }
}

/// How the ego moves.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum EgoMode {
    #[default]
    Planned,
    /// Follow a recorded track; the planner is not consulted.
    Replay(Agent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub planner: PlannerConfig,
    pub harm: HarmModel,
    pub risk: RiskConfig,
    /// History length for predictors without a fixed one.
    pub history_len: usize,
    /// Forecast horizon (steps) for predictors without a fixed one.
    pub horizon: usize,
    /// Keep per-step candidate logs in the result.
    pub log_candidates: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            planner: PlannerConfig::default(),
            harm: HarmModel::default(),
            risk: RiskConfig::default(),
            history_len: 8,
            horizon: 12,
            log_candidates: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.planner.validate()?;
        self.harm.validate()?;
        if self.history_len == 0 || self.horizon == 0 {
            return Err(SimError::Config("history_len and horizon must be positive".into()));
        }
        if self.risk.quadrature_nodes == 0 {
            return Err(SimError::Config("risk.quadrature_nodes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Harm(#[from] HarmModelError),
    #[error("scenario {scenario}: {source}")]
    Track { scenario: String, source: TrackError },
    #[error("scenario {scenario}: {source}")]
    Prediction { scenario: String, source: PredictionError },
    #[error("scenario {scenario}: {source}")]
    Path { scenario: String, source: PathError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GoalReached,
    Deadline,
    EgoCollision,
    /// The ego can no longer be projected onto the reference path.
    LeftReferencePath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub step: usize,
    pub agent_id: String,
    pub class: RoadUserClass,
    pub relative_speed: f64,
    pub harm_to_ego: f64,
    pub harm_to_other: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Chosen candidate id, `None` for an emergency-braking step.
    pub chosen: Option<usize>,
    pub cost: Option<CostBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub actor: String,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub scenario_id: String,
    pub seed: u64,
    pub completed: bool,
    pub termination: Termination,
    pub steps_executed: usize,
    pub emergency_steps: usize,
    pub collisions: Vec<CollisionEvent>,
    pub cost_trace: Vec<StepRecord>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
    #[serde(skip)]
    pub candidate_log: Vec<u8>,
}

impl SimResult {
    pub fn harm_to_ego(&self) -> f64 {
        self.collisions.iter().fold(0.0, |acc, c| acc + c.harm_to_ego)
    }
}

pub fn detect_collision(ego: &AgentState, ego_shape: &Footprint, other: &AgentState, other_shape: &Footprint) -> bool {
    let rect = |s: &AgentState, f: &Footprint| OrientedRect::new(s.position(), s.heading, f.length, f.width);
    rect(ego, ego_shape).intersects(&rect(other, other_shape))
}

/// Harm to (ego, other) from an impact, using the magnitude of the velocity
/// difference as impact speed.
pub fn score_collision(ego: &AgentState, other: &AgentState, class: RoadUserClass, model: &HarmModel) -> (f64, f64) {
    let rel = (ego.velocity() - other.velocity()).norm();
    harm(RoadUserClass::Car, class, rel, model)
}

/// Records at most one collision per agent.
#[derive(Debug, Clone, Default)]
pub struct CollisionLedger {
    seen: BTreeSet<String>,
    pub events: Vec<CollisionEvent>,
}

impl CollisionLedger {
    /// Scores and records an overlap; returns `false` when this agent has
    /// already collided.
    pub fn record(&mut self, step: usize, ego: &AgentState, agent: &Agent, state: &AgentState, model: &HarmModel) -> bool {
        if !self.seen.insert(agent.id.clone()) {
            return false;
        }
        let (harm_to_ego, harm_to_other) = score_collision(ego, state, agent.cls, model);
        self.events.push(CollisionEvent {
            step,
            agent_id: agent.id.clone(),
            class: agent.cls,
            relative_speed: (ego.velocity() - state.velocity()).norm(),
            harm_to_ego,
            harm_to_other,
        });
        true
    }
}

/// Emergency stop: brake at `a_max` along the current heading, then hold.
fn brake(ego: &AgentState, a_max: f64, dt: f64) -> AgentState {
    let v = (ego.v - a_max * dt).max(0.0);
    let travelled = if a_max > 0.0 && ego.v < a_max * dt { ego.v * ego.v / (2.0 * a_max) } else { 0.5 * (ego.v + v) * dt };
    let p = ego.position() + crate::geometry::Vec2::from_polar(travelled, ego.heading);
    AgentState::new(p.x, p.y, v, ego.heading)
}

/// Runs one scenario to goal, deadline or ego collision. Deterministic: the
/// seed is recorded but the loop itself draws no random numbers.
pub fn run_scenario(
    scenario: &Scenario,
    predictor: &Predictor,
    config: &SimConfig,
    ego_mode: &EgoMode,
    seed: u64,
    mode: Parallelism,
) -> Result<SimResult, SimError> {
    let sid = || scenario.id.clone();
    let track = |source| SimError::Track { scenario: sid(), source };
    let dt = scenario.time_step;
    let path = ReferencePath::new(&scenario.reference_points()).map_err(|source| SimError::Path { scenario: sid(), source })?;
    let lanelets = scenario.lanelet_polygons();
    let rule = config.risk.rule();
    let history_len = predictor.history_len(config.history_len);
    let deadline = scenario.goal.deadline_step.min(scenario.duration_steps);

    let mut ego = match ego_mode {
        EgoMode::Planned => scenario.ego_start,
        EgoMode::Replay(a) => a.state_at(0).map_err(track)?,
    };
    let mut frenet = match ego_mode {
        EgoMode::Planned => match FrenetState::from_cartesian(&ego, &path) {
            Ok(f) => Some(f),
            Err(source) => return Err(SimError::Path { scenario: sid(), source }),
        },
        EgoMode::Replay(_) => None,
    };
    let mut ego_states = vec![ego];
    let mut ledger = CollisionLedger::default();
    let mut cost_trace = Vec::new();
    let mut trace = Vec::new();
    let mut candidate_log = Vec::new();
    let mut emergency_steps = 0;

    let agent_states = |k: usize| -> Result<Vec<AgentState>, SimError> {
        scenario.agents.iter().map(|a| a.state_at(k)).collect::<Result<_, _>>().map_err(track)
    };
    let push_trace = |trace: &mut Vec<TraceRow>, k: usize, ego: &AgentState, states: &[AgentState]| {
        let row = |actor: &str, s: &AgentState| TraceRow { step: k, actor: actor.into(), x: s.x, y: s.y, heading: s.heading, v: s.v };
        trace.push(row("ego", ego));
        for (a, s) in scenario.agents.iter().zip(states) {
            trace.push(row(&a.id, s));
        }
    };

    let mut states = agent_states(0)?;
    push_trace(&mut trace, 0, &ego, &states);
    let mut k = 0;
    let termination = loop {
        if scenario.goal.contains(ego.position()) {
            break Termination::GoalReached;
        }
        if k >= deadline {
            break Termination::Deadline;
        }

        let next = match (ego_mode, frenet) {
            (EgoMode::Replay(a), _) => a.state_at(k + 1).map_err(track)?,
            (EgoMode::Planned, Some(f)) => {
                let forecasts = forecast_all(scenario, predictor, &ego_states, k, history_len, config.horizon, dt)?;
                let ctx = PlanningContext {
                    path: &path,
                    lanelets: &lanelets,
                    ego_shape: &scenario.ego_shape,
                    forecasts: &forecasts,
                    harm: &config.harm,
                    risk: &config.risk,
                    rule: &rule,
                    dt,
                };
                let outcome = plan(&f, &ctx, &config.planner, mode)?;
                if config.log_candidates {
                    write_candidate_log(&mut candidate_log, k, &outcome).expect("writing to memory");
                }
                match outcome.chosen() {
                    Some((cand, cost)) => {
                        cost_trace.push(StepRecord { step: k, chosen: Some(cand.id), cost: Some(*cost) });
                        frenet = Some(cand.poses[0].frenet);
                        cand.poses[0].state()
                    }
                    None => {
                        emergency_steps += 1;
                        cost_trace.push(StepRecord { step: k, chosen: None, cost: None });
                        let s = brake(&ego, config.planner.a_max, dt);
                        frenet = FrenetState::from_cartesian(&s, &path).ok().map(|mut fs| {
                            fs.s_dd = if s.v > 0.0 { -config.planner.a_max } else { 0.0 };
                            fs
                        });
                        s
                    }
                }
            }
            (EgoMode::Planned, None) => break Termination::LeftReferencePath,
        };

        k += 1;
        ego = next;
        ego_states.push(ego);
        states = agent_states(k)?;
        push_trace(&mut trace, k, &ego, &states);
        let mut hit = false;
        for (a, s) in scenario.agents.iter().zip(&states) {
            if detect_collision(&ego, &scenario.ego_shape, s, &a.shape) && ledger.record(k, &ego, a, s, &config.harm) {
                hit = true;
            }
        }
        if hit {
            break Termination::EgoCollision;
        }
    };

    Ok(SimResult {
        scenario_id: scenario.id.clone(),
        seed,
        completed: termination == Termination::GoalReached && ledger.events.is_empty(),
        termination,
        steps_executed: k,
        emergency_steps,
        collisions: ledger.events,
        cost_trace,
        trace,
        candidate_log,
    })
}

/// Forecasts every scenario agent at step `k`. Each agent's neighbors are the
/// other agents followed by the ego.
fn forecast_all(
    scenario: &Scenario,
    predictor: &Predictor,
    ego_states: &[AgentState],
    k: usize,
    history_len: usize,
    horizon: usize,
    dt: f64,
) -> Result<Vec<AgentForecast>, SimError> {
    let histories = scenario
        .agents
        .iter()
        .map(|a| TrackHistory::from_agent(a, k, history_len))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| SimError::Track { scenario: scenario.id.clone(), source })?;
    let ego_history = TrackHistory::from_recent("ego", ego_states, history_len);
    scenario
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut neighbors: Vec<TrackHistory> =
                histories.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, h)| h.clone()).collect();
            neighbors.push(ego_history.clone());
            let distribution = predictor
                .forecast(&histories[i], &neighbors, horizon, dt)
                .map_err(|source| SimError::Prediction { scenario: scenario.id.clone(), source })?;
            Ok(AgentForecast { agent_id: a.id.clone(), class: a.cls, shape: a.shape, current: *histories[i].last(), distribution })
        })
        .collect()
}

pub const TRACE_HEADER: &str = "step,actor,x,y,heading,v";

pub fn write_trace_csv<W: Write>(out: &mut W, rows: &[TraceRow]) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.step, r.actor, r.x, r.y, r.heading, r.v)?;
    }
    Ok(())
}
