//! Scenario data model, file loading and validation, and time-indexed queries
//! over recorded agent tracks.
//!
//! A scenario file is a single JSON document:
//!
//! ```json
//! {
//!   "id": "cut_in_07",
//!   "time_step": 0.25,
//!   "duration_steps": 80,
//!   "lanelets": [{"id": "l0", "left": [[0, 6], [200, 6]], "right": [[0, -6], [200, -6]]}],
//!   "reference_path": [[0, 0], [200, 0]],
//!   "ego_start": {"x": 0, "y": 0, "v": 10, "heading": 0},
//!   "ego_shape": {"length": 4.5, "width": 2.0},
//!   "goal": {"center": [120, 0], "radius": 5, "deadline_step": 80},
//!   "agents": [{"id": "a1", "cls": "car", "shape": {"length": 4.5, "width": 2.0},
//!               "track": [{"step": 0, "x": 30, "y": 0, "v": 5, "heading": 0}]}]
//! }
//! ```
//!
//! Lengths are meters, speeds m/s, angles radians. Unknown keys are rejected.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_diff, wrap_angle, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadUserClass {
    Car,
    Truck,
    Pedestrian,
    Cyclist,
}

impl RoadUserClass {
    pub const ALL: [RoadUserClass; 4] = [Self::Car, Self::Truck, Self::Pedestrian, Self::Cyclist];

    /// Pedestrians and cyclists are vulnerable road users.
    pub fn is_vru(self) -> bool {
        matches!(self, Self::Pedestrian | Self::Cyclist)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Car => "car",
            Self::Truck => "truck",
            Self::Pedestrian => "pedestrian",
            Self::Cyclist => "cyclist",
        }
    }
}

impl fmt::Display for RoadUserClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub heading: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, v: f64, heading: f64) -> Self {
        Self { x, y, v, heading }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_polar(self.v, self.heading)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
}

impl Footprint {
    pub fn new(length: f64, width: f64) -> Self {
        Self { length, width }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalRegion {
    pub center: [f64; 2],
    pub radius: f64,
    pub deadline_step: usize,
}

impl GoalRegion {
    pub fn contains(&self, p: Vec2) -> bool {
        (p - Vec2::from(self.center)).norm() <= self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lanelet {
    pub id: String,
    pub left: Vec<[f64; 2]>,
    pub right: Vec<[f64; 2]>,
}

impl Lanelet {
    /// Closed boundary: left bound forward, right bound backward.
    pub fn polygon(&self) -> Vec<Vec2> {
        self.left
            .iter()
            .chain(self.right.iter().rev())
            .map(|&p| Vec2::from(p))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackPoint {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub heading: f64,
}

impl TrackPoint {
    pub fn state(&self) -> AgentState {
        AgentState::new(self.x, self.y, self.v, self.heading)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Agent {
    pub id: String,
    pub cls: RoadUserClass,
    pub shape: Footprint,
    pub track: Vec<TrackPoint>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("agent `{agent}` has no sample at or before step {step}")]
    BeforeFirstSample { agent: String, step: f64 },
}

impl Agent {
    /// State at an integer step; see [`Agent::state_at_fractional`].
    pub fn state_at(&self, step: usize) -> Result<AgentState, TrackError> {
        self.state_at_fractional(step as f64)
    }

    /// Exact at recorded steps, linear in x, y, v and shortest-arc in heading
    /// between samples, hold-last past the final sample.
    pub fn state_at_fractional(&self, step: f64) -> Result<AgentState, TrackError> {
        let before = || TrackError::BeforeFirstSample { agent: self.id.clone(), step };
        let first = self.track.first().ok_or_else(before)?;
        if step < first.step as f64 {
            return Err(before());
        }
        // Index of the first sample strictly after `step`.
        let hi = self.track.partition_point(|p| (p.step as f64) <= step);
        if hi == self.track.len() {
            return Ok(self.track[hi - 1].state());
        }
        let a = &self.track[hi - 1];
        if a.step as f64 == step {
            return Ok(a.state());
        }
        let b = &self.track[hi];
        let u = (step - a.step as f64) / (b.step - a.step) as f64;
        let lerp = |p: f64, q: f64| p + (q - p) * u;
        Ok(AgentState {
            x: lerp(a.x, b.x),
            y: lerp(a.y, b.y),
            v: lerp(a.v, b.v),
            heading: wrap_angle(a.heading + u * angle_diff(b.heading, a.heading)),
        })
    }
}

/// State of an agent at an integer step.
pub fn agent_state_at(agent: &Agent, step: usize) -> Result<AgentState, TrackError> {
    agent.state_at(step)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub time_step: f64,
    pub duration_steps: usize,
    pub lanelets: Vec<Lanelet>,
    pub reference_path: Vec<[f64; 2]>,
    pub ego_start: AgentState,
    pub ego_shape: Footprint,
    pub goal: GoalRegion,
    pub agents: Vec<Agent>,
}

impl Scenario {
    pub fn reference_points(&self) -> Vec<Vec2> {
        self.reference_path.iter().map(|&p| Vec2::from(p)).collect()
    }

    pub fn lanelet_polygons(&self) -> Vec<Vec<Vec2>> {
        self.lanelets.iter().map(Lanelet::polygon).collect()
    }

    pub fn agent(&self, id: &str) -> Option<&Agent> {
        self.agents.iter().find(|a| a.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    TimeStepNonPositive,
    DurationZero,
    NonFinite,
    FootprintNonPositive,
    SpeedNegative,
    HeadingOutOfRange,
    ReferencePathTooShort,
    ReferencePathDegenerateSegment,
    LaneletTooShort,
    GoalRadiusNonPositive,
    GoalDeadlineBeyondDuration,
    DuplicateAgentId,
    TrackMissingStepZero,
    TrackNotIncreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// Dotted path of the offending field, e.g. `agents[a1].track`.
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

struct Collector(Vec<Violation>);

impl Collector {
    fn push(&mut self, code: ViolationCode, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(Violation { code, field: field.into(), message: message.into() });
    }

    fn state(&mut self, field: &str, s: &AgentState) {
        if ![s.x, s.y, s.v, s.heading].iter().all(|v| v.is_finite()) {
            self.push(ViolationCode::NonFinite, field, "state has non-finite entries");
            return;
        }
        if s.v < 0.0 {
            self.push(ViolationCode::SpeedNegative, field, format!("speed {} < 0", s.v));
        }
        if !(-PI..=PI).contains(&s.heading) {
            self.push(
                ViolationCode::HeadingOutOfRange,
                field,
                format!("heading {} outside [-pi, pi]", s.heading),
            );
        }
    }

    fn footprint(&mut self, field: &str, f: &Footprint) {
        if !(f.length > 0.0 && f.width > 0.0) {
            self.push(
                ViolationCode::FootprintNonPositive,
                field,
                format!("footprint {}x{} must be positive", f.length, f.width),
            );
        }
    }
}

/// Checks every type invariant and reports all violations found.
pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    use ViolationCode as C;
    let mut out = Collector(Vec::new());

    if !(s.time_step > 0.0 && s.time_step.is_finite()) {
        out.push(C::TimeStepNonPositive, "time_step", format!("time_step {} must be > 0", s.time_step));
    }
    if s.duration_steps < 1 {
        out.push(C::DurationZero, "duration_steps", "duration_steps must be >= 1");
    }

    out.state("ego_start", &s.ego_start);
    out.footprint("ego_shape", &s.ego_shape);

    if s.reference_path.len() < 2 {
        out.push(C::ReferencePathTooShort, "reference_path", "needs at least 2 points");
    }
    for (i, w) in s.reference_path.windows(2).enumerate() {
        let seg = Vec2::from(w[1]) - Vec2::from(w[0]);
        if !(seg.norm() > 0.0) {
            out.push(
                C::ReferencePathDegenerateSegment,
                format!("reference_path[{i}]"),
                format!("segment {i} has zero length"),
            );
        }
    }

    for l in &s.lanelets {
        if l.left.len() < 2 || l.right.len() < 2 {
            out.push(C::LaneletTooShort, format!("lanelets[{}]", l.id), "bounds need at least 2 points");
        }
    }

    if !(s.goal.radius > 0.0) {
        out.push(C::GoalRadiusNonPositive, "goal.radius", format!("goal radius {} must be > 0", s.goal.radius));
    }
    if s.goal.deadline_step > s.duration_steps {
        out.push(
            C::GoalDeadlineBeyondDuration,
            "goal.deadline_step",
            format!("deadline {} exceeds duration {}", s.goal.deadline_step, s.duration_steps),
        );
    }

    let mut seen = std::collections::BTreeSet::new();
    for a in &s.agents {
        let field = format!("agents[{}]", a.id);
        if !seen.insert(a.id.as_str()) {
            out.push(C::DuplicateAgentId, &field, format!("agent id `{}` appears twice", a.id));
        }
        out.footprint(&format!("{field}.shape"), &a.shape);
        match a.track.first() {
            Some(p) if p.step == 0 => {}
            _ => out.push(
                C::TrackMissingStepZero,
                format!("{field}.track"),
                format!("agent `{}` track must start at step 0", a.id),
            ),
        }
        if a.track.windows(2).any(|w| w[1].step <= w[0].step) {
            out.push(
                C::TrackNotIncreasing,
                format!("{field}.track"),
                format!("agent `{}` track steps are not strictly increasing", a.id),
            );
        }
        for p in &a.track {
            out.state(&format!("{field}.track[step={}]", p.step), &p.state());
        }
    }
    out.0
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("schema violation in {path} at `{field}`: {message}")]
    Schema { path: String, field: String, message: String },
    #[error("invalid scenario {path}: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid { path: String, violations: Vec<Violation> },
}

/// Parses a scenario document from a string; `origin` is used in messages.
pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Schema {
        path: origin.to_string(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let violations = validate_scenario(&s);
    if violations.is_empty() {
        Ok(s)
    } else {
        Err(ScenarioError::Invalid { path: origin.to_string(), violations })
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: origin.clone(), source })?;
    parse_scenario(&text, &origin)
}

pub fn scenario_to_string(s: &Scenario) -> String {
    serde_json::to_string_pretty(s).expect("scenario serializes")
}

pub fn write_scenario(s: &Scenario, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut text = scenario_to_string(s);
    text.push('\n');
    fs::write(path, text)
}


#[cfg(test)]
mod tests {
    use super::fixtures::minimal;
    use super::*;

    #[test]
    fn minimal_roundtrip_and_counts() {
        let s = minimal();
        let text = scenario_to_string(&s);
        let back = parse_scenario(&text, "mem").unwrap();
        assert_eq!(back, s);
        assert_eq!(back.agents.len(), 1);
        assert_eq!(back.duration_steps, 4);
        assert!(validate_scenario(&s).is_empty());
    }

    #[test]
    fn missing_time_step_names_field() {
        let mut v: serde_json::Value = serde_json::from_str(&scenario_to_string(&minimal())).unwrap();
        v.as_object_mut().unwrap().remove("time_step");
        let err = parse_scenario(&v.to_string(), "mem").unwrap_err();
        assert!(matches!(err, ScenarioError::Schema { .. }));
        assert!(err.to_string().contains("time_step"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&scenario_to_string(&minimal())).unwrap();
        v["agents"][0]["mass"] = serde_json::json!(1200.0);
        let err = parse_scenario(&v.to_string(), "mem").unwrap_err();
        assert!(err.to_string().contains("mass"), "{err}");
    }

    #[test]
    fn wrong_type_names_path() {
        let mut v: serde_json::Value = serde_json::from_str(&scenario_to_string(&minimal())).unwrap();
        v["agents"][0]["track"][1]["x"] = serde_json::json!("far");
        let err = parse_scenario(&v.to_string(), "mem").unwrap_err();
        assert!(err.to_string().contains("agents[0].track[1].x"), "{err}");
    }

    #[test]
    fn non_monotone_track_names_agent() {
        let mut s = minimal();
        s.agents[0].track = [0usize, 2, 1]
            .iter()
            .map(|&k| TrackPoint { step: k, x: 0.0, y: 0.0, v: 0.0, heading: 0.0 })
            .collect();
        let err = parse_scenario(&scenario_to_string(&s), "mem").unwrap_err();
        match &err {
            ScenarioError::Invalid { violations, .. } => {
                assert_eq!(violations.len(), 1);
                assert_eq!(violations[0].code, ViolationCode::TrackNotIncreasing);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("a1"));
    }

    #[test]
    fn zero_goal_radius_flagged() {
        let mut s = minimal();
        s.goal.radius = 0.0;
        let v = validate_scenario(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code, ViolationCode::GoalRadiusNonPositive);
    }

    #[test]
    fn all_violations_reported() {
        let mut s = minimal();
        s.goal.radius = 0.0;
        s.time_step = -0.1;
        let codes: Vec<_> = validate_scenario(&s).into_iter().map(|v| v.code).collect();
        assert_eq!(codes, vec![ViolationCode::TimeStepNonPositive, ViolationCode::GoalRadiusNonPositive]);
    }

    #[test]
    fn unreadable_file() {
        let err = load_scenario("/nonexistent/scenario.json").unwrap_err();
        assert!(matches!(err, ScenarioError::Io { .. }));
    }

    fn agent_with(points: &[(usize, f64, f64)]) -> Agent {
        Agent {
            id: "q".into(),
            cls: RoadUserClass::Pedestrian,
            shape: Footprint::new(0.5, 0.5),
            track: points
                .iter()
                .map(|&(step, x, heading)| TrackPoint { step, x, y: 0.0, v: 1.0, heading })
                .collect(),
        }
    }

    #[test]
    fn state_queries() {
        let a = agent_with(&[(0, 0.0, 0.0), (2, 4.0, 0.0), (3, 10.0, 0.0)]);
        assert_eq!(a.state_at(3).unwrap().x, 10.0);
        assert_eq!(a.state_at(1).unwrap().x, 2.0);
        assert_eq!(a.state_at(50).unwrap(), a.track[2].state());
        let late = agent_with(&[(2, 0.0, 0.0)]);
        assert!(late.state_at(1).is_err());
    }

    #[test]
    fn heading_takes_shortest_arc() {
        let a = agent_with(&[(0, 0.0, 3.0), (2, 0.0, -3.0)]);
        let h = a.state_at(1).unwrap().heading;
        // Midway across the +-pi seam, not through zero.
        assert!((h.abs() - PI).abs() < 1e-12, "{h}");
    }

    #[test]
    fn fractional_queries_are_continuous() {
        let a = agent_with(&[(0, 0.0, 3.0), (4, 8.0, -3.0), (9, 1.0, 0.5)]);
        for k in 0..90 {
            let t = k as f64 * 0.1;
            let s0 = a.state_at_fractional(t).unwrap();
            let s1 = a.state_at_fractional(t + 1e-9).unwrap();
            assert!((s0.x - s1.x).abs() < 1e-6);
            assert!(angle_diff(s0.heading, s1.heading).abs() < 1e-6);
        }
    }
}
