use serde::{Deserialize, Serialize};

use crate::geometry::{point_in_polygon, wrap_angle, Vec2};
use crate::scenario::AgentState;

use super::frenet::{PathError, Polynomial, ReferencePath};
use super::PlannerConfig;

/// Ego state in the reference path's frame: arc parameter `s` and lateral
/// offset `d` with their first two time derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrenetState {
    pub s: f64,
    pub s_d: f64,
    pub s_dd: f64,
    pub d: f64,
    pub d_d: f64,
    pub d_dd: f64,
}

impl FrenetState {
    /// Frenet state of a Cartesian pose, assuming zero acceleration.
    pub fn from_cartesian(state: &AgentState, path: &ReferencePath) -> Result<Self, PathError> {
        let (s, d) = path.project(state.position())?;
        let f = path.frame(s);
        let rel = wrap_angle(state.heading - f.heading);
        let scale = (1.0 - f.curvature * d).max(1e-3);
        Ok(Self { s, s_d: state.v * rel.cos() / scale, s_dd: 0.0, d, d_d: state.v * rel.sin(), d_dd: 0.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPose {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    /// Tangential acceleration.
    pub a: f64,
    /// Normal (centripetal) acceleration.
    pub a_lat: f64,
    /// Magnitude of the path-frame jerk `(s''', d''')`.
    pub jerk: f64,
    pub curvature: f64,
    pub frenet: FrenetState,
}

impl TrajectoryPose {
    pub fn state(&self) -> AgentState {
        AgentState::new(self.x, self.y, self.v, self.heading)
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityViolation {
    Acceleration,
    Velocity,
    Curvature,
    OffRoad,
}

impl FeasibilityViolation {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Acceleration => "acceleration",
            Self::Velocity => "velocity",
            Self::Curvature => "curvature",
            Self::OffRoad => "off_road",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrajectory {
    pub id: usize,
    pub d_t: f64,
    pub v_t: f64,
    pub horizon: f64,
    pub lateral: [f64; 6],
    pub longitudinal: [f64; 6],
    /// Poses at `dt, 2 dt, ..., horizon`.
    pub poses: Vec<TrajectoryPose>,
    pub violations: Vec<FeasibilityViolation>,
}

impl CandidateTrajectory {
    pub fn feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn states(&self) -> Vec<AgentState> {
        self.poses.iter().map(TrajectoryPose::state).collect()
    }
}

/// Finite-difference step for Cartesian derivatives of the analytic curve.
const FD_STEP: f64 = 1e-3;
/// Below this speed heading and curvature are taken from the path.
const STANDSTILL: f64 = 1e-3;

/// One candidate per `(d_T, v_T, T)` in `D x V x T_set`, `d_T` outermost.
pub fn sample_candidates(
    start: &FrenetState,
    path: &ReferencePath,
    config: &PlannerConfig,
    dt: f64,
) -> Vec<CandidateTrajectory> {
    let base = start.s_d.max(config.min_base_speed);
    let mut out = Vec::new();
    for &d_t in &config.lateral_offsets {
        for &factor in &config.speed_factors {
            let v_t = (factor * base).clamp(0.0, config.v_max);
            for &horizon in &config.horizons {
                let lat = Polynomial::quintic([start.d, start.d_d, start.d_dd], [d_t, 0.0, 0.0], horizon);
                let lon = Polynomial::quartic([start.s, start.s_d, start.s_dd], v_t, 0.0, horizon);
                let steps = (horizon / dt).round() as usize;
                let poses = (1..=steps).map(|i| pose_at(path, &lat, &lon, i as f64 * dt)).collect();
                out.push(CandidateTrajectory {
                    id: out.len(),
                    d_t,
                    v_t,
                    horizon,
                    lateral: lat.coeffs,
                    longitudinal: lon.coeffs,
                    poses,
                    violations: Vec::new(),
                });
            }
        }
    }
    out
}

fn pose_at(path: &ReferencePath, lat: &Polynomial, lon: &Polynomial, t: f64) -> TrajectoryPose {
    let at = |t: f64| path.to_cartesian(lon.eval(t, 0), lat.eval(t, 0));
    let (p, pp, pm) = (at(t), at(t + FD_STEP), at(t - FD_STEP));
    let vel = (pp - pm) * (0.5 / FD_STEP);
    let acc = (pp - p * 2.0 + pm) * (1.0 / (FD_STEP * FD_STEP));
    let speed = vel.norm();
    let frenet = FrenetState {
        s: lon.eval(t, 0),
        s_d: lon.eval(t, 1),
        s_dd: lon.eval(t, 2),
        d: lat.eval(t, 0),
        d_d: lat.eval(t, 1),
        d_dd: lat.eval(t, 2),
    };
    let (heading, a, a_lat, curvature) = if speed > STANDSTILL {
        let dir = vel * (1.0 / speed);
        let a_lat = dir.cross(acc);
        (vel.y.atan2(vel.x), dir.dot(acc), a_lat, a_lat / (speed * speed))
    } else {
        (path.frame(frenet.s).heading, frenet.s_dd, 0.0, 0.0)
    };
    TrajectoryPose {
        t,
        x: p.x,
        y: p.y,
        heading,
        v: speed,
        a,
        a_lat,
        jerk: lon.eval(t, 3).hypot(lat.eval(t, 3)),
        curvature,
        frenet,
    }
}

/// Kinematic and road-boundary checks; an empty list means feasible.
pub fn feasibility_check(
    candidate: &CandidateTrajectory,
    lanelets: &[Vec<Vec2>],
    config: &PlannerConfig,
) -> Vec<FeasibilityViolation> {
    let mut v = Vec::new();
    let mut flag = |code| {
        if !v.contains(&code) {
            v.push(code);
        }
    };
    for p in &candidate.poses {
        if p.a.hypot(p.a_lat) > config.a_max {
            flag(FeasibilityViolation::Acceleration);
        }
        if p.v > config.v_max || p.frenet.s_d < -1e-9 {
            flag(FeasibilityViolation::Velocity);
        }
        if p.curvature.abs() > config.kappa_max {
            flag(FeasibilityViolation::Curvature);
        }
        if !lanelets.is_empty() && !lanelets.iter().any(|poly| point_in_polygon(p.position(), poly)) {
            flag(FeasibilityViolation::OffRoad);
        }
    }
    v.sort();
    v
}
