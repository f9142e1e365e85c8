//! Seeded synthetic scenarios: a mixed-traffic evaluation suite and a small
//! training set for the forecaster.
//!
//! Every scenario uses a straight three-lane road along +x (lanes centered at
//! y = -3.5, 0, 3.5) with the ego starting in the middle lane at 10 m/s.
//! Scenario `i` draws from its own random substream, so adding scenarios does
//! not change earlier ones.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::prediction::{DatasetEntry, DatasetSpec};
use crate::rng::indexed_substream;
use crate::scenario::{write_scenario, Agent, AgentState, Footprint, GoalRegion, Lanelet, RoadUserClass, Scenario, TrackPoint};

pub const TIME_STEP: f64 = 0.25;
const ROAD_START: f64 = -30.0;
const ROAD_END: f64 = 300.0;
const HALF_WIDTH: f64 = 5.25;
const EGO_SPEED: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    LeadCar,
    PedestrianCrossing,
    Oncoming,
    Cyclist,
    CutIn,
    FreeCruise,
}

impl Family {
    pub const ALL: [Family; 6] = [Self::LeadCar, Self::PedestrianCrossing, Self::Oncoming, Self::Cyclist, Self::CutIn, Self::FreeCruise];

    pub fn name(self) -> &'static str {
        match self {
            Self::LeadCar => "lead_car",
            Self::PedestrianCrossing => "pedestrian_crossing",
            Self::Oncoming => "oncoming",
            Self::Cyclist => "cyclist",
            Self::CutIn => "cut_in",
            Self::FreeCruise => "free_cruise",
        }
    }
}

fn car() -> Footprint {
    Footprint::new(4.5, 1.9)
}

/// Samples `f(t)` at every step `0..=steps` into a track.
fn track(steps: usize, mut f: impl FnMut(f64) -> AgentState) -> Vec<TrackPoint> {
    (0..=steps)
        .map(|k| {
            let s = f(k as f64 * TIME_STEP);
            TrackPoint { step: k, x: s.x, y: s.y, v: s.v, heading: s.heading }
        })
        .collect()
}

/// Straight-line motion along `heading` that holds `v0` until `t_brake`, then
/// decelerates at `decel` to a stop.
fn braking_line(x0: f64, y0: f64, heading: f64, v0: f64, t_brake: f64, decel: f64) -> impl Fn(f64) -> AgentState {
    move |t| {
        let (dist, v) = if t <= t_brake {
            (v0 * t, v0)
        } else {
            let tb = (t - t_brake).min(v0 / decel);
            (v0 * t_brake + v0 * tb - 0.5 * decel * tb * tb, (v0 - decel * (t - t_brake)).max(0.0))
        };
        AgentState::new(x0 + dist * heading.cos(), y0 + dist * heading.sin(), v, heading)
    }
}

/// Smoothstep lane change from `y0` to `y1` between `t0` and `t0 + dur`,
/// at constant forward speed.
fn lane_change(x0: f64, v: f64, y0: f64, y1: f64, t0: f64, dur: f64, dir: f64) -> impl Fn(f64) -> AgentState {
    move |t| {
        let u = ((t - t0) / dur).clamp(0.0, 1.0);
        let y = y0 + (y1 - y0) * u * u * (3.0 - 2.0 * u);
        let dy = if (0.0..1.0).contains(&u) { (y1 - y0) * 6.0 * u * (1.0 - u) / dur } else { 0.0 };
        let heading = if dir > 0.0 { dy.atan2(v) } else { PI - dy.atan2(v) };
        let heading = crate::geometry::wrap_angle(heading);
        AgentState::new(x0 + dir * v * t, y, v.hypot(dy), heading)
    }
}

fn base(id: String, goal_x: f64, agents: Vec<Agent>, steps: usize, deadline: usize) -> Scenario {
    Scenario {
        id,
        time_step: TIME_STEP,
        duration_steps: steps,
        lanelets: vec![Lanelet {
            id: "road".into(),
            left: vec![[ROAD_START, HALF_WIDTH], [ROAD_END, HALF_WIDTH]],
            right: vec![[ROAD_START, -HALF_WIDTH], [ROAD_END, -HALF_WIDTH]],
        }],
        reference_path: vec![[ROAD_START, 0.0], [0.0, 0.0], [ROAD_END, 0.0]],
        ego_start: AgentState::new(0.0, 0.0, EGO_SPEED, 0.0),
        ego_shape: car(),
        goal: GoalRegion { center: [goal_x, 0.0], radius: 4.0, deadline_step: deadline },
        agents,
    }
}

fn agent(id: &str, cls: RoadUserClass, shape: Footprint, track: Vec<TrackPoint>) -> Agent {
    Agent { id: id.into(), cls, shape, track }
}

/// One scenario of the given family.
pub fn scenario(family: Family, index: usize, rng: &mut ChaCha8Rng) -> Scenario {
    let goal_x: f64 = rng.random_range(110.0..140.0);
    // Nominal travel time at cruise speed with generous slack.
    let nominal = (goal_x / EGO_SPEED / TIME_STEP).ceil() as usize;
    let deadline = nominal * 3 / 2 + 8;
    let steps = deadline;
    let id = format!("{}_{index:02}", family.name());
    let mut agents = Vec::new();
    match family {
        Family::LeadCar => {
            let truck = rng.random_bool(0.3);
            let (cls, shape) = if truck { (RoadUserClass::Truck, Footprint::new(9.0, 2.5)) } else { (RoadUserClass::Car, car()) };
            let x0 = rng.random_range(25.0..40.0);
            let v0 = rng.random_range(2.0..6.0);
            let t_brake = if rng.random_bool(0.5) { rng.random_range(1.0..4.0) } else { f64::INFINITY };
            let y0 = rng.random_range(-0.3..0.3);
            agents.push(agent("lead", cls, shape, track(steps, braking_line(x0, y0, 0.0, v0, t_brake, 2.0))));
        }
        Family::PedestrianCrossing => {
            let x_c = rng.random_range(45.0..80.0);
            let v_p = rng.random_range(1.2..1.8);
            let t_arrive = x_c / EGO_SPEED + rng.random_range(-1.0..1.0);
            let y0 = -v_p * t_arrive;
            let stop_y = 8.0;
            agents.push(agent(
                "pedestrian",
                RoadUserClass::Pedestrian,
                Footprint::new(0.6, 0.6),
                track(steps, |t| {
                    let y = (y0 + v_p * t).min(stop_y);
                    let v = if y < stop_y { v_p } else { 0.0 };
                    AgentState::new(x_c, y, v, FRAC_PI_2)
                }),
            ));
        }
        Family::Oncoming => {
            let x0 = rng.random_range(100.0..160.0);
            let v = rng.random_range(8.0..12.0);
            let drift = if rng.random_bool(0.6) { rng.random_range(0.5..2.0) } else { 3.5 };
            let t0 = rng.random_range(1.0..3.0);
            agents.push(agent("oncoming", RoadUserClass::Car, car(), track(steps, lane_change(x0, v, 3.5, drift, t0, 2.5, -1.0))));
            if rng.random_bool(0.5) {
                // Parked vehicle on the right shoulder.
                let xp = rng.random_range(40.0..90.0);
                agents.push(agent("parked", RoadUserClass::Car, car(), track(steps, move |_| AgentState::new(xp, -4.3, 0.0, 0.0))));
            }
        }
        Family::Cyclist => {
            let x0 = rng.random_range(20.0..40.0);
            let y0 = rng.random_range(-1.5..-0.5);
            let v = rng.random_range(3.0..5.0);
            agents.push(agent(
                "cyclist",
                RoadUserClass::Cyclist,
                Footprint::new(1.8, 0.7),
                track(steps, braking_line(x0, y0, 0.0, v, f64::INFINITY, 1.0)),
            ));
            if rng.random_bool(0.5) {
                let xo = rng.random_range(120.0..180.0);
                let vo = rng.random_range(8.0..12.0);
                agents.push(agent("oncoming", RoadUserClass::Car, car(), track(steps, braking_line(xo, 3.5, PI, vo, f64::INFINITY, 1.0))));
            }
        }
        Family::CutIn => {
            let x0 = rng.random_range(5.0..20.0);
            let v = rng.random_range(6.0..9.0);
            let t0 = rng.random_range(0.5..2.0);
            let dur = rng.random_range(1.5..3.0);
            agents.push(agent("cut_in", RoadUserClass::Car, car(), track(steps, lane_change(x0, v, 3.5, 0.0, t0, dur, 1.0))));
        }
        Family::FreeCruise => {
            let n = rng.random_range(1..=3);
            for k in 0..n {
                let xp = rng.random_range(20.0..130.0);
                agents.push(agent(&format!("parked_{k}"), RoadUserClass::Car, car(), track(steps, move |_| AgentState::new(xp, -4.4, 0.0, 0.0))));
            }
            if rng.random_bool(0.5) {
                let xo = rng.random_range(100.0..200.0);
                let vo = rng.random_range(8.0..12.0);
                agents.push(agent("oncoming", RoadUserClass::Car, car(), track(steps, braking_line(xo, 3.5, PI, vo, f64::INFINITY, 1.0))));
            }
        }
    }
    base(id, goal_x, agents, steps, deadline)
}

/// `count` scenarios cycling through the families.
pub fn synthetic_suite(seed: u64, count: usize) -> Vec<Scenario> {
    (0..count)
        .map(|i| {
            let mut rng = indexed_substream(seed, "suite", i as u64);
            scenario(Family::ALL[i % Family::ALL.len()], i, &mut rng)
        })
        .collect()
}

/// Scenarios with several moving road users for forecaster training, and a
/// dataset listing `samples` (agent, anchor) pairs over them.
pub fn toy_dataset(seed: u64, scenarios: usize, samples: usize, history_len: usize, horizon: usize) -> (Vec<Scenario>, DatasetSpec) {
    let mut out = Vec::with_capacity(scenarios);
    for i in 0..scenarios {
        let mut rng = indexed_substream(seed, "toy", i as u64);
        let steps = history_len + horizon + 16;
        let mut agents = Vec::new();
        for k in 0..3 {
            let (cls, shape, speed) = match k {
                0 => (RoadUserClass::Car, car(), rng.random_range(3.0..6.0)),
                1 => (RoadUserClass::Cyclist, Footprint::new(1.8, 0.7), rng.random_range(2.0..4.0)),
                _ => (RoadUserClass::Pedestrian, Footprint::new(0.6, 0.6), rng.random_range(0.8..1.6)),
            };
            let x0 = rng.random_range(0.0..30.0);
            let y0 = rng.random_range(-3.0..3.0);
            let h0: f64 = rng.random_range(-0.3..0.3);
            let turn: f64 = rng.random_range(-0.08..0.08);
            agents.push(agent(
                &format!("a{k}"),
                cls,
                shape,
                track(steps, |t| {
                    // Constant-speed arc.
                    let h = h0 + turn * t;
                    let (x, y) = if turn.abs() < 1e-9 {
                        (x0 + speed * t * h0.cos(), y0 + speed * t * h0.sin())
                    } else {
                        let r = speed / turn;
                        (x0 + r * (h.sin() - h0.sin()), y0 - r * (h.cos() - h0.cos()))
                    };
                    AgentState::new(x, y, speed, crate::geometry::wrap_angle(h))
                }),
            ));
        }
        out.push(base(format!("toy_{i:02}"), 100.0, agents, steps, steps));
    }
    let mut entries = Vec::with_capacity(samples);
    for j in 0..samples {
        let s = &out[j % scenarios];
        let a = &s.agents[(j / scenarios) % s.agents.len()];
        let anchor = history_len - 1 + 2 * (j / (scenarios * s.agents.len()));
        entries.push(DatasetEntry { scenario: format!("{}.json", s.id), agent: a.id.clone(), anchor });
    }
    (out, DatasetSpec { entries })
}

/// Writes each scenario to `dir/<id>.json`.
pub fn write_scenarios(dir: &Path, scenarios: &[Scenario]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for s in scenarios {
        write_scenario(s, dir.join(format!("{}.json", s.id)))?;
    }
    Ok(())
}
