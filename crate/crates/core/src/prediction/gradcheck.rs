use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::par::{self, Parallelism};
use crate::rng::indexed_substream;
use crate::scenario::AgentState;

use super::attention::GradientMutation;
use super::model::{sample_loss, sample_loss_and_grad, Sample, Scene};
use super::params::{NetworkConfig, Params};
use super::{PredictionError, TrackHistory};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub worst_block: &'static str,
    pub analytic: f64,
    pub numeric: f64,
    pub parameters: usize,
}

/// Central difference stencil used for the numeric gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stencil {
    /// `(f(w+h) - f(w-h)) / 2h`, truncation error O(h^2).
    ThreePoint,
    /// Fourth-order stencil over `w ± h, w ± 2h`. Allows a larger `h`, which
    /// keeps cancellation error small for tiny gradients.
    #[default]
    FivePoint,
}

/// Compares every analytic parameter gradient with a central finite
/// difference and reports the largest
/// `|g_a - g_n| / max(|g_a|, |g_n|, 1e-8)`.
/// Uses the five-point stencil; a step around `1e-3` balances truncation
/// against cancellation.
pub fn check_gradients(params: &Params, sample: &Sample, eps: f64) -> Result<GradCheckReport, PredictionError> {
    check_gradients_with(params, sample, eps, Stencil::default(), None, Parallelism::default())
}

pub fn check_gradients_with(
    params: &Params,
    sample: &Sample,
    eps: f64,
    stencil: Stencil,
    mutation: Option<GradientMutation>,
    mode: Parallelism,
) -> Result<GradCheckReport, PredictionError> {
    let mut analytic = params.zeros_like();
    sample_loss_and_grad(params, sample, &mut analytic, 1.0, mutation)?;

    const CHUNK: usize = 256;
    let n = params.len();
    let chunks = n.div_ceil(CHUNK);
    let numeric: Vec<Vec<f64>> = par::map_range(mode, chunks, |c| {
        let mut p = params.clone();
        (c * CHUNK..((c + 1) * CHUNK).min(n))
            .map(|i| {
                let w = p.data[i];
                let mut at = |k: f64| {
                    p.data[i] = w + k * eps;
                    sample_loss(&p, sample).unwrap_or(f64::NAN)
                };
                let d = match stencil {
                    Stencil::ThreePoint => (at(1.0) - at(-1.0)) / (2.0 * eps),
                    Stencil::FivePoint => (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * eps),
                };
                p.data[i] = w;
                d
            })
            .collect()
    });

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        worst_block: "",
        analytic: 0.0,
        numeric: 0.0,
        parameters: n,
    };
    for (i, (ga, gn)) in analytic.data.iter().zip(numeric.iter().flatten()).enumerate() {
        let denom = ga.abs().max(gn.abs()).max(1e-8);
        let err = (ga - gn).abs() / denom;
        if err > report.max_relative_error || err.is_nan() {
            report = GradCheckReport {
                max_relative_error: if err.is_nan() { f64::INFINITY } else { err },
                worst_index: i,
                worst_block: params.block_of(i).name(),
                analytic: *ga,
                numeric: *gn,
                parameters: n,
            };
        }
    }
    Ok(report)
}

/// A random parameter point and a random scene with `neighbors` road users on
/// the pooling grid, reproducible from `seed`.
pub fn random_gradcheck_sample(config: &NetworkConfig, seed: u64, neighbors: usize) -> (Params, Sample) {
    let mut rng = indexed_substream(seed, "gradcheck", seed);
    let params = Params::random(config, 1.0, &mut rng);
    let dt = 0.25;
    let walk = |id: String, origin: Vec2, rng: &mut rand_chacha::ChaCha8Rng| {
        let heading: f64 = rng.random_range(-0.4..0.4);
        let speed: f64 = rng.random_range(0.5..3.0);
        let turn: f64 = rng.random_range(-0.1..0.1);
        let mut p = origin;
        let mut h = heading;
        let mut states = Vec::new();
        for _ in 0..config.history_len + config.horizon {
            states.push(AgentState::new(p.x, p.y, speed, h));
            p = p + Vec2::from_polar(speed * dt, h);
            h += turn;
        }
        (id, states)
    };
    let (tid, target) = walk("target".into(), Vec2::ZERO, &mut rng);
    let hp = config.history_len;
    let half_long = config.cell_size * (config.grid_long as f64 - 1.0) / 2.0;
    let half_lat = config.cell_size * (config.grid_lat as f64 - 1.0) / 2.0;
    let mut others = Vec::new();
    for k in 0..neighbors {
        let origin = Vec2::new(rng.random_range(-half_long..half_long), rng.random_range(-half_lat..half_lat));
        others.push(walk(format!("n{k}"), origin, &mut rng));
    }
    // Recenter so the target's last history state is at the origin, putting
    // the neighbors' last states near their sampled grid offsets.
    let shift = target[hp - 1].position();
    let recenter = |s: &AgentState| AgentState::new(s.x - shift.x, s.y - shift.y, s.v, s.heading);
    let history = |id: &str, states: &[AgentState]| {
        let past: Vec<AgentState> = states[..hp].iter().map(recenter).collect();
        TrackHistory::from_recent(id, &past, hp)
    };
    let scene = Scene {
        target: history(&tid, &target),
        neighbors: others.iter().map(|(id, s)| history(id, s)).collect(),
    };
    let truth = target[hp..].iter().map(|s| recenter(s).position()).collect();
    (params, Sample { scene, truth })
}
