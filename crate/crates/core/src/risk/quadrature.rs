use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::geometry::Vec2;
use crate::prediction::{GaussianStep, PredictedDistribution};
use crate::scenario::{AgentState, Footprint};

use super::RiskError;

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes are roots of `P_n`, found by Newton iteration from the
    /// Chebyshev-like initial guess.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Shared 24-point rule.
    pub fn default_rule() -> &'static GaussLegendre {
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        RULE.get_or_init(|| GaussLegendre::new(24))
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

const CLIP_SIGMAS: f64 = 8.0;
/// Widest panel, in conditional standard deviations, integrated by one rule.
const PANEL_SIGMAS: f64 = 12.0;
const MAX_PANELS: usize = 16;

/// Probability mass of a bivariate Gaussian (mean `mean`, std devs `sx`, `sy`,
/// correlation `rho`) inside the axis-aligned box `[-half_len, half_len] x
/// [-half_wid, half_wid]`.
///
/// Tensor-product Gauss-Legendre over the box clipped to `mean ± 8σ`; the
/// clipped range is split into panels no wider than 12 conditional standard
/// deviations so narrow densities are still resolved.
pub fn rectangle_probability(
    mean: Vec2,
    sx: f64,
    sy: f64,
    rho: f64,
    half_len: f64,
    half_wid: f64,
    rule: &GaussLegendre,
) -> f64 {
    let q = 1.0 - rho * rho;
    let (x0, x1) = ((-half_len).max(mean.x - CLIP_SIGMAS * sx), half_len.min(mean.x + CLIP_SIGMAS * sx));
    let (y0, y1) = ((-half_wid).max(mean.y - CLIP_SIGMAS * sy), half_wid.min(mean.y + CLIP_SIGMAS * sy));
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let sq = q.sqrt();
    let panels = |w: f64, s: f64| ((w / (PANEL_SIGMAS * s * sq)).ceil() as usize).clamp(1, MAX_PANELS);
    let (nx, ny) = (panels(x1 - x0, sx), panels(y1 - y0, sy));
    let hx = (x1 - x0) / nx as f64;
    let hy = (y1 - y0) / ny as f64;

    let norm = 1.0 / (2.0 * PI * sx * sy * sq);
    let inv2q = 0.5 / q;
    let mut total = 0.0;
    for px in 0..nx {
        let cx = x0 + hx * (px as f64 + 0.5);
        for (&ux, &wx) in rule.nodes.iter().zip(&rule.weights) {
            let dx = (cx + 0.5 * hx * ux - mean.x) / sx;
            let mut col = 0.0;
            for py in 0..ny {
                let cy = y0 + hy * (py as f64 + 0.5);
                for (&uy, &wy) in rule.nodes.iter().zip(&rule.weights) {
                    let dy = (cy + 0.5 * hy * uy - mean.y) / sy;
                    let z = dx * dx - 2.0 * rho * dx * dy + dy * dy;
                    col += wy * (-z * inv2q).exp();
                }
            }
            total += wx * col;
        }
    }
    (total * norm * 0.25 * hx * hy).clamp(0.0, 1.0)
}

/// Expresses a world-frame Gaussian step in the frame of `pose` (origin at the
/// pose, x along its heading). Returns mean, std devs and correlation.
pub(crate) fn to_body_frame(step: &GaussianStep, pose: &AgentState) -> (Vec2, f64, f64, f64) {
    let rel = (step.mean() - pose.position()).rotate(-pose.heading);
    let (s, c) = pose.heading.sin_cos();
    let (sxx, syy, sxy) = (step.sigma_x * step.sigma_x, step.sigma_y * step.sigma_y, step.rho * step.sigma_x * step.sigma_y);
    // R^T Σ R with R the heading rotation.
    let bxx = c * c * sxx + 2.0 * c * s * sxy + s * s * syy;
    let byy = s * s * sxx - 2.0 * c * s * sxy + c * c * syy;
    let bxy = (c * c - s * s) * sxy + c * s * (syy - sxx);
    let (bsx, bsy) = (bxx.max(0.0).sqrt(), byy.max(0.0).sqrt());
    let brho = (bxy / (bsx * bsy)).clamp(-0.999_999, 0.999_999);
    (rel, bsx, bsy, brho)
}

/// Per-step probability that the obstacle center lies in the ego footprint
/// inflated by the obstacle's half-dimensions, oriented with the ego heading.
pub fn collision_probability(
    ego: &[AgentState],
    ego_shape: &Footprint,
    forecast: &PredictedDistribution,
    obstacle_shape: &Footprint,
    rule: &GaussLegendre,
) -> Result<Vec<f64>, RiskError> {
    if ego.len() != forecast.steps.len() {
        return Err(RiskError::LengthMismatch { ego: ego.len(), forecast: forecast.steps.len() });
    }
    let half_len = 0.5 * (ego_shape.length + obstacle_shape.length);
    let half_wid = 0.5 * (ego_shape.width + obstacle_shape.width);
    ego.iter()
        .zip(&forecast.steps)
        .enumerate()
        .map(|(t, (pose, step))| {
            step.check().map_err(|reason| RiskError::InvalidDistribution { step: t, reason })?;
            let (mean, sx, sy, rho) = to_body_frame(step, pose);
            Ok(rectangle_probability(mean, sx, sy, rho, half_len, half_wid, rule))
        })
        .collect()
}
