use std::f64::consts::PI;

use crate::geometry::Vec2;

use super::linalg::{sigmoid, softplus};
use super::{GaussianStep, PredictedDistribution, PredictionError, MAX_CORRELATION, SIGMA_FLOOR};

/// Negative log-density of `truth` under one bivariate Gaussian.
pub fn step_nll(g: &GaussianStep, truth: Vec2) -> f64 {
    let dx = (truth.x - g.mu_x) / g.sigma_x;
    let dy = (truth.y - g.mu_y) / g.sigma_y;
    let q = 1.0 - g.rho * g.rho;
    let z = dx * dx - 2.0 * g.rho * dx * dy + dy * dy;
    (2.0 * PI).ln() + g.sigma_x.ln() + g.sigma_y.ln() + 0.5 * q.ln() + z / (2.0 * q)
}

/// Mean per-step negative log-likelihood of the true positions.
pub fn nll_loss(pred: &PredictedDistribution, truth: &[Vec2]) -> Result<f64, PredictionError> {
    if pred.steps.len() != truth.len() {
        return Err(PredictionError::TruthLength { expected: pred.steps.len(), got: truth.len() });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.steps.iter().zip(truth).map(|(g, t)| step_nll(g, *t)).sum::<f64>() / truth.len() as f64)
}

/// Squashes one raw output head into a valid Gaussian.
pub(crate) fn head_to_gaussian(raw: &[f64]) -> GaussianStep {
    GaussianStep {
        mu_x: raw[0],
        mu_y: raw[1],
        sigma_x: softplus(raw[2]) + SIGMA_FLOOR,
        sigma_y: softplus(raw[3]) + SIGMA_FLOOR,
        rho: MAX_CORRELATION * raw[4].tanh(),
    }
}

/// Step NLL and its gradient w.r.t. the raw head outputs.
pub(crate) fn head_nll_grad(raw: &[f64], truth: Vec2) -> (f64, [f64; 5]) {
    let g = head_to_gaussian(raw);
    let (sx, sy, r) = (g.sigma_x, g.sigma_y, g.rho);
    let dx = (truth.x - g.mu_x) / sx;
    let dy = (truth.y - g.mu_y) / sy;
    let q = 1.0 - r * r;
    let z = dx * dx - 2.0 * r * dx * dy + dy * dy;
    let nll = step_nll(&g, truth);

    let d_mux = -(dx - r * dy) / (q * sx);
    let d_muy = -(dy - r * dx) / (q * sy);
    let d_sx = 1.0 / sx - dx * (dx - r * dy) / (q * sx);
    let d_sy = 1.0 / sy - dy * (dy - r * dx) / (q * sy);
    let d_rho = -r / q - dx * dy / q + z * r / (q * q);

    let t = raw[4].tanh();
    (nll, [d_mux, d_muy, d_sx * sigmoid(raw[2]), d_sy * sigmoid(raw[3]), d_rho * MAX_CORRELATION * (1.0 - t * t)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(mu: Vec2) -> GaussianStep {
        GaussianStep { mu_x: mu.x, mu_y: mu.y, sigma_x: 1.0, sigma_y: 1.0, rho: 0.0 }
    }

    #[test]
    fn density_at_mean() {
        let pred = PredictedDistribution { steps: vec![unit(Vec2::new(1.0, 2.0)); 3] };
        let l = nll_loss(&pred, &[Vec2::new(1.0, 2.0); 3]).unwrap();
        assert!((l - (2.0 * PI).ln()).abs() < 1e-15);
        assert!((l - 1.837_877).abs() < 1e-6);
    }

    #[test]
    fn shrinking_sigma_at_mean_lowers_loss() {
        let mut last = f64::INFINITY;
        for s in [2.0, 1.0, 0.5, 0.1, 0.01, 0.001] {
            let g = GaussianStep { sigma_x: s, sigma_y: s, ..unit(Vec2::ZERO) };
            let l = step_nll(&g, Vec2::ZERO);
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn far_truth_grows_quadratically() {
        let g = unit(Vec2::ZERO);
        let base = step_nll(&g, Vec2::ZERO);
        let l10 = step_nll(&g, Vec2::new(10.0, 0.0)) - base;
        let l20 = step_nll(&g, Vec2::new(20.0, 0.0)) - base;
        assert!((l20 / l10 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        let pred = PredictedDistribution { steps: vec![unit(Vec2::ZERO); 2] };
        assert_eq!(nll_loss(&pred, &[Vec2::ZERO]), Err(PredictionError::TruthLength { expected: 2, got: 1 }));
    }

    #[test]
    fn head_gradient_matches_finite_differences() {
        let raw = [0.3, -0.8, 0.2, -0.4, 0.6];
        let truth = Vec2::new(1.1, -0.3);
        let (_, g) = head_nll_grad(&raw, truth);
        let eps = 1e-6;
        for k in 0..5 {
            let (mut p, mut m) = (raw, raw);
            p[k] += eps;
            m[k] -= eps;
            let fd = (step_nll(&head_to_gaussian(&p), truth) - step_nll(&head_to_gaussian(&m), truth)) / (2.0 * eps);
            assert!((fd - g[k]).abs() < 1e-7, "k={k}: {fd} vs {}", g[k]);
        }
    }
}
