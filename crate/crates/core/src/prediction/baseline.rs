use super::{GaussianStep, PredictedDistribution, TrackHistory};

/// Extrapolates the last state at its speed and heading. Uncertainty is
/// isotropic and grows linearly: `sigma(t) = sigma0 + growth * t * dt`.
pub fn constant_velocity_predict(
    history: &TrackHistory,
    horizon: usize,
    dt: f64,
    sigma0: f64,
    sigma_growth: f64,
) -> PredictedDistribution {
    let last = history.last();
    let (p, v) = (last.position(), last.velocity());
    let steps = (1..=horizon)
        .map(|t| {
            let tau = t as f64 * dt;
            let mu = p + v * tau;
            let s = sigma0 + sigma_growth * tau;
            GaussianStep { mu_x: mu.x, mu_y: mu.y, sigma_x: s, sigma_y: s, rho: 0.0 }
        })
        .collect();
    PredictedDistribution { steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::AgentState;

    #[test]
    fn stationary_stays_put() {
        let h = TrackHistory::from_recent("a", &[AgentState::new(3.0, -1.0, 0.0, 1.0)], 8);
        let d = constant_velocity_predict(&h, 12, 0.25, 0.5, 0.5);
        assert_eq!(d.steps.len(), 12);
        assert!(d.steps.iter().all(|g| g.mu_x == 3.0 && g.mu_y == -1.0));
    }

    #[test]
    fn advances_one_meter_per_step() {
        let h = TrackHistory::from_recent("a", &[AgentState::new(0.0, 0.0, 2.0, 0.0)], 8);
        let d = constant_velocity_predict(&h, 4, 0.5, 0.3, 0.2);
        for (t, g) in d.steps.iter().enumerate() {
            assert!((g.mu_x - (t + 1) as f64).abs() < 1e-12);
            assert_eq!(g.mu_y, 0.0);
        }
        assert!(d.steps.windows(2).all(|w| w[1].sigma_x > w[0].sigma_x));
        assert!(d.steps.iter().all(|g| g.check().is_ok()));
    }
}
