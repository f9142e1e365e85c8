//! Probabilistic position forecasts for surrounding road users.
//!
//! Two predictors share the [`PredictedDistribution`] output type:
//!
//! * [`constant_velocity_predict`], a kinematic baseline with growing
//!   isotropic uncertainty;
//! * [`predict`], an LSTM encoder-decoder. Every history is encoded by one
//!   shared recurrent cell. The target's final hidden state queries the
//!   neighbor hidden states with cosine-similarity attention; the
//!   attention-weighted neighbor summary is added to a convolutional social
//!   pooling of the neighbors laid out on an ego-centered grid, concatenated
//!   with the target's own encoding and decoded into one bivariate Gaussian
//!   per future step.
//!
//! Gradients are computed by hand (backpropagation through time through
//! decoder, fusion, pooling, attention and encoder) and verified against
//! central finite differences in [`check_gradients`].

mod attention;
mod baseline;
mod gradcheck;
mod linalg;
mod loss;
mod lstm;
mod model;
mod params;
mod pool;
mod train;

pub use attention::{attention_backward, attention_fuse, attention_weights, AttentionWeights, GradientMutation};
pub use baseline::constant_velocity_predict;
pub use gradcheck::{check_gradients, check_gradients_with, random_gradcheck_sample, GradCheckReport, Stencil};
pub use loss::{nll_loss, step_nll};
pub use model::{encode_history, fuse, predict, sample_loss_and_grad, Frame, Sample, Scene};
pub use params::{Block, NetworkConfig, Params, ParamsError, PARAMS_FORMAT, PARAMS_VERSION};
pub use pool::{place_on_grid, social_pool, PoolTrace};
pub use train::{build_dataset, load_dataset_spec, train, DatasetEntry, DatasetError, DatasetSpec, TrainConfig, TrainError, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::scenario::{Agent, AgentState, TrackError};

/// Encoder/attention operand.
pub type HiddenState = Vec<f64>;

/// One bivariate Gaussian over a road user's position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianStep {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
}

pub const MAX_CORRELATION: f64 = 0.999;
pub const SIGMA_FLOOR: f64 = 1e-3;

impl GaussianStep {
    pub fn mean(&self) -> Vec2 {
        Vec2::new(self.mu_x, self.mu_y)
    }

    pub fn check(&self) -> Result<(), String> {
        if ![self.mu_x, self.mu_y, self.sigma_x, self.sigma_y, self.rho].iter().all(|v| v.is_finite()) {
            return Err("non-finite parameters".into());
        }
        if !(self.sigma_x > 0.0 && self.sigma_y > 0.0) {
            return Err(format!("sigma ({}, {}) must be positive", self.sigma_x, self.sigma_y));
        }
        if self.rho.abs() > MAX_CORRELATION {
            return Err(format!("|rho| = {} exceeds {MAX_CORRELATION}", self.rho.abs()));
        }
        Ok(())
    }
}

/// Per-future-step position distribution, steps `1..=h_f`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictedDistribution {
    pub steps: Vec<GaussianStep>,
}

impl PredictedDistribution {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// The last `h_p` states of a road user, oldest first, front-padded by
/// repeating the earliest real state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackHistory {
    pub agent_id: String,
    pub states: Vec<AgentState>,
    /// `true` for recorded entries, `false` for padding.
    pub mask: Vec<bool>,
}

impl TrackHistory {
    /// Builds a history of exactly `len` entries from up to `len` most recent
    /// states (oldest first).
    pub fn from_recent(agent_id: impl Into<String>, recent: &[AgentState], len: usize) -> Self {
        assert!(!recent.is_empty(), "history needs at least one state");
        let tail = &recent[recent.len().saturating_sub(len)..];
        let pad = len - tail.len();
        let mut states = vec![tail[0]; pad];
        states.extend_from_slice(tail);
        let mut mask = vec![false; pad];
        mask.extend(std::iter::repeat_n(true, tail.len()));
        Self { agent_id: agent_id.into(), states, mask }
    }

    /// History of a recorded agent ending at `step` (inclusive).
    pub fn from_agent(agent: &Agent, step: usize, len: usize) -> Result<Self, TrackError> {
        let first = step.saturating_sub(len - 1);
        let recent = (first..=step).map(|k| agent.state_at(k)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_recent(agent.id.clone(), &recent, len))
    }

    pub fn last(&self) -> &AgentState {
        self.states.last().expect("nonempty history")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PredictionError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension { context: &'static str, expected: usize, got: usize },
    #[error("history of `{agent}` has {got} states, network expects {expected}")]
    HistoryLength { agent: String, expected: usize, got: usize },
    #[error("truth has {got} points, prediction has {expected}")]
    TruthLength { expected: usize, got: usize },
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<(), PredictionError> {
    if expected == got {
        Ok(())
    } else {
        Err(PredictionError::Dimension { context, expected, got })
    }
}
