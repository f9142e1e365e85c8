use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::par::{self, Parallelism};
use crate::rng::substream;
use crate::scenario::{load_scenario, Scenario, ScenarioError, TrackError};

use super::model::{sample_loss_and_grad, Sample, Scene};
use super::params::Params;
use super::{PredictionError, TrackHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    /// Samples per step; `None` uses the whole dataset every step.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-2, steps: 500, seed: 0, batch_size: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: Params,
    /// Mean batch loss before each update.
    pub losses: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("non-finite {what} at step {step} (parameter block `{block}`)")]
    Diverged { step: usize, what: &'static str, block: &'static str },
    #[error(transparent)]
    Prediction(#[from] PredictionError),
}

/// Plain gradient descent on the mean NLL. Deterministic for a given seed:
/// per-sample gradients are computed independently and summed in dataset
/// order.
pub fn train(
    mut params: Params,
    dataset: &[Sample],
    config: &TrainConfig,
    mode: Parallelism,
) -> Result<TrainOutcome, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = substream(config.seed, "train");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let batch = config.batch_size.unwrap_or(dataset.len()).clamp(1, dataset.len());
    let mut cursor = dataset.len();
    let mut losses = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let idx: Vec<usize> = if batch == dataset.len() {
            order.clone()
        } else {
            if cursor + batch > order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            cursor += batch;
            order[cursor - batch..cursor].to_vec()
        };
        let scale = 1.0 / idx.len() as f64;
        let results = par::map(mode, &idx, |&i| {
            let mut g = params.zeros_like();
            sample_loss_and_grad(&params, &dataset[i], &mut g, scale, None).map(|l| (l, g))
        });
        let mut grad = params.zeros_like();
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l * scale;
            for (a, b) in grad.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step, what: "loss", block: "-" });
        }
        if let Some(i) = grad.data.iter().position(|g| !g.is_finite()) {
            return Err(TrainError::Diverged { step, what: "gradient", block: params.block_of(i).name() });
        }
        losses.push(loss);
        for (w, g) in params.data.iter_mut().zip(&grad.data) {
            *w -= config.lr * g;
        }
    }
    Ok(TrainOutcome { params, losses })
}

/// One training sample: an agent of a scenario, forecast from `anchor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    /// Scenario file, relative to the dataset document.
    pub scenario: String,
    pub agent: String,
    pub anchor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub entries: Vec<DatasetEntry>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed dataset {path}: {source}")]
    Format { path: String, source: serde_json::Error },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("dataset entry {index}: agent `{agent}` not found in {scenario}")]
    UnknownAgent { index: usize, agent: String, scenario: String },
    #[error("dataset entry {index}: {source}")]
    Track { index: usize, source: TrackError },
}

pub fn load_dataset_spec(path: &Path) -> Result<DatasetSpec, DatasetError> {
    let origin = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: origin.clone(), source })?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Format { path: origin, source })
}

/// Resolves dataset entries into samples. Neighbors are every other agent of
/// the scenario; the truth is the target's recorded (hold-last) future.
pub fn build_dataset(
    spec: &DatasetSpec,
    base_dir: &Path,
    history_len: usize,
    horizon: usize,
) -> Result<Vec<Sample>, DatasetError> {
    let mut cache: BTreeMap<PathBuf, Scenario> = BTreeMap::new();
    let mut samples = Vec::with_capacity(spec.entries.len());
    for (index, e) in spec.entries.iter().enumerate() {
        let path = base_dir.join(&e.scenario);
        if !cache.contains_key(&path) {
            cache.insert(path.clone(), load_scenario(&path)?);
        }
        let s = &cache[&path];
        let track_err = |source| DatasetError::Track { index, source };
        let target = s.agent(&e.agent).ok_or_else(|| DatasetError::UnknownAgent {
            index,
            agent: e.agent.clone(),
            scenario: e.scenario.clone(),
        })?;
        let neighbors = s
            .agents
            .iter()
            .filter(|a| a.id != e.agent)
            .map(|a| TrackHistory::from_agent(a, e.anchor, history_len))
            .collect::<Result<Vec<_>, _>>()
            .map_err(track_err)?;
        let truth = (1..=horizon)
            .map(|k| target.state_at(e.anchor + k).map(|st| Vec2::new(st.x, st.y)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(track_err)?;
        samples.push(Sample {
            scene: Scene { target: TrackHistory::from_agent(target, e.anchor, history_len).map_err(track_err)?, neighbors },
            truth,
        });
    }
    Ok(samples)
}
