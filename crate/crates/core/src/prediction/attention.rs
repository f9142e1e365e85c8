//! Cosine-similarity attention over neighbor encodings.
//!
//! `A_i = cos(X, H_i) / sum_j cos(X, H_j)` and `W_H = sum_i A_i H_i`. Cosines
//! may be negative and are used as-is; when the normalizer is within `1e-6`
//! of zero, or any operand has (near-)zero norm, the weights fall back to
//! uniform `1/m`.

use serde::{Deserialize, Serialize};

use super::linalg::{dot, norm};
use super::{check_dim, PredictionError};

const DENOMINATOR_FLOOR: f64 = 1e-6;
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub weights: Vec<f64>,
    /// Set when the uniform fallback was taken.
    pub uniform_fallback: bool,
}

impl AttentionWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn cosines(x: &[f64], neighbors: &[&[f64]]) -> Option<(Vec<f64>, f64, Vec<f64>)> {
    let nx = norm(x);
    if nx < NORM_FLOOR {
        return None;
    }
    let mut cos = Vec::with_capacity(neighbors.len());
    let mut norms = Vec::with_capacity(neighbors.len());
    for h in neighbors {
        let nh = norm(h);
        if nh < NORM_FLOOR {
            return None;
        }
        cos.push(dot(x, h) / (nx * nh));
        norms.push(nh);
    }
    Some((cos, nx, norms))
}

pub fn attention_weights(x: &[f64], neighbors: &[&[f64]]) -> Result<AttentionWeights, PredictionError> {
    for h in neighbors {
        check_dim("attention operand", x.len(), h.len())?;
    }
    let m = neighbors.len();
    if m == 0 {
        return Ok(AttentionWeights::default());
    }
    let uniform = || AttentionWeights { weights: vec![1.0 / m as f64; m], uniform_fallback: true };
    let Some((cos, _, _)) = cosines(x, neighbors) else {
        return Ok(uniform());
    };
    let total: f64 = cos.iter().sum();
    if total.abs() < DENOMINATOR_FLOOR {
        return Ok(uniform());
    }
    Ok(AttentionWeights { weights: cos.iter().map(|c| c / total).collect(), uniform_fallback: false })
}

/// `W_H = sum_i A_i H_i`; the zero vector of length `dim` when there are no
/// neighbors.
pub fn attention_fuse(a: &AttentionWeights, neighbors: &[&[f64]], dim: usize) -> Result<Vec<f64>, PredictionError> {
    check_dim("attention weights", neighbors.len(), a.len())?;
    let mut out = vec![0.0; dim];
    for (w, h) in a.weights.iter().zip(neighbors) {
        check_dim("attention fuse", dim, h.len())?;
        for (o, v) in out.iter_mut().zip(*h) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Deliberate defects in the attention backward pass, used to prove that the
/// gradient check can detect them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMutation {
    /// Drops the normalizer's contribution to the weight gradient.
    DropNormalizerTerm,
}

/// Gradients of `W_H` w.r.t. the query and every neighbor, given `d_wh`.
pub fn attention_backward(
    x: &[f64],
    neighbors: &[&[f64]],
    a: &AttentionWeights,
    d_wh: &[f64],
    mutation: Option<GradientMutation>,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = x.len();
    let mut dx = vec![0.0; d];
    let mut dh: Vec<Vec<f64>> = a.weights.iter().map(|w| d_wh.iter().map(|g| w * g).collect()).collect();
    if a.uniform_fallback || neighbors.is_empty() {
        return (dx, dh);
    }
    let (cos, nx, norms) = cosines(x, neighbors).expect("non-fallback weights imply valid operands");
    let total: f64 = cos.iter().sum();
    let da: Vec<f64> = neighbors.iter().map(|h| dot(d_wh, h)).collect();
    let mean_term = match mutation {
        Some(GradientMutation::DropNormalizerTerm) => 0.0,
        None => a.weights.iter().zip(&da).map(|(w, g)| w * g).sum::<f64>(),
    };
    for (j, h) in neighbors.iter().enumerate() {
        let dc = (da[j] - mean_term) / total;
        let inv = 1.0 / (nx * norms[j]);
        let (cx, ch) = (cos[j] / (nx * nx), cos[j] / (norms[j] * norms[j]));
        for k in 0..d {
            dx[k] += dc * (h[k] * inv - cx * x[k]);
            dh[j][k] += dc * (x[k] * inv - ch * h[k]);
        }
    }
    (dx, dh)
}
