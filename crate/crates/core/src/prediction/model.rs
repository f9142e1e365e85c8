use crate::geometry::{wrap_angle, Vec2};

use super::attention::{attention_backward, attention_fuse, attention_weights, AttentionWeights, GradientMutation};
use super::linalg::{add_assign, gemv_acc, gemv_t_acc, outer_acc};
use super::loss::{head_nll_grad, head_to_gaussian};
use super::lstm::{self, LstmGrads, LstmTrace, LstmWeights};
use super::params::{Block, Params, INPUT_FEATURES, OUTPUT_FEATURES};
use super::pool::{place_on_grid, social_pool, social_pool_backward, PoolTrace};
use super::{check_dim, GaussianStep, HiddenState, PredictedDistribution, PredictionError, TrackHistory, MAX_CORRELATION};

/// Target-centered frame: origin at the target's last position, x along its
/// last heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub origin: Vec2,
    pub heading: f64,
}

impl Frame {
    pub fn of(history: &TrackHistory) -> Self {
        let s = history.last();
        Self { origin: s.position(), heading: s.heading }
    }

    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.origin).rotate(-self.heading)
    }

    pub fn to_world(&self, p: Vec2) -> Vec2 {
        self.origin + p.rotate(self.heading)
    }

    /// Re-expresses a local-frame Gaussian in world coordinates.
    pub fn gaussian_to_world(&self, g: &GaussianStep) -> GaussianStep {
        let mu = self.to_world(g.mean());
        let (s, c) = self.heading.sin_cos();
        let (sxx, syy, sxy) = (g.sigma_x * g.sigma_x, g.sigma_y * g.sigma_y, g.rho * g.sigma_x * g.sigma_y);
        let wxx = c * c * sxx - 2.0 * c * s * sxy + s * s * syy;
        let wyy = s * s * sxx + 2.0 * c * s * sxy + c * c * syy;
        let wxy = c * s * (sxx - syy) + (c * c - s * s) * sxy;
        let (sigma_x, sigma_y) = (wxx.sqrt(), wyy.sqrt());
        // Rotating a strongly anisotropic Gaussian can push the correlation
        // past the bound; clamp back into the valid range.
        let rho = (wxy / (sigma_x * sigma_y)).clamp(-MAX_CORRELATION, MAX_CORRELATION);
        GaussianStep { mu_x: mu.x, mu_y: mu.y, sigma_x, sigma_y, rho }
    }
}

/// A prediction query: the road user to forecast and its neighbors (which
/// may include the ego vehicle).
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub target: TrackHistory,
    pub neighbors: Vec<TrackHistory>,
}

/// A scene with the target's true future positions (world frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scene: Scene,
    pub truth: Vec<Vec2>,
}

fn encoder(params: &Params) -> LstmWeights<'_> {
    LstmWeights {
        w_input: params.block(Block::EncoderInput),
        w_hidden: params.block(Block::EncoderHidden),
        bias: params.block(Block::EncoderBias),
        hidden: params.config.hidden,
        inputs: INPUT_FEATURES,
    }
}

fn decoder(params: &Params) -> LstmWeights<'_> {
    LstmWeights {
        w_input: params.block(Block::DecoderInput),
        w_hidden: params.block(Block::DecoderHidden),
        bias: params.block(Block::DecoderBias),
        hidden: params.config.hidden,
        inputs: 2 * params.config.hidden,
    }
}

/// Encoder inputs per step: position increment (zero on padded steps and on
/// the first step), speed and heading, all relative to `frame`.
fn encoder_inputs(history: &TrackHistory, frame: &Frame) -> Vec<Vec<f64>> {
    let mut prev: Option<Vec2> = None;
    history
        .states
        .iter()
        .zip(&history.mask)
        .map(|(s, &real)| {
            let p = frame.to_local(s.position());
            let delta = match (real, prev) {
                (true, Some(q)) => p - q,
                _ => Vec2::ZERO,
            };
            if real {
                prev = Some(p);
            }
            vec![delta.x, delta.y, s.v, wrap_angle(s.heading - frame.heading)]
        })
        .collect()
}

fn encode_trace(params: &Params, history: &TrackHistory, frame: &Frame) -> Result<LstmTrace, PredictionError> {
    let expected = params.config.history_len;
    if history.states.len() != expected || history.mask.len() != expected {
        return Err(PredictionError::HistoryLength {
            agent: history.agent_id.clone(),
            expected,
            got: history.states.len(),
        });
    }
    Ok(lstm::forward(encoder(params), encoder_inputs(history, frame)))
}

/// Final hidden state of the shared encoder run over `history`, with
/// features expressed in `frame`.
pub fn encode_history(params: &Params, history: &TrackHistory, frame: &Frame) -> Result<HiddenState, PredictionError> {
    Ok(encode_trace(params, history, frame)?.last_hidden().to_vec())
}

/// Fusion of pooled neighbor features with the attention summary,
/// `E = pooled + W_H`, followed by the decoder input `[E, H]`.
pub fn fuse(pooled: &[f64], w_h: &[f64], ego_h: &[f64]) -> Result<(Vec<f64>, Vec<f64>), PredictionError> {
    check_dim("fusion", pooled.len(), w_h.len())?;
    check_dim("fusion ego", pooled.len(), ego_h.len())?;
    let e: Vec<f64> = pooled.iter().zip(w_h).map(|(a, b)| a + b).collect();
    let mut z = e.clone();
    z.extend_from_slice(ego_h);
    Ok((e, z))
}

pub(crate) struct Forward {
    pub frame: Frame,
    target: LstmTrace,
    neighbors: Vec<LstmTrace>,
    attention: AttentionWeights,
    pool: PoolTrace,
    decoder: LstmTrace,
    pub heads: Vec<[f64; OUTPUT_FEATURES]>,
}

/// Neighbor indices sorted by agent id; grid placement follows this order.
fn placement_order(scene: &Scene) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scene.neighbors.len()).collect();
    order.sort_by(|&a, &b| scene.neighbors[a].agent_id.cmp(&scene.neighbors[b].agent_id));
    order
}

pub(crate) fn forward(params: &Params, scene: &Scene) -> Result<Forward, PredictionError> {
    let c = &params.config;
    let frame = Frame::of(&scene.target);
    let target = encode_trace(params, &scene.target, &frame)?;
    let neighbors = scene
        .neighbors
        .iter()
        .map(|h| encode_trace(params, h, &frame))
        .collect::<Result<Vec<_>, _>>()?;
    let x = target.last_hidden();
    let hs: Vec<&[f64]> = neighbors.iter().map(LstmTrace::last_hidden).collect();

    let attention = attention_weights(x, &hs)?;
    let w_h = attention_fuse(&attention, &hs, c.hidden)?;

    let rel: Vec<Vec2> = scene.neighbors.iter().map(|h| frame.to_local(h.last().position())).collect();
    let cells = place_on_grid(&rel, c);
    let pool = social_pool(params, &hs, &cells, &placement_order(scene))?;

    let (_, z) = fuse(&pool.pooled, &w_h, x)?;
    let decoder = lstm::forward(decoder(params), vec![z; c.horizon]);

    let (w_out, b_out) = (params.block(Block::OutputWeight), params.block(Block::OutputBias));
    let heads = decoder.hs[1..]
        .iter()
        .map(|h| {
            let mut o = [0.0; OUTPUT_FEATURES];
            o.copy_from_slice(b_out);
            gemv_acc(&mut o, w_out, c.hidden, h);
            o
        })
        .collect();
    Ok(Forward { frame, target, neighbors, attention, pool, decoder, heads })
}

/// Forecast of the scene's target in world coordinates.
pub fn predict(params: &Params, scene: &Scene) -> Result<PredictedDistribution, PredictionError> {
    let f = forward(params, scene)?;
    Ok(PredictedDistribution { steps: f.heads.iter().map(|o| f.frame.gaussian_to_world(&head_to_gaussian(o))).collect() })
}

/// Same forecast, left in the target frame.
pub(crate) fn predict_local(params: &Params, scene: &Scene) -> Result<PredictedDistribution, PredictionError> {
    let f = forward(params, scene)?;
    Ok(PredictedDistribution { steps: f.heads.iter().map(|o| head_to_gaussian(o)).collect() })
}

/// Backpropagates head gradients through the whole network into `grads`.
pub(crate) fn backward(
    params: &Params,
    fwd: &Forward,
    d_heads: &[[f64; OUTPUT_FEATURES]],
    grads: &mut Params,
    mutation: Option<GradientMutation>,
) {
    let c = &params.config;
    let d = c.hidden;

    // Output head.
    let w_out = params.block(Block::OutputWeight);
    let mut dh_dec = Vec::with_capacity(d_heads.len());
    for (t, dout) in d_heads.iter().enumerate() {
        outer_acc(grads.block_mut(Block::OutputWeight), dout, &fwd.decoder.hs[t + 1]);
        add_assign(grads.block_mut(Block::OutputBias), dout);
        let mut dh = vec![0.0; d];
        gemv_t_acc(&mut dh, w_out, d, dout);
        dh_dec.push(dh);
    }

    // Decoder; the same input vector feeds every step.
    let dz_steps = {
        let [wi, wh, b] = decoder_grad_blocks(grads);
        lstm::backward(decoder(params), &fwd.decoder, &dh_dec, &mut LstmGrads { w_input: wi, w_hidden: wh, bias: b })
    };
    let mut dz = vec![0.0; 2 * d];
    for g in &dz_steps {
        add_assign(&mut dz, g);
    }
    let (d_e, d_target_direct) = dz.split_at(d);

    // E = pooled + W_H.
    let hs: Vec<&[f64]> = fwd.neighbors.iter().map(LstmTrace::last_hidden).collect();
    let d_pool_h = social_pool_backward(params, &hs, &fwd.pool, d_e, grads);
    let (d_x, d_att_h) = attention_backward(fwd.target.last_hidden(), &hs, &fwd.attention, d_e, mutation);

    // Encoders (shared weights).
    let mut d_target = d_target_direct.to_vec();
    add_assign(&mut d_target, &d_x);
    let enc = encoder(params);
    let [wi, wh, b] = encoder_grad_blocks(grads);
    let mut eg = LstmGrads { w_input: wi, w_hidden: wh, bias: b };
    let last_only = |dh_last: Vec<f64>| {
        let mut v = vec![vec![0.0; d]; c.history_len];
        *v.last_mut().unwrap() = dh_last;
        v
    };
    lstm::backward(enc, &fwd.target, &last_only(d_target), &mut eg);
    for (i, trace) in fwd.neighbors.iter().enumerate() {
        let mut dh = d_pool_h[i].clone();
        add_assign(&mut dh, &d_att_h[i]);
        lstm::backward(enc, trace, &last_only(dh), &mut eg);
    }
}

fn split3(data: &mut [f64], r: [std::ops::Range<usize>; 3]) -> [&mut [f64]; 3] {
    debug_assert!(r[0].end == r[1].start && r[1].end == r[2].start);
    let block = &mut data[r[0].start..r[2].end];
    let (a, rest) = block.split_at_mut(r[0].len());
    let (b, c) = rest.split_at_mut(r[1].len());
    [a, b, c]
}

fn encoder_grad_blocks(g: &mut Params) -> [&mut [f64]; 3] {
    let r = [g.range(Block::EncoderInput), g.range(Block::EncoderHidden), g.range(Block::EncoderBias)];
    split3(&mut g.data, r)
}

fn decoder_grad_blocks(g: &mut Params) -> [&mut [f64]; 3] {
    let r = [g.range(Block::DecoderInput), g.range(Block::DecoderHidden), g.range(Block::DecoderBias)];
    split3(&mut g.data, r)
}

/// Mean-over-steps NLL of one sample; adds `scale * dLoss/dParams` into
/// `grads`.
pub fn sample_loss_and_grad(
    params: &Params,
    sample: &Sample,
    grads: &mut Params,
    scale: f64,
    mutation: Option<GradientMutation>,
) -> Result<f64, PredictionError> {
    let horizon = params.config.horizon;
    if sample.truth.len() != horizon {
        return Err(PredictionError::TruthLength { expected: horizon, got: sample.truth.len() });
    }
    let fwd = forward(params, &sample.scene)?;
    let inv = 1.0 / horizon as f64;
    let mut loss = 0.0;
    let mut d_heads = Vec::with_capacity(horizon);
    for (head, truth) in fwd.heads.iter().zip(&sample.truth) {
        let (l, g) = head_nll_grad(head, fwd.frame.to_local(*truth));
        loss += l * inv;
        d_heads.push(g.map(|v| v * inv * scale));
    }
    backward(params, &fwd, &d_heads, grads, mutation);
    Ok(loss)
}

/// Loss only, for finite differences.
pub(crate) fn sample_loss(params: &Params, sample: &Sample) -> Result<f64, PredictionError> {
    let pred = predict_local(params, &sample.scene)?;
    let frame = Frame::of(&sample.scene.target);
    let local: Vec<Vec2> = sample.truth.iter().map(|p| frame.to_local(*p)).collect();
    super::loss::nll_loss(&pred, &local)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prediction::linalg::softplus;
    use crate::prediction::{nll_loss, NetworkConfig, SIGMA_FLOOR};
    use crate::rng::substream;
    use crate::scenario::AgentState;
    use rand::Rng;

    fn history(id: &str, x0: f64, y0: f64, vx: f64, vy: f64, len: usize) -> TrackHistory {
        let states: Vec<AgentState> = (0..len)
            .map(|k| {
                let t = k as f64 * 0.25;
                AgentState::new(x0 + vx * t, y0 + vy * t, vx.hypot(vy), vy.atan2(vx))
            })
            .collect();
        TrackHistory::from_recent(id, &states, len)
    }

    fn fixture_scene(len: usize) -> Scene {
        Scene {
            target: history("t", 0.0, 0.0, 2.0, 0.3, len),
            neighbors: vec![
                history("n1", 8.0, 1.0, 1.5, 0.0, len),
                history("n2", -6.0, -3.5, 2.5, 0.2, len),
                history("n3", 14.0, 3.0, -1.0, 0.0, len),
            ],
        }
    }

    #[test]
    fn zero_params_give_closed_form_output() {
        let c = NetworkConfig::default();
        let p = Params::zeros(&c);
        let scene = fixture_scene(c.history_len);
        let local = predict_local(&p, &scene).unwrap();
        assert_eq!(local.steps.len(), c.horizon);
        let s0 = softplus(0.0) + SIGMA_FLOOR;
        assert!((s0 - (2f64.ln() + 1e-3)).abs() < 1e-15);
        for g in &local.steps {
            assert_eq!((g.mu_x, g.mu_y, g.rho), (0.0, 0.0, 0.0));
            assert_eq!((g.sigma_x, g.sigma_y), (s0, s0));
        }
        // In world coordinates the mean sits at the target's last position.
        let world = predict(&p, &scene).unwrap();
        let last = scene.target.last().position();
        for g in &world.steps {
            assert!((g.mean() - last).norm() < 1e-12);
        }
        let h = encode_history(&p, &scene.target, &Frame::of(&scene.target)).unwrap();
        assert_eq!(h, vec![0.0; c.hidden]);
    }

    #[test]
    fn output_invariants_hold_for_random_params() {
        let c = NetworkConfig::default();
        for seed in 0..5 {
            let p = Params::random(&c, 3.0, &mut substream(seed, "inv"));
            let pred = predict(&p, &fixture_scene(c.history_len)).unwrap();
            assert_eq!(pred.steps.len(), c.horizon);
            for g in &pred.steps {
                g.check().unwrap();
            }
        }
    }

    #[test]
    fn neighbor_order_does_not_matter() {
        let c = NetworkConfig::default();
        let p = Params::random(&c, 1.0, &mut substream(9, "perm"));
        let scene = fixture_scene(c.history_len);
        let mut shuffled = scene.clone();
        shuffled.neighbors.reverse();
        let a = predict(&p, &scene).unwrap();
        let b = predict(&p, &shuffled).unwrap();
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert!((x.mu_x - y.mu_x).abs() < 1e-12 && (x.sigma_y - y.sigma_y).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_history_length() {
        let c = NetworkConfig::default();
        let p = Params::zeros(&c);
        let scene = fixture_scene(c.history_len - 1);
        assert!(matches!(predict(&p, &scene), Err(PredictionError::HistoryLength { .. })));
    }

    #[test]
    fn fuse_is_elementwise_sum() {
        let (e, z) = fuse(&[1.0, 2.0], &[0.5, -4.0], &[9.0, 8.0]).unwrap();
        assert_eq!(e, vec![1.5, -2.0]);
        assert_eq!(z, vec![1.5, -2.0, 9.0, 8.0]);
        assert_eq!(fuse(&[0.0, 0.0], &[3.0, 4.0], &[0.0, 0.0]).unwrap().0, vec![3.0, 4.0]);
        assert_eq!(fuse(&[3.0, 4.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap().0, vec![3.0, 4.0]);
        assert!(fuse(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn world_loss_equals_local_loss() {
        let c = NetworkConfig::default();
        let p = Params::random(&c, 1.0, &mut substream(4, "frame"));
        let scene = fixture_scene(c.history_len);
        let mut rng = substream(4, "truth");
        let truth: Vec<Vec2> = (0..c.horizon).map(|_| Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))).collect();
        let world = nll_loss(&predict(&p, &scene).unwrap(), &truth).unwrap();
        let local = sample_loss(&p, &Sample { scene, truth }).unwrap();
        assert!((world - local).abs() < 1e-9, "{world} vs {local}");
    }

    /// Independent encoder: one cell step written out gate by gate, applied
    /// `history_len` times.
    fn oracle_encode(p: &Params, inputs: &[Vec<f64>]) -> Vec<f64> {
        let d = p.config.hidden;
        let (wi, wh, b) = (p.block(Block::EncoderInput), p.block(Block::EncoderHidden), p.block(Block::EncoderBias));
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h = vec![0.0; d];
        let mut cst = vec![0.0; d];
        for x in inputs {
            let pre = |row: usize| -> f64 {
                let mut s = b[row];
                for k in 0..INPUT_FEATURES {
                    s += wi[row * INPUT_FEATURES + k] * x[k];
                }
                for k in 0..d {
                    s += wh[row * d + k] * h[k];
                }
                s
            };
            let pres: Vec<f64> = (0..4 * d).map(pre).collect();
            for j in 0..d {
                let ig = sig(pres[j]);
                let fg = sig(pres[d + j]);
                let gg = pres[2 * d + j].tanh();
                cst[j] = fg * cst[j] + ig * gg;
            }
            for j in 0..d {
                h[j] = sig(pres[3 * d + j]) * cst[j].tanh();
            }
        }
        h
    }

    #[test]
    fn encoder_matches_stepwise_oracle() {
        let c = NetworkConfig::default();
        let p = Params::random(&c, 1.0, &mut substream(21, "golden"));
        let scene = fixture_scene(c.history_len);
        let frame = Frame::of(&scene.target);
        let got = encode_history(&p, &scene.target, &frame).unwrap();
        let expect = oracle_encode(&p, &encoder_inputs(&scene.target, &frame));
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
