//! Convolutional social pooling.
//!
//! Neighbor encodings are written into a `grid_lat x grid_long` grid centered
//! on the target (x along its heading), convolved ("valid" padding, linear),
//! flattened channel-major and projected back to the hidden size.

use crate::geometry::Vec2;

use super::linalg::{gemv_acc, gemv_t_acc, outer_acc};
use super::params::{Block, NetworkConfig, Params};
use super::{check_dim, PredictionError};

/// Cell `(long, lat)` of each relative position, `None` when off the grid.
/// Positions are in the target frame.
pub fn place_on_grid(relative: &[Vec2], config: &NetworkConfig) -> Vec<Option<(usize, usize)>> {
    let half_long = (config.grid_long as f64 - 1.0) / 2.0;
    let half_lat = (config.grid_lat as f64 - 1.0) / 2.0;
    relative
        .iter()
        .map(|p| {
            let gl = (p.x / config.cell_size + half_long).round();
            let gt = (p.y / config.cell_size + half_lat).round();
            let inside = (0.0..config.grid_long as f64).contains(&gl) && (0.0..config.grid_lat as f64).contains(&gt);
            inside.then_some((gl as usize, gt as usize))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolTrace {
    /// Neighbor index occupying each cell, row-major `[lat][long]`. When two
    /// neighbors share a cell the one placed later wins.
    pub occupant: Vec<Option<usize>>,
    /// Flattened convolution output `[channel][lat][long]`.
    pub features: Vec<f64>,
    pub pooled: Vec<f64>,
}

/// `order` lists neighbor indices in placement order.
pub fn social_pool(
    params: &Params,
    hiddens: &[&[f64]],
    cells: &[Option<(usize, usize)>],
    order: &[usize],
) -> Result<PoolTrace, PredictionError> {
    let c = &params.config;
    let d = c.hidden;
    check_dim("pool cells", hiddens.len(), cells.len())?;
    for h in hiddens {
        check_dim("pool hidden", d, h.len())?;
    }
    let mut occupant = vec![None; c.grid_lat * c.grid_long];
    for &i in order {
        if let Some((gl, gt)) = cells[i] {
            occupant[gt * c.grid_long + gl] = Some(i);
        }
    }

    let (out_long, out_lat) = (c.conv_out_long(), c.conv_out_lat());
    let kernel = params.block(Block::PoolKernel);
    let conv_bias = params.block(Block::PoolBias);
    let mut features = vec![0.0; c.pooled_features()];
    for (o, b) in conv_bias.iter().enumerate() {
        features[o * out_lat * out_long..(o + 1) * out_lat * out_long].fill(*b);
    }
    for (cell, occ) in occupant.iter().enumerate() {
        let Some(i) = occ else { continue };
        let (gt, gl) = (cell / c.grid_long, cell % c.grid_long);
        let h = hiddens[*i];
        for_each_tap(c, gt, gl, |ot, ol, kt, kl| {
            for o in 0..c.conv_channels {
                let mut acc = 0.0;
                for (ch, hv) in h.iter().enumerate() {
                    acc += kernel[kernel_index(c, o, ch, kt, kl)] * hv;
                }
                features[(o * out_lat + ot) * out_long + ol] += acc;
            }
        });
    }

    let mut pooled = params.block(Block::PoolProjectionBias).to_vec();
    gemv_acc(&mut pooled, params.block(Block::PoolProjection), features.len(), &features);
    Ok(PoolTrace { occupant, features, pooled })
}

fn kernel_index(c: &NetworkConfig, o: usize, ch: usize, kt: usize, kl: usize) -> usize {
    ((o * c.hidden + ch) * c.kernel_lat + kt) * c.kernel_long + kl
}

/// Visits every output position fed by grid cell `(gt, gl)` together with the
/// kernel tap that connects them.
fn for_each_tap(c: &NetworkConfig, gt: usize, gl: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    for kt in 0..c.kernel_lat {
        let Some(ot) = gt.checked_sub(kt).filter(|&v| v < c.conv_out_lat()) else { continue };
        for kl in 0..c.kernel_long {
            let Some(ol) = gl.checked_sub(kl).filter(|&v| v < c.conv_out_long()) else { continue };
            f(ot, ol, kt, kl);
        }
    }
}

/// Accumulates parameter gradients into `grads` and returns the gradient for
/// each neighbor hidden state.
pub(crate) fn social_pool_backward(
    params: &Params,
    hiddens: &[&[f64]],
    trace: &PoolTrace,
    d_pooled: &[f64],
    grads: &mut Params,
) -> Vec<Vec<f64>> {
    let c = &params.config;
    let (out_long, out_lat) = (c.conv_out_long(), c.conv_out_lat());
    let nf = trace.features.len();

    outer_acc(grads.block_mut(Block::PoolProjection), d_pooled, &trace.features);
    for (g, v) in grads.block_mut(Block::PoolProjectionBias).iter_mut().zip(d_pooled) {
        *g += v;
    }
    let mut d_features = vec![0.0; nf];
    gemv_t_acc(&mut d_features, params.block(Block::PoolProjection), nf, d_pooled);

    {
        let gb = grads.block_mut(Block::PoolBias);
        for (o, g) in gb.iter_mut().enumerate() {
            *g += d_features[o * out_lat * out_long..(o + 1) * out_lat * out_long].iter().sum::<f64>();
        }
    }

    let kernel = params.block(Block::PoolKernel);
    let mut d_hidden = vec![vec![0.0; c.hidden]; hiddens.len()];
    let range = grads.range(Block::PoolKernel);
    for (cell, occ) in trace.occupant.iter().enumerate() {
        let Some(i) = occ else { continue };
        let (gt, gl) = (cell / c.grid_long, cell % c.grid_long);
        let h = hiddens[*i];
        for_each_tap(c, gt, gl, |ot, ol, kt, kl| {
            for o in 0..c.conv_channels {
                let dy = d_features[(o * out_lat + ot) * out_long + ol];
                if dy == 0.0 {
                    continue;
                }
                for ch in 0..c.hidden {
                    let k = kernel_index(c, o, ch, kt, kl);
                    grads.data[range.start + k] += dy * h[ch];
                    d_hidden[*i][ch] += dy * kernel[k];
                }
            }
        });
    }
    d_hidden
}
