use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dimensions of the attention-LSTM predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Hidden size of encoder and decoder (also the attention operand size).
    pub hidden: usize,
    pub history_len: usize,
    pub horizon: usize,
    /// Grid cells along the target's heading.
    pub grid_long: usize,
    /// Grid cells across the target's heading.
    pub grid_lat: usize,
    pub cell_size: f64,
    pub kernel_long: usize,
    pub kernel_lat: usize,
    pub conv_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            history_len: 8,
            horizon: 12,
            grid_long: 13,
            grid_lat: 3,
            cell_size: 4.0,
            kernel_long: 3,
            kernel_lat: 3,
            conv_channels: 8,
        }
    }
}

/// Encoder input features per history step: dx, dy, speed, relative heading.
pub const INPUT_FEATURES: usize = 4;
/// Output head per future step: mu_x, mu_y, raw sigma_x, raw sigma_y, raw rho.
pub const OUTPUT_FEATURES: usize = 5;

impl NetworkConfig {
    pub fn conv_out_long(&self) -> usize {
        self.grid_long + 1 - self.kernel_long
    }

    pub fn conv_out_lat(&self) -> usize {
        self.grid_lat + 1 - self.kernel_lat
    }

    pub fn pooled_features(&self) -> usize {
        self.conv_channels * self.conv_out_long() * self.conv_out_lat()
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        let bad = |what: &str| Err(ParamsError::Config(what.to_string()));
        if self.hidden == 0 || self.history_len == 0 || self.horizon == 0 || self.conv_channels == 0 {
            return bad("hidden, history_len, horizon and conv_channels must be >= 1");
        }
        if self.kernel_long == 0 || self.kernel_lat == 0 {
            return bad("kernel sizes must be >= 1");
        }
        if self.kernel_long > self.grid_long || self.kernel_lat > self.grid_lat {
            return bad("kernel larger than grid");
        }
        if !(self.cell_size > 0.0) {
            return bad("cell_size must be > 0");
        }
        Ok(())
    }
}

/// Named parameter blocks, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    EncoderInput,
    EncoderHidden,
    EncoderBias,
    PoolKernel,
    PoolBias,
    PoolProjection,
    PoolProjectionBias,
    DecoderInput,
    DecoderHidden,
    DecoderBias,
    OutputWeight,
    OutputBias,
}

impl Block {
    pub const ALL: [Block; 12] = [
        Block::EncoderInput,
        Block::EncoderHidden,
        Block::EncoderBias,
        Block::PoolKernel,
        Block::PoolBias,
        Block::PoolProjection,
        Block::PoolProjectionBias,
        Block::DecoderInput,
        Block::DecoderHidden,
        Block::DecoderBias,
        Block::OutputWeight,
        Block::OutputBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::EncoderInput => "encoder.w_input",
            Block::EncoderHidden => "encoder.w_hidden",
            Block::EncoderBias => "encoder.bias",
            Block::PoolKernel => "pool.kernel",
            Block::PoolBias => "pool.bias",
            Block::PoolProjection => "pool.projection",
            Block::PoolProjectionBias => "pool.projection_bias",
            Block::DecoderInput => "decoder.w_input",
            Block::DecoderHidden => "decoder.w_hidden",
            Block::DecoderBias => "decoder.bias",
            Block::OutputWeight => "output.weight",
            Block::OutputBias => "output.bias",
        }
    }

    pub fn shape(self, c: &NetworkConfig) -> Vec<usize> {
        let d = c.hidden;
        match self {
            Block::EncoderInput => vec![4 * d, INPUT_FEATURES],
            Block::EncoderHidden => vec![4 * d, d],
            Block::EncoderBias => vec![4 * d],
            Block::PoolKernel => vec![c.conv_channels, d, c.kernel_lat, c.kernel_long],
            Block::PoolBias => vec![c.conv_channels],
            Block::PoolProjection => vec![d, c.pooled_features()],
            Block::PoolProjectionBias => vec![d],
            Block::DecoderInput => vec![4 * d, 2 * d],
            Block::DecoderHidden => vec![4 * d, d],
            Block::DecoderBias => vec![4 * d],
            Block::OutputWeight => vec![OUTPUT_FEATURES, d],
            Block::OutputBias => vec![OUTPUT_FEATURES],
        }
    }

    /// Inputs feeding one output unit; scales the random initialization.
    fn fan_in(self, c: &NetworkConfig) -> usize {
        let d = c.hidden;
        match self {
            Block::EncoderInput | Block::EncoderHidden | Block::EncoderBias => INPUT_FEATURES + d,
            Block::PoolKernel | Block::PoolBias => d * c.kernel_lat * c.kernel_long,
            Block::PoolProjection | Block::PoolProjectionBias => c.pooled_features(),
            Block::DecoderInput | Block::DecoderHidden | Block::DecoderBias => 3 * d,
            Block::OutputWeight | Block::OutputBias => d,
        }
    }
}

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("cannot access params file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed params file {path}: {message}")]
    Format { path: String, message: String },
}

/// All network weights in one flat buffer, laid out block by block.
///
/// The same type doubles as a gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub config: NetworkConfig,
    pub data: Vec<f64>,
    offsets: Vec<(usize, usize)>,
}

impl Params {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let mut offsets = Vec::with_capacity(Block::ALL.len());
        let mut at = 0;
        for b in Block::ALL {
            let len: usize = b.shape(config).iter().product();
            offsets.push((at, len));
            at += len;
        }
        Self { config: config.clone(), data: vec![0.0; at], offsets }
    }

    pub fn zeros_like(&self) -> Self {
        Self { config: self.config.clone(), data: vec![0.0; self.data.len()], offsets: self.offsets.clone() }
    }

    /// Uniform initialization in `±scale / sqrt(fan_in)` per block.
    pub fn random<R: Rng>(config: &NetworkConfig, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(config);
        for b in Block::ALL {
            let a = scale / (b.fan_in(config) as f64).sqrt();
            for w in p.block_mut(b) {
                *w = rng.random_range(-a..=a);
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn range(&self, b: Block) -> std::ops::Range<usize> {
        let (o, l) = self.offsets[b as usize];
        o..o + l
    }

    pub fn block(&self, b: Block) -> &[f64] {
        &self.data[self.range(b)]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        let r = self.range(b);
        &mut self.data[r]
    }

    /// Block owning flat index `i`.
    pub fn block_of(&self, i: usize) -> Block {
        Block::ALL
            .into_iter()
            .find(|&b| self.range(b).contains(&i))
            .expect("index within parameter buffer")
    }

    pub fn to_json(&self) -> String {
        let doc = ParamsDoc {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            config: self.config.clone(),
            blocks: Block::ALL
                .iter()
                .map(|&b| BlockDoc { name: b.name().into(), shape: b.shape(&self.config), values: self.block(b).to_vec() })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("params serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, ParamsError> {
        let fmt_err = |message: String| ParamsError::Format { path: origin.to_string(), message };
        let doc: ParamsDoc = serde_json::from_str(text).map_err(|e| fmt_err(e.to_string()))?;
        if doc.format != PARAMS_FORMAT {
            return Err(fmt_err(format!("format tag `{}` is not `{PARAMS_FORMAT}`", doc.format)));
        }
        if doc.version != PARAMS_VERSION {
            return Err(fmt_err(format!("unsupported version {}", doc.version)));
        }
        doc.config.validate()?;
        let mut p = Self::zeros(&doc.config);
        if doc.blocks.len() != Block::ALL.len() {
            return Err(fmt_err(format!("expected {} blocks, found {}", Block::ALL.len(), doc.blocks.len())));
        }
        for (b, bd) in Block::ALL.into_iter().zip(&doc.blocks) {
            if bd.name != b.name() {
                return Err(fmt_err(format!("expected block `{}`, found `{}`", b.name(), bd.name)));
            }
            let shape = b.shape(&doc.config);
            if bd.shape != shape || bd.values.len() != shape.iter().product::<usize>() {
                return Err(fmt_err(format!("block `{}` has shape {:?}, expected {:?}", bd.name, bd.shape, shape)));
            }
            if bd.values.iter().any(|v| !v.is_finite()) {
                return Err(fmt_err(format!("block `{}` has non-finite values", bd.name)));
            }
            p.block_mut(b).copy_from_slice(&bd.values);
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ParamsError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| ParamsError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ParamsError> {
        let path = path.as_ref();
        let origin = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| ParamsError::Io { path: origin.clone(), source })?;
        Self::from_json(&text, &origin)
    }
}

pub const PARAMS_FORMAT: &str = "ethplan-attention-lstm";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDoc {
    format: String,
    version: u32,
    config: NetworkConfig,
    blocks: Vec<BlockDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockDoc {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn layout_is_contiguous() {
        let p = Params::zeros(&NetworkConfig::default());
        let mut at = 0;
        for b in Block::ALL {
            assert_eq!(p.range(b).start, at);
            at = p.range(b).end;
        }
        assert_eq!(at, p.len());
        assert_eq!(p.block_of(p.range(Block::PoolBias).start), Block::PoolBias);
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let p = Params::random(&NetworkConfig::default(), 1.0, &mut substream(3, "init"));
        let back = Params::from_json(&p.to_json(), "mem").unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_json(), p.to_json());
    }

    #[test]
    fn wrong_shape_rejected() {
        let p = Params::zeros(&NetworkConfig::default());
        let mut v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        v["blocks"][2]["values"].as_array_mut().unwrap().pop();
        let err = Params::from_json(&v.to_string(), "mem").unwrap_err();
        assert!(err.to_string().contains("encoder.bias"), "{err}");
    }
}
