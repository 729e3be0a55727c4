//! From-scratch neural language models: a small reverse-mode autodiff
//! engine, LSTM and decoder-only Transformer networks, SGD training and
//! sampling.

mod checkpoint;
pub mod graph;
mod model;
mod network;
pub mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{Graph, Var};
pub use model::{generate_text, sample_index, AnyNetwork, NeuralLM};
pub use network::{LstmState, Network};
pub use params::{clip_global_norm, global_norm, ParamId, ParamStore};
pub use train::{batchify, train_lm, EpochLog, TrainOptions};

/// Floating-point element type of a network.
pub trait Real:
    ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + num_traits::Float
    + num_traits::FromPrimitive
    + std::ops::AddAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric fault: {0}")]
    NumericFault(String),
    #[error("training stream too short: {0}")]
    TooLittleData(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("not a neural checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Lstm,
    Transformer,
}

impl std::str::FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(Architecture::Lstm),
            "transformer" => Ok(Architecture::Transformer),
            _ => Err(format!("unknown architecture `{s}`")),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Lstm => "lstm",
            Architecture::Transformer => "transformer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralLMConfig {
    pub architecture: Architecture,
    pub layers: usize,
    pub hidden: usize,
    pub embedding: usize,
    pub heads: usize,
    /// Transformer context length (training window and scoring window).
    pub context: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// LSTM truncated back-propagation length.
    pub bptt: usize,
    pub clip: f64,
    pub seed: u64,
    pub epochs: usize,
    pub anneal: f64,
    pub init_range: f64,
    pub precision: Precision,
}

impl Default for NeuralLMConfig {
    fn default() -> Self {
        Self::desk(Architecture::Lstm)
    }
}

impl NeuralLMConfig {
    /// Desk-scale defaults.
    pub fn desk(architecture: Architecture) -> Self {
        Self {
            architecture,
            layers: 2,
            hidden: 128,
            embedding: 128,
            heads: 4,
            context: 128,
            dropout: 0.2,
            lr: match architecture {
                Architecture::Lstm => 10.0,
                Architecture::Transformer => 5.0,
            },
            batch_size: 20,
            bptt: 35,
            clip: 0.25,
            seed: 1,
            epochs: 10,
            anneal: 4.0,
            init_range: 0.1,
            precision: Precision::F64,
        }
    }

    /// Full-size settings of the best-performing published models.
    pub fn full_scale(architecture: Architecture) -> Self {
        let mut c = Self::desk(architecture);
        match architecture {
            Architecture::Lstm => {
                c.hidden = 800;
                c.embedding = 800;
            }
            Architecture::Transformer => {
                c.layers = 4;
                c.hidden = 800;
                c.embedding = 800;
                c.heads = 4;
                c.context = 500;
            }
        }
        c.epochs = 40;
        c
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let err = |m: String| Err(NeuralError::Config(m));
        for (name, v) in [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("embedding", self.embedding),
            ("heads", self.heads),
            ("context", self.context),
            ("batch_size", self.batch_size),
            ("bptt", self.bptt),
        ] {
            if v == 0 {
                return err(format!("{name} must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !self.hidden.is_multiple_of(self.heads) && self.architecture == Architecture::Transformer {
            return err(format!("hidden {} is not divisible by {} heads", self.hidden, self.heads));
        }
        if self.architecture == Architecture::Transformer && self.embedding != self.hidden {
            return err("transformer embedding size must equal hidden size".into());
        }
        if !(self.lr > 0.0) || !(self.clip > 0.0) || !(self.anneal >= 1.0) {
            return err("lr and clip must be positive and anneal at least 1".into());
        }
        Ok(())
    }
}
