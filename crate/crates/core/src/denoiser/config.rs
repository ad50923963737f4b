use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::DEFAULT_MAX_ELEMENTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub max_elements: usize,
    pub num_categories: u32,
    pub bins: usize,
    /// Separate element-index and attribute-index position tables; a single
    /// flat table over the sequence when false.
    pub decoupled_pe: bool,
}

impl DenoiserConfig {
    /// Transformer size used for the full-scale experiments.
    pub fn paper(num_categories: u32, bins: usize) -> Self {
        DenoiserConfig {
            layers: 4,
            heads: 8,
            embed_dim: 512,
            hidden_dim: 2048,
            dropout: 0.1,
            max_elements: DEFAULT_MAX_ELEMENTS,
            num_categories,
            bins,
            decoupled_pe: true,
        }
    }

    /// Laptop-CPU configuration.
    pub fn desk(num_categories: u32, bins: usize) -> Self {
        DenoiserConfig {
            layers: 2,
            heads: 8,
            embed_dim: 128,
            hidden_dim: 512,
            ..Self::paper(num_categories, bins)
        }
    }

    /// Minimal configuration for unit tests and gradient checks.
    pub fn tiny(num_categories: u32, bins: usize) -> Self {
        DenoiserConfig {
            layers: 2,
            heads: 4,
            embed_dim: 32,
            hidden_dim: 64,
            dropout: 0.0,
            max_elements: 4,
            num_categories,
            bins,
            decoupled_pe: true,
        }
    }

    pub fn preset(name: &str, num_categories: u32, bins: usize) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper(num_categories, bins)),
            "desk" => Ok(Self::desk(num_categories, bins)),
            "tiny" => Ok(Self::tiny(num_categories, bins)),
            other => Err(Error::InvalidArgument(format!("unknown model preset {other:?}"))),
        }
    }

    pub fn seq_len(&self) -> usize {
        5 * self.max_elements
    }

    /// Global vocabulary size including PAD and MASK.
    pub fn vocab_size(&self) -> usize {
        self.num_categories as usize + 4 * self.bins + 2
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("max_elements", self.max_elements),
            ("num_categories", self.num_categories as usize),
            ("bins", self.bins),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} not in [0,1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps, overriding `epochs`.
    pub max_steps: Option<usize>,
    pub aux_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.0,
            batch_size: 64,
            epochs: 20,
            max_steps: None,
            aux_weight: crate::diffusion::DEFAULT_AUX_WEIGHT,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be > 0", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if self.aux_weight < 0.0 {
            return Err(Error::InvalidArgument("aux weight must be >= 0".into()));
        }
        Ok(())
    }
}
