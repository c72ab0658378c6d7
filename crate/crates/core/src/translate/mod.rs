//! One-sided contrastive unpaired translation (CUT).
//!
//! A residual encoder/decoder generator maps simulated images toward the real
//! domain. Style comes from a least-squares patch discriminator; content is kept by
//! a multilayer PatchNCE loss between encoder features of the input and of the
//! translation, sampled at shared spatial positions. There is only one generator.

mod loss;
mod nets;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::TensorError;

pub use loss::{
    lsgan_d_loss, lsgan_g_loss, lsgan_losses, patchnce_loss, sample_patches, PatchEmbeddingSet,
};
pub use nets::{Discriminator, GenOutput, Generator, ParamSet, ProjectionHeads};
pub use train::{
    image_to_tensor, tensor_to_image, train_cut, translate_batch, write_loss_log, LossRecord,
    TrainedModel, LOSS_LOG_HEADER,
};

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("invalid {field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error("image dims {found:?} differ from {expected:?}")]
    DimsMismatch {
        expected: [usize; 2],
        found: [usize; 2],
    },
    #[error("{requested} patches requested but only {available} positions available")]
    NotEnoughPositions { requested: usize, available: usize },
    #[error("mismatched patch sets: {0}")]
    MismatchedSets(String),
    #[error("numeric error at iteration {iteration}; last good model kept")]
    Numeric {
        iteration: usize,
        last_good: Box<TrainedModel>,
        log: Vec<LossRecord>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> TranslateError {
    TranslateError::InvalidSpec {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub base_channels: usize,
    pub n_downsamples: usize,
    pub n_resblocks: usize,
    /// Encoder layer indices: 0 is the stem, `1..=n_downsamples` the strided
    /// convolutions, then one index per residual block.
    pub nce_layers: Vec<usize>,
    /// Adds the input's logit before the final sigmoid and zero-initializes the last
    /// convolution, so an untrained generator is the identity.
    pub input_skip: bool,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            base_channels: 32,
            n_downsamples: 2,
            n_resblocks: 4,
            nce_layers: vec![0, 2, 4],
            input_skip: true,
        }
    }
}

impl GeneratorSpec {
    /// Smaller network used by the toy experiment and tests.
    pub fn light() -> Self {
        Self {
            base_channels: 8,
            n_resblocks: 2,
            ..Self::default()
        }
    }

    pub fn encoder_layers(&self) -> usize {
        1 + self.n_downsamples + self.n_resblocks
    }

    /// Channel count of encoder layer `layer`.
    pub fn layer_channels(&self, layer: usize) -> usize {
        self.base_channels << layer.min(self.n_downsamples)
    }

    /// Input extents must be multiples of this (inputs are edge-padded to it).
    pub fn stride_multiple(&self) -> usize {
        1 << self.n_downsamples
    }

    pub fn validate(&self) -> Result<(), TranslateError> {
        if self.base_channels == 0 {
            return Err(invalid("base_channels", "must be > 0"));
        }
        if self.n_downsamples > 5 {
            return Err(invalid("n_downsamples", "at most 5 supported"));
        }
        if self.nce_layers.is_empty() {
            return Err(invalid("nce_layers", "at least one layer required"));
        }
        let n = self.encoder_layers();
        if let Some(&l) = self.nce_layers.iter().find(|&&l| l >= n) {
            return Err(invalid(
                "nce_layers",
                format!("layer {l} does not exist (encoder has {n} layers)"),
            ));
        }
        let mut sorted = self.nce_layers.clone();
        sorted.dedup();
        if sorted.len() != self.nce_layers.len() || !self.nce_layers.is_sorted() {
            return Err(invalid("nce_layers", "must be strictly increasing"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub base_channels: usize,
    pub n_layers: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            base_channels: 32,
            n_layers: 3,
        }
    }
}

impl DiscriminatorSpec {
    pub fn light() -> Self {
        Self {
            base_channels: 8,
            n_layers: 3,
        }
    }

    pub fn validate(&self) -> Result<(), TranslateError> {
        if self.base_channels == 0 {
            return Err(invalid("base_channels", "must be > 0"));
        }
        if self.n_layers == 0 || self.n_layers > 6 {
            return Err(invalid("n_layers", "must be in 1..=6"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorConfig {
    pub tau: f64,
    pub lambda_nce: f64,
    pub lambda_nce_identity: f64,
    pub n_patches: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Side of the random square training crop; 0 trains on whole images.
    pub crop_size: usize,
    /// Output width of the two-layer projection heads.
    pub head_dim: usize,
    pub seed: u64,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            lambda_nce: 1.0,
            lambda_nce_identity: 1.0,
            n_patches: 64,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            iterations: 200,
            batch_size: 1,
            crop_size: 64,
            head_dim: 64,
            seed: 0,
        }
    }
}

impl TranslatorConfig {
    pub fn validate(&self) -> Result<(), TranslateError> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(invalid("tau", format!("must be > 0, got {}", self.tau)));
        }
        if !(self.lambda_nce >= 0.0) || !self.lambda_nce.is_finite() {
            return Err(invalid("lambda_nce", "must be >= 0"));
        }
        if !(self.lambda_nce_identity >= 0.0) || !self.lambda_nce_identity.is_finite() {
            return Err(invalid("lambda_nce_identity", "must be >= 0"));
        }
        if self.n_patches < 2 {
            return Err(invalid("n_patches", "must be >= 2"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(invalid("lr", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(invalid("beta1", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("beta2", "must be in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        if self.head_dim == 0 {
            return Err(invalid("head_dim", "must be >= 1"));
        }
        Ok(())
    }
}
