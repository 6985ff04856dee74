//! Dual-branch denoiser: a 3D occupancy-latent branch and a per-frame 2D
//! mask-latent branch coupled by bidirectional cross-attention, conditioned
//! on fused image+hand patch features and trained with conditional flow
//! matching.
//!
//! The geometry branch runs `M` transformer blocks over patchified voxel
//! tokens; the mask branch runs `P` blocks (parameters shared across frames)
//! over patchified mask tokens. At block `j`, the geometry branch
//! cross-attends to a softmax-weighted sum of the per-frame mask features at
//! paired depth `i = floor(j * P / M)`; the mask branch symmetrically
//! cross-attends to the geometry tokens at depth `floor(i * M / P)`. Each
//! block is pre-normalized: self-attention, cross-attention, feed-forward,
//! all with residual connections.

mod data;
mod features;
mod network;
mod params;
mod sample;
mod train;

pub use data::{
    build_training_sequence, carve_baseline, latent_to_mask, mask_to_latent, TrainingSequence,
};
pub use features::{
    stub_encode_frame, FrameObservation, PatchFeatureMap, FINGERTIPS, HAND_CHANNELS,
    IMAGE_CHANNELS, KEYPOINT_COUNT,
};
pub use network::DualBranchModel;
pub use params::ParamStore;
pub use sample::{sample, SampleOutput};
pub use train::{
    finite_diff_check, train, Adam, EpochLoss, StepBatch, TrainOptions, TrainReport,
};

/// Architecture and latent-size configuration.
///
/// Defaults are desk-scale: they keep the full gradient-check and the
/// training acceptance suite runnable on a laptop. `m / mask_patch` must
/// equal `g` so the conditioning patch grid is pixel-aligned with the mask
/// tokens, and `geo_patch` must divide `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Geometry-branch blocks.
    pub geo_blocks: usize,
    /// Mask-branch blocks.
    pub mask_blocks: usize,
    pub heads: usize,
    /// Token channel width.
    pub d: usize,
    /// Conditioning patch grid is `g x g` per frame.
    pub g: usize,
    /// Geometry latent is `r x r x r` occupancy logits.
    pub r: usize,
    /// Mask latent is `m x m` per frame.
    pub m: usize,
    /// Views drawn per training step, inclusive.
    pub n_range: (usize, usize),
    /// Geometry latent patch edge (tokens: `(r/geo_patch)^3`).
    pub geo_patch: usize,
    /// Mask latent patch edge (tokens: `(m/mask_patch)^2`).
    pub mask_patch: usize,
    /// Feed-forward hidden width multiplier.
    pub ff_mult: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            geo_blocks: 4,
            mask_blocks: 4,
            heads: 4,
            d: 64,
            g: 8,
            r: 16,
            m: 32,
            n_range: (2, 6),
            geo_patch: 4,
            mask_patch: 4,
            ff_mult: 2,
        }
    }
}

impl ModelConfig {
    /// Smallest configuration that still exercises every code path; used by
    /// the finite-difference gradient checks.
    pub fn tiny() -> Self {
        Self {
            geo_blocks: 1,
            mask_blocks: 1,
            heads: 2,
            d: 4,
            g: 2,
            r: 2,
            m: 2,
            n_range: (2, 3),
            geo_patch: 1,
            mask_patch: 1,
            ff_mult: 2,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.geo_blocks < 1 || self.mask_blocks < 1 {
            return Err(ModelError::BadConfig("need at least one block per branch".into()));
        }
        if self.d % self.heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d={} not divisible by heads={}",
                self.d, self.heads
            )));
        }
        if self.r % self.geo_patch != 0 {
            return Err(ModelError::BadConfig(format!(
                "geo_patch={} does not divide r={}",
                self.geo_patch, self.r
            )));
        }
        if self.m % self.mask_patch != 0 || self.m / self.mask_patch != self.g {
            return Err(ModelError::BadConfig(format!(
                "mask tokens {}x{} must match conditioning grid g={}",
                self.m / self.mask_patch,
                self.m / self.mask_patch,
                self.g
            )));
        }
        if self.n_range.0 < 1 || self.n_range.0 > self.n_range.1 {
            return Err(ModelError::BadConfig(format!(
                "bad view range {:?}",
                self.n_range
            )));
        }
        Ok(())
    }

    /// Geometry-branch token count.
    pub fn geo_tokens(&self) -> usize {
        let np = self.r / self.geo_patch;
        np * np * np
    }

    /// Mask-branch tokens per frame (equals `g * g`).
    pub fn mask_tokens(&self) -> usize {
        let np = self.m / self.mask_patch;
        np * np
    }
}

/// Monotone proportional pairing of geometry block `j` onto a mask-branch
/// depth: `i = floor(j * P / M)`. Injective whenever `P >= M`.
pub fn layer_pairing(geo_blocks: usize, mask_blocks: usize) -> Vec<usize> {
    assert!(geo_blocks >= 1 && mask_blocks >= 1);
    (0..geo_blocks).map(|j| j * mask_blocks / geo_blocks).collect()
}

/// Errors from model construction, training, and sampling.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("feature grid mismatch: expected {expected} patches, got {got}")]
    GridMismatch { expected: usize, got: usize },
    #[error("shape mismatch in {what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("need at least one frame")]
    NoFrames,
    #[error("non-finite activation in {stage}")]
    NonFinite { stage: String },
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Flow(#[from] crate::flow::FlowError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairing_identity_when_equal() {
        assert_eq!(layer_pairing(4, 4), vec![0, 1, 2, 3]);
    }

    #[test]
    fn pairing_floor_arithmetic() {
        assert_eq!(layer_pairing(4, 2), vec![0, 0, 1, 1]);
        assert_eq!(layer_pairing(2, 4), vec![0, 2]);
    }

    #[test]
    fn pairing_injective_when_mask_deeper() {
        let map = layer_pairing(3, 7);
        let mut seen = std::collections::HashSet::new();
        assert!(map.iter().all(|i| seen.insert(*i)));
    }

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn config_rejects_mismatched_grids() {
        let cfg = ModelConfig {
            g: 7,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            heads: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
