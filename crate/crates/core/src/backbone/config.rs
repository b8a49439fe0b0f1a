use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Shape hyperparameters of the denoiser.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub mlp_ratio: usize,
    pub patch_size: usize,
    /// Latent grid `(H/p, W/p)`.
    pub grid: (usize, usize),
    /// Longest clip the frame embedding table covers.
    pub max_frames: usize,
    pub time_dim: usize,
    pub pyramid_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_blocks: 4,
            mlp_ratio: 4,
            patch_size: 4,
            grid: (4, 4),
            max_frames: 16,
            time_dim: 32,
            pyramid_dim: 32,
        }
    }
}

impl ModelConfig {
    /// The configuration used for gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_blocks: 2,
            mlp_ratio: 2,
            patch_size: 2,
            grid: (2, 2),
            max_frames: 4,
            time_dim: 8,
            pyramid_dim: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.d_model > 0 && self.n_heads > 0, "d_model and n_heads must be positive");
        ensure!(
            self.d_model % self.n_heads == 0,
            "d_model {} is not divisible by n_heads {}",
            self.d_model,
            self.n_heads
        );
        ensure!(self.n_blocks >= 2, "the feature pyramid needs at least two blocks");
        ensure!(self.mlp_ratio >= 1 && self.patch_size >= 1, "mlp_ratio and patch_size must be positive");
        ensure!(self.grid.0 >= 1 && self.grid.1 >= 1, "empty latent grid");
        ensure!(self.max_frames >= 2, "max_frames must be at least 2");
        ensure!(self.time_dim >= 2 && self.time_dim % 2 == 0, "time_dim must be even and at least 2");
        ensure!(self.pyramid_dim >= 1, "pyramid_dim must be positive");
        Ok(())
    }

    /// Channels of an RGB latent token.
    pub fn latent_channels(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    /// Channels of a single-channel (mask, depth) latent token.
    pub fn scalar_channels(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Frame size in pixels.
    pub fn frame_size(&self) -> (usize, usize) {
        (self.grid.0 * self.patch_size, self.grid.1 * self.patch_size)
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Width of the embedded input: noisy latent, background, control,
    /// reference view and the segment flag.
    pub fn input_width(&self) -> usize {
        3 * self.latent_channels() + self.scalar_channels() + 1
    }
}
