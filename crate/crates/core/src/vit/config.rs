use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::NormalizationConfig;

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Architectural hyperparameters of a ViT classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub num_classes: usize,
    #[serde(default)]
    pub norm: NormalizationConfig,
}

fn default_channels() -> usize {
    3
}

impl ViTConfig {
    /// ViT-S/16 at 224x224.
    pub fn vit_s16(num_classes: usize) -> Self {
        ViTConfig {
            image_size: 224,
            patch_size: 16,
            channels: 3,
            embed_dim: 384,
            depth: 12,
            heads: 6,
            mlp_ratio: 4.0,
            num_classes,
            norm: NormalizationConfig::default(),
        }
    }

    /// Small model used by tests and examples: 64x64 input, 16 patches.
    pub fn toy() -> Self {
        ViTConfig {
            image_size: 64,
            patch_size: 16,
            channels: 3,
            embed_dim: 64,
            depth: 2,
            heads: 4,
            mlp_ratio: 4.0,
            num_classes: 4,
            norm: NormalizationConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("channels", self.channels),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        let hidden = self.embed_dim as f64 * self.mlp_ratio;
        if !(hidden.is_finite() && hidden >= 1.0 && hidden.fract() == 0.0) {
            return Err(Error::Config(format!(
                "mlp ratio {} times embed dim {} is not a positive integer",
                self.mlp_ratio, self.embed_dim
            )));
        }
        self.norm.validate(self.channels)
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio) as usize
    }
}

/// Closed-form number of scalar parameters for `cfg`.
pub fn param_count(cfg: &ViTConfig) -> u64 {
    let e = cfg.embed_dim as u64;
    let d = cfg.patch_dim() as u64;
    let h = cfg.mlp_hidden() as u64;
    let tokens = cfg.num_tokens() as u64;
    let classes = cfg.num_classes as u64;

    let embedding = d * e + e + e + tokens * e;
    let attention = 4 * (e * e + e);
    let mlp = (e * h + h) + (h * e + e);
    let norms = 2 * (2 * e);
    let per_block = attention + mlp + norms;
    let head = 2 * e + classes * e + classes;
    embedding + cfg.depth as u64 * per_block + head
}
