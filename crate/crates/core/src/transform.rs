//! Key-dependent transformation of ViT weights.
//!
//! Encrypted patch `i` holds plain patch `block[i]`, and within every patch
//! encrypted sample `k` holds plain sample `pixel[k]`. Gathering the
//! patch-embedding rows by `pixel` and the patch rows of the position
//! embedding by `block` therefore makes the transformed model see exactly
//! the token set the plain model sees on the plain image, only in a
//! different order, which self-attention ignores. The class-token row of
//! the position embedding stays at index 0. No other tensor changes.

use crate::crypto::{EncryptionParams, EncryptionPermutations, ShuffleMode};
use crate::error::{Error, Result};
use crate::permkey::SecretKey;
use crate::vit::{ModelWeights, ViTConfig};

pub fn transform_model(
    model: &ModelWeights,
    cfg: &ViTConfig,
    key: &SecretKey,
    params: &EncryptionParams,
) -> Result<ModelWeights> {
    check_compatible(cfg, params)?;
    let perms = EncryptionPermutations::derive(key, params, cfg.channels, cfg.num_patches())?;
    transform_model_with(model, cfg, &perms)
}

/// Rejects parameter combinations under which encrypted inference would not
/// match plain inference.
pub fn check_compatible(cfg: &ViTConfig, params: &EncryptionParams) -> Result<()> {
    cfg.validate()?;
    if params.block_size != cfg.patch_size {
        return Err(Error::BlockPatchMismatch {
            block_size: params.block_size,
            patch_size: cfg.patch_size,
        });
    }
    if params.shuffle_mode == ShuffleMode::ChannelMixing && !cfg.norm.is_channel_uniform() {
        return Err(Error::NonUniformNormalization);
    }
    Ok(())
}

/// Applies explicit permutations. Passing `perms.inverse()` undoes a
/// previous transformation exactly.
pub fn transform_model_with(
    model: &ModelWeights,
    cfg: &ViTConfig,
    perms: &EncryptionPermutations,
) -> Result<ModelWeights> {
    model.validate(cfg)?;
    if perms.pixel.len() != cfg.patch_dim() || perms.block.len() != cfg.num_patches() {
        return Err(Error::Shape(format!(
            "permutations ({}, {}) do not fit patch dim {} and {} patches",
            perms.pixel.len(),
            perms.block.len(),
            cfg.patch_dim(),
            cfg.num_patches()
        )));
    }
    let e = cfg.embed_dim;
    let mut out = model.clone();

    let rows = perms.pixel.expand_interleaved(e);
    rows.apply_into(model.patch_embed_weight.data(), out.patch_embed_weight.data_mut())?;

    let pos_rows = perms.block.expand_interleaved(e);
    pos_rows.apply_into(&model.pos_embed.data()[e..], &mut out.pos_embed.data_mut()[e..])?;

    Ok(out)
}

/// Size of the permutation key space, in bits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeySpace {
    /// Length of the pixel-shuffle permutation.
    pub shuffle_len: usize,
    /// Number of blocks.
    pub blocks: usize,
    pub shuffle_bits: f64,
    pub block_bits: f64,
}

impl KeySpace {
    pub fn total_bits(&self) -> f64 {
        self.shuffle_bits + self.block_bits
    }
}

pub fn keyspace(image_size: usize, channels: usize, params: &EncryptionParams) -> Result<KeySpace> {
    if params.block_size == 0 || image_size % params.block_size != 0 {
        return Err(Error::Config(format!(
            "image size {image_size} is not divisible by block size {}",
            params.block_size
        )));
    }
    let shuffle_len = params.shuffle_len(channels);
    let blocks = (image_size / params.block_size).pow(2);
    Ok(KeySpace {
        shuffle_len,
        blocks,
        shuffle_bits: log2_factorial(shuffle_len),
        block_bits: log2_factorial(blocks),
    })
}

/// Base-2 logarithm of the number of distinct permutation pairs:
/// `log2(D!) + log2(N!)`.
pub fn keyspace_bits(image_size: usize, channels: usize, params: &EncryptionParams) -> Result<f64> {
    keyspace(image_size, channels, params).map(|k| k.total_bits())
}

pub fn keyspace_bits_for(cfg: &ViTConfig, params: &EncryptionParams) -> Result<f64> {
    keyspace_bits(cfg.image_size, cfg.channels, params)
}

fn log2_factorial(n: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0) / std::f64::consts::LN_2
}
