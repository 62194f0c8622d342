//! Block-wise keyed image encryption.
//!
//! The ViT-compatible scheme works in two steps on `M x M` blocks:
//! every block's samples are shuffled by one common permutation, then the
//! blocks themselves are reordered. Because both steps are permutations
//! aligned with the ViT patch grid, a model whose patch-embedding rows and
//! position-embedding rows are permuted the same way classifies the
//! encrypted image exactly as the original model classifies the plain one
//! (see [`crate::transform`]).
//!
//! A pixel-based baseline (per-position negative/positive flip plus RGB
//! channel shuffle) is provided for contrast. It alters sample values and
//! has no matching model transformation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permkey::{derive_seeds, Permutation, SecretKey, SplitMix64};
use crate::tensor::{assemble_patch_bytes, extract_patch_bytes, Image, PatchGrid};

/// How pixels inside a block are shuffled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShuffleMode {
    /// One permutation over all `M*M*C` samples; channels mix.
    #[default]
    ChannelMixing,
    /// One permutation over the `M*M` positions, applied identically to
    /// every channel.
    PerChannel,
}

impl fmt::Display for ShuffleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShuffleMode::ChannelMixing => "mixed",
            ShuffleMode::PerChannel => "per-channel",
        })
    }
}

impl FromStr for ShuffleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" | "channel-mixing" => Ok(ShuffleMode::ChannelMixing),
            "per-channel" => Ok(ShuffleMode::PerChannel),
            other => Err(Error::Config(format!(
                "unknown shuffle mode `{other}` (expected `mixed` or `per-channel`)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncryptionParams {
    pub block_size: usize,
    pub shuffle_mode: ShuffleMode,
}

impl EncryptionParams {
    pub fn new(block_size: usize, shuffle_mode: ShuffleMode) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::Config("block size must be at least 1".into()));
        }
        Ok(EncryptionParams {
            block_size,
            shuffle_mode,
        })
    }

    /// Length of the keyed pixel-shuffle permutation for `channels`.
    pub fn shuffle_len(&self, channels: usize) -> usize {
        match self.shuffle_mode {
            ShuffleMode::ChannelMixing => self.block_size * self.block_size * channels,
            ShuffleMode::PerChannel => self.block_size * self.block_size,
        }
    }
}

impl Default for EncryptionParams {
    fn default() -> Self {
        EncryptionParams {
            block_size: 16,
            shuffle_mode: ShuffleMode::ChannelMixing,
        }
    }
}

/// The two gather permutations behind one key.
///
/// `pixel` acts on a flattened patch (length `M*M*C`, already expanded in
/// per-channel mode) and `block` on the patch sequence. Both image
/// encryption and model transformation obtain them from
/// [`EncryptionPermutations::derive`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptionPermutations {
    pub pixel: Permutation,
    pub block: Permutation,
}

impl EncryptionPermutations {
    pub fn derive(key: &SecretKey, params: &EncryptionParams, channels: usize, num_patches: usize) -> Result<Self> {
        if params.block_size == 0 {
            return Err(Error::Config("block size must be at least 1".into()));
        }
        let seeds = derive_seeds(key);
        let shuffle = Permutation::generate(seeds.pixel, params.shuffle_len(channels))?;
        let pixel = match params.shuffle_mode {
            ShuffleMode::ChannelMixing => shuffle,
            ShuffleMode::PerChannel => shuffle.expand_interleaved(channels),
        };
        let block = Permutation::generate(seeds.block, num_patches)?;
        Ok(EncryptionPermutations { pixel, block })
    }

    pub fn for_image(key: &SecretKey, params: &EncryptionParams, img: &Image) -> Result<Self> {
        let grid = PatchGrid::for_dims(img.height(), img.width(), img.channels(), params.block_size)?;
        Self::derive(key, params, img.channels(), grid.num_patches())
    }

    pub fn identity(patch_dim: usize, num_patches: usize) -> Self {
        EncryptionPermutations {
            pixel: Permutation::identity(patch_dim),
            block: Permutation::identity(num_patches),
        }
    }

    pub fn inverse(&self) -> Self {
        EncryptionPermutations {
            pixel: self.pixel.inverse(),
            block: self.block.inverse(),
        }
    }
}

pub fn encrypt_vit(img: &Image, key: &SecretKey, params: &EncryptionParams) -> Result<Image> {
    let perms = EncryptionPermutations::for_image(key, params, img)?;
    encrypt_vit_with(img, &perms, params.block_size)
}

pub fn decrypt_vit(img: &Image, key: &SecretKey, params: &EncryptionParams) -> Result<Image> {
    let perms = EncryptionPermutations::for_image(key, params, img)?;
    decrypt_vit_with(img, &perms, params.block_size)
}

/// Encrypts with explicit permutations: pixel shuffle inside every block,
/// then block scrambling (`encrypted block i = plain block block[i]`).
pub fn encrypt_vit_with(img: &Image, perms: &EncryptionPermutations, block: usize) -> Result<Image> {
    let (patches, grid) = extract_patch_bytes(img, block)?;
    check_perms(perms, &grid)?;
    let d = grid.patch_dim;
    let mut out = vec![0u8; patches.len()];
    for (i, dst) in out.chunks_exact_mut(d).enumerate() {
        let src_block = perms.block.as_slice()[i];
        perms.pixel.apply_into(&patches[src_block * d..(src_block + 1) * d], dst)?;
    }
    assemble_patch_bytes(&out, grid, block, img.channels())
}

/// Inverse of [`encrypt_vit_with`]: unscramble blocks, then unshuffle pixels.
pub fn decrypt_vit_with(img: &Image, perms: &EncryptionPermutations, block: usize) -> Result<Image> {
    let (patches, grid) = extract_patch_bytes(img, block)?;
    check_perms(perms, &grid)?;
    let inv = perms.inverse();
    let d = grid.patch_dim;
    let mut out = vec![0u8; patches.len()];
    for (i, dst) in out.chunks_exact_mut(d).enumerate() {
        let src_block = inv.block.as_slice()[i];
        inv.pixel.apply_into(&patches[src_block * d..(src_block + 1) * d], dst)?;
    }
    assemble_patch_bytes(&out, grid, block, img.channels())
}

fn check_perms(perms: &EncryptionPermutations, grid: &PatchGrid) -> Result<()> {
    if perms.pixel.len() != grid.patch_dim {
        return Err(Error::Shape(format!(
            "pixel permutation has length {}, patches have {} samples",
            perms.pixel.len(),
            grid.patch_dim
        )));
    }
    if perms.block.len() != grid.num_patches() {
        return Err(Error::Shape(format!(
            "block permutation has length {}, image has {} blocks",
            perms.block.len(),
            grid.num_patches()
        )));
    }
    Ok(())
}

/// The six orderings of three channels, indexed by keystream value.
pub const CHANNEL_PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Keyed operation for one pixel position of the pixel-based scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelOp {
    /// Bit `c` set: channel `c` is inverted (`255 - s`).
    pub invert_mask: u8,
    /// Index into [`CHANNEL_PERMUTATIONS`].
    pub channel_perm: u8,
}

impl PixelOp {
    pub const IDENTITY: PixelOp = PixelOp {
        invert_mask: 0,
        channel_perm: 0,
    };

    fn from_word(r: u64) -> Self {
        PixelOp {
            invert_mask: (r & 0b111) as u8,
            channel_perm: ((r >> 32) % 6) as u8,
        }
    }
}

/// Which steps of the pixel-based scheme run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelBasedSteps {
    pub negative_positive: bool,
    pub channel_shuffle: bool,
}

impl PixelBasedSteps {
    pub const ALL: PixelBasedSteps = PixelBasedSteps {
        negative_positive: true,
        channel_shuffle: true,
    };
}

/// Per-position operations for an image with `positions` pixels. One
/// SplitMix64 word per position, in row-major order, seeded from key bytes
/// 16..24.
pub fn pixel_keystream(key: &SecretKey, positions: usize) -> Vec<PixelOp> {
    let mut rng = SplitMix64::new(key.pixel_based_seed().0);
    (0..positions).map(|_| PixelOp::from_word(rng.next_u64())).collect()
}

pub fn encrypt_pixel_based(img: &Image, key: &SecretKey) -> Result<Image> {
    let ops = pixel_keystream(key, img.height() * img.width());
    encrypt_pixel_based_with(img, &ops, PixelBasedSteps::ALL)
}

pub fn decrypt_pixel_based(img: &Image, key: &SecretKey) -> Result<Image> {
    let ops = pixel_keystream(key, img.height() * img.width());
    decrypt_pixel_based_with(img, &ops, PixelBasedSteps::ALL)
}

/// Negative/positive flip per channel, then `out[c] = flipped[perm[c]]`.
pub fn encrypt_pixel_based_with(img: &Image, ops: &[PixelOp], steps: PixelBasedSteps) -> Result<Image> {
    map_pixels(img, ops, |px, op| {
        let flipped = if steps.negative_positive { flip(px, op.invert_mask) } else { px };
        if steps.channel_shuffle {
            let p = CHANNEL_PERMUTATIONS[op.channel_perm as usize];
            [flipped[p[0]], flipped[p[1]], flipped[p[2]]]
        } else {
            flipped
        }
    })
}

pub fn decrypt_pixel_based_with(img: &Image, ops: &[PixelOp], steps: PixelBasedSteps) -> Result<Image> {
    map_pixels(img, ops, |px, op| {
        let unshuffled = if steps.channel_shuffle {
            let p = CHANNEL_PERMUTATIONS[op.channel_perm as usize];
            let mut out = [0u8; 3];
            for c in 0..3 {
                out[p[c]] = px[c];
            }
            out
        } else {
            px
        };
        if steps.negative_positive {
            flip(unshuffled, op.invert_mask)
        } else {
            unshuffled
        }
    })
}

fn flip(px: [u8; 3], mask: u8) -> [u8; 3] {
    let mut out = px;
    for (c, v) in out.iter_mut().enumerate() {
        if mask >> c & 1 == 1 {
            *v = 255 - *v;
        }
    }
    out
}

fn map_pixels(img: &Image, ops: &[PixelOp], f: impl Fn([u8; 3], PixelOp) -> [u8; 3]) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::UnsupportedImage(format!(
            "pixel-based encryption needs RGB input, got {} channels",
            img.channels()
        )));
    }
    let positions = img.height() * img.width();
    if ops.len() != positions {
        return Err(Error::LengthMismatch {
            expected: positions,
            actual: ops.len(),
        });
    }
    if let Some(op) = ops.iter().find(|op| op.channel_perm >= 6) {
        return Err(Error::Config(format!("channel permutation index {} out of range", op.channel_perm)));
    }
    let mut data = Vec::with_capacity(img.data().len());
    for (px, &op) in img.data().chunks_exact(3).zip(ops) {
        data.extend_from_slice(&f([px[0], px[1], px[2]], op));
    }
    Image::new(img.height(), img.width(), 3, data)
}
