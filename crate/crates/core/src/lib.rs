//! Privacy-preserving ViT classification with keyed block-wise image
//! encryption.
//!
//! A secret key drives two permutations: one shuffles the samples inside
//! every `M x M` block of an image, the other reorders the blocks. Applying
//! the same permutations to a ViT's patch-embedding rows and position
//! embeddings ([`transform::transform_model`]) yields a model that
//! classifies encrypted images exactly as the original model classifies
//! plain ones.
//!
//! ```no_run
//! use cloakvit_core::{crypto, transform, vit, EncryptionParams, SecretKey};
//!
//! let cfg = vit::ViTConfig::toy();
//! let model = vit::random_init(&cfg, 0);
//! let key = SecretKey::from_seed(1);
//! let params = EncryptionParams::default();
//!
//! let encrypted_model = transform::transform_model(&model, &cfg, &key, &params)?;
//! let img = cloakvit_core::imageio::read_png("photo.png")?;
//! let encrypted = crypto::encrypt_vit(&img, &key, &params)?;
//! let logits = vit::forward(&encrypted_model, &cfg, &encrypted)?;
//! # Ok::<(), cloakvit_core::Error>(())
//! ```

pub mod crypto;
pub mod dataset;
mod error;
pub mod fsutil;
pub mod imageio;
pub mod permkey;
pub mod tensor;
pub mod transform;
pub mod vit;

pub use crypto::{EncryptionParams, EncryptionPermutations, ShuffleMode};
pub use error::{Error, Result};
pub use permkey::{Permutation, SecretKey, StreamSeed};
pub use tensor::{Image, NormalizationConfig, PatchGrid, Tensor};
pub use vit::{ModelWeights, ViTConfig};
