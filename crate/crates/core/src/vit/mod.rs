//! Minimal deterministic ViT classifier.

mod config;
mod format;
mod forward;
mod weights;

pub use config::{param_count, ViTConfig, LAYER_NORM_EPS};
pub use format::{
    decode_weights, encode_weights, load_weights, read_header, save_weights, TensorEntry, FORMAT_VERSION, MAGIC,
};
pub use forward::{argmax, embed_patches, encode_tokens, forward, gelu, layer_norm, linear, normalized_patches};
pub use weights::{random_init, tensor_specs, EncoderBlock, ModelWeights, INIT_SCALE};
