//! Model parameter storage.
//!
//! Linear layers inside the encoder and the patch embedding store their
//! weight as `[in, out]`; the classification head stores `[classes, in]`.
//! The canonical tensor order (used by the weights container and by
//! [`random_init`]) is:
//!
//! ```text
//! patch_embed.weight  [P*P*C, E]
//! patch_embed.bias    [E]
//! cls_token           [E]
//! pos_embed           [N+1, E]
//! blocks.{i}.ln1.weight, blocks.{i}.ln1.bias                 [E]
//! blocks.{i}.attn.{q,k,v,proj}.weight / .bias                [E, E] / [E]
//! blocks.{i}.ln2.weight, blocks.{i}.ln2.bias                 [E]
//! blocks.{i}.mlp.fc1.weight / .bias                          [E, H] / [H]
//! blocks.{i}.mlp.fc2.weight / .bias                          [H, E] / [E]
//! norm.weight, norm.bias                                     [E]
//! head.weight         [classes, E]
//! head.bias           [classes]
//! ```

use crate::error::{Error, Result};
use crate::permkey::SplitMix64;
use crate::tensor::Tensor;

use super::config::ViTConfig;

/// Half-width of the uniform initialization range.
pub const INIT_SCALE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock {
    pub ln1_weight: Tensor,
    pub ln1_bias: Tensor,
    pub q_weight: Tensor,
    pub q_bias: Tensor,
    pub k_weight: Tensor,
    pub k_bias: Tensor,
    pub v_weight: Tensor,
    pub v_bias: Tensor,
    pub proj_weight: Tensor,
    pub proj_bias: Tensor,
    pub ln2_weight: Tensor,
    pub ln2_bias: Tensor,
    pub fc1_weight: Tensor,
    pub fc1_bias: Tensor,
    pub fc2_weight: Tensor,
    pub fc2_bias: Tensor,
}

const BLOCK_TENSORS: [&str; 16] = [
    "ln1.weight",
    "ln1.bias",
    "attn.q.weight",
    "attn.q.bias",
    "attn.k.weight",
    "attn.k.bias",
    "attn.v.weight",
    "attn.v.bias",
    "attn.proj.weight",
    "attn.proj.bias",
    "ln2.weight",
    "ln2.bias",
    "mlp.fc1.weight",
    "mlp.fc1.bias",
    "mlp.fc2.weight",
    "mlp.fc2.bias",
];

impl EncoderBlock {
    fn zeros(cfg: &ViTConfig) -> Self {
        let e = cfg.embed_dim;
        let h = cfg.mlp_hidden();
        EncoderBlock {
            ln1_weight: Tensor::filled(vec![e], 1.0),
            ln1_bias: Tensor::zeros(vec![e]),
            q_weight: Tensor::zeros(vec![e, e]),
            q_bias: Tensor::zeros(vec![e]),
            k_weight: Tensor::zeros(vec![e, e]),
            k_bias: Tensor::zeros(vec![e]),
            v_weight: Tensor::zeros(vec![e, e]),
            v_bias: Tensor::zeros(vec![e]),
            proj_weight: Tensor::zeros(vec![e, e]),
            proj_bias: Tensor::zeros(vec![e]),
            ln2_weight: Tensor::filled(vec![e], 1.0),
            ln2_bias: Tensor::zeros(vec![e]),
            fc1_weight: Tensor::zeros(vec![e, h]),
            fc1_bias: Tensor::zeros(vec![h]),
            fc2_weight: Tensor::zeros(vec![h, e]),
            fc2_bias: Tensor::zeros(vec![e]),
        }
    }

    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.ln1_weight,
            &self.ln1_bias,
            &self.q_weight,
            &self.q_bias,
            &self.k_weight,
            &self.k_bias,
            &self.v_weight,
            &self.v_bias,
            &self.proj_weight,
            &self.proj_bias,
            &self.ln2_weight,
            &self.ln2_bias,
            &self.fc1_weight,
            &self.fc1_bias,
            &self.fc2_weight,
            &self.fc2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.ln1_weight,
            &mut self.ln1_bias,
            &mut self.q_weight,
            &mut self.q_bias,
            &mut self.k_weight,
            &mut self.k_bias,
            &mut self.v_weight,
            &mut self.v_bias,
            &mut self.proj_weight,
            &mut self.proj_bias,
            &mut self.ln2_weight,
            &mut self.ln2_bias,
            &mut self.fc1_weight,
            &mut self.fc1_bias,
            &mut self.fc2_weight,
            &mut self.fc2_bias,
        ]
    }
}

/// All parameters of a ViT classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub patch_embed_weight: Tensor,
    pub patch_embed_bias: Tensor,
    pub cls_token: Tensor,
    pub pos_embed: Tensor,
    pub blocks: Vec<EncoderBlock>,
    pub norm_weight: Tensor,
    pub norm_bias: Tensor,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl ModelWeights {
    /// Zero weights with unit layer-norm scales.
    pub fn zeros(cfg: &ViTConfig) -> Self {
        let e = cfg.embed_dim;
        ModelWeights {
            patch_embed_weight: Tensor::zeros(vec![cfg.patch_dim(), e]),
            patch_embed_bias: Tensor::zeros(vec![e]),
            cls_token: Tensor::zeros(vec![e]),
            pos_embed: Tensor::zeros(vec![cfg.num_tokens(), e]),
            blocks: (0..cfg.depth).map(|_| EncoderBlock::zeros(cfg)).collect(),
            norm_weight: Tensor::filled(vec![e], 1.0),
            norm_bias: Tensor::zeros(vec![e]),
            head_weight: Tensor::zeros(vec![cfg.num_classes, e]),
            head_bias: Tensor::zeros(vec![cfg.num_classes]),
        }
    }

    /// `(name, tensor)` pairs in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("patch_embed.weight".to_string(), &self.patch_embed_weight),
            ("patch_embed.bias".to_string(), &self.patch_embed_bias),
            ("cls_token".to_string(), &self.cls_token),
            ("pos_embed".to_string(), &self.pos_embed),
        ];
        for (i, block) in self.blocks.iter().enumerate() {
            for (suffix, t) in BLOCK_TENSORS.iter().zip(block.tensors()) {
                out.push((format!("blocks.{i}.{suffix}"), t));
            }
        }
        out.push(("norm.weight".to_string(), &self.norm_weight));
        out.push(("norm.bias".to_string(), &self.norm_bias));
        out.push(("head.weight".to_string(), &self.head_weight));
        out.push(("head.bias".to_string(), &self.head_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.patch_embed_weight,
            &mut self.patch_embed_bias,
            &mut self.cls_token,
            &mut self.pos_embed,
        ];
        for block in &mut self.blocks {
            out.extend(block.tensors_mut());
        }
        out.extend([
            &mut self.norm_weight,
            &mut self.norm_bias,
            &mut self.head_weight,
            &mut self.head_bias,
        ]);
        out
    }

    pub fn element_count(&self) -> u64 {
        self.named_tensors().iter().map(|(_, t)| t.len() as u64).sum()
    }

    /// Checks every tensor's shape against `cfg` and that all values are
    /// finite.
    pub fn validate(&self, cfg: &ViTConfig) -> Result<()> {
        cfg.validate()?;
        if self.blocks.len() != cfg.depth {
            return Err(Error::Shape(format!(
                "model has {} blocks, config says {}",
                self.blocks.len(),
                cfg.depth
            )));
        }
        let expected = tensor_specs(cfg);
        for ((name, t), (_, shape)) in self.named_tensors().into_iter().zip(&expected) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if let Some(index) = t.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { name, index });
            }
        }
        Ok(())
    }
}

/// `(name, shape)` for every tensor of `cfg`, in canonical order.
pub fn tensor_specs(cfg: &ViTConfig) -> Vec<(String, Vec<usize>)> {
    ModelWeights::zeros(cfg)
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect()
}

/// Deterministic weights for fixtures and tests.
///
/// One SplitMix64 stream seeded with `seed` fills every tensor in canonical
/// order with `u = (2 * next_f64() - 1) * 0.02`. Layer-norm scales receive
/// `1 + u`; everything else receives `u`.
pub fn random_init(cfg: &ViTConfig, seed: u64) -> ModelWeights {
    let mut model = ModelWeights::zeros(cfg);
    let mut rng = SplitMix64::new(seed);
    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, tensor) in names.iter().zip(model.tensors_mut()) {
        let offset = if is_norm_scale(name) { 1.0 } else { 0.0 };
        for v in tensor.data_mut() {
            *v = (offset + (2.0 * rng.next_f64() - 1.0) * INIT_SCALE) as f32;
        }
    }
    model
}

fn is_norm_scale(name: &str) -> bool {
    name.ends_with("ln1.weight") || name.ends_with("ln2.weight") || name == "norm.weight"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::config::param_count;

    #[test]
    fn specs_sum_to_param_count() {
        for cfg in [ViTConfig::toy(), ViTConfig::vit_s16(1000), ViTConfig::vit_s16(4)] {
            let total: u64 = tensor_specs(&cfg)
                .iter()
                .map(|(_, s)| s.iter().product::<usize>() as u64)
                .sum();
            assert_eq!(total, param_count(&cfg));
        }
    }

    #[test]
    fn canonical_names() {
        let specs = tensor_specs(&ViTConfig::toy());
        assert_eq!(specs.len(), 4 + 2 * 16 + 4);
        assert_eq!(specs[0], ("patch_embed.weight".to_string(), vec![768, 64]));
        assert_eq!(specs[3], ("pos_embed".to_string(), vec![17, 64]));
        assert_eq!(specs[4].0, "blocks.0.ln1.weight");
        assert_eq!(specs.last().unwrap(), &("head.bias".to_string(), vec![4]));
    }

    #[test]
    fn random_init_is_deterministic_and_bounded() {
        let cfg = ViTConfig::toy();
        let a = random_init(&cfg, 7);
        assert_eq!(a, random_init(&cfg, 7));
        a.validate(&cfg).unwrap();
        for (name, t) in a.named_tensors() {
            let center = if is_norm_scale(&name) { 1.0 } else { 0.0 };
            assert!(t.data().iter().all(|v| (v - center).abs() <= 0.02 + 1e-7), "{name}");
        }
    }

    #[test]
    fn validate_flags_non_finite() {
        let cfg = ViTConfig::toy();
        let mut m = random_init(&cfg, 1);
        m.blocks[1].fc2_bias.data_mut()[3] = f32::NAN;
        match m.validate(&cfg) {
            Err(Error::NonFinite { name, index }) => {
                assert_eq!(name, "blocks.1.mlp.fc2.bias");
                assert_eq!(index, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validate_flags_wrong_depth() {
        let cfg = ViTConfig::toy();
        let mut m = random_init(&cfg, 1);
        m.blocks.pop();
        assert!(matches!(m.validate(&cfg), Err(Error::Shape(_))));
    }
}
