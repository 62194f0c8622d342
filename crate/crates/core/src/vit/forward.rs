//! ViT forward pass.
//!
//! Pre-norm encoder blocks, learned 1-D position embeddings, exact (erf)
//! GELU and a single class-token head. Every reduction (dot products,
//! layer-norm statistics, softmax sums) accumulates in `f64` and rounds to
//! `f32` only when an activation is stored.

use crate::error::{Error, Result};
use crate::tensor::{extract_patches, normalization_table, Image, Tensor};

use super::config::{ViTConfig, LAYER_NORM_EPS};
use super::weights::{EncoderBlock, ModelWeights};

/// Classifies `img`, returning one logit per class.
pub fn forward(model: &ModelWeights, cfg: &ViTConfig, img: &Image) -> Result<Vec<f32>> {
    model.validate(cfg)?;
    if img.height() != cfg.image_size || img.width() != cfg.image_size || img.channels() != cfg.channels {
        return Err(Error::Shape(format!(
            "image is {}x{}x{}, model expects {}x{}x{}",
            img.height(),
            img.width(),
            img.channels(),
            cfg.image_size,
            cfg.image_size,
            cfg.channels
        )));
    }
    let patches = normalized_patches(img, cfg)?;
    let tokens = embed_patches(model, cfg, &patches)?;
    Ok(encode_tokens(model, cfg, tokens))
}

/// Normalized patches `[N, P*P*C]`. Normalization is pointwise, so patching
/// first and normalizing second gives the same tensor as the reverse.
pub fn normalized_patches(img: &Image, cfg: &ViTConfig) -> Result<Tensor> {
    cfg.norm.validate(img.channels())?;
    let table = normalization_table(&cfg.norm);
    let (mut patches, _) = extract_patches(img, cfg.patch_size)?;
    let c = img.channels();
    for (i, v) in patches.data_mut().iter_mut().enumerate() {
        *v = table[i % c][*v as usize];
    }
    Ok(patches)
}

/// Token sequence `[N+1, E]`: class token followed by embedded patches, with
/// position embeddings added.
pub fn embed_patches(model: &ModelWeights, cfg: &ViTConfig, patches: &Tensor) -> Result<Vec<f32>> {
    let (n, d, e) = (cfg.num_patches(), cfg.patch_dim(), cfg.embed_dim);
    if patches.shape() != [n, d] {
        return Err(Error::Shape(format!(
            "patch tensor {:?} does not match expected [{n}, {d}]",
            patches.shape()
        )));
    }
    let embedded = linear(
        patches.data(),
        n,
        model.patch_embed_weight.data(),
        model.patch_embed_bias.data(),
        d,
        e,
    );
    let pos = model.pos_embed.data();
    let mut tokens = Vec::with_capacity((n + 1) * e);
    tokens.extend(model.cls_token.data().iter().zip(&pos[..e]).map(|(c, p)| c + p));
    tokens.extend(embedded.iter().zip(&pos[e..]).map(|(x, p)| x + p));
    Ok(tokens)
}

/// Runs the encoder stack on `tokens` (`[N+1, E]`) and returns the head's
/// logits for the class token.
pub fn encode_tokens(model: &ModelWeights, cfg: &ViTConfig, mut tokens: Vec<f32>) -> Vec<f32> {
    let rows = tokens.len() / cfg.embed_dim;
    for block in &model.blocks {
        encoder_block(block, cfg, &mut tokens, rows);
    }
    let e = cfg.embed_dim;
    let cls = layer_norm(&tokens[..e], 1, e, model.norm_weight.data(), model.norm_bias.data());
    head(&cls, model.head_weight.data(), model.head_bias.data(), cfg.num_classes)
}

fn encoder_block(block: &EncoderBlock, cfg: &ViTConfig, x: &mut [f32], rows: usize) {
    let e = cfg.embed_dim;
    let normed = layer_norm(x, rows, e, block.ln1_weight.data(), block.ln1_bias.data());
    let attn = self_attention(block, cfg, &normed, rows);
    for (xi, a) in x.iter_mut().zip(&attn) {
        *xi += a;
    }

    let h = cfg.mlp_hidden();
    let normed = layer_norm(x, rows, e, block.ln2_weight.data(), block.ln2_bias.data());
    let mut hidden = linear(&normed, rows, block.fc1_weight.data(), block.fc1_bias.data(), e, h);
    for v in &mut hidden {
        *v = gelu(*v as f64) as f32;
    }
    let out = linear(&hidden, rows, block.fc2_weight.data(), block.fc2_bias.data(), h, e);
    for (xi, o) in x.iter_mut().zip(&out) {
        *xi += o;
    }
}

fn self_attention(block: &EncoderBlock, cfg: &ViTConfig, x: &[f32], rows: usize) -> Vec<f32> {
    let e = cfg.embed_dim;
    let q = linear(x, rows, block.q_weight.data(), block.q_bias.data(), e, e);
    let k = linear(x, rows, block.k_weight.data(), block.k_bias.data(), e, e);
    let v = linear(x, rows, block.v_weight.data(), block.v_bias.data(), e, e);

    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut mixed = vec![0f32; rows * e];
    let mut scores = vec![0f64; rows];
    let mut acc = vec![0f64; hd];
    for head in 0..cfg.heads {
        let off = head * hd;
        for i in 0..rows {
            let qi = &q[i * e + off..i * e + off + hd];
            for (j, s) in scores.iter_mut().enumerate() {
                let kj = &k[j * e + off..j * e + off + hd];
                *s = dot(qi, kj) * scale;
            }
            softmax_in_place(&mut scores);
            acc.fill(0.0);
            for (j, &p) in scores.iter().enumerate() {
                let vj = &v[j * e + off..j * e + off + hd];
                for (a, &vv) in acc.iter_mut().zip(vj) {
                    *a += p * vv as f64;
                }
            }
            for (m, a) in mixed[i * e + off..i * e + off + hd].iter_mut().zip(&acc) {
                *m = *a as f32;
            }
        }
    }
    linear(&mixed, rows, block.proj_weight.data(), block.proj_bias.data(), e, e)
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// `y = x W + b` for `rows` input rows, `W` stored `[inp, out]`.
pub fn linear(x: &[f32], rows: usize, w: &[f32], b: &[f32], inp: usize, out: usize) -> Vec<f32> {
    debug_assert_eq!(x.len(), rows * inp);
    debug_assert_eq!(w.len(), inp * out);
    let mut y = Vec::with_capacity(rows * out);
    let mut acc = vec![0f64; out];
    for r in 0..rows {
        acc.fill(0.0);
        for (&xi, w_row) in x[r * inp..(r + 1) * inp].iter().zip(w.chunks_exact(out)) {
            let xi = xi as f64;
            for (a, &wv) in acc.iter_mut().zip(w_row) {
                *a += xi * wv as f64;
            }
        }
        y.extend(acc.iter().zip(b).map(|(&a, &bv)| (a + bv as f64) as f32));
    }
    y
}

/// Layer norm over the last dimension of a `[rows, dim]` buffer.
pub fn layer_norm(x: &[f32], rows: usize, dim: usize, gamma: &[f32], beta: &[f32]) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * dim);
    for row in x.chunks_exact(dim).take(rows) {
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / dim as f64;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / dim as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        out.extend(
            row.iter()
                .zip(gamma)
                .zip(beta)
                .map(|((&v, &g), &b)| ((v as f64 - mean) * inv * g as f64 + b as f64) as f32),
        );
    }
    out
}

fn head(x: &[f32], w: &[f32], b: &[f32], classes: usize) -> Vec<f32> {
    (0..classes)
        .map(|c| (dot(x, &w[c * x.len()..(c + 1) * x.len()]) + b[c] as f64) as f32)
        .collect()
}

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn argmax(logits: &[f32]) -> usize {
    logits
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}
