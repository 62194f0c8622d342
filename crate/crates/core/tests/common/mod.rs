//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls into the library's algorithms; it
//! only uses the public data types to exchange inputs and outputs.
#![allow(dead_code)]

use cloakvit_core::{Image, ModelWeights, ViTConfig};

/// SplitMix64 transcribed from the published reference code.
pub struct RefSplitMix64 {
    x: u64,
}

impl RefSplitMix64 {
    pub fn new(seed: u64) -> Self {
        RefSplitMix64 { x: seed }
    }

    pub fn next(&mut self) -> u64 {
        self.x = self.x.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }
}

/// Fisher-Yates with 128-bit rejection arithmetic.
pub fn ref_permutation(seed: u64, n: usize) -> Vec<usize> {
    let mut rng = RefSplitMix64::new(seed);
    let mut a: Vec<usize> = (0..n).collect();
    let mut i = n - 1;
    while i >= 1 {
        let bound = (i + 1) as u128;
        let limit = (1u128 << 64) - ((1u128 << 64) % bound);
        let r = loop {
            let r = rng.next() as u128;
            if r < limit {
                break r;
            }
        };
        let j = (r % bound) as usize;
        a.swap(i, j);
        i -= 1;
    }
    a
}

/// Deterministic test raster.
pub fn fixture_image(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, 3, |y, x, c| ((y * 8 + x * 3 + c * 85 + (x * y) % 7) % 256) as u8).unwrap()
}

pub fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = RefSplitMix64::new(seed);
    Image::from_fn(h, w, 3, |_, _, _| (rng.next() >> 56) as u8).unwrap()
}

/// Smooth synthetic image with local structure, closer to photographs
/// than uniform noise.
pub fn natural_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = RefSplitMix64::new(seed);
    let mut centers = Vec::new();
    for _ in 0..6 {
        let cy = (rng.next() % h as u64) as f64;
        let cx = (rng.next() % w as u64) as f64;
        let r = 4.0 + (rng.next() % (h as u64 / 2 + 1)) as f64;
        let col = [(rng.next() % 256) as f64, (rng.next() % 256) as f64, (rng.next() % 256) as f64];
        centers.push((cy, cx, r, col));
    }
    Image::from_fn(h, w, 3, |y, x, c| {
        let mut v = 40.0 + 0.6 * (y as f64) + 0.3 * (x as f64);
        for (cy, cx, r, col) in &centers {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            v += (col[c] - v) * (-d2 / (2.0 * r * r)).exp();
        }
        v.clamp(0.0, 255.0) as u8
    })
    .unwrap()
}

pub fn read_hex_fixture(name: &str) -> Vec<u8> {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    (0..text.trim().len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&text.trim()[i..i + 2], 16).unwrap())
        .collect()
}

/// Straight-line scalar ViT forward in `f64` throughout. Reads weights by
/// field, recomputes normalization and patch flattening from the raw image.
pub fn ref_forward(m: &ModelWeights, cfg: &ViTConfig, img: &Image) -> Vec<f64> {
    let p = cfg.patch_size;
    let ch = cfg.channels;
    let e = cfg.embed_dim;
    let side = cfg.image_size / p;
    let n = side * side;
    let t = n + 1;
    let d = p * p * ch;
    let w = |tensor: &cloakvit_core::Tensor, i: usize| tensor.data()[i] as f64;

    // tokens[t][e]
    let mut x = vec![vec![0f64; e]; t];
    for k in 0..e {
        x[0][k] = w(&m.cls_token, k) + w(&m.pos_embed, k);
    }
    for by in 0..side {
        for bx in 0..side {
            let tok = 1 + by * side + bx;
            for k in 0..e {
                let mut s = w(&m.patch_embed_bias, k);
                for r in 0..p {
                    for c in 0..p {
                        for q in 0..ch {
                            let raw = img.get(by * p + r, bx * p + c, q) as f64;
                            let val = (raw / 255.0 - cfg.norm.mean[q] as f64) / cfg.norm.std[q] as f64;
                            let row = (r * p + c) * ch + q;
                            s += val * w(&m.patch_embed_weight, row * e + k);
                        }
                    }
                }
                x[tok][k] = s + w(&m.pos_embed, tok * e + k);
            }
        }
    }
    let _ = d;

    let ln = |v: &[f64], g: &cloakvit_core::Tensor, b: &cloakvit_core::Tensor| -> Vec<f64> {
        let mu = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|a| (a - mu) * (a - mu)).sum::<f64>() / v.len() as f64;
        v.iter()
            .enumerate()
            .map(|(i, a)| (a - mu) / (var + 1e-6).sqrt() * g.data()[i] as f64 + b.data()[i] as f64)
            .collect()
    };
    let lin = |v: &[f64], wt: &cloakvit_core::Tensor, b: &cloakvit_core::Tensor, out: usize| -> Vec<f64> {
        (0..out)
            .map(|o| b.data()[o] as f64 + (0..v.len()).map(|i| v[i] * wt.data()[i * out + o] as f64).sum::<f64>())
            .collect()
    };

    let heads = cfg.heads;
    let hd = e / heads;
    let hidden = (e as f64 * cfg.mlp_ratio) as usize;
    for blk in &m.blocks {
        let h: Vec<Vec<f64>> = x.iter().map(|v| ln(v, &blk.ln1_weight, &blk.ln1_bias)).collect();
        let q: Vec<_> = h.iter().map(|v| lin(v, &blk.q_weight, &blk.q_bias, e)).collect();
        let k: Vec<_> = h.iter().map(|v| lin(v, &blk.k_weight, &blk.k_bias, e)).collect();
        let vv: Vec<_> = h.iter().map(|v| lin(v, &blk.v_weight, &blk.v_bias, e)).collect();
        let mut att = vec![vec![0f64; e]; t];
        for hh in 0..heads {
            for i in 0..t {
                let mut s: Vec<f64> = (0..t)
                    .map(|j| (0..hd).map(|z| q[i][hh * hd + z] * k[j][hh * hd + z]).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let mx = s.iter().cloned().fold(f64::MIN, f64::max);
                let tot: f64 = s.iter_mut().map(|a| {
                    *a = (*a - mx).exp();
                    *a
                }).sum();
                for z in 0..hd {
                    att[i][hh * hd + z] = (0..t).map(|j| s[j] / tot * vv[j][hh * hd + z]).sum();
                }
            }
        }
        for i in 0..t {
            let o = lin(&att[i], &blk.proj_weight, &blk.proj_bias, e);
            for z in 0..e {
                x[i][z] += o[z];
            }
        }
        for i in 0..t {
            let h2 = ln(&x[i], &blk.ln2_weight, &blk.ln2_bias);
            let mut a = lin(&h2, &blk.fc1_weight, &blk.fc1_bias, hidden);
            for v in a.iter_mut() {
                *v = 0.5 * *v * (1.0 + statrs::function::erf::erf(*v / 2f64.sqrt()));
            }
            let o = lin(&a, &blk.fc2_weight, &blk.fc2_bias, e);
            for z in 0..e {
                x[i][z] += o[z];
            }
        }
    }
    let cls = ln(&x[0], &m.norm_weight, &m.norm_bias);
    (0..cfg.num_classes)
        .map(|c| m.head_bias.data()[c] as f64 + (0..e).map(|z| cls[z] * m.head_weight.data()[c * e + z] as f64).sum::<f64>())
        .collect()
}

/// `log2(n!)` by direct summation of logarithms.
pub fn ref_log2_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).log2()).sum()
}
