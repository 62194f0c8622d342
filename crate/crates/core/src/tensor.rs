//! Raster and tensor primitives shared by encryption and inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Order in which a block's samples are flattened into a patch vector:
/// row-major over the block, channel fastest. The patch-embedding weight
/// rows are indexed in the same order.
pub const PATCH_FLATTEN_ORDER: [&str; 3] = ["row", "col", "channel"];

/// Flat index of sample `(row, col, channel)` inside a flattened patch.
#[inline]
pub const fn patch_index(row: usize, col: usize, channel: usize, block: usize, channels: usize) -> usize {
    (row * block + col) * channels + channel
}

/// 8-bit raster, height x width x channel, channel fastest.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

/// Dense row-major `f32` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }
}

/// Block layout of an image: `rows x cols` blocks, each flattened to
/// `patch_dim` samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch_dim: usize,
}

impl PatchGrid {
    pub fn for_dims(height: usize, width: usize, channels: usize, block: usize) -> Result<Self> {
        if block == 0 {
            return Err(Error::Shape("block size must be at least 1".into()));
        }
        if height % block != 0 || width % block != 0 {
            return Err(Error::Shape(format!(
                "image {height}x{width} is not divisible into {block}x{block} blocks"
            )));
        }
        Ok(PatchGrid {
            rows: height / block,
            cols: width / block,
            patch_dim: block * block * channels,
        })
    }

    pub fn num_patches(&self) -> usize {
        self.rows * self.cols
    }
}

/// Splits `img` into non-overlapping `block x block` patches in row-major
/// block order. Samples are copied verbatim, so patches of an 8-bit image
/// hold exact integers.
pub fn extract_patches(img: &Image, block: usize) -> Result<(Tensor, PatchGrid)> {
    let grid = PatchGrid::for_dims(img.height, img.width, img.channels, block)?;
    let data = gather_blocks(img, block, &grid, |v| v as f32);
    Ok((
        Tensor {
            shape: vec![grid.num_patches(), grid.patch_dim],
            data,
        },
        grid,
    ))
}

/// Byte-level variant of [`extract_patches`], used by the crypto path.
pub(crate) fn extract_patch_bytes(img: &Image, block: usize) -> Result<(Vec<u8>, PatchGrid)> {
    let grid = PatchGrid::for_dims(img.height, img.width, img.channels, block)?;
    Ok((gather_blocks(img, block, &grid, |v| v), grid))
}

fn gather_blocks<T>(img: &Image, block: usize, grid: &PatchGrid, conv: impl Fn(u8) -> T) -> Vec<T> {
    let c = img.channels;
    let row_len = block * c;
    let mut out = Vec::with_capacity(img.data.len());
    for br in 0..grid.rows {
        for bc in 0..grid.cols {
            for r in 0..block {
                let start = ((br * block + r) * img.width + bc * block) * c;
                out.extend(img.data[start..start + row_len].iter().map(|&v| conv(v)));
            }
        }
    }
    out
}

/// Exact inverse of [`extract_patches`]. Patch values must be integers in
/// `0..=255`.
pub fn assemble_patches(patches: &Tensor, grid: PatchGrid, block: usize, channels: usize) -> Result<Image> {
    if patches.shape.len() != 2 || patches.shape[0] != grid.num_patches() || patches.shape[1] != grid.patch_dim {
        return Err(Error::Shape(format!(
            "patch tensor {:?} does not match grid {}x{} with patch dim {}",
            patches.shape, grid.rows, grid.cols, grid.patch_dim
        )));
    }
    let bytes = patches
        .data
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(Error::Shape(format!("patch value {v} is not an 8-bit sample")))
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    assemble_patch_bytes(&bytes, grid, block, channels)
}

pub(crate) fn assemble_patch_bytes(patches: &[u8], grid: PatchGrid, block: usize, channels: usize) -> Result<Image> {
    if grid.num_patches() == 0 {
        return Err(Error::Shape("cannot assemble an image from zero patches".into()));
    }
    if block == 0 || grid.patch_dim != block * block * channels {
        return Err(Error::Shape(format!(
            "patch dim {} does not equal {block}*{block}*{channels}",
            grid.patch_dim
        )));
    }
    if patches.len() != grid.num_patches() * grid.patch_dim {
        return Err(Error::LengthMismatch {
            expected: grid.num_patches() * grid.patch_dim,
            actual: patches.len(),
        });
    }
    let (height, width) = (grid.rows * block, grid.cols * block);
    let row_len = block * channels;
    let mut data = vec![0u8; height * width * channels];
    for (p, patch) in patches.chunks_exact(grid.patch_dim).enumerate() {
        let (br, bc) = (p / grid.cols, p % grid.cols);
        for (r, src) in patch.chunks_exact(row_len).enumerate() {
            let start = ((br * block + r) * width + bc * block) * channels;
            data[start..start + row_len].copy_from_slice(src);
        }
    }
    Image::new(height, width, channels, data)
}

/// Per-channel affine normalization `(sample / 255 - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConfig {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormalizationConfig {
    pub fn uniform(channels: usize, mean: f32, std: f32) -> Self {
        NormalizationConfig {
            mean: vec![mean; channels],
            std: vec![std; channels],
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::Config(format!(
                "normalization needs {channels} means and stds, got {} and {}",
                self.mean.len(),
                self.std.len()
            )));
        }
        if let Some(s) = self.std.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Config(format!("normalization std must be positive, got {s}")));
        }
        if let Some(m) = self.mean.iter().find(|m| !m.is_finite()) {
            return Err(Error::Config(format!("normalization mean must be finite, got {m}")));
        }
        Ok(())
    }

    pub fn is_channel_uniform(&self) -> bool {
        let same = |v: &[f32]| v.windows(2).all(|w| w[0].to_bits() == w[1].to_bits());
        same(&self.mean) && same(&self.std)
    }
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self::uniform(3, 0.5, 0.5)
    }
}

/// Normalizes every sample, keeping the image's `H x W x C` layout.
pub fn normalize(img: &Image, cfg: &NormalizationConfig) -> Result<Tensor> {
    cfg.validate(img.channels)?;
    let table = normalization_table(cfg);
    let c = img.channels;
    let data = img
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| table[i % c][v as usize])
        .collect();
    Ok(Tensor {
        shape: vec![img.height, img.width, img.channels],
        data,
    })
}

/// Lookup table `[channel][sample] -> normalized value`.
pub(crate) fn normalization_table(cfg: &NormalizationConfig) -> Vec<[f32; 256]> {
    cfg.mean
        .iter()
        .zip(&cfg.std)
        .map(|(&m, &s)| {
            let mut t = [0f32; 256];
            for (v, slot) in t.iter_mut().enumerate() {
                *slot = ((v as f64 / 255.0 - m as f64) / s as f64) as f32;
            }
            t
        })
        .collect()
}
