//! PNG input/output for 8-bit RGB rasters.

use std::io::Cursor;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::tensor::Image;

/// Decodes a PNG. Grayscale is promoted to RGB; alpha and 16-bit samples
/// are rejected.
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let decoded = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let rgb = match decoded.color() {
        ColorType::Rgb8 => decoded.into_rgb8(),
        ColorType::L8 => DynamicImage::ImageLuma8(decoded.into_luma8()).into_rgb8(),
        ColorType::La8 | ColorType::Rgba8 | ColorType::La16 | ColorType::Rgba16 => {
            return Err(Error::UnsupportedImage(
                "images with an alpha channel are not supported; flatten to RGB first".into(),
            ))
        }
        other => {
            return Err(Error::UnsupportedImage(format!(
                "unsupported color type {other:?}; expected 8-bit RGB or grayscale"
            )))
        }
    };
    let (w, h) = rgb.dimensions();
    Image::new(h as usize, w as usize, 3, rgb.into_raw())
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    if img.channels() != 3 {
        return Err(Error::UnsupportedImage(format!(
            "can only write RGB images, got {} channels",
            img.channels()
        )));
    }
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .ok_or_else(|| Error::Shape("raster size does not match dimensions".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

pub fn write_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
