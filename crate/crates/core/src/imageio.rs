//! 8-bit grayscale PNG export.

use std::path::Path;

use base64::Engine;
use daa_autograd::Real;

use crate::error::{DaaError, Result};

/// Map `v` from `[lo, hi]` to a byte, clamping outside the range.
pub fn to_byte(v: Real, lo: Real, hi: Real) -> u8 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (t * 255.0).round() as u8
}

/// Encode row-major `values` (`height * width`) as a grayscale PNG, mapping
/// `[lo, hi]` to `[0, 255]`.
pub fn encode_gray(values: &[Real], height: usize, width: usize, lo: Real, hi: Real) -> Result<Vec<u8>> {
    if values.len() != height * width || height == 0 || width == 0 {
        return Err(DaaError::ShapeMismatch(format!(
            "{} values for a {height}x{width} image",
            values.len()
        )));
    }
    let bytes: Vec<u8> = values.iter().map(|&v| to_byte(v, lo, hi)).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| DaaError::InvalidInput(format!("png: {e}")))?;
        w.write_image_data(&bytes).map_err(|e| DaaError::InvalidInput(format!("png: {e}")))?;
    }
    Ok(out)
}

/// Image in `[-1, 1]`.
pub fn image_png(values: &[Real], height: usize, width: usize) -> Result<Vec<u8>> {
    encode_gray(values, height, width, -1.0, 1.0)
}

/// Map or mask in `[0, 1]`.
pub fn unit_png(values: &[Real], height: usize, width: usize) -> Result<Vec<u8>> {
    encode_gray(values, height, width, 0.0, 1.0)
}

pub fn base64_png(png: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(png)
}

pub fn save_png(png: &[u8], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, png).map_err(|e| DaaError::io(path, e))
}

/// Decode an 8-bit grayscale PNG into bytes and dimensions.
pub fn decode_gray(png_bytes: &[u8]) -> Result<(Vec<u8>, usize, usize)> {
    let dec = png::Decoder::new(std::io::Cursor::new(png_bytes));
    let mut reader = dec.read_info().map_err(|e| DaaError::format(0, format!("png: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| DaaError::format(0, format!("png: {e}")))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(DaaError::format(0, "expected 8-bit grayscale"));
    }
    buf.truncate(info.buffer_size());
    Ok((buf, info.height as usize, info.width as usize))
}
