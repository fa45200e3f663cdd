//! Grayscale image emission for complex maps: binary PGM (P5) and 8-bit PNG.
//!
//! Magnitude images are min–max scaled to 0..255 (an all-zero map stays
//! black, a nonzero constant map renders mid-gray); phase images wrap the
//! argument to [0, 2π) on a cyclic 0..255 scale. Volumes render their
//! central transverse slice. Output bytes are a pure function of the input
//! values, so fixed fixtures produce golden files.

use std::io::Write as _;
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageMode {
    Magnitude,
    Phase,
}

impl ImageMode {
    /// Parse a CLI-style mode name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "magnitude" | "mag" => Ok(ImageMode::Magnitude),
            "phase" => Ok(ImageMode::Phase),
            other => Err(Error::InvalidParameter(format!(
                "unknown image mode '{other}' (expected magnitude|phase)"
            ))),
        }
    }
}

/// Render the central transverse slice to 8-bit grayscale.
/// Returns (width, height, row-major pixel bytes); width spans the second
/// array axis, height the first.
pub fn image_pixels(map: &Array3<C64>, mode: ImageMode) -> (usize, usize, Vec<u8>) {
    let (h, w, n3) = map.dim();
    let slice = map.index_axis(ndarray::Axis(2), n3 / 2);
    let mut px = vec![0u8; w * h];
    match mode {
        ImageMode::Magnitude => {
            let mags: Vec<f64> = slice.iter().map(|v| v.norm()).collect();
            let lo = mags.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = mags.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                for (p, m) in px.iter_mut().zip(&mags) {
                    *p = ((m - lo) / (hi - lo) * 255.0).round() as u8;
                }
            } else if hi > 0.0 {
                px.fill(128);
            } // all-zero map stays black
        }
        ImageMode::Phase => {
            for (p, v) in px.iter_mut().zip(slice.iter()) {
                let mut theta = v.arg();
                if theta < 0.0 {
                    theta += 2.0 * std::f64::consts::PI;
                }
                *p = (theta / (2.0 * std::f64::consts::PI) * 255.0).round() as u8;
            }
        }
    }
    (w, h, px)
}

/// Binary PGM (P5) bytes for the rendered map.
pub fn pgm_bytes(map: &Array3<C64>, mode: ImageMode) -> Vec<u8> {
    let (w, h, px) = image_pixels(map, mode);
    let mut out = Vec::with_capacity(px.len() + 32);
    write!(out, "P5\n{w} {h}\n255\n").expect("writing to a Vec cannot fail");
    out.extend_from_slice(&px);
    out
}

/// Write the map as PGM or PNG, chosen by the path's extension
/// (`.png` → PNG, anything else → PGM).
pub fn emit_image(map: &Array3<C64>, path: impl AsRef<Path>, mode: ImageMode) -> Result<()> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let (w, h, px) = image_pixels(map, mode);
        image::save_buffer_with_format(
            path,
            &px,
            w as u32,
            h as u32,
            image::ColorType::L8,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    } else {
        std::fs::write(path, pgm_bytes(map, mode))?;
    }
    Ok(())
}
