//! Image files (binary PPM, plus PNG input) and bilinear cropping.
//!
//! Images are `(H, W, 3)` tensors holding raw 0..=255 intensities.

use std::path::Path;

use super::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::zoo::INPUT_SIZE;

fn image_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut pos = 0;
    if header_token(bytes, &mut pos) != Some(b"P6") {
        return Err(image_err(path, "not a binary PPM (P6) file"));
    }
    let mut num = |what: &str| -> Result<usize> {
        header_token(bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok()?.parse().ok())
            .ok_or_else(|| image_err(path, format!("bad {what} in header")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(image_err(path, format!("maxval {maxval} unsupported (need 255)")));
    }
    if w == 0 || h == 0 {
        return Err(image_err(path, "empty image"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = w * h * 3;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| image_err(path, format!("raster truncated: need {need} bytes")))?;
    Tensor::from_vec(&[h, w, 3], raster.iter().map(|&b| f32::from(b)).collect())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// PPM or PNG, chosen by content; PNG alpha is dropped and grey is expanded
/// to RGB.
pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Tensor> {
    if !bytes.starts_with(PNG_SIGNATURE) {
        return decode_ppm(bytes, path);
    }
    let rgb = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = rgb.dimensions();
    Tensor::from_vec(
        &[h as usize, w as usize, 3],
        rgb.into_raw().into_iter().map(f32::from).collect(),
    )
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, path)
}

/// Values are rounded and clamped to 0..=255.
pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let &[h, w, 3] = img.shape() else {
        return Err(Error::Shape(format!("expected (H, W, 3) image, got {:?}", img.shape())));
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode_ppm(img)?).map_err(|e| Error::io(path, e))
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Bilinear sample at fractional `(y, x)`, clamped to the image edge.
pub(crate) fn sample_bilinear(src: &[f32], h: usize, w: usize, y: f64, x: f64, out: &mut [f32; 3]) {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ty, tx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
    let px = |yy: usize, xx: usize, c: usize| src[(yy * w + xx) * 3 + c];
    for (c, o) in out.iter_mut().enumerate() {
        let top = lerp(px(y0, x0, c), px(y0, x1, c), tx);
        let bottom = lerp(px(y1, x0, c), px(y1, x1, c), tx);
        *o = lerp(top, bottom, ty);
    }
}

/// Corner-aligned bilinear resize of a `(H, W, 3)` image: output corners
/// sample input corners exactly, and equal sizes give a bit-exact copy.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let &[h, w, 3] = img.shape() else {
        return Err(Error::Shape(format!("expected (H, W, 3) image, got {:?}", img.shape())));
    };
    let coord = |i: usize, src: usize, dst: usize| -> f64 {
        if dst == 1 {
            0.0
        } else {
            (i * (src - 1)) as f64 / (dst - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(out_h * out_w * 3);
    let mut px = [0f32; 3];
    for oy in 0..out_h {
        let y = coord(oy, h, out_h);
        for ox in 0..out_w {
            sample_bilinear(img.data(), h, w, y, coord(ox, w, out_w), &mut px);
            out.extend_from_slice(&px);
        }
    }
    Tensor::from_vec(&[out_h, out_w, 3], out)
}

/// Clamp the box to the frame, crop the covered pixels and resize the crop
/// to 99×99.
pub fn crop_and_resize(frame: &Tensor, bbox: &BBox) -> Result<Tensor> {
    let &[h, w, 3] = frame.shape() else {
        return Err(Error::Shape(format!(
            "expected (H, W, 3) frame, got {:?}",
            frame.shape()
        )));
    };
    let clamp = |v: f64, hi: usize| v.clamp(0.0, hi as f64);
    let x0 = clamp(bbox.x.floor(), w) as usize;
    let y0 = clamp(bbox.y.floor(), h) as usize;
    let x1 = clamp((bbox.x + bbox.width).ceil(), w) as usize;
    let y1 = clamp((bbox.y + bbox.height).ceil(), h) as usize;
    if x1 <= x0 || y1 <= y0 || !(bbox.width > 0.0 && bbox.height > 0.0) {
        return Err(Error::Crop(format!(
            "box {bbox:?} is smaller than 1x1 after clamping to {w}x{h}"
        )));
    }
    let (ch, cw) = (y1 - y0, x1 - x0);
    let mut crop = Vec::with_capacity(ch * cw * 3);
    for y in y0..y1 {
        let row = (y * w + x0) * 3;
        crop.extend_from_slice(&frame.data()[row..row + cw * 3]);
    }
    resize_bilinear(&Tensor::from_vec(&[ch, cw, 3], crop)?, INPUT_SIZE, INPUT_SIZE)
}
