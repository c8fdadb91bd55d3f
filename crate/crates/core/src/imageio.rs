//! 8-bit PNG ingestion and emission.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{concat, Tensor4};

fn input_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Input {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn decode_png(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| input_error(path, e.to_string()))?
        .with_guessed_format()
        .map_err(|e| input_error(path, e.to_string()))?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(input_error(path, "not a PNG file"));
    }
    let img = reader
        .decode()
        .map_err(|e| input_error(path, format!("undecodable PNG: {e}")))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(input_error(path, "image has zero size"));
    }
    Ok(img)
}

/// Reads an 8-bit colour PNG into a `(1, 3, H, W)` tensor in `[0, 1]`.
pub fn load_rgb(path: &Path) -> Result<Tensor4> {
    let img = decode_png(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let rgb = match img {
        DynamicImage::ImageRgb8(buf) => buf,
        DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        other => {
            return Err(input_error(
                path,
                format!("expected an 8-bit RGB PNG, got {:?}", other.color()),
            ))
        }
    };
    let raw = rgb.as_raw();
    Tensor4::from_fn([1, 3, h, w], |_, c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0)
}

/// Reads an 8-bit grayscale PNG, or a colour PNG collapsed by channel mean,
/// into a `(1, 1, H, W)` tensor in `[0, 1]`.
pub fn load_ir(path: &Path) -> Result<Tensor4> {
    let img = decode_png(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            let raw = buf.as_raw();
            Tensor4::from_fn([1, 1, h, w], |_, _, y, x| raw[y * w + x] as f32 / 255.0)
        }
        DynamicImage::ImageLumaA8(_) => {
            let buf = img.to_luma8();
            let raw = buf.as_raw();
            Tensor4::from_fn([1, 1, h, w], |_, _, y, x| raw[y * w + x] as f32 / 255.0)
        }
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            let buf = img.to_rgb8();
            let raw = buf.as_raw();
            Tensor4::from_fn([1, 1, h, w], |_, _, y, x| {
                let p = &raw[(y * w + x) * 3..(y * w + x) * 3 + 3];
                (p[0] as f32 + p[1] as f32 + p[2] as f32) / 3.0 / 255.0
            })
        }
        other => Err(input_error(
            path,
            format!("expected an 8-bit grayscale or RGB PNG, got {:?}", other.color()),
        )),
    }
}

/// Bilinear resampling with half-pixel centres and edge clamping. Returns
/// the input unchanged when the size already matches.
pub fn resize_bilinear(x: &Tensor4, out_h: usize, out_w: usize) -> Result<Tensor4> {
    let [n, c, h, w] = x.dims();
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize target must be non-empty"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let axis = |o: usize, src: usize, dst: usize| {
        let pos = ((o as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(src - 1);
        (i0, i1, pos - i0 as f64)
    };
    let rows: Vec<_> = (0..out_h).map(|o| axis(o, h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|o| axis(o, w, out_w)).collect();
    Tensor4::from_fn([n, c, out_h, out_w], |b, ch, oy, ox| {
        let (y0, y1, fy) = rows[oy];
        let (x0, x1, fx) = cols[ox];
        let p = x.plane(b, ch);
        let top = p[y0 * w + x0] as f64 * (1.0 - fx) + p[y0 * w + x1] as f64 * fx;
        let bottom = p[y1 * w + x0] as f64 * (1.0 - fx) + p[y1 * w + x1] as f64 * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    })
}

/// Loads a registered pair as `(1, 4, size, size)` stacked `[R, G, B, IR]`.
pub fn load_pair(rgb_path: &Path, ir_path: &Path, size: usize) -> Result<Tensor4> {
    let rgb = resize_bilinear(&load_rgb(rgb_path)?, size, size)?;
    let ir = resize_bilinear(&load_ir(ir_path)?, size, size)?;
    concat(&[&rgb, &ir], 1)
}

/// `round(255·v)` with halves rounded up, after clamping to `[0, 1]`.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn write_png(path: &Path, result: image::ImageResult<()>) -> Result<()> {
    result.map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })
}

/// Writes a `(1, 3, H, W)` tensor as an 8-bit RGB PNG.
pub fn save_fused(t: &Tensor4, path: &Path) -> Result<()> {
    let [n, c, h, w] = t.dims();
    if n != 1 || c != 3 {
        return Err(Error::shape(format!(
            "save_fused expects (1, 3, H, W), got {:?}",
            t.dims()
        )));
    }
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([
            quantize(t.at(0, 0, y, x)),
            quantize(t.at(0, 1, y, x)),
            quantize(t.at(0, 2, y, x)),
        ])
    });
    write_png(path, img.save_with_format(path, ImageFormat::Png))
}

/// Writes an `h×w` map of values in `[0, 1]` as an 8-bit grayscale PNG.
pub fn save_gray(values: &[f32], h: usize, w: usize, path: &Path) -> Result<()> {
    if values.len() != h * w {
        return Err(Error::shape(format!("{} values for a {h}x{w} image", values.len())));
    }
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([quantize(values[y as usize * w + x as usize])])
    });
    write_png(path, img.save_with_format(path, ImageFormat::Png))
}
