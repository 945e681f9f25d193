use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use super::Sample;
use crate::error::{Error, Result};
use crate::networks::binarize;
use crate::tensor::ops::bilinear_resize_tensor;
use crate::tensor::{Real, Shape, Tensor};

fn decode(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => Ok(img),
        other => Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("expected 8-bit samples, found {:?}", other.color()),
        }),
    }
}

fn resize(t: Tensor, target: usize) -> Result<Tensor> {
    let s = t.shape();
    if (s.h, s.w) == (target, target) {
        Ok(t)
    } else {
        bilinear_resize_tensor(&t, target, target)
    }
}

/// `(height, width)` of an image file, read from its header.
pub fn image_dimensions(path: &Path) -> Result<(usize, usize)> {
    match image::image_dimensions(path) {
        Ok((w, h)) => Ok((h as usize, w as usize)),
        Err(image::ImageError::IoError(e)) => Err(Error::io(path, e)),
        Err(e) => Err(Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        }),
    }
}

/// RGB image scaled to `[0, 1]` and bilinearly resized to `target × target`.
pub fn load_image(path: &Path, target: usize) -> Result<Tensor> {
    let rgb = decode(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let t = Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        rgb.get_pixel(x as u32, y as u32)[c] as Real / 255.0
    });
    resize(t, target)
}

/// Grayscale mask resized to `target × target`, then binarised at 0.5.
pub fn load_mask(path: &Path, target: usize) -> Result<Tensor> {
    let gray = decode(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let t = Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
        gray.get_pixel(x as u32, y as u32)[0] as Real / 255.0
    });
    Ok(binarize(&resize(t, target)?, 0.5))
}

pub fn load_sample(image_path: &Path, mask_path: &Path, target: usize) -> Result<Sample> {
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Sample {
        id,
        image: load_image(image_path, target)?,
        mask: load_mask(mask_path, target)?,
    })
}

fn to_byte(v: Real) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write batch item 0 of a `(n, 3, h, w)` image as 8-bit RGB PNG.
pub fn save_image_png(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::dim("channel", format!("RGB image needs 3 channels, got {s}")));
    }
    let img = RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        let px = |c| to_byte(image.get(0, c, y as usize, x as usize));
        image::Rgb([px(0), px(1), px(2)])
    });
    img.save(path).map_err(|e| save_error(path, e))
}

/// Write batch item 0 of a `(n, 1, h, w)` mask as 8-bit grayscale PNG with values 0/255,
/// thresholding at 0.5.
pub fn save_mask_png(path: &Path, mask: &Tensor) -> Result<()> {
    let s = mask.shape();
    if s.c != 1 {
        return Err(Error::dim("channel", format!("mask needs 1 channel, got {s}")));
    }
    let img = GrayImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        image::Luma([if mask.get(0, 0, y as usize, x as usize) >= 0.5 { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| save_error(path, e))
}

fn save_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Format {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}
