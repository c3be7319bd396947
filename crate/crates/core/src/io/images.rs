//! Image files: 8/16-bit PNG and TIFF in, 16-bit and 8-bit out.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::image::Image;

fn img_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image { path: path.to_path_buf(), msg: e.to_string() }
}

/// Decodes to `[0, 1]`: 8-bit values over 255, 16-bit over 65535. Alpha is
/// dropped. The result has `channels` channels (1 or 3).
pub fn load_image(path: &Path, channels: usize) -> Result<Image> {
    let dynimg = image::open(path).map_err(|e| img_err(path, e))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let sixteen = matches!(
        dynimg,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)
    );
    let gray = matches!(
        dynimg,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_)
    );
    if channels == 1 && !gray {
        return Err(img_err(path, "expected a single-channel image"));
    }
    if channels != 1 && channels != 3 {
        return Err(img_err(path, format!("unsupported channel count {channels}")));
    }
    let data: Vec<f64> = match (channels, sixteen) {
        (1, false) => dynimg.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        (1, true) => dynimg.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        (_, false) => dynimg.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        (_, true) => dynimg.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
    };
    Image::from_vec(w, h, channels, data)
}

pub fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rounds every value to the nearest 16-bit level, as a saved file would.
pub fn requantize16(img: &Image) -> Image {
    let mut out = img.clone();
    out.data.iter_mut().for_each(|v| *v = quantize16(*v) as f64 / 65535.0);
    out
}

fn check_channels(path: &Path, img: &Image) -> Result<()> {
    if img.channels != 1 && img.channels != 3 {
        return Err(img_err(path, format!("cannot encode {} channels", img.channels)));
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

/// 16-bit PNG or TIFF (by extension) of a 1- or 3-channel image.
pub fn save_image16(img: &Image, path: &Path) -> Result<()> {
    check_channels(path, img)?;
    ensure_parent(path)?;
    let raw: Vec<u16> = img.data.iter().map(|&v| quantize16(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let res = if img.channels == 1 {
        ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("sized buffer").save(path)
    } else {
        ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).expect("sized buffer").save(path)
    };
    res.map_err(|e| img_err(path, e))
}

/// 8-bit PNG of a 1- or 3-channel image.
pub fn save_image8(img: &Image, path: &Path) -> Result<()> {
    check_channels(path, img)?;
    ensure_parent(path)?;
    let raw: Vec<u8> = img.data.iter().map(|&v| quantize8(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let res = if img.channels == 1 {
        ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("sized buffer").save(path)
    } else {
        ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).expect("sized buffer").save(path)
    };
    res.map_err(|e| img_err(path, e))
}
