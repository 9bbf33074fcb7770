//! PNG/JPEG decoding and the raster artifacts written by the pipeline.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{BinaryImage, ComponentStats, LabelImage};
use crate::patch::{ProbabilityMap, RawImage};
use crate::skeleton::SkeletonImage;

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    image::open(path).map_err(|e| image_err(path, e))
}

/// Decodes an image to 8 bits. Gray(+alpha) becomes 1 channel, colour(+alpha)
/// becomes 3; alpha is dropped.
pub fn read_raw_image(path: &Path) -> Result<RawImage> {
    let img = open(path)?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let (channels, data) = if img.color().has_color() {
        (3, img.into_rgb8().into_raw())
    } else {
        (1, img.into_luma8().into_raw())
    };
    Ok(RawImage {
        width,
        height,
        channels,
        data,
    })
}

/// `(width, height, channels)` without decoding pixel data.
pub fn probe_image(path: &Path) -> Result<(usize, usize, usize)> {
    use image::ImageDecoder;
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoder = reader.into_decoder().map_err(|e| image_err(path, e))?;
    let (w, h) = decoder.dimensions();
    let channels = if decoder.color_type().has_color() { 3 } else { 1 };
    Ok((w as usize, h as usize, channels))
}

fn save(img: &DynamicImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| image_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilitySidecar {
    pub source: String,
    pub model_ids: Vec<String>,
    pub stride: usize,
    pub threshold_hint: f64,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

/// 16-bit grayscale PNG with `round(p * 65535)`, plus a JSON sidecar next to it.
pub fn write_probability_map(map: &ProbabilityMap, path: &Path, sidecar: &ProbabilitySidecar) -> Result<()> {
    let data: Vec<u16> = map
        .probs()
        .iter()
        .map(|&p| (p as f64 * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width() as u32, map.height() as u32, data)
            .ok_or_else(|| Error::Shape("probability buffer size".into()))?;
    save(&DynamicImage::ImageLuma16(buf), path)?;
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(sidecar)?).map_err(|e| Error::io(&side, e))
}

pub fn read_probability_map(path: &Path) -> Result<ProbabilityMap> {
    let img = open(path)?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let probs = img.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect();
    ProbabilityMap::new(w, h, probs)
}

/// 8-bit PNG, 255 for crack.
pub fn write_mask(mask: &BinaryImage, path: &Path) -> Result<()> {
    let data = mask.data().iter().map(|&b| if b { 255u8 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, data)
            .ok_or_else(|| Error::Shape("mask buffer size".into()))?;
    save(&DynamicImage::ImageLuma8(buf), path)
}

#[derive(Debug, Clone, Serialize)]
struct LabelSidecar<'a> {
    components: &'a [ComponentStats],
}

/// 16-bit PNG of component ids plus a JSON file of per-component stats.
pub fn write_labels(labels: &LabelImage, path: &Path) -> Result<()> {
    if labels.count() > u16::MAX as usize {
        return Err(Error::Format(format!(
            "{} components do not fit a 16-bit label image",
            labels.count()
        )));
    }
    let data = labels.labels().iter().map(|&l| l as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(labels.width() as u32, labels.height() as u32, data)
            .ok_or_else(|| Error::Shape("label buffer size".into()))?;
    save(&DynamicImage::ImageLuma16(buf), path)?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&LabelSidecar {
        components: labels.stats(),
    })?;
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

fn base_rgb(raw: &RawImage) -> Result<RgbImage> {
    let data = match raw.channels {
        3 => raw.data.clone(),
        1 => raw.data.iter().flat_map(|&v| [v; 3]).collect(),
        c => return Err(Error::Format(format!("cannot render {c}-channel image"))),
    };
    RgbImage::from_raw(raw.width as u32, raw.height as u32, data)
        .ok_or_else(|| Error::Shape("overlay buffer size".into()))
}

/// Source image with crack pixels tinted red at 50% opacity.
pub fn prediction_overlay(source: &RawImage, mask: &BinaryImage) -> Result<RgbImage> {
    if source.width != mask.width() || source.height != mask.height() {
        return Err(Error::Shape("overlay mask and image differ in size".into()));
    }
    let mut img = base_rgb(source)?;
    for (r, c) in mask.pixels() {
        let p = img.get_pixel_mut(c as u32, r as u32);
        let [red, g, b] = p.0;
        *p = Rgb([
            ((red as u16 + 255) / 2) as u8,
            g / 2,
            b / 2,
        ]);
    }
    Ok(img)
}

/// Blue (thin) to red (wide) ramp over `[0, 1]`.
fn ramp(x: f64) -> Rgb<u8> {
    let x = x.clamp(0.0, 1.0);
    let r = (255.0 * x).round() as u8;
    let g = (255.0 * (1.0 - (2.0 * x - 1.0).abs())).round() as u8;
    let b = (255.0 * (1.0 - x)).round() as u8;
    Rgb([r, g, b])
}

/// Source image with skeleton pixels coloured by their radius.
pub fn skeleton_overlay(source: &RawImage, skeleton: &SkeletonImage) -> Result<RgbImage> {
    let mask = skeleton.mask();
    if source.width != mask.width() || source.height != mask.height() {
        return Err(Error::Shape("overlay skeleton and image differ in size".into()));
    }
    let mut img = base_rgb(source)?;
    let max_r = skeleton.radii().iter().cloned().fold(0.0f64, f64::max);
    for (r, c) in mask.pixels() {
        let x = if max_r > 0.0 { skeleton.radius(r, c) / max_r } else { 0.0 };
        img.put_pixel(c as u32, r as u32, ramp(x));
    }
    Ok(img)
}

pub fn write_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| image_err(path, e))
}

/// Writes an 8-bit image (1 or 3 channels) as PNG.
pub fn write_raw(raw: &RawImage, path: &Path) -> Result<()> {
    let (w, h) = (raw.width as u32, raw.height as u32);
    let img = match raw.channels {
        1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw.data.clone()).map(DynamicImage::ImageLuma8),
        3 => RgbImage::from_raw(w, h, raw.data.clone()).map(DynamicImage::ImageRgb8),
        _ => None,
    }
    .ok_or_else(|| Error::Shape("raw image buffer does not match its shape".into()))?;
    save(&img, path)
}
