//! 8-bit PNG / PGM reading and writing.

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};

use crate::diffusion::ImageSample;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::tensorgrad::Tensor;

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Interleaved 8-bit samples (HWC order).
pub fn to_bytes(img: &ImageSample) -> Vec<u8> {
    let (c, hw) = (img.channels(), img.height() * img.width());
    let d = img.pixels().data();
    let mut out = Vec::with_capacity(c * hw);
    for i in 0..hw {
        for ch in 0..c {
            out.push(quantize(d[ch * hw + i]));
        }
    }
    out
}

/// Rounds pixel values to the nearest 8-bit level, as a save/load cycle would.
pub fn quantized(img: &ImageSample) -> ImageSample {
    let t = img.pixels().map(|v| quantize(v) as f32 / 255.0);
    ImageSample::new(t, img.source_id.clone(), img.seed).expect("same shape")
}

fn encode(img: &ImageSample, format: ImageFormat) -> Result<Vec<u8>> {
    let bytes = to_bytes(img);
    let (w, h) = (img.width() as u32, img.height() as u32);
    let color = if img.channels() == 1 { ExtendedColorType::L8 } else { ExtendedColorType::Rgb8 };
    let mut buf = Vec::new();
    let res = match format {
        ImageFormat::Png => image::codecs::png::PngEncoder::new(&mut buf).write_image(&bytes, w, h, color),
        _ => {
            let subtype = if img.channels() == 1 {
                PnmSubtype::Graymap(SampleEncoding::Binary)
            } else {
                PnmSubtype::Pixmap(SampleEncoding::Binary)
            };
            PnmEncoder::new(&mut buf).with_subtype(subtype).write_image(&bytes, w, h, color)
        }
    };
    res.map_err(|e| Error::Image { path: "<memory>".into(), source: e })?;
    Ok(buf)
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm") | Some("ppm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::invalid(format!("unsupported image extension: {}", path.display()))),
    }
}

/// Writes PNG or PGM/PPM depending on the extension.
pub fn save(path: &Path, img: &ImageSample) -> Result<()> {
    let bytes = encode(img, format_for(path)?)?;
    fsutil::write_atomic(path, &bytes)
}

/// Tiles same-shaped images into a `cols`-wide grid and writes it as PNG.
/// The grid itself is not restricted to the image-shape rules.
pub fn save_grid(path: &Path, images: &[ImageSample], cols: usize) -> Result<()> {
    let first = images.first().ok_or_else(|| Error::invalid("save_grid: no images"))?;
    let [c, h, w] = first.dims();
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let (gw, gh) = (cols * w, rows * h);
    let mut buf = vec![0u8; gw * gh * c];
    for (k, img) in images.iter().enumerate() {
        if img.dims() != first.dims() {
            return Err(Error::ShapeMismatch { op: "save_grid", shapes: vec![first.dims().to_vec(), img.dims().to_vec()] });
        }
        let bytes = to_bytes(img);
        let (ox, oy) = ((k % cols) * w, (k / cols) * h);
        for y in 0..h {
            let dst = ((oy + y) * gw + ox) * c;
            buf[dst..dst + w * c].copy_from_slice(&bytes[y * w * c..(y + 1) * w * c]);
        }
    }
    let color = if c == 1 { ExtendedColorType::L8 } else { ExtendedColorType::Rgb8 };
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&buf, gw as u32, gh as u32, color)
        .map_err(|e| Error::Image { path: path.into(), source: e })?;
    fsutil::write_atomic(path, &out)
}

pub fn load(path: &Path) -> Result<ImageSample> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let dynimg = image::load(Cursor::new(raw), format_for(path)?).map_err(|e| Error::Image { path: path.into(), source: e })?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    from_dynamic(&dynimg, id)
}

fn from_dynamic(dynimg: &DynamicImage, id: String) -> Result<ImageSample> {
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let (c, data) = if dynimg.color().has_color() {
        let rgb = dynimg.to_rgb8();
        let mut planes = vec![0.0f32; 3 * w * h];
        for (i, px) in rgb.pixels().enumerate() {
            for ch in 0..3 {
                planes[ch * w * h + i] = px[ch] as f32 / 255.0;
            }
        }
        (3, planes)
    } else {
        (1, dynimg.to_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
    };
    ImageSample::new(Tensor::from_vec(&[c, h, w], data)?, id, 0)
}
