//! 8-bit PNG reading and writing.

use std::path::Path;

use image::{ColorType, ImageFormat, ImageReader};

use super::plane::{ColorImage, ImagePlane};
use crate::error::{Error, Result};

/// Reads an 8-bit grayscale or RGB PNG (alpha is dropped). Grayscale files
/// load with the channel replicated into R, G and B.
pub fn read_png(path: impl AsRef<Path>) -> Result<ColorImage> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(format!("cannot open {}", path.display()), e))?
        .with_guessed_format()
        .map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "not a PNG file".into(),
        });
    }
    let img = reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let scale = |v: u8| f64::from(v) / 255.0;
    match img.color() {
        ColorType::L8 | ColorType::La8 => {
            let luma = img.to_luma8();
            let plane = ImagePlane::new(h, w, luma.as_raw().iter().map(|&v| scale(v)).collect())?;
            Ok(ColorImage::gray(plane))
        }
        ColorType::Rgb8 | ColorType::Rgba8 => {
            let rgb = img.to_rgb8();
            let raw = rgb.as_raw();
            let channel = |c: usize| ImagePlane::new(h, w, raw.iter().skip(c).step_by(3).map(|&v| scale(v)).collect());
            ColorImage::new(channel(0)?, channel(1)?, channel(2)?)
        }
        other => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!("{other:?} is not an 8-bit grayscale or RGB layout"),
        }),
    }
}

fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn io_err(path: &Path, e: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Writes an 8-bit RGB PNG: `round(v * 255)` clamped to [0, 255].
pub fn write_png(img: &ColorImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = img.dims();
    let mut raw = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        for p in img.planes() {
            raw.push(quantize(p.values()[i]));
        }
    }
    image::save_buffer_with_format(path, &raw, w as u32, h as u32, ColorType::Rgb8, ImageFormat::Png)
        .map_err(|e| io_err(path, e))
}

/// Writes one plane as an 8-bit grayscale PNG.
pub fn write_gray_png(plane: &ImagePlane, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = plane.values().iter().map(|&v| quantize(v)).collect();
    image::save_buffer_with_format(
        path,
        &raw,
        plane.width() as u32,
        plane.height() as u32,
        ColorType::L8,
        ImageFormat::Png,
    )
    .map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn write_read_within_half_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let mut rng = Rng::new(2);
        let mut plane = || ImagePlane::from_fn(5, 7, |_, _| rng.uniform(0.0, 1.0));
        let img = ColorImage::new(plane(), plane(), plane()).unwrap();
        write_png(&img, &path).unwrap();
        let back = read_png(&path).unwrap();
        for (a, b) in img.planes().iter().zip(back.planes()) {
            assert!(a.max_abs_diff(b) <= 1.0 / 510.0 + 1e-12);
        }
        // read . write . read is idempotent
        write_png(&back, &path).unwrap();
        assert_eq!(read_png(&path).unwrap(), back);
    }

    #[test]
    fn pure_red_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("red.png");
        image::save_buffer_with_format(&path, &[255, 0, 0], 1, 1, ColorType::Rgb8, ImageFormat::Png).unwrap();
        let img = read_png(&path).unwrap();
        assert_eq!((img.r.get(0, 0), img.g.get(0, 0), img.b.get(0, 0)), (1.0, 0.0, 0.0));
    }

    #[test]
    fn sixteen_bit_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        let buf: Vec<u8> = vec![0, 1, 2, 3, 4, 5, 6, 7];
        image::save_buffer_with_format(&path, &buf, 2, 2, ColorType::L16, ImageFormat::Png).unwrap();
        assert!(matches!(read_png(&path), Err(Error::UnsupportedFormat { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_png("/nonexistent/nope.png"), Err(Error::Io { .. })));
    }
}
