//! Gaussian noise suppression.

use super::plane::ImagePlane;
use crate::autograd::kernels::{Border, FilterGeom};
use crate::error::{Error, Result};

pub const SUPPRESSOR_SIZE: usize = 13;
pub const SUPPRESSOR_SIGMA: f64 = 0.7;

/// `size x size` kernel sampled at integer offsets from the centre and
/// normalized to unit sum, row-major.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size % 2 == 0 {
        return Err(Error::contract("gaussian_blur", format!("size {size} must be odd")));
    }
    if sigma <= 0.0 {
        return Err(Error::contract("gaussian_blur", "sigma must be positive"));
    }
    let half = (size / 2) as f64;
    let mut k = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (dy, dx) = (i as f64 - half, j as f64 - half);
            k.push((-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// One axis of [`gaussian_kernel`]: the 2-d kernel is the outer product of
/// this vector with itself.
pub fn gaussian_taps(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size % 2 == 0 {
        return Err(Error::contract("gaussian_blur", format!("size {size} must be odd")));
    }
    if sigma <= 0.0 {
        return Err(Error::contract("gaussian_blur", "sigma must be positive"));
    }
    let half = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    Ok(k.iter().map(|v| v / total).collect())
}

/// Blurs a plane with reflect-101 borders.
pub fn gaussian_blur(plane: &ImagePlane, size: usize, sigma: f64) -> Result<ImagePlane> {
    let kernel = gaussian_kernel(size, sigma)?;
    let (h, w) = plane.dims();
    let geom = FilterGeom::new(1, h, w, size, size, Border::Reflect)?;
    ImagePlane::new(h, w, geom.forward(plane.values(), &kernel))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_sums_to_one() {
        let k = gaussian_kernel(SUPPRESSOR_SIZE, SUPPRESSOR_SIGMA).unwrap();
        assert_eq!(k.len(), 169);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(gaussian_kernel(4, 1.0).is_err());
    }

    #[test]
    fn kernel_is_separable() {
        let k = gaussian_kernel(SUPPRESSOR_SIZE, SUPPRESSOR_SIGMA).unwrap();
        let t = gaussian_taps(SUPPRESSOR_SIZE, SUPPRESSOR_SIGMA).unwrap();
        for i in 0..13 {
            for j in 0..13 {
                assert!((k[i * 13 + j] - t[i] * t[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn impulse_response_is_the_kernel() {
        let p = ImagePlane::from_fn(15, 15, |y, x| if (y, x) == (7, 7) { 1.0 } else { 0.0 });
        let out = gaussian_blur(&p, 13, 0.7).unwrap();
        let k = gaussian_kernel(13, 0.7).unwrap();
        for i in 0..13 {
            for j in 0..13 {
                assert!((out.get(i + 1, j + 1) - k[i * 13 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_is_preserved() {
        let p = ImagePlane::filled(8, 8, 0.6);
        let out = gaussian_blur(&p, 13, 0.7).unwrap();
        assert!(out.max_abs_diff(&p) < 1e-6);
    }
}
