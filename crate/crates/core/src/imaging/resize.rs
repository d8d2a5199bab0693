//! Separable bicubic resampling.
//!
//! Keys cubic convolution with a = -0.5 and half-pixel centre alignment. When
//! shrinking, the kernel is stretched by the inverse scale (antialiasing).
//! Taps outside the image replicate the edge pixel; weights are normalized to
//! sum to one. The output is clamped to [0, 1].

use super::plane::ImagePlane;
use crate::error::{Error, Result};

const A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn cubic(t: f64) -> f64 {
    let x = t.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Contributing (source index, weight) pairs for every output position.
pub(crate) fn contributions(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = out_len as f64 / in_len as f64;
    let stretch = if scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / stretch;
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) / scale - 0.5;
            let first = (center - support).ceil() as isize;
            let last = (center + support).floor() as isize;
            let mut taps: Vec<(usize, f64)> = (first..=last)
                .filter_map(|j| {
                    let w = stretch * cubic(stretch * (center - j as f64));
                    (w != 0.0).then(|| (j.clamp(0, in_len as isize - 1) as usize, w))
                })
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Resizes `plane` to `out_h x out_w`.
pub fn bicubic_resize(plane: &ImagePlane, out_h: usize, out_w: usize) -> Result<ImagePlane> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::contract(
            "bicubic_resize",
            "output dimensions must be at least 1",
        ));
    }
    let (in_h, in_w) = plane.dims();
    let across = contributions(in_w, out_w);
    let down = contributions(in_h, out_h);
    let mut rows = vec![0.0; in_h * out_w];
    for y in 0..in_h {
        for (x, taps) in across.iter().enumerate() {
            let mut acc = 0.0;
            for &(j, w) in taps {
                acc += w * plane.get(y, j);
            }
            rows[y * out_w + x] = acc;
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (y, taps) in down.iter().enumerate() {
        for x in 0..out_w {
            let mut acc = 0.0;
            for &(i, w) in taps {
                acc += w * rows[i * out_w + x];
            }
            out[y * out_w + x] = acc.clamp(0.0, 1.0);
        }
    }
    ImagePlane::new(out_h, out_w, out)
}

/// Integer-factor upscaling.
pub fn upscale(plane: &ImagePlane, factor: usize) -> Result<ImagePlane> {
    bicubic_resize(plane, plane.height() * factor, plane.width() * factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn constant_stays_constant() {
        let p = ImagePlane::filled(9, 7, 0.42);
        for (h, w) in [(18, 14), (3, 2), (9, 7), (31, 5)] {
            let r = bicubic_resize(&p, h, w).unwrap();
            assert!(r.values().iter().all(|v| (v - 0.42).abs() < 1e-12));
        }
    }

    #[test]
    fn same_size_is_identity() {
        let mut rng = Rng::new(4);
        let p = ImagePlane::from_fn(6, 9, |_, _| rng.uniform(0.0, 1.0));
        let r = bicubic_resize(&p, 6, 9).unwrap();
        assert!(r.max_abs_diff(&p) < 1e-6);
    }

    #[test]
    fn ramp_interior_is_linear_after_upsampling() {
        let p = ImagePlane::from_fn(4, 16, |_, x| 0.05 + 0.05 * x as f64);
        let r = upscale(&p, 2).unwrap();
        // Output column o sits at input position (o + 0.5) / 2 - 0.5.
        for y in 0..r.height() {
            for o in 4..(r.width() - 4) {
                let pos = (o as f64 + 0.5) / 2.0 - 0.5;
                assert!((r.get(y, o) - (0.05 + 0.05 * pos)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_empty_output() {
        let p = ImagePlane::filled(2, 2, 0.0);
        assert!(bicubic_resize(&p, 0, 3).is_err());
    }
}
