//! Sobel frequency separation.

use super::plane::ImagePlane;
use crate::autograd::kernels::reflect101;
use crate::error::Result;

/// Horizontal-change Sobel kernel, applied as cross-correlation.
pub const SOBEL_M: [[f64; 3]; 3] = [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]];
/// Vertical-change Sobel kernel, applied as cross-correlation.
pub const SOBEL_N: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]];

/// High- and low-frequency channels of one plane. `hf + lf` reproduces the
/// source exactly; `hf` lies in [0, 1] while `lf` may go negative.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyPair {
    pub hf: ImagePlane,
    pub lf: ImagePlane,
}

/// Cross-correlation of `plane` with a 3x3 kernel, reflect-101 borders.
pub fn correlate3(plane: &ImagePlane, k: &[[f64; 3]; 3]) -> Vec<f64> {
    let (h, w) = plane.dims();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, row) in k.iter().enumerate() {
                let sy = reflect101(y as isize + i as isize - 1, h);
                for (j, &kv) in row.iter().enumerate() {
                    let sx = reflect101(x as isize + j as isize - 1, w);
                    acc += kv * plane.get(sy, sx);
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Gradient magnitude `sqrt(Dm^2 + Dn^2)` before normalization.
pub fn gradient_magnitude(plane: &ImagePlane) -> Vec<f64> {
    let dm = correlate3(plane, &SOBEL_M);
    let dn = correlate3(plane, &SOBEL_N);
    dm.iter().zip(&dn).map(|(a, b)| (a * a + b * b).sqrt()).collect()
}

/// Splits `plane` into `hf = mag / max(mag)` (all zeros when the plane is
/// flat) and `lf = plane - hf`.
pub fn sobel_separate(plane: &ImagePlane) -> Result<FrequencyPair> {
    let mag = gradient_magnitude(plane);
    let peak = mag.iter().copied().fold(0.0, f64::max);
    let hf_values = if peak > 0.0 {
        mag.iter().map(|m| m / peak).collect()
    } else {
        vec![0.0; mag.len()]
    };
    let hf = ImagePlane::new(plane.height(), plane.width(), hf_values)?;
    let lf = plane.sub(&hf)?;
    Ok(FrequencyPair { hf, lf })
}
