//! ITU-R BT.601 studio-swing YCbCr, scaled to [0, 1] by dividing by 255.

use super::plane::{ColorImage, ImagePlane};
use crate::error::Result;

/// Rows map (R, G, B) in [0, 1] to (Y, Cb, Cr) in 8-bit code units.
const FORWARD: [[f64; 3]; 3] = [
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
];
const OFFSET: [f64; 3] = [16.0, 128.0, 128.0];

fn inverse() -> [[f64; 3]; 3] {
    let m = FORWARD;
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    inv
}

/// Planes of a YCbCr image, each in [0, 1] (Y in [16/255, 235/255] for RGB
/// inputs in range).
#[derive(Clone, Debug, PartialEq)]
pub struct YCbCr {
    pub y: ImagePlane,
    pub cb: ImagePlane,
    pub cr: ImagePlane,
}

pub fn rgb_to_ycbcr(img: &ColorImage) -> YCbCr {
    let (h, w) = img.dims();
    let [r, g, b] = img.planes();
    let channel = |k: usize| {
        ImagePlane::from_fn(h, w, |y, x| {
            let rgb = [r.get(y, x), g.get(y, x), b.get(y, x)];
            let v = OFFSET[k] + (0..3).map(|j| FORWARD[k][j] * rgb[j]).sum::<f64>();
            v / 255.0
        })
    };
    YCbCr {
        y: channel(0),
        cb: channel(1),
        cr: channel(2),
    }
}

/// Inverse of [`rgb_to_ycbcr`]; RGB values are clamped to [0, 1].
pub fn ycbcr_to_rgb(ycc: &YCbCr) -> Result<ColorImage> {
    let inv = inverse();
    let (h, w) = ycc.y.dims();
    let planes = [&ycc.y, &ycc.cb, &ycc.cr];
    let channel = |k: usize| {
        ImagePlane::from_fn(h, w, |y, x| {
            let shifted: Vec<f64> = (0..3).map(|j| planes[j].get(y, x) * 255.0 - OFFSET[j]).collect();
            (0..3).map(|j| inv[k][j] * shifted[j]).sum::<f64>().clamp(0.0, 1.0)
        })
    };
    ColorImage::new(channel(0), channel(1), channel(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn solid(v: [f64; 3]) -> ColorImage {
        ColorImage::new(
            ImagePlane::filled(2, 2, v[0]),
            ImagePlane::filled(2, 2, v[1]),
            ImagePlane::filled(2, 2, v[2]),
        )
        .unwrap()
    }

    #[test]
    fn black_and_white_luma() {
        let y0 = rgb_to_ycbcr(&solid([0.0; 3])).y.get(0, 0);
        assert!((y0 - 16.0 / 255.0).abs() < 1e-12);
        let y1 = rgb_to_ycbcr(&solid([1.0; 3])).y.get(0, 0);
        assert!((y1 - 235.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn gray_has_neutral_chroma() {
        let ycc = rgb_to_ycbcr(&solid([0.37; 3]));
        assert!((ycc.cb.get(1, 1) - 128.0 / 255.0).abs() < 1e-12);
        assert!((ycc.cr.get(0, 1) - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_within_tolerance() {
        let mut rng = Rng::new(9);
        let mut plane = || ImagePlane::from_fn(7, 5, |_, _| rng.uniform(0.0, 1.0));
        let img = ColorImage::new(plane(), plane(), plane()).unwrap();
        let back = ycbcr_to_rgb(&rgb_to_ycbcr(&img)).unwrap();
        for (a, b) in img.planes().iter().zip(back.planes()) {
            assert!(a.max_abs_diff(b) <= 1e-5);
        }
    }
}
