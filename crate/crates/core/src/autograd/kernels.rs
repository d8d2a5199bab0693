//! Forward and backward kernels for the spatial operators.
//!
//! Convolution is cross-correlation (no kernel flip). Borders use reflect-101
//! indexing: mirror about the edge pixel without repeating it, folded again
//! when the pad exceeds the extent.

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Reflect-101 index of `i` into an axis of length `n`.
pub fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// How a window is placed relative to the input border.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Border {
    /// Odd kernel centred on each pixel, reflect-101 padding by `k / 2`.
    Reflect,
    /// Only windows entirely inside the input; no padding.
    Valid,
}

/// Source index for every (tap, output) pair along one axis, stored tap-major.
#[derive(Clone, Debug)]
pub(crate) struct AxisTaps {
    pub out: usize,
    pub src: Vec<usize>,
    /// Per tap, the output range `lo..hi` whose sources are `o + shift`
    /// without reflection (stride 1 only; empty otherwise).
    pub direct: Vec<(usize, usize, isize)>,
}

impl AxisTaps {
    pub fn new(n: usize, k: usize, stride: usize, border: Border) -> Option<Self> {
        let (out, pad) = match border {
            Border::Reflect => {
                let pad = k / 2;
                ((n + 2 * pad - k) / stride + 1, pad as isize)
            }
            Border::Valid => {
                if n < k {
                    return None;
                }
                ((n - k) / stride + 1, 0)
            }
        };
        let mut src = Vec::with_capacity(k * out);
        let mut direct = Vec::with_capacity(k);
        for t in 0..k {
            for o in 0..out {
                let i = (o * stride + t) as isize - pad;
                src.push(reflect101(i, n));
            }
            let shift = t as isize - pad;
            if stride == 1 {
                let lo = (-shift).max(0).min(out as isize) as usize;
                let hi = (n as isize - shift).clamp(lo as isize, out as isize) as usize;
                direct.push((lo, hi, shift));
            } else {
                direct.push((0, 0, shift));
            }
        }
        Some(Self { out, src, direct })
    }

    #[inline]
    pub fn at(&self, tap: usize, o: usize) -> usize {
        self.src[tap * self.out + o]
    }
}

pub(crate) fn check_reflectable(op: &'static str, h: usize, w: usize, kh: usize, kw: usize) -> Result<()> {
    let pad = kh.max(kw) / 2;
    if pad > 0 && (h < 2 || w < 2) {
        return Err(Error::InputTooSmall {
            op,
            height: h,
            width: w,
            pad,
        });
    }
    Ok(())
}

/// Geometry of one 2-d convolution.
#[derive(Clone, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub rows: AxisTaps,
    pub cols: AxisTaps,
}

impl ConvGeom {
    pub fn new(
        input: (usize, usize, usize, usize),
        kernel: (usize, usize, usize, usize),
        stride: usize,
    ) -> Result<Self> {
        let (n, cin, h, w) = input;
        let (cout, kcin, kh, kw) = kernel;
        if kcin != cin {
            return Err(Error::contract(
                "conv2d",
                format!("input has {cin} channels but kernel expects {kcin}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::contract("conv2d", format!("kernel {kh}x{kw} must be odd")));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d", "stride must be at least 1"));
        }
        check_reflectable("conv2d", h, w, kh, kw)?;
        let rows = AxisTaps::new(h, kh, stride, Border::Reflect).expect("reflect taps");
        let cols = AxisTaps::new(w, kw, stride, Border::Reflect).expect("reflect taps");
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            rows,
            cols,
        })
    }

    pub fn out_hw(&self) -> (usize, usize) {
        (self.rows.out, self.cols.out)
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn pixels(&self) -> usize {
        self.rows.out * self.cols.out
    }

    fn im2col<T: Real>(&self, image: &[T], cols: &mut [T]) {
        let (oh, ow) = self.out_hw();
        let p = oh * ow;
        let plane = self.h * self.w;
        let mut r = 0;
        for c in 0..self.cin {
            let src = &image[c * plane..(c + 1) * plane];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let dst = &mut cols[r * p..(r + 1) * p];
                    let (lo, hi, shift) = self.cols.direct[kj];
                    for oy in 0..oh {
                        let row = &src[self.rows.at(ki, oy) * self.w..][..self.w];
                        let out = &mut dst[oy * ow..(oy + 1) * ow];
                        for ox in (0..lo).chain(hi..ow) {
                            out[ox] = row[self.cols.at(kj, ox)];
                        }
                        if hi > lo {
                            let s0 = (lo as isize + shift) as usize;
                            out[lo..hi].copy_from_slice(&row[s0..s0 + hi - lo]);
                        }
                    }
                    r += 1;
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], image: &mut [T]) {
        let (oh, ow) = self.out_hw();
        let p = oh * ow;
        let plane = self.h * self.w;
        let mut r = 0;
        for c in 0..self.cin {
            let dst = &mut image[c * plane..(c + 1) * plane];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let src = &cols[r * p..(r + 1) * p];
                    let (lo, hi, shift) = self.cols.direct[kj];
                    for oy in 0..oh {
                        let base = self.rows.at(ki, oy) * self.w;
                        let g = &src[oy * ow..(oy + 1) * ow];
                        for ox in (0..lo).chain(hi..ow) {
                            dst[base + self.cols.at(kj, ox)] += g[ox];
                        }
                        if hi > lo {
                            let s0 = (base as isize + lo as isize + shift) as usize;
                            for (d, &v) in dst[s0..s0 + hi - lo].iter_mut().zip(&g[lo..hi]) {
                                *d += v;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }

    pub fn forward<T: Real>(&self, x: &[T], kernel: &[T], bias: Option<&[T]>) -> Vec<T> {
        let p = self.pixels();
        let rlen = self.patch_len();
        let mut out = vec![T::zero(); self.n * self.cout * p];
        let mut cols = vec![T::zero(); rlen * p];
        let in_img = self.cin * self.h * self.w;
        for b in 0..self.n {
            self.im2col(&x[b * in_img..(b + 1) * in_img], &mut cols);
            let dst = &mut out[b * self.cout * p..(b + 1) * self.cout * p];
            if let Some(bias) = bias {
                for (co, chunk) in dst.chunks_mut(p).enumerate() {
                    chunk.fill(bias[co]);
                }
            }
            let beta = if bias.is_some() { T::one() } else { T::zero() };
            T::gemm(
                self.cout,
                rlen,
                p,
                (kernel, rlen as isize, 1),
                (&cols, p as isize, 1),
                beta,
                (dst, p as isize, 1),
            );
        }
        out
    }

    /// Returns (d input, d kernel, d bias) for upstream gradient `dout`.
    pub fn backward<T: Real>(&self, x: &[T], kernel: &[T], dout: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let p = self.pixels();
        let rlen = self.patch_len();
        let in_img = self.cin * self.h * self.w;
        let mut dx = vec![T::zero(); x.len()];
        let mut dk = vec![T::zero(); kernel.len()];
        let mut db = vec![T::zero(); self.cout];
        let mut cols = vec![T::zero(); rlen * p];
        let mut dcols = vec![T::zero(); rlen * p];
        for b in 0..self.n {
            let g = &dout[b * self.cout * p..(b + 1) * self.cout * p];
            for (co, chunk) in g.chunks(p).enumerate() {
                db[co] += chunk.iter().copied().sum::<T>();
            }
            self.im2col(&x[b * in_img..(b + 1) * in_img], &mut cols);
            // dK (cout x R) += dOut (cout x P) * cols^T (P x R)
            T::gemm(
                self.cout,
                p,
                rlen,
                (g, p as isize, 1),
                (&cols, 1, p as isize),
                T::one(),
                (&mut dk, rlen as isize, 1),
            );
            // dcols (R x P) = K^T (R x cout) * dOut (cout x P)
            T::gemm(
                rlen,
                self.cout,
                p,
                (kernel, 1, rlen as isize),
                (g, p as isize, 1),
                T::zero(),
                (&mut dcols, p as isize, 1),
            );
            self.col2im(&dcols, &mut dx[b * in_img..(b + 1) * in_img]);
        }
        (dx, dk, db)
    }
}

/// Depthwise filtering with one fixed 2-d kernel applied to every channel.
#[derive(Clone, Debug)]
pub(crate) struct FilterGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub rows: AxisTaps,
    pub cols: AxisTaps,
}

impl FilterGeom {
    pub fn new(planes: usize, h: usize, w: usize, kh: usize, kw: usize, border: Border) -> Result<Self> {
        if border == Border::Reflect {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(Error::contract("filter", format!("kernel {kh}x{kw} must be odd")));
            }
            check_reflectable("filter", h, w, kh, kw)?;
        }
        let rows = AxisTaps::new(h, kh, 1, border);
        let cols = AxisTaps::new(w, kw, 1, border);
        match (rows, cols) {
            (Some(rows), Some(cols)) => Ok(Self {
                planes,
                h,
                w,
                kh,
                kw,
                rows,
                cols,
            }),
            _ => Err(Error::contract(
                "filter",
                format!("{h}x{w} input is smaller than the {kh}x{kw} window"),
            )),
        }
    }

    pub fn out_hw(&self) -> (usize, usize) {
        (self.rows.out, self.cols.out)
    }

    pub fn forward<T: Real>(&self, x: &[T], kernel: &[T]) -> Vec<T> {
        let (oh, ow) = self.out_hw();
        let mut out = vec![T::zero(); self.planes * oh * ow];
        for pl in 0..self.planes {
            let src = &x[pl * self.h * self.w..(pl + 1) * self.h * self.w];
            let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let kv = kernel[ki * self.kw + kj];
                    for oy in 0..oh {
                        let row = &src[self.rows.at(ki, oy) * self.w..][..self.w];
                        let d = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v += kv * row[self.cols.at(kj, ox)];
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward<T: Real>(&self, kernel: &[T], dout: &[T]) -> Vec<T> {
        let (oh, ow) = self.out_hw();
        let mut dx = vec![T::zero(); self.planes * self.h * self.w];
        for pl in 0..self.planes {
            let g = &dout[pl * oh * ow..(pl + 1) * oh * ow];
            let dst = &mut dx[pl * self.h * self.w..(pl + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let kv = kernel[ki * self.kw + kj];
                    for oy in 0..oh {
                        let base = self.rows.at(ki, oy) * self.w;
                        for ox in 0..ow {
                            dst[base + self.cols.at(kj, ox)] += kv * g[oy * ow + ox];
                        }
                    }
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect101_mirrors_without_repeating_edge() {
        let n = 4;
        let got: Vec<usize> = (-3..7).map(|i| reflect101(i, n)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn reflect101_folds_large_pads() {
        // Period 2 for n = 2: 0,1,0,1,...
        let got: Vec<usize> = (-4..4).map(|i| reflect101(i, 2)).collect();
        assert_eq!(got, vec![0, 1, 0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn valid_taps_need_room() {
        assert!(AxisTaps::new(5, 11, 1, Border::Valid).is_none());
        let t = AxisTaps::new(11, 11, 1, Border::Valid).unwrap();
        assert_eq!(t.out, 1);
    }

    #[test]
    fn conv_rejects_single_pixel_axis() {
        let err = ConvGeom::new((1, 1, 1, 5), (1, 1, 3, 3), 1).unwrap_err();
        assert!(matches!(err, Error::InputTooSmall { .. }));
        // A 1x1 kernel needs no padding.
        assert!(ConvGeom::new((1, 1, 1, 5), (1, 1, 1, 1), 1).is_ok());
    }

    #[test]
    fn strided_output_extent() {
        let g = ConvGeom::new((1, 1, 7, 8), (1, 1, 3, 3), 2).unwrap();
        assert_eq!(g.out_hw(), (4, 4));
    }
}
