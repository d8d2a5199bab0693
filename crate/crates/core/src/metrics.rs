//! PSNR and SSIM, plus the benchmark evaluation protocol.
//!
//! Metrics are computed on unquantized luma in [0, 1]: no 8-bit round trip.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize, Serializer};

use crate::autograd::kernels::{Border, FilterGeom};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::imaging::{gaussian_kernel, rgb_to_ycbcr, ColorImage, ImagePlane};
use crate::tensor::Real;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn c1() -> f64 {
    SSIM_K1 * SSIM_K1
}

fn c2() -> f64 {
    SSIM_K2 * SSIM_K2
}

/// The 11x11, sigma 1.5 Gaussian window, unit sum.
pub fn ssim_window() -> &'static [f64] {
    static W: OnceLock<Vec<f64>> = OnceLock::new();
    W.get_or_init(|| gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA).expect("odd window"))
}

fn check_same(op: &'static str, a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::contract(
            op,
            format!("dimension mismatch {:?} vs {:?}", a.dims(), b.dims()),
        ));
    }
    Ok(())
}

pub fn mse(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_same("mse", a, b)?;
    let n = a.values().len() as f64;
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// `10 log10(1 / MSE)` in dB for unit peak; identical inputs give `+inf`.
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    let e = mse(a, b)?;
    Ok(psnr_from_mse(e))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Mean SSIM over all fully contained 11x11 windows (no padding).
pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_same("ssim", a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::contract(
            "ssim",
            format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let geom = FilterGeom::new(1, h, w, SSIM_WINDOW, SSIM_WINDOW, Border::Valid)?;
    let win = ssim_window();
    let x = a.values();
    let y = b.values();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let mx = geom.forward(x, win);
    let my = geom.forward(y, win);
    let sxx = geom.forward(&xx, win);
    let syy = geom.forward(&yy, win);
    let sxy = geom.forward(&xy, win);
    let n = mx.len() as f64;
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1()) * (2.0 * cov + c2())) / ((ux * ux + uy * uy + c1()) * (vx + vy + c2()))
        })
        .sum();
    Ok(total / n)
}

/// Differentiable mean SSIM of two `[N, C, H, W]` nodes (same windowing and
/// constants as [`ssim`]), averaged over every window of every plane.
pub fn ssim_graph<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(Error::contract(
            "ssim",
            format!("shape mismatch {:?} vs {:?}", g.value(a).shape(), g.value(b).shape()),
        ));
    }
    let win: Arc<Vec<T>> = Arc::new(ssim_window().iter().map(|&v| T::lit(v)).collect());
    let k = SSIM_WINDOW;
    let filt = |g: &mut Graph<T>, v: Var| g.filter(v, win.clone(), k, k, Border::Valid);
    let xx = g.square(a);
    let yy = g.square(b);
    let xy = g.mul(a, b)?;
    let mx = filt(g, a)?;
    let my = filt(g, b)?;
    let exx = filt(g, xx)?;
    let eyy = filt(g, yy)?;
    let exy = filt(g, xy)?;
    let mx2 = g.square(mx);
    let my2 = g.square(my);
    let mxy = g.mul(mx, my)?;
    let vx = g.sub(exx, mx2)?;
    let vy = g.sub(eyy, my2)?;
    let cov = g.sub(exy, mxy)?;
    let lum_num = {
        let t = g.scale(mxy, T::lit(2.0));
        g.shift(t, T::lit(c1()))
    };
    let cs_num = {
        let t = g.scale(cov, T::lit(2.0));
        g.shift(t, T::lit(c2()))
    };
    let lum_den = {
        let t = g.add(mx2, my2)?;
        g.shift(t, T::lit(c1()))
    };
    let cs_den = {
        let t = g.add(vx, vy)?;
        g.shift(t, T::lit(c2()))
    };
    let num = g.mul(lum_num, cs_num)?;
    let den = g.mul(lum_den, cs_den)?;
    let map = g.div(num, den)?;
    g.mean(map)
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

fn de_db<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Db::Text(t) => Err(serde::de::Error::custom(format!("bad dB value {t}"))),
    }
}

/// Metrics for one image pair. Identical images report PSNR as `"inf"` in
/// JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub name: String,
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image rows plus dataset means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scale: usize,
    pub images: Vec<EvalEntry>,
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub skipped: Vec<String>,
}

impl EvalReport {
    pub fn new(scale: usize, images: Vec<EvalEntry>, skipped: Vec<String>) -> Self {
        let n = images.len().max(1) as f64;
        let mean_psnr = if images.is_empty() {
            f64::NAN
        } else {
            images.iter().map(|e| e.psnr).sum::<f64>() / n
        };
        let mean_ssim = if images.is_empty() {
            f64::NAN
        } else {
            images.iter().map(|e| e.ssim).sum::<f64>() / n
        };
        Self {
            scale,
            images,
            mean_psnr,
            mean_ssim,
            skipped,
        }
    }
}

/// Removes a `border`-pixel frame.
pub fn shave(plane: &ImagePlane, border: usize) -> Result<ImagePlane> {
    let (h, w) = plane.dims();
    if h <= 2 * border || w <= 2 * border {
        return Err(Error::contract("shave", format!("{h}x{w} too small to shave {border}")));
    }
    plane.crop(border, border, h - 2 * border, w - 2 * border)
}

/// Luma PSNR/SSIM after shaving `scale` pixels from every side.
pub fn eval_luma(pred: &ImagePlane, gt: &ImagePlane, scale: usize) -> Result<(f64, f64)> {
    if !(2..=4).contains(&scale) {
        return Err(Error::contract("eval_protocol", format!("scale {scale} not in 2..=4")));
    }
    check_same("eval_protocol", pred, gt)?;
    let (h, w) = gt.dims();
    let min = 2 * scale + SSIM_WINDOW;
    if h < min || w < min {
        return Err(Error::contract(
            "eval_protocol",
            format!("{h}x{w} image is smaller than {min}x{min} needed at scale {scale}"),
        ));
    }
    let p = shave(pred, scale)?;
    let g = shave(gt, scale)?;
    Ok((psnr(&p, &g)?, ssim(&p, &g)?))
}

/// Converts both images to luma and evaluates them with [`eval_luma`].
pub fn eval_protocol(name: &str, pred: &ColorImage, gt: &ColorImage, scale: usize) -> Result<EvalEntry> {
    let py = rgb_to_ycbcr(pred).y;
    let gy = rgb_to_ycbcr(gt).y;
    let (psnr, ssim) = eval_luma(&py, &gy, scale)?;
    Ok(EvalEntry {
        name: name.to_string(),
        psnr,
        ssim,
    })
}
