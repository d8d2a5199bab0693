//! Naive scalar-loop references shared by the oracle and acceptance tests.

#![allow(dead_code)]

use wdn::imaging::ImagePlane;

pub fn mirror(i: isize, n: usize) -> usize {
    // Reflect without repeating the edge, by walking back and forth.
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

pub fn naive_conv(
    x: &[f64],
    dims: (usize, usize, usize, usize),
    k: &[f64],
    kdims: (usize, usize, usize, usize),
    bias: &[f64],
) -> Vec<f64> {
    let (n, ci, h, w) = dims;
    let (co, _, kh, kw) = kdims;
    let mut out = vec![0.0; n * co * h * w];
    for b in 0..n {
        for o in 0..co {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = bias[o];
                    for c in 0..ci {
                        for i in 0..kh {
                            for j in 0..kw {
                                let sy = mirror(y as isize + i as isize - (kh / 2) as isize, h);
                                let sx = mirror(xx as isize + j as isize - (kw / 2) as isize, w);
                                acc += k[((o * ci + c) * kh + i) * kw + j] * x[((b * ci + c) * h + sy) * w + sx];
                            }
                        }
                    }
                    out[((b * co + o) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    out
}

fn keys(t: f64) -> f64 {
    let a = -0.5;
    let x = t.abs();
    if x < 1.0 {
        1.0 - (a + 3.0) * x * x + (a + 2.0) * x * x * x
    } else if x < 2.0 {
        -4.0 * a + 8.0 * a * x - 5.0 * a * x * x + a * x * x * x
    } else {
        0.0
    }
}

/// Normalized weights of every source index for one output coordinate.
pub fn axis_weights(o: usize, n_in: usize, n_out: usize) -> Vec<(usize, f64)> {
    let ratio = n_out as f64 / n_in as f64;
    let s = ratio.min(1.0);
    let centre = (o as f64 + 0.5) / ratio - 0.5;
    let reach = (2.0 / s).ceil() as isize + 1;
    let mut taps = Vec::new();
    let mut sum = 0.0;
    for j in (centre.floor() as isize - reach)..=(centre.floor() as isize + reach) {
        let wgt = s * keys(s * (centre - j as f64));
        if wgt != 0.0 {
            taps.push((j.clamp(0, n_in as isize - 1) as usize, wgt));
            sum += wgt;
        }
    }
    taps.into_iter().map(|(j, v)| (j, v / sum)).collect()
}

pub fn naive_ssim(a: &ImagePlane, b: &ImagePlane) -> f64 {
    let size = 11;
    let sigma: f64 = 1.5;
    let mut win = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            let dy = i as f64 - 5.0;
            let dx = j as f64 - 5.0;
            win[i * size + j] = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (h, w) = a.dims();
    let mut sum = 0.0;
    let mut count = 0;
    for y0 in 0..=h - size {
        for x0 in 0..=w - size {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..size {
                for j in 0..size {
                    let g = win[i * size + j];
                    let p = a.get(y0 + i, x0 + j);
                    let q = b.get(y0 + i, x0 + j);
                    mx += g * p;
                    my += g * q;
                    sxx += g * p * p;
                    syy += g * q * q;
                    sxy += g * p * q;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

pub fn naive_bicubic(p: &ImagePlane, oh: usize, ow: usize) -> Vec<f64> {
    let (h, w) = p.dims();
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        let wy = axis_weights(y, h, oh);
        for x in 0..ow {
            let wx = axis_weights(x, w, ow);
            let mut acc = 0.0;
            for &(i, a) in &wy {
                for &(j, b) in &wx {
                    acc += a * b * p.get(i, j);
                }
            }
            out[y * ow + x] = acc.clamp(0.0, 1.0);
        }
    }
    out
}

pub fn naive_mse(a: &ImagePlane, b: &ImagePlane) -> f64 {
    let (h, w) = a.dims();
    let mut sq = 0.0;
    for y in 0..h {
        for x in 0..w {
            let d = a.get(y, x) - b.get(y, x);
            sq += d * d;
        }
    }
    sq / (h * w) as f64
}
