//! Library operators against naive scalar-loop references.

use wdn::autograd::Graph;
use wdn::imaging::{bicubic_resize, sobel_separate, ImagePlane};
use wdn::metrics::{mse, psnr, ssim};
use wdn::{Rng, Tensor};

mod common;
use common::*;

const INSTANCES: u64 = 24;

fn random_plane(h: usize, w: usize, rng: &mut Rng) -> ImagePlane {
    ImagePlane::from_fn(h, w, |_, _| rng.uniform(0.0, 1.0))
}

#[test]
fn conv2d_matches_naive_loops() {
    let mut rng = Rng::new(11);
    for _ in 0..INSTANCES {
        let n = 1 + rng.below(2);
        let ci = 1 + rng.below(3);
        let co = 1 + rng.below(3);
        let kh = [1, 3, 5][rng.below(3)];
        let kw = [1, 3, 5][rng.below(3)];
        let h = 3 + rng.below(9);
        let w = 3 + rng.below(9);
        let x: Vec<f64> = (0..n * ci * h * w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let k: Vec<f64> = (0..co * ci * kh * kw).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let bias: Vec<f64> = (0..co).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut g = Graph::<f64>::new();
        let xv = g.input(Tensor::from_vec(&[n, ci, h, w], x.clone()).unwrap());
        let kv = g.input(Tensor::from_vec(&[co, ci, kh, kw], k.clone()).unwrap());
        let bv = g.input(Tensor::from_vec(&[co], bias.clone()).unwrap());
        let y = g.conv2d(xv, kv, Some(bv), 1).unwrap();
        let expect = naive_conv(&x, (n, ci, h, w), &k, (co, ci, kh, kw), &bias);
        assert_eq!(g.value(y).shape(), &[n, co, h, w]);
        for (a, b) in g.value(y).data().iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-7, "conv {a} vs {b}");
        }
    }
}

#[test]
fn bicubic_matches_direct_two_dimensional_sum() {
    let mut rng = Rng::new(12);
    for _ in 0..INSTANCES {
        let (h, w) = (2 + rng.below(14), 2 + rng.below(14));
        let (oh, ow) = (1 + rng.below(30), 1 + rng.below(30));
        let p = random_plane(h, w, &mut rng);
        let out = bicubic_resize(&p, oh, ow).unwrap();
        for (k, expect) in naive_bicubic(&p, oh, ow).into_iter().enumerate() {
            assert!((out.values()[k] - expect).abs() <= 1e-7, "{h}x{w}->{oh}x{ow} at {k}");
        }
    }
}

#[test]
fn mse_and_psnr_match_scalar_formulas() {
    let mut rng = Rng::new(13);
    for _ in 0..INSTANCES {
        let (h, w) = (1 + rng.below(20), 1 + rng.below(20));
        let a = random_plane(h, w, &mut rng);
        let b = random_plane(h, w, &mut rng);
        let m = naive_mse(&a, &b);
        assert!((mse(&a, &b).unwrap() - m).abs() <= 1e-9);
        let p = -10.0 * m.log10();
        assert!((psnr(&a, &b).unwrap() - p).abs() <= 1e-9);
    }
}

#[test]
fn ssim_matches_naive_windows() {
    let mut rng = Rng::new(14);
    for _ in 0..INSTANCES {
        let (h, w) = (11 + rng.below(10), 11 + rng.below(10));
        let a = random_plane(h, w, &mut rng);
        let noise = rng.uniform(0.0, 0.5);
        let b = a.map(|v| (v + noise * (rng_like(v) - 0.5)).clamp(0.0, 1.0));
        let got = ssim(&a, &b).unwrap();
        let expect = naive_ssim(&a, &b);
        assert!((got - expect).abs() <= 1e-7, "{got} vs {expect}");
    }
}

/// Deterministic pseudo-noise from a pixel value.
fn rng_like(v: f64) -> f64 {
    (v * 7919.0).sin().abs()
}

#[test]
fn sobel_split_matches_naive_gradient() {
    let mut rng = Rng::new(15);
    let m = [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]];
    let n = [[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]];
    for _ in 0..INSTANCES {
        let (h, w) = (2 + rng.below(16), 2 + rng.below(16));
        let p = random_plane(h, w, &mut rng);
        let mut mag = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (mut gm, mut gn) = (0.0, 0.0);
                for i in 0..3 {
                    for j in 0..3 {
                        let v = p.get(
                            mirror(y as isize + i as isize - 1, h),
                            mirror(x as isize + j as isize - 1, w),
                        );
                        gm += m[i][j] * v;
                        gn += n[i][j] * v;
                    }
                }
                mag[y * w + x] = (gm * gm + gn * gn).sqrt();
            }
        }
        let peak = mag.iter().cloned().fold(0.0, f64::max);
        let pair = sobel_separate(&p).unwrap();
        for y in 0..h {
            for x in 0..w {
                let expect = if peak > 0.0 { mag[y * w + x] / peak } else { 0.0 };
                assert!((pair.hf.get(y, x) - expect).abs() <= 1e-7);
                assert!((pair.lf.get(y, x) - (p.get(y, x) - expect)).abs() <= 1e-7);
            }
        }
    }
}
