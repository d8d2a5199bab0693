//! Space-to-depth and depth-to-space.
//!
//! Channel ordering: source channel `c` and in-block offset `(r, s)` map to
//! output channel `c * b * b + r * b + s`, row-major over the block.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `[N, C, H, W]` to `[N, C*b*b, H/b, W/b]`.
pub fn space_to_depth<T: Real>(x: &Tensor<T>, block: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if block == 0 || h % block != 0 || w % block != 0 {
        return Err(Error::contract(
            "space_to_depth",
            format!("{h}x{w} is not divisible by block {block}"),
        ));
    }
    let (oh, ow) = (h / block, w / block);
    let oc = c * block * block;
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        for ch in 0..c {
            let plane = &src[(b * c + ch) * h * w..][..h * w];
            for r in 0..block {
                for s in 0..block {
                    let dst_c = ch * block * block + r * block + s;
                    let dst = &mut out[(b * oc + dst_c) * oh * ow..][..oh * ow];
                    for i in 0..oh {
                        let row = &plane[(i * block + r) * w..][..w];
                        for j in 0..ow {
                            dst[i * ow + j] = row[j * block + s];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, oc, oh, ow], out)
}

/// `[N, C*b*b, H, W]` to `[N, C, H*b, W*b]`; exact inverse of [`space_to_depth`].
pub fn depth_to_space<T: Real>(x: &Tensor<T>, block: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let bb = block * block;
    if block == 0 || c % bb != 0 {
        return Err(Error::contract(
            "depth_to_space",
            format!("{c} channels are not divisible by {bb}"),
        ));
    }
    let oc = c / bb;
    let (oh, ow) = (h * block, w * block);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        for ch in 0..oc {
            let dst = &mut out[(b * oc + ch) * oh * ow..][..oh * ow];
            for r in 0..block {
                for s in 0..block {
                    let src_c = ch * bb + r * block + s;
                    let plane = &src[(b * c + src_c) * h * w..][..h * w];
                    for i in 0..h {
                        let row = &mut dst[(i * block + r) * ow..][..ow];
                        for j in 0..w {
                            row[j * block + s] = plane[i * w + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, oc, oh, ow], out)
}

/// Index of the 4x4-block channel holding offset `(2*r2 + r1, 2*s2 + s1)`,
/// i.e. path `(r2, s2)` of the stage-1 group `(r1, s1)`.
pub fn nested_offset_channel(group: (usize, usize), path: (usize, usize)) -> usize {
    let (r1, s1) = group;
    let (r2, s2) = path;
    (2 * r2 + r1) * 4 + (2 * s2 + s1)
}
