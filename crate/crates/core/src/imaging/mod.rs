//! Deterministic image operations: colour conversion, resampling, frequency
//! separation, block rearrangement, Gaussian suppression and PNG I/O.

pub mod color;
pub mod gaussian;
pub mod plane;
pub mod png_io;
pub mod rearrange;
pub mod resize;
pub mod sobel;

pub use color::{rgb_to_ycbcr, ycbcr_to_rgb, YCbCr};
pub use gaussian::{gaussian_blur, gaussian_kernel, gaussian_taps, SUPPRESSOR_SIGMA, SUPPRESSOR_SIZE};
pub use plane::{batch_tensor, ColorImage, ImagePlane};
pub use png_io::{read_png, write_gray_png, write_png};
pub use rearrange::{depth_to_space, nested_offset_channel, space_to_depth};
pub use resize::{bicubic_resize, upscale};
pub use sobel::{sobel_separate, FrequencyPair, SOBEL_M, SOBEL_N};

use crate::error::Result;

/// Space-to-depth of a single plane: `b * b` planes in block-offset order.
pub fn plane_space_to_depth(plane: &ImagePlane, block: usize) -> Result<Vec<ImagePlane>> {
    let t = space_to_depth(&plane.to_tensor::<f64>(), block)?;
    (0..block * block).map(|c| ImagePlane::from_tensor(&t, 0, c)).collect()
}

/// Inverse of [`plane_space_to_depth`].
pub fn plane_depth_to_space(planes: &[ImagePlane], block: usize) -> Result<ImagePlane> {
    let refs: Vec<_> = planes.iter().map(|p| p.to_tensor::<f64>()).collect();
    let parts: Vec<_> = refs.iter().collect();
    let stacked = crate::tensor::Tensor::concat_channels(&parts)?;
    ImagePlane::from_tensor(&depth_to_space(&stacked, block)?, 0, 0)
}
