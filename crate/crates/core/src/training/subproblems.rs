//! Ground-truth sub-problems and network inputs for one HR sample.

use crate::error::{Error, Result};
use crate::imaging::{bicubic_resize, plane_space_to_depth, upscale, ColorImage, ImagePlane};
use crate::model::wdn::split_bands;
use crate::model::WdnConfig;

/// Targets of the three stages plus the rearranged inputs.
///
/// Band-major ordering is used throughout: index 0..4 (or 0..16) holds the
/// high-frequency planes and the rest the low-frequency ones. Each band's
/// block-2 phases are in row-major offset order, which is also the order of
/// the stage-1 modules.
#[derive(Clone, Debug, PartialEq)]
pub struct SubProblemSet {
    /// Eight 2h x 2w planes (empty without scale division).
    pub set1: Vec<ImagePlane>,
    /// High and low frequency planes at full resolution.
    pub set2: [ImagePlane; 2],
    /// The HR image itself.
    pub set3: ImagePlane,
    /// Space-to-depth of the bicubic-upscaled bands of the degraded image.
    pub inputs: Vec<ImagePlane>,
}

impl SubProblemSet {
    pub fn target_count(&self) -> usize {
        self.set1.len() + self.set2.len() + 1
    }
}

/// Crops `plane` to the largest size whose sides are multiples of `m`.
pub fn crop_to_multiple(plane: &ImagePlane, m: usize) -> Result<ImagePlane> {
    let (h, w) = plane.dims();
    let (ch, cw) = (h / m * m, w / m * m);
    if ch == 0 || cw == 0 {
        return Err(Error::contract(
            "degrade",
            format!("{h}x{w} is smaller than the scale factor {m}"),
        ));
    }
    plane.crop(0, 0, ch, cw)
}

/// Bicubic antialiased downsampling by `scale` after cropping to a multiple.
pub fn degrade_plane(hr: &ImagePlane, scale: usize) -> Result<ImagePlane> {
    if scale == 0 {
        return Err(Error::contract("degrade", "scale must be positive"));
    }
    let hr = crop_to_multiple(hr, scale)?;
    bicubic_resize(&hr, hr.height() / scale, hr.width() / scale)
}

/// Degrades every channel of a colour image.
pub fn degrade(hr: &ColorImage, scale: usize) -> Result<ColorImage> {
    hr.map_planes(|p| degrade_plane(p, scale))
}

/// Builds every target and input for one HR luminance plane.
pub fn build_subproblems(hr: &ImagePlane, config: &WdnConfig) -> Result<SubProblemSet> {
    config.validate()?;
    let (h, w) = hr.dims();
    let need = lcm(4, config.scale);
    if h % need != 0 || w % need != 0 {
        return Err(Error::contract(
            "build_subproblems",
            format!(
                "HR size {h}x{w} must be divisible by {need} (4 and the scale {})",
                config.scale
            ),
        ));
    }
    let (hf, lf) = split_bands(hr, config)?;
    let set1 = if config.scale_division {
        let mut s = plane_space_to_depth(&hf, 2)?;
        s.extend(plane_space_to_depth(&lf, 2)?);
        s
    } else {
        Vec::new()
    };
    let lr = degrade_plane(hr, config.scale)?;
    let up = upscale(&lr, config.scale)?;
    let (ihf, ilf) = split_bands(&up, config)?;
    let block = config.input_block();
    let mut inputs = plane_space_to_depth(&ihf, block)?;
    inputs.extend(plane_space_to_depth(&ilf, block)?);
    Ok(SubProblemSet {
        set1,
        set2: [hf, lf],
        set3: hr.clone(),
        inputs,
    })
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}
