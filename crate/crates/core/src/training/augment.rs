//! Random crop, right-angle rotation and horizontal flip.

use crate::error::{Error, Result};
use crate::imaging::ImagePlane;
use crate::rng::Rng;

/// One sampled augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentDraw {
    pub top: usize,
    pub left: usize,
    /// Counter-clockwise quarter turns, 0..4.
    pub quarter_turns: usize,
    pub flip: bool,
}

/// Rotates counter-clockwise by `k` quarter turns.
pub fn rotate90(plane: &ImagePlane, k: usize) -> ImagePlane {
    let (h, w) = plane.dims();
    match k % 4 {
        0 => plane.clone(),
        1 => ImagePlane::from_fn(w, h, |y, x| plane.get(x, w - 1 - y)),
        2 => ImagePlane::from_fn(h, w, |y, x| plane.get(h - 1 - y, w - 1 - x)),
        _ => ImagePlane::from_fn(w, h, |y, x| plane.get(h - 1 - x, y)),
    }
}

pub fn flip_horizontal(plane: &ImagePlane) -> ImagePlane {
    let (h, w) = plane.dims();
    ImagePlane::from_fn(h, w, |y, x| plane.get(y, w - 1 - x))
}

pub fn sample_draw(dims: (usize, usize), patch: usize, rng: &mut Rng) -> Result<AugmentDraw> {
    let (h, w) = dims;
    if h < patch || w < patch || patch == 0 {
        return Err(Error::contract(
            "augment",
            format!("source {h}x{w} is smaller than the {patch}x{patch} patch"),
        ));
    }
    Ok(AugmentDraw {
        top: rng.below(h - patch + 1),
        left: rng.below(w - patch + 1),
        quarter_turns: rng.below(4),
        flip: rng.coin(),
    })
}

pub fn apply_draw(plane: &ImagePlane, patch: usize, draw: &AugmentDraw) -> Result<ImagePlane> {
    let crop = plane.crop(draw.top, draw.left, patch, patch)?;
    let rotated = rotate90(&crop, draw.quarter_turns);
    Ok(if draw.flip { flip_horizontal(&rotated) } else { rotated })
}

/// Crops a random `patch x patch` window and applies a random rotation and flip.
pub fn augment(hr: &ImagePlane, patch: usize, rng: &mut Rng) -> Result<ImagePlane> {
    let draw = sample_draw(hr.dims(), patch, rng)?;
    apply_draw(hr, patch, &draw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImagePlane {
        ImagePlane::from_fn(h, w, |y, x| (y * w + x) as f64 / (h * w) as f64)
    }

    #[test]
    fn identity_draw() {
        let p = ramp(5, 5);
        let d = AugmentDraw {
            top: 0,
            left: 0,
            quarter_turns: 0,
            flip: false,
        };
        assert_eq!(apply_draw(&p, 5, &d).unwrap(), p);
    }

    #[test]
    fn rotation_group() {
        let p = ramp(3, 4);
        assert_eq!(rotate90(&rotate90(&p, 1), 1), rotate90(&p, 2));
        assert_eq!(rotate90(&rotate90(&p, 1), 3), p);
        assert_eq!(rotate90(&p, 1).dims(), (4, 3));
        // top-right corner moves to top-left on a counter-clockwise turn
        assert_eq!(rotate90(&p, 1).get(0, 0), p.get(0, 3));
    }

    #[test]
    fn too_small_source() {
        assert!(augment(&ramp(4, 8), 6, &mut Rng::new(0)).is_err());
    }
}
