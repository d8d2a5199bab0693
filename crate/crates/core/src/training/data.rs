//! Training images, augmented batches and their tensor form.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{read_png, rgb_to_ycbcr, ImagePlane};
use crate::model::{NetworkInputs, WdnConfig};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

use super::augment::augment;
use super::subproblems::{build_subproblems, crop_to_multiple, SubProblemSet};

/// HR luminance planes for training and validation.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<(String, ImagePlane)>,
    /// Validation images; the training images are used when empty.
    pub validation: Vec<(String, ImagePlane)>,
}

/// Sorted `*.png` paths of a directory.
pub fn png_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(format!("cannot list {}", dir.display()), e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::io(format!("cannot list {}", dir.display()), e))?
            .path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn load_luma(dir: &Path) -> Result<Vec<(String, ImagePlane)>> {
    png_files(dir)?
        .into_iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((name, rgb_to_ycbcr(&read_png(&p)?).y))
        })
        .collect()
}

impl Dataset {
    pub fn from_planes(train: Vec<ImagePlane>) -> Self {
        Self {
            train: train
                .into_iter()
                .enumerate()
                .map(|(i, p)| (format!("{i}"), p))
                .collect(),
            validation: Vec::new(),
        }
    }

    /// Loads the luminance of every PNG in `train_dir` (and `val_dir`).
    pub fn from_dirs(train_dir: impl AsRef<Path>, val_dir: Option<&Path>) -> Result<Self> {
        let train = load_luma(train_dir.as_ref())?;
        if train.is_empty() {
            return Err(Error::Config(format!(
                "no PNG images in {}",
                train_dir.as_ref().display()
            )));
        }
        let validation = match val_dir {
            Some(d) => load_luma(d)?,
            None => Vec::new(),
        };
        Ok(Self { train, validation })
    }

    pub fn validation_images(&self) -> &[(String, ImagePlane)] {
        if self.validation.is_empty() {
            &self.train
        } else {
            &self.validation
        }
    }

    /// Sub-problems of every validation image, cropped to a valid size.
    pub fn validation_sets(&self, config: &WdnConfig) -> Result<Vec<SubProblemSet>> {
        let m = required_multiple(config.scale);
        self.validation_images()
            .iter()
            .map(|(_, p)| build_subproblems(&crop_to_multiple(p, m)?, config))
            .collect()
    }

    /// `batch` augmented patches drawn with `rng`.
    pub fn sample_batch(
        &self,
        config: &WdnConfig,
        patch: usize,
        batch: usize,
        rng: &mut Rng,
    ) -> Result<Vec<SubProblemSet>> {
        if self.train.is_empty() {
            return Err(Error::Config("the training set is empty".into()));
        }
        (0..batch)
            .map(|_| {
                let (_, img) = &self.train[rng.below(self.train.len())];
                build_subproblems(&augment(img, patch, rng)?, config)
            })
            .collect()
    }
}

/// HR sizes must be multiples of this for a given scale.
pub fn required_multiple(scale: usize) -> usize {
    let mut m = 4;
    while m % scale != 0 {
        m += 4;
    }
    m
}

/// Checks the HR patch size for a scale: a multiple of 8 and of the scale.
pub fn validate_patch(patch: usize, scale: usize) -> Result<()> {
    if patch == 0 || patch % 8 != 0 || patch % scale != 0 {
        return Err(Error::Config(format!(
            "patch size {patch} must be a positive multiple of 8 and of the scale {scale}"
        )));
    }
    Ok(())
}

/// A batch of sub-problem sets as tensors.
#[derive(Clone, Debug)]
pub struct BatchTensors<T> {
    pub inputs: NetworkInputs<T>,
    /// Eight `[N, 1, 2h, 2w]` stage-1 targets in module order.
    pub set1: Vec<Tensor<T>>,
    /// `[N, 1, H, W]` hf and lf targets.
    pub set2: Vec<Tensor<T>>,
    pub set3: Tensor<T>,
}

fn stack<T: Real>(planes: &[&ImagePlane]) -> Result<Tensor<T>> {
    let (h, w) = planes[0].dims();
    let mut data = Vec::with_capacity(planes.len() * h * w);
    for p in planes {
        if p.dims() != (h, w) {
            return Err(Error::contract("batch", "sub-problem planes differ in size"));
        }
        data.extend(p.values().iter().map(|&v| T::lit(v)));
    }
    Tensor::from_vec(&[planes.len(), 1, h, w], data)
}

/// `[N, C, h, w]` from `C` planes per sample.
fn stack_channels<T: Real>(samples: &[&[ImagePlane]]) -> Result<Tensor<T>> {
    let c = samples[0].len();
    let (h, w) = samples[0][0].dims();
    let mut data = Vec::with_capacity(samples.len() * c * h * w);
    for s in samples {
        for p in s.iter() {
            if p.dims() != (h, w) || s.len() != c {
                return Err(Error::contract("batch", "samples differ in size"));
            }
            data.extend(p.values().iter().map(|&v| T::lit(v)));
        }
    }
    Tensor::from_vec(&[samples.len(), c, h, w], data)
}

impl<T: Real> BatchTensors<T> {
    pub fn from_sets(sets: &[SubProblemSet]) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::contract("batch", "empty batch"));
        }
        let half = sets[0].inputs.len() / 2;
        let hf: Vec<&[ImagePlane]> = sets.iter().map(|s| &s.inputs[..half]).collect();
        let lf: Vec<&[ImagePlane]> = sets.iter().map(|s| &s.inputs[half..]).collect();
        let set1 = (0..sets[0].set1.len())
            .map(|m| stack(&sets.iter().map(|s| &s.set1[m]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let set2 = (0..2)
            .map(|b| stack(&sets.iter().map(|s| &s.set2[b]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            inputs: NetworkInputs {
                hf: stack_channels(&hf)?,
                lf: stack_channels(&lf)?,
            },
            set1,
            set2,
            set3: stack(&sets.iter().map(|s| &s.set3).collect::<Vec<_>>())?,
        })
    }
}
