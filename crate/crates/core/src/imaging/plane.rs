use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Resolution of the fixed-point grid that plane values live on.
const GRID: f64 = (1u64 << 40) as f64;

/// Rounds `v` to the nearest multiple of 2^-40.
///
/// Plane values are kept on this grid so that adding or subtracting two
/// planes of magnitude below 2^12 is exact in `f64`; the frequency split
/// relies on `hf + (plane - hf) == plane` holding bit for bit.
#[inline]
pub fn snap(v: f64) -> f64 {
    (v * GRID).round() / GRID
}

/// Single-channel floating-point image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::contract("image_plane", "dimensions must be at least 1"));
        }
        if values.len() != height * width {
            return Err(Error::contract(
                "image_plane",
                format!(
                    "{height}x{width} plane needs {} values, got {}",
                    height * width,
                    values.len()
                ),
            ));
        }
        Ok(Self {
            height,
            width,
            values: values.into_iter().map(snap).collect(),
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("nonzero dims")
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x));
            }
        }
        Self::new(height, width, values).expect("nonzero dims")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| snap(f(v))).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::contract(
                "image_plane",
                format!("dimension mismatch {:?} vs {:?}", self.dims(), other.dims()),
            ));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| snap(f(a, b)))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Copy of the window `[top, top + h) x [left, left + w)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.height || left + w > self.width || h == 0 || w == 0 {
            return Err(Error::contract(
                "crop",
                format!("window {h}x{w}@({top},{left}) outside {}x{}", self.height, self.width),
            ));
        }
        Ok(Self::from_fn(h, w, |y, x| self.get(top + y, left + x)))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `[1, 1, H, W]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[1, 1, self.height, self.width],
            self.values.iter().map(|&v| T::lit(v)).collect(),
        )
        .expect("plane dims")
    }

    /// Plane `(batch, channel)` of a 4-d tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, batch: usize, channel: usize) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if batch >= n || channel >= c {
            return Err(Error::contract(
                "image_plane",
                format!("plane ({batch},{channel}) outside tensor {:?}", t.shape()),
            ));
        }
        let base = (batch * c + channel) * h * w;
        Self::new(h, w, t.data()[base..base + h * w].iter().map(|v| v.as_f64()).collect())
    }
}

/// Stacks equally sized planes into a `[N, 1, H, W]` tensor.
pub fn batch_tensor<T: Real>(planes: &[&ImagePlane]) -> Result<Tensor<T>> {
    let first = planes
        .first()
        .ok_or_else(|| Error::contract("batch_tensor", "no planes"))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(planes.len() * h * w);
    for p in planes {
        if p.dims() != (h, w) {
            return Err(Error::contract(
                "batch_tensor",
                format!("plane {:?} differs from {:?}", p.dims(), (h, w)),
            ));
        }
        data.extend(p.values().iter().map(|&v| T::lit(v)));
    }
    Tensor::from_vec(&[planes.len(), 1, h, w], data)
}

/// Three equally sized planes in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage {
    pub r: ImagePlane,
    pub g: ImagePlane,
    pub b: ImagePlane,
}

impl ColorImage {
    pub fn new(r: ImagePlane, g: ImagePlane, b: ImagePlane) -> Result<Self> {
        if r.dims() != g.dims() || r.dims() != b.dims() {
            return Err(Error::contract("color_image", "channel dimensions differ"));
        }
        Ok(Self { r, g, b })
    }

    pub fn gray(plane: ImagePlane) -> Self {
        Self {
            r: plane.clone(),
            g: plane.clone(),
            b: plane,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.r.dims()
    }

    pub fn planes(&self) -> [&ImagePlane; 3] {
        [&self.r, &self.g, &self.b]
    }

    pub fn map_planes(&self, mut f: impl FnMut(&ImagePlane) -> Result<ImagePlane>) -> Result<Self> {
        Self::new(f(&self.r)?, f(&self.g)?, f(&self.b)?)
    }
}
