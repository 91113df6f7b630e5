//! Scale-equivariant steerable filtering: Hermite–Gaussian bases, multi-scale
//! convolution, image rescaling, the equivariance error and the log-polar
//! transform.

mod basis;
mod conv;
mod log_polar;
mod metric;

pub use basis::{hermite, steerable_basis, ScaleFilterBank};
pub use conv::{correlate, rescale, scale_project, ses_convolve};
pub use log_polar::{log_polar, log_polar_inverse, ssim, LogPolar};
pub use metric::{
    equivariance_error, identity_error, toy_image, toy_images, EquivarianceReport, FeatureMap, ScaleDelta,
    SesLayer, VanillaLayer,
};

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EquivError {
    #[error("image must be at least 3x3 and finite, got {0}x{1}")]
    InvalidImage(usize, usize),
    #[error("filter size {0} must be odd")]
    EvenFilterSize(usize),
    #[error("image {image_h}x{image_w} is smaller than the {filter}x{filter} filter")]
    ImageTooSmall {
        image_h: usize,
        image_w: usize,
        filter: usize,
    },
    #[error("feature stack is empty")]
    EmptyStack,
    #[error("feature map shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("scale {0} must be positive and finite")]
    InvalidScale(f64),
    #[error("invalid filter bank: {0}")]
    InvalidBank(String),
    #[error("center ({0}, {1}) is not strictly inside the image")]
    CenterOnBoundary(f64, f64),
    #[error("invalid log-polar grid: {0}")]
    InvalidGrid(String),
}

/// Real-valued image, indexed `[row, col]` = `[v, u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    grid: Array2<f64>,
    pub spacing: f64,
}

impl Image2D {
    pub fn new(grid: Array2<f64>) -> Result<Self, EquivError> {
        let (h, w) = grid.dim();
        if h < 3 || w < 3 || !grid.iter().all(|x| x.is_finite()) {
            return Err(EquivError::InvalidImage(h, w));
        }
        Ok(Self { grid, spacing: 1.0 })
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut((usize, usize)) -> f64) -> Result<Self, EquivError> {
        Self::new(Array2::from_shape_fn((height, width), f))
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self, EquivError> {
        Self::new(Array2::zeros((height, width)))
    }

    pub fn grid(&self) -> &Array2<f64> {
        &self.grid
    }

    pub fn into_grid(self) -> Array2<f64> {
        self.grid
    }

    pub fn height(&self) -> usize {
        self.grid.nrows()
    }

    pub fn width(&self) -> usize {
        self.grid.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.dim()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.grid[[row, col]]
    }

    /// Geometric center `((W − 1)/2, (H − 1)/2)` as `(u, v)`.
    pub fn center(&self) -> (f64, f64) {
        ((self.width() as f64 - 1.0) / 2.0, (self.height() as f64 - 1.0) / 2.0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.grid.iter().map(|x| x * x).sum()
    }

    pub fn sub(&self, other: &Image2D) -> Result<Image2D, EquivError> {
        check_same_shape(self, other)?;
        Ok(Image2D {
            grid: &self.grid - &other.grid,
            spacing: self.spacing,
        })
    }

    pub fn scaled_add(&self, a: f64, other: &Image2D, b: f64) -> Result<Image2D, EquivError> {
        check_same_shape(self, other)?;
        Ok(Image2D {
            grid: &self.grid * a + &other.grid * b,
            spacing: self.spacing,
        })
    }

    /// Bilinear sample at fractional `(row, col)` with edge clamping.
    pub fn sample_bilinear(&self, row: f64, col: f64) -> f64 {
        let (h, w) = self.shape();
        let r = row.clamp(0.0, (h - 1) as f64);
        let c = col.clamp(0.0, (w - 1) as f64);
        let r0 = r.floor() as usize;
        let c0 = c.floor() as usize;
        let r1 = (r0 + 1).min(h - 1);
        let c1 = (c0 + 1).min(w - 1);
        let fr = r - r0 as f64;
        let fc = c - c0 as f64;
        let g = &self.grid;
        g[[r0, c0]] * (1.0 - fr) * (1.0 - fc)
            + g[[r0, c1]] * (1.0 - fr) * fc
            + g[[r1, c0]] * fr * (1.0 - fc)
            + g[[r1, c1]] * fr * fc
    }
}

pub(crate) fn check_same_shape(a: &Image2D, b: &Image2D) -> Result<(), EquivError> {
    if a.shape() != b.shape() {
        return Err(EquivError::ShapeMismatch(a.shape(), b.shape()));
    }
    Ok(())
}

/// `‖a − b‖² / ‖b‖²`; `None` when `b` is identically zero.
pub fn relative_sq_error(a: &Image2D, b: &Image2D) -> Result<Option<f64>, EquivError> {
    let den = b.norm_sq();
    let num = a.sub(b)?.norm_sq();
    Ok((den > 0.0).then(|| num / den))
}
