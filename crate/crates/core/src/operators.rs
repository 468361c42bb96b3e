//! Classical difference-map operators: log-ratio and log-mean-ratio (LMR).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv2d_same, ensure_same_dims, Kernel, Matrix2};

/// Magnitudes below this are treated as zero when dividing neighborhood means.
pub const RATIO_FLOOR: f64 = 1e-12;

/// Per-pixel change magnitude; every value is non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceMap {
    values: Matrix2,
}

impl DifferenceMap {
    pub fn new(values: Matrix2) -> Result<Self> {
        if let Some(v) = values.as_slice().iter().find(|v| **v < 0.0) {
            return Err(Error::invalid(format!(
                "difference map values must be non-negative, found {v}"
            )));
        }
        Ok(Self { values })
    }

    /// Takes `|x|` elementwise, which always satisfies the invariant.
    pub fn from_abs(values: &Matrix2) -> Self {
        Self {
            values: values.map(f64::abs),
        }
    }

    pub fn values(&self) -> &Matrix2 {
        &self.values
    }

    pub fn into_values(self) -> Matrix2 {
        self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }
}

/// `ln(x + 1)` per pixel. Intensities must be non-negative.
pub fn log_transform(image: &Matrix2) -> Result<Matrix2> {
    if let Some(v) = image.as_slice().iter().find(|v| **v < 0.0) {
        return Err(Error::invalid(format!(
            "intensities must be non-negative, found {v}"
        )));
    }
    Ok(image.map(f64::ln_1p))
}

/// `|ln(i1 + 1) - ln(i2 + 1)|` per pixel.
pub fn log_ratio(i1: &Matrix2, i2: &Matrix2) -> Result<DifferenceMap> {
    ensure_same_dims(i1, i2, "log_ratio")?;
    let l1 = log_transform(i1)?;
    let l2 = log_transform(i2)?;
    Ok(DifferenceMap::from_abs(&l1.zip_map(&l2, |a, b| a - b)))
}

/// Ratio of neighborhood means of the log images, `|μ1 / μ2|`.
///
/// Means are taken with a zero-padded `window × window` box filter. Where
/// `|μ2|` falls below [`RATIO_FLOOR`] the result is 0 if `|μ1|` is also below
/// it, otherwise `μ2` is replaced by `±RATIO_FLOOR` keeping its sign.
pub fn lmr(i1: &Matrix2, i2: &Matrix2, window: usize) -> Result<DifferenceMap> {
    ensure_same_dims(i1, i2, "lmr")?;
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "LMR window must be odd and positive, got {window}"
        )));
    }
    let mean = Kernel::mean(window)?;
    let mu1 = conv2d_same(&log_transform(i1)?, &mean)?;
    let mu2 = conv2d_same(&log_transform(i2)?, &mean)?;
    Ok(DifferenceMap::from_abs(&mu1.zip_map(&mu2, safe_ratio)))
}

pub(crate) fn safe_ratio(num: f64, den: f64) -> f64 {
    if den.abs() >= RATIO_FLOOR {
        num / den
    } else if num.abs() < RATIO_FLOOR {
        0.0
    } else {
        num / RATIO_FLOOR.copysign(den)
    }
}
