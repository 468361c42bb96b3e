//! Dense 2-D arrays and the convolution / activation primitives everything
//! else is built on.
//!
//! Convolutions are "same"-size cross-correlations over a zero-padded input;
//! the kernel is never flipped, in the forward pass or in any gradient. Within
//! one output pixel the products are always accumulated in row-major kernel
//! order starting from `0.0`, and the bias is added last, so results are
//! bitwise reproducible and match a naive per-pixel loop exactly.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 2-D grid of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at index {pos}")));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged or empty input,
    /// so it is meant for literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        assert!(rows.iter().all(|r| r.as_ref().len() == cols), "ragged rows");
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Self::new(rows.len(), cols, data).expect("valid literal matrix")
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Wraps a buffer produced inside the crate, where length is known to match.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        (row < self.rows && col < self.cols).then(|| self.data[row * self.cols + col])
    }

    pub fn same_dims(&self, other: &Matrix2) -> bool {
        self.dims() == other.dims()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix2 {
        Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Elementwise combination; the caller guarantees equal dimensions.
    pub fn zip_map(&self, other: &Matrix2, f: impl Fn(f64, f64) -> f64) -> Matrix2 {
        assert!(self.same_dims(other), "zip_map on mismatched dimensions");
        Self::from_raw(
            self.rows,
            self.cols,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix2 {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        assert!(
            r < self.rows && c < self.cols,
            "index ({r}, {c}) out of bounds"
        );
        &self.data[r * self.cols + c]
    }
}

pub(crate) fn ensure_same_dims(a: &Matrix2, b: &Matrix2, what: &str) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{what}: dimension mismatch {}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )))
    }
}

/// Square convolution kernel with odd side length and a scalar bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
    bias: f64,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>, bias: f64) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "kernel size must be odd and positive, got {size}"
            )));
        }
        if weights.len() != size * size {
            return Err(Error::invalid(format!(
                "kernel of size {size} needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        Ok(Self {
            size,
            weights,
            bias,
        })
    }

    pub fn zeros(size: usize) -> Result<Self> {
        Self::new(size, vec![0.0; size * size], 0.0)
    }

    /// Box filter whose weights are all `1 / size²`.
    pub fn mean(size: usize) -> Result<Self> {
        let w = 1.0 / (size * size) as f64;
        Self::new(size, vec![w; size * size], 0.0)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.weights[u * self.size + v]
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn bias_mut(&mut self) -> &mut f64 {
        &mut self.bias
    }

    pub fn set_bias(&mut self, bias: f64) {
        self.bias = bias;
    }
}

/// Half-open range of output indices whose input index `i + offset - pad`
/// lies inside `0..len`.
#[inline]
fn valid_range(len: usize, offset: usize, pad: usize) -> (usize, usize) {
    let start = pad.saturating_sub(offset);
    let end = (len + pad).saturating_sub(offset).min(len);
    (start, end)
}

fn check_kernel_fits(input: &Matrix2, size: usize) -> Result<()> {
    if size > input.rows.min(input.cols) {
        return Err(Error::invalid(format!(
            "kernel size {size} exceeds image {}x{}",
            input.rows, input.cols
        )));
    }
    Ok(())
}

/// Zero-padded "same" cross-correlation plus bias.
pub fn conv2d_same(input: &Matrix2, kernel: &Kernel) -> Result<Matrix2> {
    check_kernel_fits(input, kernel.size)?;
    let (rows, cols) = input.dims();
    let k = kernel.size;
    let pad = k / 2;
    let mut out = vec![0.0; rows * cols];

    for u in 0..k {
        let (i0, i1) = valid_range(rows, u, pad);
        for v in 0..k {
            let w = kernel.weights[u * k + v];
            let (j0, j1) = valid_range(cols, v, pad);
            for i in i0..i1 {
                let src = &input.data[(i + u - pad) * cols..][..cols];
                let dst = &mut out[i * cols..][..cols];
                for j in j0..j1 {
                    dst[j] += w * src[j + v - pad];
                }
            }
        }
    }
    if kernel.bias != 0.0 {
        out.iter_mut().for_each(|o| *o += kernel.bias);
    }
    Ok(Matrix2::from_raw(rows, cols, out))
}

/// Gradient of `Σ upstream ⊙ conv2d_same(input, kernel)` with respect to the
/// kernel weights and bias only.
pub(crate) fn conv2d_kernel_grad(
    input: &Matrix2,
    size: usize,
    upstream: &Matrix2,
) -> (Vec<f64>, f64) {
    let (rows, cols) = input.dims();
    let pad = size / 2;
    let mut grad = vec![0.0; size * size];
    for u in 0..size {
        let (i0, i1) = valid_range(rows, u, pad);
        for v in 0..size {
            let (j0, j1) = valid_range(cols, v, pad);
            let mut acc = 0.0;
            for i in i0..i1 {
                let src = &input.data[(i + u - pad) * cols..][..cols];
                let up = &upstream.data[i * cols..][..cols];
                for j in j0..j1 {
                    acc += up[j] * src[j + v - pad];
                }
            }
            grad[u * size + v] = acc;
        }
    }
    (grad, upstream.sum())
}

/// Backward pass of [`conv2d_same`]: gradients of `Σ upstream ⊙ output` with
/// respect to the input image and to the kernel (weights and bias).
pub fn conv2d_backward(
    input: &Matrix2,
    kernel: &Kernel,
    upstream: &Matrix2,
) -> Result<(Matrix2, Kernel)> {
    check_kernel_fits(input, kernel.size)?;
    ensure_same_dims(input, upstream, "conv2d_backward upstream")?;
    let (rows, cols) = input.dims();
    let k = kernel.size;
    let pad = k / 2;

    let (weights, bias) = conv2d_kernel_grad(input, k, upstream);

    // Scatter form of the full correlation with the rotated kernel.
    let mut grad_input = vec![0.0; rows * cols];
    for u in 0..k {
        let (i0, i1) = valid_range(rows, u, pad);
        for v in 0..k {
            let w = kernel.weights[u * k + v];
            let (j0, j1) = valid_range(cols, v, pad);
            for i in i0..i1 {
                let up = &upstream.data[i * cols..][..cols];
                let dst = &mut grad_input[(i + u - pad) * cols..][..cols];
                for j in j0..j1 {
                    dst[j + v - pad] += w * up[j];
                }
            }
        }
    }

    Ok((
        Matrix2::from_raw(rows, cols, grad_input),
        Kernel {
            size: k,
            weights,
            bias,
        },
    ))
}

#[inline]
pub(crate) fn softplus_scalar(x: f64) -> f64 {
    // max(x, 0) + ln(1 + e^-|x|) never overflows.
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise `ln(1 + e^x)`.
pub fn softplus(x: &Matrix2) -> Matrix2 {
    x.map(softplus_scalar)
}

/// Elementwise derivative of [`softplus`], the logistic sigmoid.
pub fn softplus_grad(x: &Matrix2) -> Matrix2 {
    x.map(sigmoid_scalar)
}
