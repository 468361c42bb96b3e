//! Forward pass of the two-branch shallow network.
//!
//! Each branch convolves both acquisitions with the same kernels, subtracts
//! the activated feature maps, and collapses the N difference channels with a
//! 1×1 fusion. The two branch outputs (3×3 and 5×5 scales) are fused once more
//! into the final map `M`. Every activation is softplus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv2d_same, ensure_same_dims, softplus_scalar, Kernel, Matrix2};

pub const SMALL_SCALE: usize = 3;
pub const LARGE_SCALE: usize = 5;

/// Learnable parameters of one branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBank {
    scale: usize,
    conv_kernels: Vec<Kernel>,
    fuse_weights: Vec<f64>,
    fuse_bias: f64,
}

impl KernelBank {
    pub fn new(
        scale: usize,
        conv_kernels: Vec<Kernel>,
        fuse_weights: Vec<f64>,
        fuse_bias: f64,
    ) -> Result<Self> {
        if conv_kernels.is_empty() {
            return Err(Error::invalid("kernel bank needs at least one kernel"));
        }
        if conv_kernels.len() != fuse_weights.len() {
            return Err(Error::invalid(format!(
                "{} kernels but {} fusion weights",
                conv_kernels.len(),
                fuse_weights.len()
            )));
        }
        if let Some(k) = conv_kernels.iter().find(|k| k.size() != scale) {
            return Err(Error::invalid(format!(
                "kernel of size {} in a bank of scale {scale}",
                k.size()
            )));
        }
        Ok(Self {
            scale,
            conv_kernels,
            fuse_weights,
            fuse_bias,
        })
    }

    /// All-zero bank of `n` kernels.
    pub fn zeros(scale: usize, n: usize) -> Result<Self> {
        let kernels = (0..n)
            .map(|_| Kernel::zeros(scale))
            .collect::<Result<_>>()?;
        Self::new(scale, kernels, vec![0.0; n], 0.0)
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn n_kernels(&self) -> usize {
        self.conv_kernels.len()
    }

    pub fn conv_kernels(&self) -> &[Kernel] {
        &self.conv_kernels
    }

    pub fn conv_kernels_mut(&mut self) -> &mut [Kernel] {
        &mut self.conv_kernels
    }

    pub fn fuse_weights(&self) -> &[f64] {
        &self.fuse_weights
    }

    pub fn fuse_weights_mut(&mut self) -> &mut [f64] {
        &mut self.fuse_weights
    }

    pub fn fuse_bias(&self) -> f64 {
        self.fuse_bias
    }

    pub fn set_fuse_bias(&mut self, bias: f64) {
        self.fuse_bias = bias;
    }

    fn for_each_scalar_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        for k in &mut self.conv_kernels {
            k.weights_mut().iter_mut().for_each(&mut *f);
            f(k.bias_mut());
        }
        self.fuse_weights.iter_mut().for_each(&mut *f);
        f(&mut self.fuse_bias);
    }

    /// Finds the `*index`-th scalar of this bank, or subtracts the bank's
    /// scalar count from `*index` and returns `None`.
    fn scalar_mut(&mut self, index: &mut usize) -> Option<&mut f64> {
        let area = self.scale * self.scale;
        for k in &mut self.conv_kernels {
            if *index < area {
                return Some(&mut k.weights_mut()[*index]);
            }
            if *index == area {
                return Some(k.bias_mut());
            }
            *index -= area + 1;
        }
        let n = self.fuse_weights.len();
        if *index < n {
            return Some(&mut self.fuse_weights[*index]);
        }
        if *index == n {
            return Some(&mut self.fuse_bias);
        }
        *index -= n + 1;
        None
    }

    fn push_scalars(&self, out: &mut Vec<f64>) {
        for k in &self.conv_kernels {
            out.extend_from_slice(k.weights());
            out.push(k.bias());
        }
        out.extend_from_slice(&self.fuse_weights);
        out.push(self.fuse_bias);
    }
}

/// Everything the optimizer updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UscnnParams {
    branch3: KernelBank,
    branch5: KernelBank,
    final_fuse_weights: [f64; 2],
    final_fuse_bias: f64,
}

impl UscnnParams {
    pub fn new(
        branch3: KernelBank,
        branch5: KernelBank,
        final_fuse_weights: [f64; 2],
        final_fuse_bias: f64,
    ) -> Result<Self> {
        if branch3.scale != SMALL_SCALE || branch5.scale != LARGE_SCALE {
            return Err(Error::invalid(format!(
                "branch scales must be {SMALL_SCALE} and {LARGE_SCALE}, got {} and {}",
                branch3.scale, branch5.scale
            )));
        }
        if branch3.n_kernels() != branch5.n_kernels() {
            return Err(Error::invalid(format!(
                "branches disagree on kernel count: {} vs {}",
                branch3.n_kernels(),
                branch5.n_kernels()
            )));
        }
        Ok(Self {
            branch3,
            branch5,
            final_fuse_weights,
            final_fuse_bias,
        })
    }

    pub fn zeros(n_kernels: usize) -> Result<Self> {
        Self::new(
            KernelBank::zeros(SMALL_SCALE, n_kernels)?,
            KernelBank::zeros(LARGE_SCALE, n_kernels)?,
            [0.0; 2],
            0.0,
        )
    }

    pub fn n_kernels(&self) -> usize {
        self.branch3.n_kernels()
    }

    pub fn branch3(&self) -> &KernelBank {
        &self.branch3
    }

    pub fn branch5(&self) -> &KernelBank {
        &self.branch5
    }

    pub fn branch3_mut(&mut self) -> &mut KernelBank {
        &mut self.branch3
    }

    pub fn branch5_mut(&mut self) -> &mut KernelBank {
        &mut self.branch5
    }

    pub fn final_fuse_weights(&self) -> [f64; 2] {
        self.final_fuse_weights
    }

    pub fn final_fuse_weights_mut(&mut self) -> &mut [f64; 2] {
        &mut self.final_fuse_weights
    }

    pub fn final_fuse_bias(&self) -> f64 {
        self.final_fuse_bias
    }

    pub fn set_final_fuse_bias(&mut self, bias: f64) {
        self.final_fuse_bias = bias;
    }

    /// Number of scalar parameters: `N·(9+1) + N + 1` for the small branch,
    /// `N·(25+1) + N + 1` for the large one, plus three for the final fusion.
    pub fn scalar_count(&self) -> usize {
        let n = self.n_kernels();
        n * (SMALL_SCALE * SMALL_SCALE + 2) + n * (LARGE_SCALE * LARGE_SCALE + 2) + 2 + 3
    }

    /// Flattens every parameter in a fixed order: small branch (kernel
    /// weights and bias per kernel, fusion weights, fusion bias), large
    /// branch likewise, then the two final weights and final bias.
    pub fn to_scalars(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scalar_count());
        self.branch3.push_scalars(&mut out);
        self.branch5.push_scalars(&mut out);
        out.extend_from_slice(&self.final_fuse_weights);
        out.push(self.final_fuse_bias);
        out
    }

    /// Visits every parameter mutably, in the order of [`to_scalars`](Self::to_scalars).
    pub fn for_each_scalar_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        self.branch3.for_each_scalar_mut(&mut f);
        self.branch5.for_each_scalar_mut(&mut f);
        self.final_fuse_weights.iter_mut().for_each(&mut f);
        f(&mut self.final_fuse_bias);
    }

    /// Mutable access to the `index`-th scalar in flattened order.
    pub fn scalar_mut(&mut self, index: usize) -> Option<&mut f64> {
        let mut rest = index;
        for bank in [&mut self.branch3, &mut self.branch5] {
            if let Some(v) = bank.scalar_mut(&mut rest) {
                return Some(v);
            }
        }
        match rest {
            0 | 1 => Some(&mut self.final_fuse_weights[rest]),
            2 => Some(&mut self.final_fuse_bias),
            _ => None,
        }
    }

    pub fn is_congruent(&self, other: &UscnnParams) -> bool {
        self.n_kernels() == other.n_kernels()
    }
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn init_bank(rng: &mut impl Rng, scale: usize, n: usize) -> Result<KernelBank> {
    let area = scale * scale;
    let conv_bound = glorot_bound(area, n * area);
    let kernels = (0..n)
        .map(|_| {
            let w = (0..area)
                .map(|_| rng.random_range(-conv_bound..conv_bound))
                .collect();
            Kernel::new(scale, w, 0.0)
        })
        .collect::<Result<_>>()?;
    let fuse_bound = glorot_bound(n, 1);
    let fuse = (0..n)
        .map(|_| rng.random_range(-fuse_bound..fuse_bound))
        .collect();
    KernelBank::new(scale, kernels, fuse, 0.0)
}

/// Glorot-uniform weights and zero biases, fully determined by `seed`.
pub fn init_params(n_kernels: usize, seed: u64) -> Result<UscnnParams> {
    if n_kernels == 0 {
        return Err(Error::invalid("n_kernels must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let branch3 = init_bank(&mut rng, SMALL_SCALE, n_kernels)?;
    let branch5 = init_bank(&mut rng, LARGE_SCALE, n_kernels)?;
    let b = glorot_bound(2, 1);
    let final_w = [rng.random_range(-b..b), rng.random_range(-b..b)];
    UscnnParams::new(branch3, branch5, final_w, 0.0)
}

/// Intermediate maps of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchTrace {
    /// Pre-activation conv responses for the first acquisition, one per kernel.
    pub conv_t1: Vec<Matrix2>,
    /// Pre-activation conv responses for the second acquisition.
    pub conv_t2: Vec<Matrix2>,
    /// Subtract-layer outputs `S_i`.
    pub diffs: Vec<Matrix2>,
    /// Pre-activation of the 1×1 fusion.
    pub fused_pre: Matrix2,
    /// Branch output `C`.
    pub fused: Matrix2,
}

/// All maps produced by [`forward`], kept for exact gradient replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub branch3: BranchTrace,
    pub branch5: BranchTrace,
    pub final_pre: Matrix2,
    pub m: Matrix2,
}

impl ForwardTrace {
    pub fn s3(&self) -> &[Matrix2] {
        &self.branch3.diffs
    }

    pub fn s5(&self) -> &[Matrix2] {
        &self.branch5.diffs
    }

    pub fn c3(&self) -> &Matrix2 {
        &self.branch3.fused
    }

    pub fn c5(&self) -> &Matrix2 {
        &self.branch5.fused
    }

    pub fn m(&self) -> &Matrix2 {
        &self.m
    }

    pub fn dims(&self) -> (usize, usize) {
        self.m.dims()
    }
}

/// `Σ_i weights[i]·maps[i] + bias`, accumulated in channel order.
pub(crate) fn channel_fuse(maps: &[&Matrix2], weights: &[f64], bias: f64) -> Matrix2 {
    let (rows, cols) = maps[0].dims();
    let mut acc = vec![0.0; rows * cols];
    for (map, &w) in maps.iter().zip(weights) {
        for (a, &v) in acc.iter_mut().zip(map.as_slice()) {
            *a += w * v;
        }
    }
    acc.iter_mut().for_each(|a| *a += bias);
    Matrix2::from_raw(rows, cols, acc)
}

fn forward_branch(bank: &KernelBank, i1: &Matrix2, i2: &Matrix2) -> Result<BranchTrace> {
    let per_kernel: Vec<(Matrix2, Matrix2, Matrix2)> = bank
        .conv_kernels
        .par_iter()
        .map(|k| {
            let a1 = conv2d_same(i1, k)?;
            let a2 = conv2d_same(i2, k)?;
            let s = a1.zip_map(&a2, |x, y| softplus_scalar(x) - softplus_scalar(y));
            Ok((a1, a2, s))
        })
        .collect::<Result<_>>()?;

    let mut conv_t1 = Vec::with_capacity(per_kernel.len());
    let mut conv_t2 = Vec::with_capacity(per_kernel.len());
    let mut diffs = Vec::with_capacity(per_kernel.len());
    for (a1, a2, s) in per_kernel {
        conv_t1.push(a1);
        conv_t2.push(a2);
        diffs.push(s);
    }

    let refs: Vec<&Matrix2> = diffs.iter().collect();
    let fused_pre = channel_fuse(&refs, &bank.fuse_weights, bank.fuse_bias);
    let fused = fused_pre.map(softplus_scalar);
    Ok(BranchTrace {
        conv_t1,
        conv_t2,
        diffs,
        fused_pre,
        fused,
    })
}

/// Runs both branches and the final fusion on a preprocessed image pair.
pub fn forward(params: &UscnnParams, i1: &Matrix2, i2: &Matrix2) -> Result<ForwardTrace> {
    ensure_same_dims(i1, i2, "forward")?;
    let (branch3, branch5) = rayon::join(
        || forward_branch(&params.branch3, i1, i2),
        || forward_branch(&params.branch5, i1, i2),
    );
    let (branch3, branch5) = (branch3?, branch5?);
    let final_pre = channel_fuse(
        &[&branch3.fused, &branch5.fused],
        &params.final_fuse_weights,
        params.final_fuse_bias,
    );
    let m = final_pre.map(softplus_scalar);
    Ok(ForwardTrace {
        branch3,
        branch5,
        final_pre,
        m,
    })
}
