//! Sparse objective, exact backpropagation, RMSprop and the unsupervised
//! training loop.
//!
//! The objective is `L = f1 + f2 - k·f3` where `f1`, `f2` are the mean
//! absolute values of the two branch outputs and `f3` that of the fused map.
//! Training is full-batch: one gradient step per epoch over the whole image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{forward, init_params, BranchTrace, ForwardTrace, KernelBank, UscnnParams};
use crate::operators::{log_transform, DifferenceMap};
use crate::tensor::{conv2d_kernel_grad, ensure_same_dims, sigmoid_scalar, Matrix2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the fused-output term; must be positive.
    pub k: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub n_kernels: usize,
    pub seed: u64,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 30.0,
            epochs: 100,
            learning_rate: 0.01,
            n_kernels: 20,
            seed: 0,
            rms_decay: 0.9,
            rms_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::invalid(format!(
                "k must be positive, got {}",
                self.k
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.n_kernels == 0 {
            return Err(Error::invalid("n_kernels must be at least 1"));
        }
        if !(self.rms_decay > 0.0 && self.rms_decay < 1.0) {
            return Err(Error::invalid(format!(
                "rms decay must lie in (0, 1), got {}",
                self.rms_decay
            )));
        }
        if !(self.rms_epsilon > 0.0 && self.rms_epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "rms epsilon must be positive, got {}",
                self.rms_epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub total: f64,
}

fn mean_abs(m: &Matrix2) -> f64 {
    m.as_slice().iter().map(|v| v.abs()).sum::<f64>() / m.len() as f64
}

pub fn loss(trace: &ForwardTrace, k: f64) -> LossReport {
    let f1 = mean_abs(trace.c3());
    let f2 = mean_abs(trace.c5());
    let f3 = mean_abs(trace.m());
    LossReport {
        f1,
        f2,
        f3,
        total: f1 + f2 - k * f3,
    }
}

/// `∂L/∂θ` for every parameter, laid out exactly like [`UscnnParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    grads: UscnnParams,
}

impl GradientSet {
    pub fn as_params(&self) -> &UscnnParams {
        &self.grads
    }

    pub fn to_scalars(&self) -> Vec<f64> {
        self.grads.to_scalars()
    }

    pub fn is_finite(&self) -> bool {
        self.to_scalars().iter().all(|v| v.is_finite())
    }
}

/// Subgradient of `|x|`, taking 0 at the origin.
#[inline]
fn abs_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn backward_branch(
    bank: &KernelBank,
    trace: &BranchTrace,
    upstream: Vec<f64>,
    i1: &Matrix2,
    i2: &Matrix2,
) -> Result<KernelBank> {
    let (rows, cols) = i1.dims();
    // through the fusion softplus
    let dz: Vec<f64> = upstream
        .iter()
        .zip(trace.fused_pre.as_slice())
        .map(|(g, &z)| g * sigmoid_scalar(z))
        .collect();

    let fuse_grads: Vec<f64> = trace
        .diffs
        .iter()
        .map(|s| dz.iter().zip(s.as_slice()).map(|(a, b)| a * b).sum())
        .collect();
    let fuse_bias_grad: f64 = dz.iter().sum();

    let scale = bank.scale();
    let kernels = bank
        .conv_kernels()
        .par_iter()
        .zip(bank.fuse_weights().par_iter())
        .zip(trace.conv_t1.par_iter().zip(trace.conv_t2.par_iter()))
        .map(|((_, &fw), (a1, a2))| {
            let mut d1 = Vec::with_capacity(dz.len());
            let mut d2 = Vec::with_capacity(dz.len());
            for ((&g, &x1), &x2) in dz.iter().zip(a1.as_slice()).zip(a2.as_slice()) {
                let ds = g * fw;
                d1.push(ds * sigmoid_scalar(x1));
                d2.push(-ds * sigmoid_scalar(x2));
            }
            let d1 = Matrix2::from_raw(rows, cols, d1);
            let d2 = Matrix2::from_raw(rows, cols, d2);
            let (mut w, b1) = conv2d_kernel_grad(i1, scale, &d1);
            let (w2, b2) = conv2d_kernel_grad(i2, scale, &d2);
            w.iter_mut().zip(&w2).for_each(|(a, b)| *a += b);
            crate::tensor::Kernel::new(scale, w, b1 + b2)
        })
        .collect::<Result<Vec<_>>>()?;

    KernelBank::new(scale, kernels, fuse_grads, fuse_bias_grad)
}

/// Exact gradient of the objective with respect to every parameter, replayed
/// from a trace produced by `forward(params, i1, i2)`.
pub fn backward(
    params: &UscnnParams,
    trace: &ForwardTrace,
    i1: &Matrix2,
    i2: &Matrix2,
    k: f64,
) -> Result<GradientSet> {
    ensure_same_dims(i1, i2, "backward")?;
    if trace.dims() != i1.dims() {
        return Err(Error::invalid(format!(
            "trace is {:?} but images are {:?}",
            trace.dims(),
            i1.dims()
        )));
    }
    let n = params.n_kernels();
    if trace.s3().len() != n || trace.s5().len() != n {
        return Err(Error::invalid(format!(
            "trace holds {}/{} channels but params have {n} kernels",
            trace.s3().len(),
            trace.s5().len()
        )));
    }

    let inv_n = 1.0 / trace.m().len() as f64;
    let [w3, w5] = params.final_fuse_weights();

    // dL/d(final pre-activation)
    let dz_m: Vec<f64> = trace
        .m()
        .as_slice()
        .iter()
        .zip(trace.final_pre.as_slice())
        .map(|(&m, &z)| -k * abs_grad(m) * inv_n * sigmoid_scalar(z))
        .collect();

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let final_w = [
        dot(&dz_m, trace.c3().as_slice()),
        dot(&dz_m, trace.c5().as_slice()),
    ];
    let final_b: f64 = dz_m.iter().sum();

    let upstream = |c: &Matrix2, w: f64| -> Vec<f64> {
        c.as_slice()
            .iter()
            .zip(&dz_m)
            .map(|(&cv, &g)| abs_grad(cv) * inv_n + g * w)
            .collect()
    };
    let up3 = upstream(trace.c3(), w3);
    let up5 = upstream(trace.c5(), w5);

    let (g3, g5) = rayon::join(
        || backward_branch(params.branch3(), &trace.branch3, up3, i1, i2),
        || backward_branch(params.branch5(), &trace.branch5, up5, i1, i2),
    );
    Ok(GradientSet {
        grads: UscnnParams::new(g3?, g5?, final_w, final_b)?,
    })
}

/// Per-parameter running average of squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    acc: Vec<f64>,
}

impl RmsPropState {
    pub fn new(params: &UscnnParams) -> Self {
        Self {
            acc: vec![0.0; params.scalar_count()],
        }
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.acc
    }
}

/// One RMSprop update, in place:
/// `acc ← decay·acc + (1−decay)·g²`, `θ ← θ − lr·g / (√acc + ε)`.
pub fn rmsprop_step(
    params: &mut UscnnParams,
    grads: &GradientSet,
    state: &mut RmsPropState,
    lr: f64,
    decay: f64,
    epsilon: f64,
) -> Result<()> {
    let g = grads.to_scalars();
    if !params.is_congruent(grads.as_params()) || state.acc.len() != g.len() {
        return Err(Error::invalid(
            "optimizer state, gradients and parameters are not congruent",
        ));
    }
    let mut i = 0;
    params.for_each_scalar_mut(|theta| {
        let acc = &mut state.acc[i];
        *acc = decay * *acc + (1.0 - decay) * g[i] * g[i];
        *theta -= lr * g[i] / (acc.sqrt() + epsilon);
        i += 1;
    });
    Ok(())
}

/// `ln(x + 1)` followed by min-max rescaling to `[0, 1]`. A constant image
/// maps to all zeros.
pub fn preprocess(raw: &Matrix2) -> Result<Matrix2> {
    let logged = log_transform(raw)?;
    let (lo, hi) = (logged.min(), logged.max());
    let span = hi - lo;
    if span <= 0.0 {
        return Ok(Matrix2::zeros(raw.rows(), raw.cols()));
    }
    Ok(logged.map(|v| ((v - lo) / span).clamp(0.0, 1.0)))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: UscnnParams,
    /// `|M|` from a forward pass with the final parameters.
    pub difference_map: DifferenceMap,
    /// Loss before each epoch's update, one entry per epoch.
    pub history: Vec<LossReport>,
}

/// Trains from a seeded initialization for exactly `config.epochs` steps.
pub fn train(i1_raw: &Matrix2, i2_raw: &Matrix2, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    ensure_same_dims(i1_raw, i2_raw, "train")?;
    let i1 = preprocess(i1_raw)?;
    let i2 = preprocess(i2_raw)?;

    let mut params = init_params(config.n_kernels, config.seed)?;
    let mut state = RmsPropState::new(&params);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let trace = forward(&params, &i1, &i2)?;
        let report = loss(&trace, config.k);
        log::debug!(
            "epoch {epoch}: f1={:.6} f2={:.6} f3={:.6} L={:.6}",
            report.f1,
            report.f2,
            report.f3,
            report.total
        );
        history.push(report);
        let grads = backward(&params, &trace, &i1, &i2, config.k)?;
        if !grads.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        rmsprop_step(
            &mut params,
            &grads,
            &mut state,
            config.learning_rate,
            config.rms_decay,
            config.rms_epsilon,
        )?;
    }

    let trace = forward(&params, &i1, &i2)?;
    Ok(TrainOutcome {
        difference_map: DifferenceMap::from_abs(trace.m()),
        params,
        history,
    })
}
