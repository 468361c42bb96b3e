//! Unsupervised change detection for co-registered bi-temporal images.
//!
//! A shallow two-branch convolutional network with shared weights is trained
//! on the image pair itself, with no labels, to produce a difference map; a
//! two-cluster k-means then turns that map into a binary change map. The
//! classical log-ratio and log-mean-ratio operators are provided as
//! baselines, along with confusion-matrix scoring against ground truth.

pub mod cli;
pub mod clustering;
pub mod error;
pub mod image_io;
pub mod metrics;
pub mod network;
pub mod operators;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use clustering::{kmeans_binarize, ChangeMap, Label};
pub use error::{Error, Result};
pub use metrics::{evaluate, Metrics};
pub use network::{forward, init_params, ForwardTrace, KernelBank, UscnnParams};
pub use operators::{lmr, log_ratio, DifferenceMap};
pub use tensor::{conv2d_backward, conv2d_same, softplus, softplus_grad, Kernel, Matrix2};
pub use training::{
    backward, loss, preprocess, rmsprop_step, train, GradientSet, LossReport, RmsPropState,
    TrainConfig, TrainOutcome,
};
