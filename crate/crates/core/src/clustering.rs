//! Two-cluster k-means over difference-map values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::DifferenceMap;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Unchanged,
    Changed,
}

impl Label {
    pub fn is_changed(self) -> bool {
        self == Label::Changed
    }
}

/// Binary change map, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeMap {
    rows: usize,
    cols: usize,
    labels: Vec<Label>,
}

impl ChangeMap {
    pub fn new(rows: usize, cols: usize, labels: Vec<Label>) -> Result<Self> {
        if rows == 0 || cols == 0 || labels.len() != rows * cols {
            return Err(Error::invalid(format!(
                "change map of {rows}x{cols} needs {} labels, got {}",
                rows * cols,
                labels.len()
            )));
        }
        Ok(Self { rows, cols, labels })
    }

    pub fn filled(rows: usize, cols: usize, label: Label) -> Self {
        assert!(
            rows > 0 && cols > 0,
            "change map dimensions must be positive"
        );
        Self {
            rows,
            cols,
            labels: vec![label; rows * cols],
        }
    }

    /// Builds a map from booleans, `true` meaning changed.
    pub fn from_bools(rows: usize, cols: usize, changed: &[bool]) -> Result<Self> {
        Self::new(
            rows,
            cols,
            changed
                .iter()
                .map(|&c| if c { Label::Changed } else { Label::Unchanged })
                .collect(),
        )
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

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> Option<Label> {
        (row < self.rows && col < self.cols).then(|| self.labels[row * self.cols + col])
    }

    pub fn changed_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_changed()).count()
    }

    /// Same map with every label flipped.
    pub fn inverted(&self) -> ChangeMap {
        ChangeMap {
            rows: self.rows,
            cols: self.cols,
            labels: self
                .labels
                .iter()
                .map(|l| match l {
                    Label::Changed => Label::Unchanged,
                    Label::Unchanged => Label::Changed,
                })
                .collect(),
        }
    }
}

/// Centroids of the two-cluster partition of `values` with the smallest
/// within-cluster sum of squares, or `None` when all values are equal.
///
/// In one dimension every optimal partition is a threshold split of the
/// sorted values, so a single sweep over the split points is exact. The
/// sweep maximizes the between-class term `n_lo·n_hi·(μ_hi − μ_lo)²`, which
/// avoids the cancellation of a sum-of-squares formulation. Ties keep the
/// lowest split.
pub fn optimal_split_centroids(values: &[f64]) -> Option<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let total: f64 = sorted.iter().sum();

    let mut best: Option<(f64, f64, f64)> = None;
    let mut prefix = 0.0;
    for i in 1..n {
        prefix += sorted[i - 1];
        if sorted[i - 1] == sorted[i] {
            continue;
        }
        let (n_lo, n_hi) = (i as f64, (n - i) as f64);
        let mu_lo = prefix / n_lo;
        let mu_hi = (total - prefix) / n_hi;
        let between = n_lo * n_hi * (mu_hi - mu_lo) * (mu_hi - mu_lo);
        if best.is_none_or(|(b, _, _)| between > b) {
            best = Some((between, mu_lo, mu_hi));
        }
    }
    best.map(|(_, lo, hi)| (lo, hi))
}

/// 1-D k-means with k = 2.
///
/// Lloyd iterations start from the centroids of the optimal threshold split
/// (see [`optimal_split_centroids`]) and run until the centroids move less
/// than `tol` or `max_iters` is reached. Seeding at the minimum and maximum
/// value instead can stall in a local optimum, e.g. on
/// `{0, 0, 9.1, 21.8, 26.7, 45.9}`.
///
/// Ties go to the lower centroid and the upper cluster is labeled changed.
/// A map whose pixels are all equal comes back all unchanged.
pub fn kmeans_binarize(di: &DifferenceMap, max_iters: usize, tol: f64) -> ChangeMap {
    let (rows, cols) = di.dims();
    let values = di.values().as_slice();
    let Some((mut lo, mut hi)) = optimal_split_centroids(values) else {
        return ChangeMap::filled(rows, cols, Label::Unchanged);
    };

    let assign = |v: f64, lo: f64, hi: f64| (v - lo).abs() > (v - hi).abs();

    for _ in 0..max_iters {
        let (mut sum_lo, mut n_lo, mut sum_hi, mut n_hi) = (0.0, 0usize, 0.0, 0usize);
        for &v in values {
            if assign(v, lo, hi) {
                sum_hi += v;
                n_hi += 1;
            } else {
                sum_lo += v;
                n_lo += 1;
            }
        }
        // Neither cluster can empty: the minimum is never closer to `hi`
        // than to `lo`, and the maximum is always closer to `hi`.
        let new_lo = sum_lo / n_lo as f64;
        let new_hi = sum_hi / n_hi as f64;
        let shift = (new_lo - lo).abs().max((new_hi - hi).abs());
        lo = new_lo;
        hi = new_hi;
        if shift < tol {
            break;
        }
    }

    let labels = values
        .iter()
        .map(|&v| {
            if assign(v, lo, hi) {
                Label::Changed
            } else {
                Label::Unchanged
            }
        })
        .collect();
    ChangeMap { rows, cols, labels }
}
