//! Oracles shared by the integration test targets.
#![allow(dead_code)]

use rand::Rng;
use uscnn::{forward, loss, Matrix2, UscnnParams};

pub fn objective(params: &UscnnParams, i1: &Matrix2, i2: &Matrix2, k: f64) -> f64 {
    loss(&forward(params, i1, i2).unwrap(), k).total
}

/// Central differences for every scalar parameter.
pub fn numeric_gradient(
    params: &UscnnParams,
    i1: &Matrix2,
    i2: &Matrix2,
    k: f64,
    h: f64,
) -> Vec<f64> {
    (0..params.scalar_count())
        .map(|idx| {
            let mut plus = params.clone();
            *plus.scalar_mut(idx).unwrap() += h;
            let mut minus = params.clone();
            *minus.scalar_mut(idx).unwrap() -= h;
            (objective(&plus, i1, i2, k) - objective(&minus, i1, i2, k)) / (2.0 * h)
        })
        .collect()
}

pub fn random_image(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix2 {
    Matrix2::from_fn(rows, cols, |_, _| rng.random_range(0.0..1.0))
}

/// First component outside `rel·max(|a|,|n|) + abs`, described.
pub fn gradient_mismatch(analytic: &[f64], numeric: &[f64], rel: f64, abs: f64) -> Option<String> {
    if analytic.len() != numeric.len() {
        return Some(format!(
            "{} analytic vs {} numeric components",
            analytic.len(),
            numeric.len()
        ));
    }
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .find_map(|(i, (a, n))| {
            let tol = rel * a.abs().max(n.abs()) + abs;
            ((a - n).abs() > tol).then(|| format!("param {i}: analytic {a} vs numeric {n}"))
        })
}

/// Mean of the `window`×`window` neighborhood of every pixel, zero outside
/// the image, summed in row-major neighborhood order.
pub fn neighborhood_mean(m: &Matrix2, window: usize) -> Matrix2 {
    let r = (window / 2) as isize;
    let area = (window * window) as f64;
    Matrix2::from_fn(m.rows(), m.cols(), |i, j| {
        let mut acc = 0.0;
        for di in -r..=r {
            for dj in -r..=r {
                let (y, x) = (i as isize + di, j as isize + dj);
                if y >= 0 && x >= 0 && (y as usize) < m.rows() && (x as usize) < m.cols() {
                    acc += m[(y as usize, x as usize)] * (1.0 / area);
                }
            }
        }
        acc
    })
}
