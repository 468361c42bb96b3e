//! Synthetic bi-temporal SAR-like pairs with a known change mask.
//!
//! A smooth deterministic texture is shared by both dates, each date gets its
//! own multiplicative speckle drawn from `Gamma(L, 1/L)` (unit mean, `L`
//! looks), and one square region of the first date is scaled by `ratio`.
//! Intensities are rounded and clamped to the 8-bit range so the in-memory
//! images equal what a PGM/PNG round trip would give.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use std::path::{Path, PathBuf};

use crate::clustering::ChangeMap;
use crate::error::{Error, Result};
use crate::image_io::{encode_gray8, save_map, write_atomic, GrayFormat};
use crate::tensor::Matrix2;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub cols: usize,
    pub square: usize,
    /// Intensity factor applied to the first date inside the square.
    pub ratio: f64,
    pub looks: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            rows: 128,
            cols: 128,
            square: 24,
            ratio: 3.0,
            looks: 4.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub t1: Matrix2,
    pub t2: Matrix2,
    pub truth: ChangeMap,
    /// Top-left corner of the changed square.
    pub origin: (usize, usize),
}

/// Paths written by [`SyntheticPair::save`].
#[derive(Debug, Clone)]
pub struct SavedPair {
    pub t1: PathBuf,
    pub t2: PathBuf,
    pub truth: PathBuf,
}

impl SyntheticPair {
    /// Writes `t1.pgm`, `t2.pgm` and `truth.pgm` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<SavedPair> {
        let dir = dir.as_ref();
        let paths = SavedPair {
            t1: dir.join("t1.pgm"),
            t2: dir.join("t2.pgm"),
            truth: dir.join("truth.pgm"),
        };
        for (m, path) in [(&self.t1, &paths.t1), (&self.t2, &paths.t2)] {
            // values are already whole numbers in 0..=255
            let bytes: Vec<u8> = m.as_slice().iter().map(|&v| v as u8).collect();
            write_atomic(
                path,
                &encode_gray8(m.rows(), m.cols(), &bytes, GrayFormat::Pgm)?,
            )?;
        }
        save_map(&self.truth, &paths.truth)?;
        Ok(paths)
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticPair> {
    if spec.square == 0 || spec.square > spec.rows.min(spec.cols) {
        return Err(Error::invalid(format!(
            "square of {} does not fit a {}x{} image",
            spec.square, spec.rows, spec.cols
        )));
    }
    if spec.ratio.is_nan() || spec.ratio <= 0.0 {
        return Err(Error::invalid("ratio must be positive"));
    }
    let speckle = Gamma::new(spec.looks, 1.0 / spec.looks)
        .map_err(|e| Error::invalid(format!("bad number of looks: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let phase: [f64; 3] = [
        rng.random::<f64>() * TAU,
        rng.random::<f64>() * TAU,
        rng.random::<f64>() * TAU,
    ];
    let base = Matrix2::from_fn(spec.rows, spec.cols, |r, c| {
        let (y, x) = (r as f64, c as f64);
        60.0 + 25.0 * (TAU * x / 37.0 + phase[0]).sin() * (TAU * y / 53.0 + phase[1]).cos()
            + 10.0 * (TAU * (x + y) / 23.0 + phase[2]).sin()
    });

    let r0 = rng.random_range(0..=spec.rows - spec.square);
    let c0 = rng.random_range(0..=spec.cols - spec.square);
    let inside = |r: usize, c: usize| {
        (r0..r0 + spec.square).contains(&r) && (c0..c0 + spec.square).contains(&c)
    };

    let quantize = |v: f64| v.round().clamp(0.0, 255.0);
    let t1 = Matrix2::from_fn(spec.rows, spec.cols, |r, c| {
        let scale = if inside(r, c) { spec.ratio } else { 1.0 };
        quantize(base[(r, c)] * scale * speckle.sample(&mut rng))
    });
    let t2 = Matrix2::from_fn(spec.rows, spec.cols, |r, c| {
        quantize(base[(r, c)] * speckle.sample(&mut rng))
    });

    let changed: Vec<bool> = (0..spec.rows)
        .flat_map(|r| (0..spec.cols).map(move |c| (r, c)))
        .map(|(r, c)| inside(r, c))
        .collect();
    let truth = ChangeMap::from_bools(spec.rows, spec.cols, &changed)?;

    Ok(SyntheticPair {
        t1,
        t2,
        truth,
        origin: (r0, c0),
    })
}
