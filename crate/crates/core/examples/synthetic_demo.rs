//! Trains on synthetic speckled pairs and compares against the LMR baseline.
//!
//! cargo run --release --example synthetic_demo -- [seeds] [k]

use std::time::Instant;

use uscnn::clustering::{DEFAULT_MAX_ITERS, DEFAULT_TOL};
use uscnn::synthetic::{generate, SyntheticSpec};
use uscnn::{evaluate, kmeans_binarize, lmr, train, TrainConfig};

fn main() -> uscnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let k: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(30.0);

    for seed in 0..seeds {
        let pair = generate(&SyntheticSpec {
            seed,
            ..SyntheticSpec::default()
        })?;
        let start = Instant::now();
        let config = TrainConfig {
            k,
            seed,
            ..TrainConfig::default()
        };
        let outcome = train(&pair.t1, &pair.t2, &config)?;
        let map = kmeans_binarize(&outcome.difference_map, DEFAULT_MAX_ITERS, DEFAULT_TOL);
        let m = evaluate(&map, &pair.truth)?;
        let first = outcome.history.first().map(|l| l.total).unwrap_or(0.0);
        let last = outcome.history.last().map(|l| l.total).unwrap_or(0.0);

        let baseline =
            kmeans_binarize(&lmr(&pair.t1, &pair.t2, 3)?, DEFAULT_MAX_ITERS, DEFAULT_TOL);
        let b = evaluate(&baseline, &pair.truth)?;
        println!(
            "seed {seed}: uscnn pcc={:.4} kappa={:.4} oe={} | lmr pcc={:.4} kappa={:.4} oe={} | loss {first:.3} -> {last:.3} ({:.1}s)",
            m.pcc,
            m.kappa,
            m.oe,
            b.pcc,
            b.kappa,
            b.oe,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
