//! Command-line front end: `detect`, `lmr`, `eval` and `sweep-k`.
//!
//! Every subcommand is also callable in-process through [`run`] or the
//! individual `cmd_*` functions, which return what they would print.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_binarize, ChangeMap, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::image_io::{load_gray, load_truth, save_map, write_atomic};
use crate::metrics::{evaluate, Metrics};
use crate::operators::lmr;
use crate::tensor::Matrix2;
use crate::training::{train, LossReport, TrainConfig};

/// Exit status for bad arguments or inputs that do not fit together.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for I/O, decoding and training failures.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "uscnn",
    version,
    about = "Unsupervised change detection for bi-temporal images"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the network on an image pair and write the binary change map.
    Detect(DetectArgs),
    /// Log-mean-ratio baseline followed by the same clustering.
    Lmr(LmrArgs),
    /// Score a predicted change map against ground truth (JSON on stdout).
    Eval(EvalArgs),
    /// Run the detection pipeline for several values of k and tabulate scores.
    SweepK(SweepArgs),
}

/// Training flags shared by `detect` and `sweep-k` (everything but k).
#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Kernels per branch.
    #[arg(long, default_value_t = 20)]
    pub kernels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// RMSprop decay of the squared-gradient average.
    #[arg(long, default_value_t = 0.9)]
    pub decay: f64,
    /// RMSprop denominator offset.
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
}

impl Default for TrainFlags {
    fn default() -> Self {
        let c = TrainConfig::default();
        Self {
            epochs: c.epochs,
            lr: c.learning_rate,
            kernels: c.n_kernels,
            seed: c.seed,
            decay: c.rms_decay,
            epsilon: c.rms_epsilon,
        }
    }
}

impl TrainFlags {
    pub fn config(&self, k: f64) -> TrainConfig {
        TrainConfig {
            k,
            epochs: self.epochs,
            learning_rate: self.lr,
            n_kernels: self.kernels,
            seed: self.seed,
            rms_decay: self.decay,
            rms_epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    pub t1: PathBuf,
    pub t2: PathBuf,
    /// Output change map (.png or .pgm).
    pub out: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    pub k: f64,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Write a JSON run report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Record wall-clock time in the report (makes reports non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

impl DetectArgs {
    /// Default flags for the given inputs and output.
    pub fn new(t1: impl Into<PathBuf>, t2: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            t1: t1.into(),
            t2: t2.into(),
            out: out.into(),
            truth: None,
            k: TrainConfig::default().k,
            train: TrainFlags::default(),
            report: None,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct LmrArgs {
    pub t1: PathBuf,
    pub t2: PathBuf,
    pub out: PathBuf,
    /// Odd side length of the averaging window.
    #[arg(long, default_value_t = 3)]
    pub window: usize,
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    pub pred: PathBuf,
    pub truth: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    pub t1: PathBuf,
    pub t2: PathBuf,
    pub truth: PathBuf,
    /// Comma-separated values of k.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "2,4,6,8,10,12,14,16,18,20,22,24,26,28,30,32,34,36,38,40"
    )]
    pub ks: Vec<f64>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub map: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub losses: Vec<LossReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    pub outputs: OutputPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: f64,
    pub pcc: f64,
    pub kappa: f64,
    pub oe: u64,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

fn load_pair(t1: &Path, t2: &Path) -> Result<(Matrix2, Matrix2)> {
    let a = load_gray(t1)?;
    let b = load_gray(t2)?;
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!(
            "{} is {:?} but {} is {:?}",
            t1.display(),
            a.dims(),
            t2.display(),
            b.dims()
        )));
    }
    Ok((a, b))
}

fn load_matching_truth(path: &Path, dims: (usize, usize)) -> Result<ChangeMap> {
    let truth = load_truth(path)?;
    if truth.dims() != dims {
        return Err(Error::invalid(format!(
            "ground truth {} is {:?} but the images are {:?}",
            path.display(),
            truth.dims(),
            dims
        )));
    }
    Ok(truth)
}

fn detect_map(
    i1: &Matrix2,
    i2: &Matrix2,
    config: &TrainConfig,
) -> Result<(ChangeMap, Vec<LossReport>)> {
    let outcome = train(i1, i2, config)?;
    let map = kmeans_binarize(&outcome.difference_map, DEFAULT_MAX_ITERS, DEFAULT_TOL);
    Ok((map, outcome.history))
}

/// Trains, clusters and writes the change map (and the report if asked).
pub fn cmd_detect(args: &DetectArgs) -> Result<RunReport> {
    let start = Instant::now();
    let config = args.train.config(args.k);
    config.validate()?;
    let (i1, i2) = load_pair(&args.t1, &args.t2)?;
    let truth = args
        .truth
        .as_deref()
        .map(|p| load_matching_truth(p, i1.dims()))
        .transpose()?;

    let (map, losses) = detect_map(&i1, &i2, &config)?;
    if let Some(last) = losses.last() {
        log::info!(
            "trained {} epochs, final loss {:.6} (f3 {:.6})",
            losses.len(),
            last.total,
            last.f3
        );
    }
    let metrics = truth.as_ref().map(|t| evaluate(&map, t)).transpose()?;

    let mut report = RunReport {
        config,
        losses,
        metrics,
        outputs: OutputPaths {
            map: args.out.clone(),
            report: args.report.clone(),
        },
        wall_clock_seconds: None,
    };
    if args.timing {
        report.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
    }
    // serialize before touching the filesystem so a failure writes nothing
    let json = args.report.as_ref().map(|_| report.to_json()).transpose()?;

    save_map(&map, &args.out)?;
    if let (Some(path), Some(json)) = (&args.report, json) {
        if let Err(e) = write_atomic(path, format!("{json}\n").as_bytes()) {
            let _ = std::fs::remove_file(&args.out);
            return Err(e);
        }
    }
    Ok(report)
}

/// LMR baseline; returns metrics when ground truth is given.
pub fn cmd_lmr(args: &LmrArgs) -> Result<Option<Metrics>> {
    let (i1, i2) = load_pair(&args.t1, &args.t2)?;
    let truth = args
        .truth
        .as_deref()
        .map(|p| load_matching_truth(p, i1.dims()))
        .transpose()?;
    let di = lmr(&i1, &i2, args.window)?;
    let map = kmeans_binarize(&di, DEFAULT_MAX_ITERS, DEFAULT_TOL);
    let metrics = truth.as_ref().map(|t| evaluate(&map, t)).transpose()?;
    save_map(&map, &args.out)?;
    Ok(metrics)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Metrics> {
    let pred = load_truth(&args.pred)?;
    let truth = load_truth(&args.truth)?;
    evaluate(&pred, &truth)
}

/// Runs the detection pipeline once per k. Runs execute in parallel but
/// each is deterministic, so rows come back in `ks` order with fixed values.
pub fn cmd_sweep_k(args: &SweepArgs) -> Result<Vec<SweepRow>> {
    if args.ks.is_empty() {
        return Err(Error::invalid("k list is empty"));
    }
    for &k in &args.ks {
        args.train.config(k).validate()?;
    }
    let (i1, i2) = load_pair(&args.t1, &args.t2)?;
    let truth = load_matching_truth(&args.truth, i1.dims())?;

    let rows = args
        .ks
        .par_iter()
        .map(|&k| {
            let (map, _) = detect_map(&i1, &i2, &args.train.config(k))?;
            let m = evaluate(&map, &truth)?;
            log::info!("k={k}: pcc {:.4} kappa {:.4} oe {}", m.pcc, m.kappa, m.oe);
            Ok(SweepRow {
                k,
                pcc: m.pcc,
                kappa: m.kappa,
                oe: m.oe,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    if let Some(out) = &args.out {
        write_atomic(out, sweep_csv(&rows)?.as_bytes())?;
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
}

fn metrics_json(m: &Metrics) -> Result<String> {
    serde_json::to_string_pretty(m).map_err(|e| Error::Serialization(e.to_string()))
}

/// Executes a parsed command line, printing results to standard output.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Detect(args) => {
            let report = cmd_detect(&args)?;
            if let Some(m) = &report.metrics {
                println!("{}", metrics_json(m)?);
            }
        }
        Command::Lmr(args) => {
            if let Some(m) = cmd_lmr(&args)? {
                println!("{}", metrics_json(&m)?);
            }
        }
        Command::Eval(args) => println!("{}", metrics_json(&cmd_eval(&args)?)?),
        Command::SweepK(args) => {
            let rows = cmd_sweep_k(&args)?;
            if args.out.is_none() {
                print!("{}", sweep_csv(&rows)?);
            }
        }
    }
    Ok(())
}
