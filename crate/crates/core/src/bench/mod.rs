//! The operations behind the `masa-kit` command line: decay dumps, model
//! statistics, attention scaling benchmarks and the training demo.
//!
//! Every operation returns data and writes CSV files; printing is left to the
//! caller.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::AttentionMode;
use crate::blocks::{model_stats, ModelConfig, ModelStats};
use crate::decay::{decay_axial_pair, decay_manhattan_2d, kron, DecayRate, GridShape};
use crate::error::{Error, Result};
use crate::tensor::counter::count_macs;
use crate::tensor::{no_grad, Tensor};
use crate::train::{train_loop, DataConfig, TrainConfig, TrainReport};

/// Environment variable holding the worker count for parallel kernels.
pub const THREADS_ENV: &str = "MASA_KIT_THREADS";

/// Largest grid side the scaling benchmark accepts.
pub const MAX_SIDE: usize = 96;

/// Sizes the global worker pool from [`THREADS_ENV`] if set and returns the
/// worker count in effect.
pub fn configure_threads() -> Result<usize> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
        // a pool that was already built keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(file))
}

/// Writes a matrix as CSV, one row per line and no header.
///
/// Values use the shortest decimal form that reads back to the same `f64`.
pub fn write_matrix_csv(path: &Path, m: &Tensor) -> Result<()> {
    if m.rank() != 2 {
        return Err(Error::Dimension(format!("expected a matrix, got {:?}", m.shape())));
    }
    let mut w = csv_writer(path)?;
    for row in m.data().chunks(m.shape()[1]) {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(io_err(path))
}

/// Arguments of [`dump_decay`].
#[derive(Clone, Debug)]
pub struct DumpDecay {
    pub height: usize,
    pub width: usize,
    pub gamma: f64,
    pub out: PathBuf,
    /// Also write `D^H` and `D^W` next to `out`.
    pub decomposed: bool,
    /// Recompute `kron(D^H, D^W)` and compare it with the 2D matrix.
    pub kron_check: bool,
}

/// Files written by [`dump_decay`] and the optional factorization residual.
#[derive(Clone, Debug)]
pub struct DumpDecayOutcome {
    pub files: Vec<PathBuf>,
    pub kron_max_abs_diff: Option<f64>,
}

/// `out.csv` becomes `out_h.csv` / `out_w.csv`.
pub fn axial_paths(out: &Path) -> (PathBuf, PathBuf) {
    let stem = out.file_stem().map_or_else(|| "decay".into(), |s| s.to_string_lossy().into_owned());
    let ext = out.extension().map(|e| e.to_string_lossy().into_owned());
    let name = |suffix: &str| match &ext {
        Some(e) => format!("{stem}_{suffix}.{e}"),
        None => format!("{stem}_{suffix}"),
    };
    (out.with_file_name(name("h")), out.with_file_name(name("w")))
}

/// Writes the `N×N` Manhattan decay matrix of an `H×W` grid.
pub fn dump_decay(args: &DumpDecay) -> Result<DumpDecayOutcome> {
    let grid = GridShape::new(args.height, args.width)?;
    let full = decay_manhattan_2d(grid, args.gamma)?;
    write_matrix_csv(&args.out, &full)?;
    let mut files = vec![args.out.clone()];
    let (dh, dw) = decay_axial_pair(grid, args.gamma)?;
    if args.decomposed {
        let (ph, pw) = axial_paths(&args.out);
        write_matrix_csv(&ph, &dh)?;
        write_matrix_csv(&pw, &dw)?;
        files.extend([ph, pw]);
    }
    let kron_max_abs_diff = if args.kron_check {
        Some(kron(&dh, &dw)?.max_abs_diff(&full)?)
    } else {
        None
    };
    Ok(DumpDecayOutcome { files, kron_max_abs_diff })
}

/// Human-readable summary of [`model_stats`] in millions and billions.
pub fn format_model_stats(name: &str, stats: &ModelStats) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model: {name} @ {r}x{r}", r = stats.resolution);
    let _ = writeln!(s, "params: {} ({:.2} M)", stats.params, stats.params as f64 / 1e6);
    let _ = writeln!(s, "flops:  {} ({:.2} G MACs)", stats.macs, stats.macs as f64 / 1e9);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<6} {:>7} {:>8} {:>6} {:<10} {:>12} {:>14} {:>14}", "part", "grid", "channels", "blocks", "attention", "params", "macs", "attn macs");
    let _ = writeln!(s, "{:<6} {:>7} {:>8} {:>6} {:<10} {:>12} {:>14} {:>14}", "stem", "", "", "", "", stats.stem_params, stats.stem_macs, "");
    for st in &stats.stages {
        let _ = writeln!(
            s,
            "{:<6} {:>7} {:>8} {:>6} {:<10} {:>12} {:>14} {:>14}",
            format!("stage{}", st.stage),
            format!("{}x{}", st.grid.height, st.grid.width),
            st.channels,
            st.blocks,
            st.attention.name(),
            st.params,
            st.macs,
            st.attention_macs
        );
    }
    let _ = writeln!(s, "{:<6} {:>7} {:>8} {:>6} {:<10} {:>12} {:>14} {:>14}", "head", "", "", "", "", stats.head_params, stats.head_macs, "");
    s
}

/// Looks up a preset or reads a JSON config, then accounts it at `resolution`
/// (the config's own resolution when `None`).
pub fn model_stats_for(preset: Option<&str>, config: Option<&Path>, resolution: Option<usize>) -> Result<(String, ModelStats)> {
    let (name, cfg) = match (preset, config) {
        (Some(p), None) => (p.to_string(), ModelConfig::preset(p)?),
        (None, Some(path)) => (path.display().to_string(), ModelConfig::load(path)?),
        _ => return Err(Error::Usage("give exactly one of --preset or --config".into())),
    };
    let r = resolution.unwrap_or(cfg.input_resolution);
    Ok((name, model_stats(&cfg, r)?))
}

/// One timed attention configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRecord {
    pub mode: AttentionMode,
    pub height: usize,
    pub width: usize,
    pub head_dim: usize,
    pub analytic_macs: u64,
    pub measured_macs: u64,
    pub median_ns: u64,
    pub threads: usize,
}

/// Arguments of [`scaling`].
#[derive(Clone, Debug)]
pub struct Scaling {
    pub modes: Vec<AttentionMode>,
    pub sides: Vec<usize>,
    pub head_dim: usize,
    pub repeats: usize,
    pub seed: u64,
    pub gamma: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        Scaling {
            modes: AttentionMode::ALL.to_vec(),
            sides: vec![4, 8, 16, 32],
            head_dim: 32,
            repeats: 3,
            seed: 0,
            gamma: 0.9,
        }
    }
}

/// Records plus notes about sides that were dropped.
#[derive(Clone, Debug)]
pub struct ScalingOutcome {
    pub records: Vec<BenchRecord>,
    pub notes: Vec<String>,
}

fn median(mut v: Vec<u64>) -> u64 {
    v.sort_unstable();
    v[v.len() / 2]
}

/// Runs each mode on random `side×side` inputs; median of `repeats` timed
/// runs after one warmup.
///
/// The multiply-accumulates counted while the kernel runs must equal the
/// closed-form count, otherwise the run fails.
pub fn scaling(args: &Scaling) -> Result<ScalingOutcome> {
    if args.repeats < 3 {
        return Err(Error::Usage(format!("repeats must be at least 3, got {}", args.repeats)));
    }
    if args.head_dim == 0 || args.modes.is_empty() || args.sides.is_empty() {
        return Err(Error::Usage("scaling needs at least one mode, one side and a positive head dim".into()));
    }
    if let Some(&s) = args.sides.iter().find(|&&s| s < 2) {
        return Err(Error::Usage(format!("grid sides must be at least 2, got {s}")));
    }
    let threads = rayon::current_num_threads();
    let mut notes = Vec::new();
    let mut records = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    for &side in &args.sides {
        if side > MAX_SIDE {
            notes.push(format!("side {side} skipped: capped at {MAX_SIDE} to bound memory ({}² tokens)", side * side));
            continue;
        }
        let grid = GridShape::square(side)?;
        let n = grid.num_tokens();
        let q = Tensor::rand_uniform(&[n, args.head_dim], -1.0, 1.0, &mut rng);
        let k = Tensor::rand_uniform(&[n, args.head_dim], -1.0, 1.0, &mut rng);
        let v = Tensor::rand_uniform(&[n, args.head_dim], -1.0, 1.0, &mut rng);
        for &mode in &args.modes {
            let run = || no_grad(|| mode.run(&q, &k, &v, grid, DecayRate::Gamma(args.gamma)));
            let (out, measured) = count_macs(run);
            out?;
            let analytic = mode.analytic_macs(grid, args.head_dim);
            if analytic != measured {
                return Err(Error::Config(format!(
                    "{} at {side}x{side}: analytic count {analytic} but {measured} MACs ran",
                    mode.name()
                )));
            }
            let times = (0..args.repeats)
                .map(|_| {
                    let t = Instant::now();
                    run().map(|_| t.elapsed().as_nanos().max(1) as u64)
                })
                .collect::<Result<Vec<_>>>()?;
            records.push(BenchRecord {
                mode,
                height: side,
                width: side,
                head_dim: args.head_dim,
                analytic_macs: analytic,
                measured_macs: measured,
                median_ns: median(times),
                threads,
            });
        }
    }
    Ok(ScalingOutcome { records, notes })
}

/// Writes benchmark rows with a header.
pub fn write_records_csv(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["mode", "height", "width", "head_dim", "analytic_macs", "measured_macs", "median_ns", "threads"])?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

/// Trains the `tiny` preset on [`DataConfig::demo`] data and writes the
/// metrics CSV to `out`.
pub fn train_demo(seed: u64, steps: usize, out: &Path) -> Result<TrainReport> {
    let model = ModelConfig::preset("tiny")?;
    let train = TrainConfig { steps, seed, ..TrainConfig::default() };
    let report = train_loop(&model, &DataConfig::demo(seed), &train)?;
    report.write_csv(out)?;
    Ok(report)
}
