use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use masa_kit::attention::AttentionMode;
use masa_kit::bench::{
    configure_threads, dump_decay, format_model_stats, model_stats_for, scaling, train_demo,
    write_records_csv, DumpDecay, Scaling,
};
use masa_kit::Error;

/// Manhattan self-attention toolkit: decay dumps, model statistics,
/// scaling benchmarks and a training demo.
#[derive(Parser)]
#[command(name = "masa-kit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the Manhattan decay matrix of a grid as CSV.
    DumpDecay {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the height and width factors (<out>_h, <out>_w).
        #[arg(long)]
        decomposed: bool,
        /// Print the max abs difference between kron(D_H, D_W) and the 2D matrix.
        #[arg(long)]
        kron_check: bool,
    },
    /// Print parameter and MAC counts with a per-stage breakdown.
    ModelStats {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        /// JSON model configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Time full, decomposed and vanilla attention over growing grids.
    Scaling {
        #[arg(long, value_delimiter = ',', default_value = "full,decomposed,vanilla")]
        modes: Vec<AttentionMode>,
        #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
        sides: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        head_dim: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the tiny preset on synthetic data and write the metrics CSV.
    TrainDemo {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> masa_kit::Result<()> {
    let threads = configure_threads()?;
    match cli.command {
        Command::DumpDecay { height, width, gamma, out, decomposed, kron_check } => {
            let outcome = dump_decay(&DumpDecay { height, width, gamma, out, decomposed, kron_check })?;
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if let Some(diff) = outcome.kron_max_abs_diff {
                println!("kron max abs diff: {diff:e}");
            }
        }
        Command::ModelStats { preset, config, resolution } => {
            let (name, stats) = model_stats_for(preset.as_deref(), config.as_deref(), resolution)?;
            print!("{}", format_model_stats(&name, &stats));
        }
        Command::Scaling { modes, sides, head_dim, repeats, seed, out } => {
            let outcome = scaling(&Scaling { modes, sides, head_dim, repeats, seed, ..Scaling::default() })?;
            for note in &outcome.notes {
                eprintln!("note: {note}");
            }
            write_records_csv(&out, &outcome.records)?;
            println!("wrote {} rows to {} ({threads} threads)", outcome.records.len(), out.display());
        }
        Command::TrainDemo { seed, steps, out } => {
            let report = train_demo(seed, steps, &out)?;
            println!("initial accuracy: {}", report.initial.train_accuracy);
            println!("final accuracy: {}", report.final_metrics().train_accuracy);
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
