use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use addint::harness::{self, analyze_error, monte_carlo_bias, TrainConfig};
use addint::precision::NumberFormat;
use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(version, about = "Training and error analysis with multiplication replaced by integer addition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Fp32,
    Bf16,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model described by a TOML config on MNIST.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Narrow hidden layers to 256 units and run at most 5 epochs.
        #[arg(long)]
        fast: bool,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the metrics output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep a mantissa grid and report the multipliers' error and bias.
    AnalyzeError {
        #[arg(long, default_value_t = 1024)]
        resolution: usize,
        #[arg(long, default_value_t = 1.0)]
        gamma_multiplier: f64,
        #[arg(long, value_enum, default_value_t = Format::Fp32)]
        format: Format,
        /// CSV destination, one row per grid cell.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also estimate biases from this many random pairs.
        #[arg(long, default_value_t = 0)]
        samples: usize,
    },
    /// Summarize a metrics file as a table of final accuracies.
    Report { metrics: PathBuf },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, fast, seed, out } => {
            let mut cfg = TrainConfig::load(&config)?;
            if fast {
                cfg = cfg.fast();
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if out.is_some() {
                cfg.metrics_out = out;
            }
            let outcome = harness::train(&cfg)?;
            let last = outcome.records.last().context("no epochs ran")?;
            println!(
                "{} seed {}: test accuracy {:.4} after {} epochs ({:.1}s)",
                outcome.label, last.seed, last.test_accuracy, last.epoch, last.wall_seconds
            );
        }
        Command::AnalyzeError { resolution, gamma_multiplier, format, out, samples } => {
            let format = match format {
                Format::Fp32 => NumberFormat::Fp32,
                Format::Bf16 => NumberFormat::Bf16,
            };
            let report = analyze_error(resolution, gamma_multiplier, format)?;
            println!("{report}");
            if let Some(path) = out {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent)?;
                }
                let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                report.write_csv(BufWriter::new(file))?;
            }
            if samples > 0 {
                println!("\n{}", monte_carlo_bias(samples, 0, gamma_multiplier)?);
            }
        }
        Command::Report { metrics } => print!("{}", harness::report(&metrics)?),
    }
    Ok(())
}
