use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use odcast::config::RunConfig;
use odcast::pipeline;
use odcast::Result;

#[derive(Parser)]
#[command(name = "odcast", version, about = "O-D demand forecasting on closed highways")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate O-D and link panels.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train FL-GCN models (both variants, every horizon).
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by `simulate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Kalman filter baseline.
    Kalman {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate every method on the test days.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Directory written by `train`.
        #[arg(long)]
        models: PathBuf,
        /// Directory written by `kalman`.
        #[arg(long)]
        kalman: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Improvement of FL-GCN over the Kalman filter.
    Compare {
        /// Report files written by `evaluate`.
        #[arg(long = "report", required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks of every op and the full model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn report(dir: &Path) {
    println!("wrote {}", dir.display());
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Simulate { common, out } => {
            for f in pipeline::cmd_simulate(&load(&common)?, &out)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Train { common, data, out } => {
            for m in pipeline::cmd_train(&load(&common)?, &data, &out)? {
                let last = m.history.last().map_or(f64::NAN, |e| e.train_loss);
                println!("{} horizon {}: best epoch {}, final train loss {last:.3e}", m.variant.label(), m.horizon, m.best_epoch);
            }
            report(&out);
        }
        Command::Kalman { common, data, out } => {
            println!("wrote {}", pipeline::cmd_kalman(&load(&common)?, &data, &out)?.display());
        }
        Command::Evaluate { common, data, models, kalman, out } => {
            let r = pipeline::cmd_evaluate(&load(&common)?, &data, &models, &kalman, &out)?;
            print!("{}", r.to_tables());
            report(&out);
        }
        Command::Compare { reports, out } => {
            for t in pipeline::cmd_compare(&reports, &out)? {
                for r in &t.rows {
                    println!(
                        "{} vs {} horizon {}: {:.2}%",
                        t.candidate.label(),
                        t.baseline.label(),
                        r.horizon,
                        100.0 * r.improvement
                    );
                }
                println!("{} vs {} mean: {:.2}%", t.candidate.label(), t.baseline.label(), 100.0 * t.mean);
            }
        }
        Command::Gradcheck { common, seeds, out } => {
            let config = load(&common)?;
            let entries = pipeline::cmd_gradcheck(seeds, out.as_deref(), &config.banner())?;
            print!("{}", pipeline::gradcheck_listing(&entries));
            return Ok(entries.iter().all(|e| e.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Simulate { .. } => "simulate",
        Command::Train { .. } => "train",
        Command::Kalman { .. } => "kalman",
        Command::Evaluate { .. } => "evaluate",
        Command::Compare { .. } => "compare",
        Command::Gradcheck { .. } => "gradcheck",
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: {name}: gradient check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {name}: {e}");
            ExitCode::from(1)
        }
    }
}
