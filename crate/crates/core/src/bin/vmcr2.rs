use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vmcr2::run::{self, Overrides};
use vmcr2::trainer::Objective;
use vmcr2::Error;

#[derive(Parser)]
#[command(name = "vmcr2", version, about = "Train and evaluate coding-rate-reduction featurizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a configuration entry, e.g. `--set trainer.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a featurizer and write metrics and a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        objective: Option<Objective>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        latch_freq: Option<usize>,
    },
    /// Time training epochs over a sweep of class counts.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Report ΔR and nearest-subspace accuracy of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write the absolute feature Gram of a checkpoint, grouped by class.
    ExportGram {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Restrict the export to this many randomly chosen classes.
        #[arg(long)]
        classes: Option<usize>,
    },
}

fn overrides(common: &Common) -> Overrides {
    Overrides {
        set: common.set.clone(),
        seed: common.seed,
        out: common.out.clone(),
        ..Overrides::default()
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Train { common, objective, epochs, latch_freq } => {
            let o = Overrides { objective, epochs, latch_freq, ..overrides(&common) };
            let cfg = run::load_config(common.config.as_deref(), &o)?;
            let summary = run::cmd_train(&cfg)?;
            if let Some(last) = summary.metrics.last() {
                println!("epoch {}: delta_r {:.6}", last.epoch, last.delta_r);
            }
            println!("wrote {}", summary.out_dir.display());
        }
        Command::Bench { common, epochs } => {
            let mut o = overrides(&common);
            if let Some(e) = epochs {
                o.set.push(format!("bench.timed_epochs={e}"));
            }
            let cfg = run::load_config(common.config.as_deref(), &o)?;
            for row in run::cmd_bench(&cfg)? {
                println!(
                    "k={:<4} {:<6} {:.3} ms/epoch (sd {:.3})",
                    row.k,
                    row.objective.name(),
                    row.mean_epoch_ms,
                    row.std_epoch_ms
                );
            }
        }
        Command::Eval { common, checkpoint } => {
            let cfg = run::load_config(common.config.as_deref(), &overrides(&common))?;
            let report = run::cmd_eval(&cfg, &checkpoint)?;
            println!("delta_r {:.6}  accuracy {:.4}", report.delta_r, report.accuracy);
        }
        Command::ExportGram { common, checkpoint, classes } => {
            let cfg = run::load_config(common.config.as_deref(), &overrides(&common))?;
            let meta = run::cmd_export_gram(&cfg, &checkpoint, classes)?;
            println!("{} samples from classes {:?}", meta.samples, meta.classes);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(run::exit_code(&err) as u8)
        }
    }
}
