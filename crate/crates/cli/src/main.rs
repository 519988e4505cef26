use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridprobe_core::runner::{self, ExperimentConfig};
use gridprobe_core::Error;

#[derive(Parser)]
#[command(name = "gridprobe", version, about = "Sensor-degradation robustness benchmark for ML fault classification and localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a fault-episode dataset.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every configured scenario on a dataset.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Train on clean data and degrade only the test folds.
        #[arg(long)]
        degrade_test_only: bool,
    },
    /// Render tables and plot CSVs from a results directory.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::MissingInput(_) => 2,
        Error::Training(_) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = runner::load_config(&config)?;
            let s = runner::cmd_generate(&cfg, &out)?;
            println!(
                "wrote {} episodes to {} (metadata: {})",
                s.episodes,
                s.dataset.display(),
                s.sidecar.display()
            );
        }
        Command::Run {
            config,
            dataset,
            out,
            jobs,
            degrade_test_only,
        } => {
            let mut cfg: ExperimentConfig = runner::load_config(&config)?;
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            cfg.degrade_test_only |= degrade_test_only;
            let out = out.or_else(|| cfg.output.clone()).ok_or_else(|| Error::Config {
                line: 0,
                message: "no output directory: pass --out or set `output` in [run]".into(),
            })?;
            let s = runner::cmd_run(&cfg, &dataset, &out)?;
            for r in &s.results {
                println!("{r}");
            }
            println!(
                "{} fold jobs computed, {} reused; results in {}",
                s.computed,
                s.reused,
                out.display()
            );
        }
        Command::Report { results, out } => {
            let s = runner::cmd_report(&results, &out)?;
            for f in &s.files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
