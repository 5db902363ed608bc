use std::path::PathBuf;
use std::process::ExitCode;

use abcgan_harness::config::ExperimentConfig;
use abcgan_harness::{compare, emit_plotdata, registry, run, HarnessError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "abcgan", version, about = "Likelihood-free inference experiments with ABC-GAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        #[arg(long)]
        experiment: String,
        /// TOML file overriding the experiment defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// List registered experiments.
    List {
        /// Also print each experiment's default config.
        #[arg(long)]
        defaults: bool,
    },
    /// Write per-figure CSVs for a finished run.
    Plotdata {
        #[arg(long)]
        run: PathBuf,
    },
    /// Tabulate metrics across runs.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            experiment,
            config,
            seed,
            out,
        } => {
            let cfg = ExperimentConfig::resolve_file(&experiment, config.as_deref())?;
            let report = run(&cfg, seed, &out)?;
            if let Some(p) = &report.posterior {
                for (name, (m, s)) in report.param_names.iter().zip(p.mean.iter().zip(&p.std)) {
                    println!("{name}\t{m:.4} ± {s:.4}");
                }
            }
            println!("wrote {}", out.display());
        }
        Command::List { defaults } => {
            for (info, cfg) in registry() {
                println!("{}\t{}", info.name, info.description);
                if defaults {
                    println!("{}", cfg.to_toml());
                }
            }
        }
        Command::Plotdata { run } => {
            for path in emit_plotdata(&run)? {
                println!("{}", path.display());
            }
        }
        Command::Compare { runs } => print!("{}", compare(&runs)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
