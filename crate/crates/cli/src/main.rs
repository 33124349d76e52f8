use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fatou_cli::{run_file, validate_file, RunOptions, EXIT_PASS, EXIT_THRESHOLD};

#[derive(Parser)]
#[command(name = "fatoulab", version, about = "Run Fatou, Lyapunov, equilibrium and Galerkin scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its run directory.
    Run {
        config: PathBuf,
        /// Run directory (default: runs/<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for independent instances.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Check a scenario without running it.
    Validate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Validate { config, seed } => match validate_file(&config, seed) {
            Ok(cfg) => {
                println!("{}: ok ({})", config.display(), cfg.kind.name());
                EXIT_PASS
            }
            Err(e) => {
                eprintln!("{}: {e}", config.display());
                e.exit_code()
            }
        },
        Command::Run { config, out, seed, threads } => {
            let out = match out {
                Some(o) => o,
                None => match validate_file(&config, seed) {
                    Ok(cfg) => PathBuf::from("runs").join(cfg.label()),
                    Err(e) => {
                        eprintln!("{}: {e}", config.display());
                        return ExitCode::from(e.exit_code() as u8);
                    }
                },
            };
            match run_file(&config, &RunOptions { out: out.clone(), seed, threads }) {
                Ok(rep) => {
                    for c in &rep.checks {
                        let tag = if c.passed { "PASS" } else { "FAIL" };
                        println!("{tag} {}: {:e} {} {:e}", c.name, c.value, c.relation, c.threshold);
                    }
                    println!("report: {}", out.join("report.json").display());
                    if rep.passed {
                        EXIT_PASS
                    } else {
                        let names: Vec<&str> = rep.failing().iter().map(|c| c.name.as_str()).collect();
                        eprintln!("threshold failure: {}", names.join(", "));
                        EXIT_THRESHOLD
                    }
                }
                Err(e) => {
                    eprintln!("{}: {e}", config.display());
                    e.exit_code()
                }
            }
        }
    };
    ExitCode::from(code as u8)
}
