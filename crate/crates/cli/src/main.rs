use std::path::PathBuf;
use std::process::ExitCode;

use annealed_posterior_cli::config::{load_config, Overrides};
use annealed_posterior_cli::error::CliError;
use annealed_posterior_cli::{presets, run, suite, verify};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "annealed-posterior", version, about = "Annealed Langevin posterior sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config or `preset:NAME`.
    Run {
        config: String,
        #[command(flatten)]
        flags: Flags,
    },
    /// Run every member of a suite, then write a cross-run summary.
    Suite {
        suite: String,
        #[command(flatten)]
        flags: Flags,
    },
    /// Re-hash a bundle (manifest.json or suite.json) against its manifest.
    Verify { manifest: PathBuf },
    /// Inspect built-in presets.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    Show { name: String },
}

#[derive(Args)]
struct Flags {
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; bundles go in `<out>/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    chains: Option<usize>,
    /// Annealing rate.
    #[arg(long)]
    kappa: Option<f64>,
    /// Annealing step size.
    #[arg(long)]
    delta: Option<f64>,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            chains: self.chains,
            rate: self.kappa,
            step_size: self.delta,
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, flags } => {
            let mut cfg = load_config(&config)?;
            cfg.apply(&flags.overrides())?;
            cfg.validate()?;
            let root = run::resolve_output_root(flags.out.as_deref(), cfg.output_root.as_deref());
            let dir = root.path.join(&cfg.name);
            run::execute(&cfg, &root, &dir)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Suite { suite, flags } => {
            let m = suite::run_suite(&suite, &flags.overrides(), flags.out.as_deref())?;
            println!("{}", m.output_root.path.join(&m.name).display());
            Ok(())
        }
        Command::Verify { manifest } => {
            let findings = verify::verify(&manifest)?;
            if findings.is_empty() {
                println!("ok");
                Ok(())
            } else {
                for f in &findings {
                    println!("{f}");
                }
                Err(CliError::Failed(format!("{} verification problems", findings.len())))
            }
        }
        Command::Preset { action } => {
            match action {
                PresetAction::List => {
                    for (name, about) in presets::PRESETS {
                        println!("{name:<22}{about}");
                    }
                }
                PresetAction::Show { name } => println!("{}", presets::show(&name)?),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::to_string(&e.record()).unwrap_or_else(|_| e.to_string());
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
