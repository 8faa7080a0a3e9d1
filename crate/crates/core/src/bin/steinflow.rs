use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use steinflow::exec::thread_cap_from_env;
use steinflow::harness::{self, Overrides, Preset, RunConfig, SweepConfig};

#[derive(Parser)]
#[command(
    name = "steinflow",
    version,
    about = "SVGD experiments with median-heuristic and KSD-adaptive kernels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one seeded run and write trace.csv, final_particles.csv and summary.json.
    Run {
        config: PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<String>,
        /// Divide the number of steps by 20.
        #[arg(long)]
        desk: bool,
    },
    /// Run every (axis value, seed) point of a sweep and write sweep.csv.
    Sweep {
        config: PathBuf,
        /// Runs executed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override the output directory.
        #[arg(long)]
        out: Option<String>,
        /// Divide the number of steps by 20.
        #[arg(long)]
        desk: bool,
    },
    /// Check a config and print its normalized form with all defaults.
    Validate { config: PathBuf },
    /// List the built-in presets and their defaults.
    Presets,
}

fn read(path: &PathBuf) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = thread_cap_from_env() {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), String> {
    match command {
        Command::Run {
            config,
            seed,
            out,
            desk,
        } => {
            let text = read(&config)?;
            let cfg = RunConfig::from_toml_str(
                &text,
                &Overrides {
                    seed,
                    output: out,
                    desk,
                },
            )
            .map_err(|e| e.to_string())?;
            let report = harness::run(&cfg).map_err(|e| e.to_string())?;
            println!("wrote {}", cfg.output);
            for (name, value) in report.final_scalars() {
                println!("  {name} = {}", harness::format_number(value));
            }
            match &report.error {
                None => Ok(()),
                Some(e) => Err(e.message.clone()),
            }
        }
        Command::Sweep {
            config,
            jobs,
            out,
            desk,
        } => {
            let text = read(&config)?;
            let cfg = SweepConfig::from_toml_str(
                &text,
                &Overrides {
                    seed: None,
                    output: out,
                    desk,
                },
            )
            .map_err(|e| e.to_string())?;
            let report = harness::run_sweep(&cfg, jobs).map_err(|e| e.to_string())?;
            println!("wrote {}/sweep.csv ({} runs)", cfg.base.output, report.rows.len());
            let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
            if failed == 0 {
                Ok(())
            } else {
                Err(format!("{failed} of {} runs failed", report.rows.len()))
            }
        }
        Command::Validate { config } => {
            let text = read(&config)?;
            let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
            if table.contains_key("sweep_axis") || table.contains_key("sweep_values") {
                let cfg = SweepConfig::from_toml_str(&text, &Overrides::default()).map_err(|e| e.to_string())?;
                print!("{}", cfg.to_toml());
            } else {
                let cfg = RunConfig::from_toml_str(&text, &Overrides::default()).map_err(|e| e.to_string())?;
                print!("{}", cfg.to_toml());
            }
            Ok(())
        }
        Command::Presets => {
            for preset in Preset::ALL {
                println!("# {}: {}", preset.name(), preset.summary());
                println!("{}", RunConfig::preset(preset).to_toml());
            }
            Ok(())
        }
    }
}
