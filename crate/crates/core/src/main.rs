use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use hyperband::cli::{self, ExperimentConfig, Scenario, Status};

#[derive(Parser)]
#[command(name = "hyperband", version, about = "Band-limited sampling experiments on the hyperbolic plane")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by an INI config file.
    Run {
        config: PathBuf,
        /// `key=value` or `section.key=value`; applied after the file.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run every scenario at its default size and print a pass/fail table.
    Verify {
        /// Comma-separated scenario names; defaults to all.
        #[arg(long)]
        scenarios: Option<String>,
        /// Multiplies the Plancherel constant (fault injection).
        #[arg(long, default_value_t = 1.0)]
        scale_factor: f64,
    },
    /// Calibrate the Plancherel constant and print it.
    Calibrate {
        #[arg(long, default_value_t = 2.0)]
        omega: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
    },
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(Status::ConfigError as u8)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let root = cli::output_root();
    match args.command {
        Command::Run { config, overrides } => {
            let cfg = match ExperimentConfig::from_file(&config, &overrides) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            let (status, outcome) = cli::execute(&cfg, &root);
            for c in &outcome.checks {
                println!("{:<28} {}  {}", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
            }
            println!("outputs: {}", root.join(&cfg.output).display());
            if let Some(c) = outcome.first_failure() {
                eprintln!("invariant failed: {}: {}", c.name, c.detail);
            }
            ExitCode::from(status as u8)
        }
        Command::Verify { scenarios, scale_factor } => {
            let list: Vec<Scenario> = match scenarios.as_deref() {
                None => Scenario::ALL.to_vec(),
                Some(s) => match s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(Scenario::parse).collect() {
                    Ok(l) => l,
                    Err(e) => return config_error(e),
                },
            };
            if !(scale_factor > 0.0) {
                return config_error("scale factor must be positive");
            }
            if list.is_empty() {
                eprintln!("warning: no scenarios selected; nothing to verify");
                return ExitCode::SUCCESS;
            }
            let mut first = None;
            for s in list {
                let start = Instant::now();
                let (_, status, outcome) = cli::verify(&root, &[s], scale_factor).remove(0);
                for c in &outcome.checks {
                    println!("{:<22} {:<28} {}  {}", s.name(), c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
                }
                println!("{:<22} {:<28} {:.1}s", s.name(), "(elapsed)", start.elapsed().as_secs_f64());
                if status != Status::Ok && first.is_none() {
                    first = outcome.first_failure().map(|c| format!("{}: {}", c.name, c.detail));
                }
            }
            match first {
                Some(f) => {
                    eprintln!("invariant failed: {f}");
                    ExitCode::from(Status::AssertionFailed as u8)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Command::Calibrate { omega, seeds } => match cli::calibrate(omega, &seeds, &root) {
            Ok((scale, csv)) => {
                print!("{csv}");
                println!("plancherel_scale = {scale:e}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("calibration failed: {e}");
                ExitCode::from(Status::AssertionFailed as u8)
            }
        },
    }
}
