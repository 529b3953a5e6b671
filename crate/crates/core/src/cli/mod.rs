//! Command-line front end: `run`, `validate`, `best-beta` and `inspect`.

pub mod best_beta;
pub mod config;
pub mod results;
pub mod runner;
pub mod validate;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::geometry::build_hex_network;
use crate::scenario::Scenario;
use crate::{Error, Result};

pub use config::{ExperimentConfig, OUTPUT_DIR_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "mimo-sim",
    version,
    about = "Multi-cell massive MIMO downlink simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a sweep and write result rows to the output directory.
    Run { config: PathBuf },
    /// Check a config and run the built-in oracle suite.
    Validate {
        config: Option<PathBuf>,
        /// Exit with status 1 if any check fails.
        #[arg(long)]
        strict: bool,
        /// Seed for the suite (defaults to the config's master seed, else 1).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 500)]
        realizations: usize,
        /// Corrupt the deterministic equivalent to confirm the checks can fail.
        #[arg(long, hide = true)]
        tamper: bool,
    },
    /// Pick the reuse factor with the largest median sum SE.
    BestBeta {
        results: PathBuf,
        /// Print JSON instead of CSV.
        #[arg(long)]
        json: bool,
    },
    /// Print the geometry and one drop's pilot allocation as JSON.
    Inspect {
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        point: usize,
        #[arg(long, default_value_t = 0)]
        drop: usize,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

fn load(config: Option<&PathBuf>) -> Result<ExperimentConfig> {
    let cfg = match config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Executes a parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load(Some(&config))?;
            let out = runner::run(&cfg)?;
            println!("wrote {} rows to {}", out.rows, out.results_csv().display());
            Ok(EXIT_OK)
        }
        Command::Validate {
            config,
            strict,
            seed,
            realizations,
            tamper,
        } => {
            let cfg = load(config.as_ref())?;
            if config.is_some() {
                println!(
                    "config ok: {} sweep points x {} drops",
                    cfg.points().len(),
                    cfg.n_drops
                );
            }
            let opts = validate::SuiteOptions {
                seed: seed.unwrap_or(if config.is_some() { cfg.master_seed } else { 1 }),
                realizations,
                tamper,
                ..Default::default()
            };
            let checks = validate::run_suite(&opts)?;
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!(
                "{} of {} checks passed",
                checks.len() - failed,
                checks.len()
            );
            Ok(if strict && failed > 0 {
                EXIT_INVALID
            } else {
                EXIT_OK
            })
        }
        Command::BestBeta { results, json } => {
            let rows = results::read_rows(&results)?;
            let sel = best_beta::best_beta(&rows)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&sel)?);
            } else {
                print!("{}", best_beta::format_table(&sel));
            }
            Ok(EXIT_OK)
        }
        Command::Inspect {
            config,
            point,
            drop,
        } => {
            let cfg = load(config.as_ref())?;
            let points = cfg.points();
            let pt = points.get(point).ok_or(Error::InvalidIndex {
                index: point,
                len: points.len(),
            })?;
            let seed = config::drop_seed(cfg.master_seed, pt.index, drop);
            let sc = Scenario::generate(&cfg.params(pt), seed)?;
            let geometry: serde_json::Value =
                serde_json::from_str(&build_hex_network(cfg.radius_m)?.to_json()?)?;
            let allocation: serde_json::Value = serde_json::from_str(&sc.alloc.to_json()?)?;
            let doc = serde_json::json!({
                "point": pt,
                "drop": drop,
                "drop_seed": seed,
                "geometry": geometry,
                "allocation": allocation,
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
            Ok(EXIT_OK)
        }
    }
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::try_parse() {
        Ok(cli) => execute(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            }
        }
    }
}
