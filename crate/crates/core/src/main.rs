use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use risurllc::harness::{self, Comparator, SweepParam, SweepSpec};
use risurllc::scenario::{load_config_with_profile, Config, Profile};
use risurllc::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "risurllc", version, about = "RIS-aided URLLC downlink: training, baselines and sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// TOML configuration; unspecified fields take the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `desk` or `paper`.
    #[arg(long, default_value = "desk")]
    profile: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an agent and evaluate it.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a saved checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate a non-learning scheme.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// zf_random_phase, mmse or shannon_ideal.
        #[arg(long, default_value = "zf_random_phase")]
        scheme: String,
        /// Defaults to the configured evaluation count.
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// Sweep one parameter over several comparators.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// p_total, N, C_total or beta_min.
        #[arg(long)]
        sweep_param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        /// Comma-separated comparator names.
        #[arg(long, value_delimiter = ',', default_value = "td3,zf_random_phase")]
        comparators: Vec<String>,
    },
}

fn load(common: &Common) -> Result<Config> {
    let profile: Profile = common.profile.parse()?;
    let text = match &common.config {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| Error::Config { field: "config".into(), reason: format!("{}: {e}", p.display()) })?,
        None => String::new(),
    };
    load_config_with_profile(&text, profile)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = load(&common)?;
            let out = harness::cmd_train(&cfg, common.seed, &common.out)?;
            println!("mean evaluation objective: {} bits", out.mean_eval);
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = load(&common)?;
            let scores = harness::cmd_evaluate(&cfg, common.seed, &checkpoint, &common.out)?;
            let (m, s) = harness::mean_std(&scores.iter().map(|r| r.fbl).collect::<Vec<_>>());
            println!("mean evaluation objective: {m} bits (std {s})");
        }
        Command::Baseline { common, scheme, realizations } => {
            let cfg = load(&common)?;
            let scheme: Comparator = scheme.parse()?;
            let n = realizations.unwrap_or(cfg.learn.eval_realizations);
            let summary = harness::cmd_baseline(&cfg, scheme, n, common.seed, &common.out)?;
            println!("{scheme}: mean {} bits (std {})", summary.mean, summary.std);
        }
        Command::Sweep { common, sweep_param, values, reps, comparators } => {
            let cfg = load(&common)?;
            let spec = SweepSpec {
                param: sweep_param.parse::<SweepParam>()?,
                values,
                reps,
                comparators: comparators.iter().map(|c| c.parse()).collect::<Result<_>>()?,
            };
            let rows = harness::cmd_sweep(&cfg, &spec, common.seed, &common.out)?;
            for r in rows {
                println!("{}={} rep {} {}: {} bits", spec.param.name(), r.value, r.rep, r.comparator, r.mean_bits);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
