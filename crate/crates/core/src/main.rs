use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oihrl::config::RunConfig;
use oihrl::harness::{self, parse_baselines};
use oihrl::Result;

#[derive(Parser)]
#[command(name = "oihrl", version, about = "Option-indexed hierarchical RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Master seed; defaults to the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build the configured domain and write it as TOML.
    GenerateDomain(Common),
    /// Meta-train the retrieval index and write a checkpoint.
    MetaTrain(Common),
    /// Train a policy per test variant and baseline.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated, e.g. HRL_N,HRL_N+2,HRL_FULL,OI_HRL.
        #[arg(long, value_delimiter = ',')]
        baselines: Option<Vec<String>>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Retrain the index on subsets of the training variants.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Summarise result files in a directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(c: &Common) -> Result<(RunConfig, u64)> {
    let cfg = RunConfig::load(&c.config)?;
    let seed = c.seed.unwrap_or(cfg.seed);
    Ok((cfg, seed))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateDomain(c) => {
            let (cfg, _) = load(&c)?;
            let d = harness::cmd_generate_domain(&cfg, &c.out)?;
            println!(
                "{}: {} options, {} train / {} validation / {} test variants",
                d.graph.name,
                d.num_options(),
                d.split.train.len(),
                d.split.validation.len(),
                d.split.test.len()
            );
        }
        Command::MetaTrain(c) => {
            let (cfg, seed) = load(&c)?;
            let (_, report) = harness::cmd_meta_train(&cfg, seed, &c.out)?;
            let n = report.records.len();
            let tenth = (n / 10).max(1);
            println!(
                "{} iterations, loss {:.6} -> {:.6}, {} samples skipped",
                n,
                report.mean_loss(0..tenth),
                report.mean_loss(n - tenth..n),
                report.total_skipped()
            );
        }
        Command::Evaluate { common, baselines, workers } => {
            let (cfg, seed) = load(&common)?;
            let names = baselines.unwrap_or_else(|| cfg.evaluation.baselines.clone());
            let outcome = harness::cmd_evaluate(&cfg, seed, &common.out, &parse_baselines(&names)?, workers)?;
            for s in outcome.summaries {
                println!(
                    "{:<10} reward {:.3} [{:.3}, {:.3}] length {:.2} sufficient {:.3}",
                    s.baseline, s.mean_reward, s.ci_lo, s.ci_hi, s.mean_length, s.sufficient_fraction
                );
            }
        }
        Command::Sweep { common, fractions, workers } => {
            let (cfg, seed) = load(&common)?;
            let fractions = fractions
                .or_else(|| cfg.sweep.as_ref().map(|s| s.fractions.clone()))
                .unwrap_or_else(|| vec![0.25, 0.5, 1.0]);
            for r in harness::cmd_sweep(&cfg, seed, &common.out, &fractions, workers)? {
                println!(
                    "fraction {:.2}: sufficient {:.3} extra {:.2} missing {:.2}",
                    r.fraction, r.mean_sufficient, r.mean_extra, r.mean_missing
                );
            }
        }
        Command::Report { out } => print!("{}", harness::cmd_report(&out)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
