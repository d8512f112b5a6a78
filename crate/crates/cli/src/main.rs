//! `hompinn` command-line driver.
//!
//! Every subcommand reads one JSON experiment config, applies the command
//! line overrides, writes the fully resolved config next to its outputs and
//! then runs. The exit code is nonzero when an output could not be written
//! or a training run diverged.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hompinn::config::{ExperimentConfig, ResolvedConfig};

#[derive(Debug, Parser)]
#[command(name = "hompinn", version, about = "Homotopy PINNs for inverse problems with multiple solutions")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps, studies and discovery.
    #[arg(long, global = true, env = "HOMPINN_WORKERS")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "HOMPINN_OUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the ground-truth solutions and sample observations.
    GenerateObs,
    /// Run the inverse pipeline.
    Train,
    /// Run the pipeline for each M and recommend one.
    SweepM {
        /// Comma list or inclusive range such as `1..4`.
        #[arg(long)]
        m_range: Option<String>,
    },
    /// Train from many random initial λ.
    Robustness {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Look for distinct solutions at a fixed λ.
    Discover {
        /// Comma separated λ; defaults to the config's data λ.
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<String>,
    },
    /// Summarise training-record CSVs.
    Report {
        /// Record files to join.
        #[arg(required = true)]
        records: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Report { records } = &cli.command {
        let out = cli.common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        return commands::report(records, &out);
    }
    let cfg = resolve(&cli.common)?;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let echo = cfg.output_dir.join("resolved_config.json");
    std::fs::write(&echo, cfg.echo_json()).with_context(|| format!("writing {}", echo.display()))?;
    println!("resolved config: {}", echo.display());
    match cli.command {
        Command::GenerateObs => commands::generate_obs(&cfg),
        Command::Train => commands::train(&cfg),
        Command::SweepM { m_range } => {
            let range = match m_range {
                Some(s) => parse_m_range(&s)?,
                None => cfg.studies.m_range.clone(),
            };
            commands::sweep_m(&cfg, &range)
        }
        Command::Robustness { trials } => commands::robustness(&cfg, trials.unwrap_or(cfg.studies.trials)),
        Command::Discover { lambda } => {
            let lambda = match lambda {
                Some(s) => parse_list(&s)?,
                None => cfg.data.lambda.clone(),
            };
            commands::discover(&cfg, &lambda)
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
}

fn resolve(common: &Common) -> Result<ResolvedConfig> {
    let Some(path) = &common.config else {
        bail!("--config is required for this subcommand");
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc = ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut cfg = doc.resolve().with_context(|| format!("resolving {}", path.display()))?;
    if let Some(seed) = common.seed {
        cfg.reseed(seed);
    }
    if let Some(w) = common.workers {
        if w == 0 {
            bail!("--workers must be >= 1");
        }
        cfg.workers = w;
        cfg.studies.discovery.workers = w;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad number {v:?}")))
        .collect()
}

fn parse_m_range(s: &str) -> Result<Vec<usize>> {
    let range = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().with_context(|| format!("bad M range {s:?}"))?;
        let b: usize = b.trim().parse().with_context(|| format!("bad M range {s:?}"))?;
        (a..=b).collect::<Vec<_>>()
    } else {
        s.split(',')
            .map(|v| v.trim().parse::<usize>().with_context(|| format!("bad M {v:?}")))
            .collect::<Result<_>>()?
    };
    if range.is_empty() || range[0] == 0 || range.windows(2).any(|w| w[0] >= w[1]) {
        bail!("M range {s:?} must be nonempty, positive and ascending");
    }
    Ok(range)
}
