//! `saturate`: thresholds, potential functions and verification for
//! nonbinary spatially coupled LDPC ensembles on the erasure channel.
//!
//! Exit codes: 0 on success (including structured "infeasible" verdicts),
//! 1 on usage or configuration errors, 2 when verification fails.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use config::{EnsembleArgs, Extra, Format, IterArgs, OutputArgs, RunConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "saturate", version, about = "Density evolution thresholds and potential functions for nonbinary LDPC ensembles")]
#[command(after_help = "Environment: SATURATE_NUM_BACKEND=exact|double selects the DE arithmetic (default double).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// BP threshold of an uncoupled or coupled ensemble, or one DE run with --eps
    Threshold(ThresholdCmd),
    /// Build and solve the linear system for D, F and G
    Potential(PotentialCmd),
    /// ε^BP, potential threshold ε*, energy-gap curve, w-bound and coupled thresholds
    Saturate(SaturateCmd),
    /// Run the built-in verification suites
    Verify(VerifyCmd),
}

#[derive(Debug, Args)]
struct ThresholdCmd {
    #[command(flatten)]
    ensemble: EnsembleArgs,
    #[command(flatten)]
    iter: IterArgs,
    /// Run DE at this erasure probability and report the fixed point
    #[arg(long)]
    eps: Option<f64>,
    /// Run every combination of the listed parameters; CSV columns dv,dc,m,L,w,eps_bp
    #[arg(long)]
    sweep: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SystemArgs {
    /// JSON system description (kind nonbinary, bilayer or generic); overrides --dv/--dc/--m
    #[arg(long)]
    system: Option<PathBuf>,
    /// Pattern of D: positive or diagonal [default: positive, diagonal for bilayer]
    #[arg(long)]
    shape: Option<String>,
}

#[derive(Debug, Args)]
struct PotentialCmd {
    #[command(flatten)]
    ensemble: EnsembleArgs,
    #[command(flatten)]
    system: SystemArgs,
    /// Only report whether the support condition for the chosen shape holds
    #[arg(long)]
    check_only: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SaturateCmd {
    #[command(flatten)]
    ensemble: EnsembleArgs,
    #[command(flatten)]
    iter: IterArgs,
    #[command(flatten)]
    system: SystemArgs,
    /// Points on the energy-gap curve [default: 21]
    #[arg(long)]
    points: Option<usize>,
    /// Grid points per coordinate for the w-bound suprema [default: 21]
    #[arg(long)]
    grid: Option<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct VerifyCmd {
    /// Suites to run, comma separated [default: all]
    #[arg(long, value_delimiter = ',')]
    suite: Vec<String>,
    /// Restrict dimension-indexed suites to one m
    #[arg(long)]
    m: Option<usize>,
    /// Seed for the randomised property checks
    #[arg(long)]
    seed: Option<u64>,
    /// Random samples per property and dimension [default: 1000]
    #[arg(long)]
    samples: Option<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ResultRecord<'a> {
    schema_version: u32,
    tool: &'static str,
    tool_version: &'static str,
    config: &'a RunConfig,
    result: &'a Value,
    timing: Value,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let none = IterArgs::default();
    let (cfg, verify_m) = match &cli.command {
        Command::Threshold(c) => {
            let extra = Extra { eps: c.eps, sweep: c.sweep, ..Extra::default() };
            (config::resolve("threshold", &c.ensemble, &c.iter, &c.output, extra)?, None)
        }
        Command::Potential(c) => {
            let extra = Extra {
                system: c.system.system.clone(),
                shape: c.system.shape.clone(),
                check_only: c.check_only,
                ..Extra::default()
            };
            (config::resolve("potential", &c.ensemble, &none, &c.output, extra)?, None)
        }
        Command::Saturate(c) => {
            let extra = Extra {
                system: c.system.system.clone(),
                shape: c.system.shape.clone(),
                points: c.points,
                grid: c.grid,
                ..Extra::default()
            };
            (config::resolve("saturate", &c.ensemble, &c.iter, &c.output, extra)?, None)
        }
        Command::Verify(c) => {
            let extra = Extra {
                suite: c.suite.clone(),
                seed: c.seed,
                samples: c.samples,
                verify_m: c.m,
                ..Extra::default()
            };
            let cfg = config::resolve("verify", &EnsembleArgs::default(), &none, &c.output, extra)?;
            (cfg, c.m)
        }
    };
    if let Some(n) = cfg.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let start = Instant::now();
    let mut outcome = match &cli.command {
        Command::Threshold(_) => commands::threshold(&cfg)?,
        Command::Potential(_) => commands::potential(&cfg)?,
        Command::Saturate(_) => commands::saturate(&cfg)?,
        Command::Verify(_) => commands::verify(&cfg, verify_m)?,
    };
    let seconds = start.elapsed().as_secs_f64();
    match &mut outcome.timing {
        Value::Object(map) => {
            map.insert("seconds".into(), seconds.into());
        }
        other => *other = serde_json::json!({ "seconds": seconds }),
    }
    emit(&cfg, &outcome)?;
    Ok(if outcome.failed { 2 } else { 0 })
}

fn emit(cfg: &RunConfig, outcome: &commands::Outcome) -> Result<()> {
    let record = ResultRecord {
        schema_version: SCHEMA_VERSION,
        tool: "saturate",
        tool_version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        result: &outcome.result,
        timing: outcome.timing.clone(),
    };
    let body = match (cfg.format, &outcome.csv) {
        (Format::Csv, Some(table)) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&table.header)?;
            for row in &table.rows {
                w.write_record(row)?;
            }
            String::from_utf8(w.into_inner()?)?
        }
        (Format::Csv, None) => anyhow::bail!("this command has no CSV output; use --format json"),
        (Format::Json, _) => serde_json::to_string_pretty(&record)? + "\n",
    };
    match (&cfg.out, &outcome.summary) {
        (Some(path), summary) => {
            std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
            if let Some(s) = summary {
                print!("{s}");
            }
        }
        // verify prints its table unless JSON was asked for explicitly
        (None, Some(s)) if !cfg.format_explicit => print!("{s}"),
        (None, _) => {
            std::io::stdout().write_all(body.as_bytes())?;
        }
    }
    Ok(())
}
