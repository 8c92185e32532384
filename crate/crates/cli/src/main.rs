//! `platoon-rhc`: run scenarios, sweeps and feasibility checks from the shell.
//!
//! Exit codes: 0 success, 1 infeasible (check-feasibility) or runtime
//! failure, 2 collision, 3 configuration error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use platoon_rhc::io::{write_run, write_sweep};
use platoon_rhc::sim::{check_feasibility, preset, run, summarize, sweep, Scenario, SweepAxis, PRESET_NAMES};
use platoon_rhc::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_COLLISION: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "platoon-rhc", version, about = "Receding-horizon platoon formation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop simulation and write its tables.
    Run(RunArgs),
    /// Run a parameter sweep over (value, seed) cells.
    Sweep(SweepArgs),
    /// Evaluate the closed-form feasibility conditions for the initial states.
    CheckFeasibility(ScenarioArgs),
    /// List the presets, or print one as a scenario file.
    Presets {
        name: Option<String>,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML) or preset name; defaults to fig3-no-pv.
    scenario: Option<String>,
    /// Preset to start from.
    #[arg(long, conflicts_with = "scenario")]
    preset: Option<String>,
    /// Seed for the HDV parameter draw.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path override, e.g. `--set hdv.alpha=0.6`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// alpha, beta, v_d, rho or N; defaults to the scenario's sweep.
    #[arg(long)]
    axis: Option<String>,
    /// Comma list or inclusive range `a..b` / `a..b:step`.
    #[arg(long)]
    values: Option<String>,
    /// Comma list or inclusive range `a..b`.
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads; overrides PLATOON_RHC_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::CheckFeasibility(args) => cmd_check_feasibility(args),
        Command::Presets { name } => cmd_presets(name),
    }
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn is_config(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_) | Error::InvalidParameter { .. } | Error::InvalidEvent(_) | Error::OrderingViolation { .. }
    )
}

fn resolve(args: &ScenarioArgs) -> Result<Scenario, Error> {
    let base = match (&args.scenario, &args.preset) {
        (Some(s), _) if Path::new(s).exists() => Scenario::load(Path::new(s))?,
        (Some(s), _) if PRESET_NAMES.contains(&s.as_str()) => preset(s)?,
        (Some(s), _) => Scenario::load(Path::new(s))?,
        (None, Some(p)) => preset(p)?,
        (None, None) => preset("fig3-no-pv")?,
    };
    let mut sc = base.with_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    sc.validate()?;
    Ok(sc)
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let sc = match resolve(&args.scenario) {
        Ok(sc) => sc,
        Err(e) => return config_error(e),
    };
    match run(&sc) {
        Ok(result) => {
            if let Err(e) = write_run(&result, &args.out) {
                eprintln!("error: writing {}: {e}", args.out.display());
                return ExitCode::from(EXIT_FAILURE);
            }
            let m = &result.metrics;
            println!("scenario   {} (seed {})", sc.name, sc.seed);
            println!("steps      {}", result.rows.len());
            match result.formation_time {
                Some(t) => println!("formed at  {t:.1} s"),
                None => println!("formed at  -"),
            }
            println!(
                "violations cav-pv {} speed {} input {}",
                m.cav_pv_violations, m.speed_violations, m.input_violations
            );
            println!("fail-safe  {} steps, degraded {} steps", m.fail_safe_steps, m.degraded_steps);
            println!("controller {:.3} ms mean, {:.3} ms max", m.controller_ms_mean, m.controller_ms_max);
            println!("output     {}", args.out.display());
            ExitCode::SUCCESS
        }
        Err(Error::CollisionDetected(report)) => {
            eprintln!(
                "error: collision at t = {:.2} s between vehicles {} and {} (headway {:.3} m)",
                report.time, report.lead_id, report.follow_id, report.headway
            );
            let written = std::fs::create_dir_all(&args.out).and_then(|_| {
                let mut w = BufWriter::new(File::create(args.out.join("collision.json"))?);
                serde_json::to_writer_pretty(&mut w, &*report)?;
                w.write_all(b"\n")?;
                w.flush()
            });
            if let Err(e) = written {
                eprintln!("error: writing collision report: {e}");
            }
            ExitCode::from(EXIT_COLLISION)
        }
        Err(e) if is_config(&e) => config_error(e),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

/// Parses `1,2,5`, `3..8` or `0.2..1.8:0.2` (inclusive).
fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    let text = text.trim();
    if let Some((lo, rest)) = text.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (hi, step),
            None => (rest, "1"),
        };
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
        let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
        if !(step > 0.0) || hi < lo {
            return Err(format!("empty or invalid range `{text}`"));
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize;
        // values rounded to 1e-9 so 0.2 + 3 * 0.2 prints as 0.8
        return Ok((0..=count).map(|k| ((lo + k as f64 * step) * 1e9).round() / 1e9).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    parse_list(text)?
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as u64)
            } else {
                Err(format!("seed {v} is not a non-negative integer"))
            }
        })
        .collect()
}

fn cmd_sweep(args: SweepArgs) -> ExitCode {
    let sc = match resolve(&args.scenario) {
        Ok(sc) => sc,
        Err(e) => return config_error(e),
    };
    let spec = sc.sweep.clone();
    let axis: SweepAxis = match (&args.axis, &spec) {
        (Some(a), _) => match a.parse() {
            Ok(a) => a,
            Err(e) => return config_error(e),
        },
        (None, Some(s)) => s.axis,
        (None, None) => return config_error("no sweep axis: pass --axis or use a sweep scenario"),
    };
    let values = match (&args.values, &spec) {
        (Some(v), _) => match parse_list(v) {
            Ok(v) => v,
            Err(e) => return config_error(format!("--values: {e}")),
        },
        (None, Some(s)) if s.axis == axis => s.values.clone(),
        _ => return config_error("no sweep values: pass --values"),
    };
    let seeds = match (&args.seeds, &spec) {
        (Some(s), _) => match parse_seeds(s) {
            Ok(s) => s,
            Err(e) => return config_error(format!("--seeds: {e}")),
        },
        (None, Some(s)) => s.seeds.clone(),
        (None, None) => vec![sc.seed],
    };
    let cells = match sweep(&sc, axis, &values, &seeds, args.threads) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    let summary = summarize(&cells);
    if let Err(e) = write_sweep(axis.name(), &cells, &summary, &args.out) {
        eprintln!("error: writing {}: {e}", args.out.display());
        return ExitCode::from(EXIT_FAILURE);
    }
    println!("{:>10} {:>5} {:>7} {:>7} {:>12} {:>12}", axis.name(), "runs", "failed", "formed", "mean t_f [s]", "mean ms");
    for s in &summary {
        let tf = s.mean_formation_time.map_or("-".into(), |t| format!("{t:.1}"));
        let ms = s.mean_controller_ms.map_or("-".into(), |t| format!("{t:.3}"));
        println!("{:>10} {:>5} {:>7} {:>7} {:>12} {:>12}", s.value, s.runs, s.failed, s.formed, tf, ms);
    }
    for c in cells.iter().filter(|c| c.error.is_some()) {
        eprintln!("cell {}={} seed {} failed: {}", axis.name(), c.value, c.seed, c.error.as_deref().unwrap_or(""));
    }
    println!("output {}", args.out.display());
    if cells.iter().any(|c| c.error.is_none()) {
        ExitCode::SUCCESS
    } else {
        eprintln!("error: every sweep cell failed");
        ExitCode::from(EXIT_FAILURE)
    }
}

fn cmd_check_feasibility(args: ScenarioArgs) -> ExitCode {
    let sc = match resolve(&args) {
        Ok(sc) => sc,
        Err(e) => return config_error(e),
    };
    let report = match check_feasibility(&sc) {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    match serde_json::to_string_pretty(&report) {
        Ok(text) => println!("{text}"),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    if report.platoon_feasible {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILURE)
    }
}

fn cmd_presets(name: Option<String>) -> ExitCode {
    match name {
        None => {
            for n in PRESET_NAMES {
                println!("{n}");
            }
            ExitCode::SUCCESS
        }
        Some(n) => match preset(&n).and_then(|sc| sc.to_toml_string()) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => config_error(e),
        },
    }
}
