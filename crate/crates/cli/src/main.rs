use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use spiral_core::lab::{self, ExperimentConfig, RunReport};

/// Overrides `output.dir` from the config file.
const OUT_ENV: &str = "SPIRAL_LAB_OUT";

#[derive(Parser)]
#[command(
    name = "spiral-lab",
    version,
    about = "Shorten horizontal spirals by cut-and-device surgery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write reports.
    Run {
        config: PathBuf,
        /// Evaluate every k in the range instead of stopping at the first
        /// certified one.
        #[arg(long)]
        full_scan: bool,
        /// Output directory (takes precedence over the environment).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// Seeded consistency checks of the integral calculus.
    CalculusSelftest {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Solve at one k and write the spiral and modified-curve polylines.
    DumpCurves {
        config: PathBuf,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output.dir.clone())
}

fn print_run(report: &RunReport) {
    if let Some(sel) = &report.selection {
        for (j, p) in sel.params.iter().enumerate() {
            println!("device {}: h = {}, eta = {}", j + 3, p.h, p.eta);
        }
    }
    if let Some(e) = &report.selection_error {
        println!("device selection failed: {e}");
    }
    for r in &report.records {
        match (&r.failure, r.delta_l, r.endpoint_err) {
            (None, Some(dl), Some(err)) => {
                println!("k = {:>4}  certified  |E| = {err:.3e}  dL = {dl:.6e}", r.k)
            }
            (Some(f), _, _) => println!("k = {:>4}  failed     {f:?}", r.k),
            _ => println!("k = {:>4}  incomplete", r.k),
        }
    }
    match report.summary.k_star {
        Some(k) => println!("certified at k* = {k}"),
        None => println!("no certified k in range"),
    }
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, full_scan, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.scan.full_scan |= full_scan;
            let report = lab::run_pipeline(&cfg).with_context(|| format!("running {}", config.display()))?;
            print_run(&report);
            let dir = output_dir(&cfg, out);
            let written = lab::emit_outputs(&report, &cfg, &dir)?;
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(report.summary.certified)
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (model, spiral) = cfg.validate()?;
            let asym = spiral.phase().check_asymptotics(200);
            println!(
                "ok: n = {}, {} layers, remainders: {}, h_min = {}",
                model.dim(),
                model.layers().len(),
                model.has_remainders(),
                spiral.h_min()
            );
            if !asym.verified {
                println!("note: tabulated phase, spiral asymptotics unverified");
            }
            Ok(asym.holds() || !asym.verified)
        }
        Command::CalculusSelftest { seed } => {
            let report = lab::calculus_selftest(seed)?;
            for c in &report.checks {
                println!(
                    "{} {} ({} cases, worst {:e}, tolerance {:e})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.cases,
                    c.worst,
                    c.tolerance
                );
            }
            for b in &report.sandwich {
                println!("sandwich ({}, {}): [{:.6}, {:.6}]", b.alpha, b.beta, b.lower, b.upper);
            }
            Ok(report.passed())
        }
        Command::DumpCurves { config, k, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (rec, curves, intervals) = lab::dump_curves(&cfg, k)?;
            let dir = output_dir(&cfg, out);
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let curves_path = dir.join(format!("curves_k{k}.csv"));
            let intervals_path = dir.join(format!("intervals_k{k}.csv"));
            std::fs::write(&curves_path, curves)?;
            std::fs::write(&intervals_path, intervals)?;
            println!("wrote {}", curves_path.display());
            println!("wrote {}", intervals_path.display());
            Ok(rec.certified)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
