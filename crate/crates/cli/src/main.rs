use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hjb_cli::config::ExperimentConfig;
use hjb_cli::experiment::{parse_policy, Run};
use hjb_cli::verify::{self, Check, Status, VerificationReport, SUITES};

#[derive(Parser)]
#[command(name = "hjb", version, about = "Spectral HJB solvers, control synthesis and verification suites")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spectrum and smoothing-norm table.
    Model,
    /// Picard fixed point on the mild formula; writes the field and windows table.
    SolvePicard,
    /// Backward regression scheme from the configured start point.
    SolveBsde,
    /// Cost and fundamental-relation gap of a policy.
    Control {
        /// Field from `solve-picard`; solved in-run when absent.
        #[arg(long)]
        field: Option<PathBuf>,
        /// `feedback`, `zero` or `const:u1,u2,...`; defaults to the config.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Full pipeline: model, Picard, BSDE (when configured) and control.
    Run,
    /// Runs a verification suite (or `all`).
    Verify {
        #[arg(long)]
        suite: String,
    },
    /// CSV tables from JSON artifacts.
    Report {
        artifacts: Vec<PathBuf>,
    },
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    match &cli.config {
        Some(p) => ExperimentConfig::load(p),
        None => bail!("--config is required for this command"),
    }
}

fn write_verification(out: &Path, report: &VerificationReport) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    fs::write(out.join(format!("verify_{}.json", report.suite)), s)?;
    fs::write(out.join(format!("verify_{}_timing.csv", report.suite)), report.timing_csv())?;
    Ok(())
}

fn print_checks(report: &VerificationReport) {
    for c in &report.checks {
        let tag = if c.is_pass() { "PASS" } else { "FAIL" };
        println!("{tag} {}/{} measured={:e} tol {} ({:.2}s)", report.suite, c.id, c.measured, c.tolerance, c.runtime);
    }
}

fn run_verify(suite: &str, seed: u64, out: &Path) -> Result<bool> {
    let suites: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite] };
    let mut ok = true;
    for s in suites {
        let result = if s == "blowup" {
            verify::blowup(seed).and_then(|(r, cusp, lip)| {
                fs::create_dir_all(out)?;
                fs::write(out.join("z_profile_cusp.json"), serde_json::to_string_pretty(&cusp)? + "\n")?;
                fs::write(out.join("z_profile_lipschitz.json"), serde_json::to_string_pretty(&lip)? + "\n")?;
                Ok(r)
            })
        } else {
            verify::run_suite(s, seed)
        };
        let report = match result {
            Ok(r) => r,
            Err(e) if SUITES.contains(&s) => VerificationReport {
                suite: s.to_string(),
                seed,
                checks: vec![Check {
                    id: "hard_failure".into(),
                    status: Status::Fail,
                    measured: 0.0,
                    tolerance: format!("{e:#}"),
                    runtime: 0.0,
                }],
            },
            Err(e) => return Err(e),
        };
        write_verification(out, &report)?;
        print_checks(&report);
        ok &= report.passed();
    }
    Ok(ok)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Verify { suite } => {
            let seed = match (&cli.seed, &cli.config) {
                (Some(s), _) => *s,
                (None, Some(_)) => load(&cli)?.seed,
                (None, None) => 0,
            };
            if !run_verify(suite, seed, &cli.out)? {
                std::process::exit(1);
            }
            Ok(())
        }
        Command::Report { artifacts } => {
            if artifacts.is_empty() {
                bail!("no artifacts given");
            }
            for p in hjb_cli::tables::report(artifacts, &cli.out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        command => {
            let cfg = load(&cli)?;
            let mut run = Run::new(cfg, cli.seed, &cli.out)?;
            let name = match command {
                Command::Model => {
                    print!("{}", run.model_stage()?);
                    "model"
                }
                Command::SolvePicard => {
                    let f = run.picard_stage()?;
                    let r = f.report();
                    println!(
                        "windows={} max_ratio={:.4} sup_v={:.6} weighted_sup_D={:.6}",
                        r.windows.len(),
                        r.max_ratio(),
                        r.sup_v(),
                        r.weighted_sup_d()
                    );
                    "solve-picard"
                }
                Command::SolveBsde => {
                    let s = run.bsde_stage()?;
                    println!(
                        "y0={:.6} stderr={:.2e} bmo_proxy={:.4} clips={}",
                        s.y0, s.y0_stderr, s.bmo_proxy, s.clip_total
                    );
                    "solve-bsde"
                }
                Command::Control { field, policy } => {
                    let f = match field {
                        Some(p) => run.load_field(p)?,
                        None => run.picard_stage()?,
                    };
                    let label = policy
                        .clone()
                        .unwrap_or_else(|| run.cfg.control.clone().unwrap_or_default().policy);
                    let choice = parse_policy(&label, run.model.dim())?;
                    let r = run.control_stage(&f, &choice, &label, None)?;
                    println!("J={:.6} stderr={:.2e} v={:.6} gap={:.3e} gap_stderr={:.2e}", r.j, r.stderr, r.v, r.gap, r.gap_stderr);
                    "control"
                }
                Command::Run => {
                    let r = run.run_all()?;
                    println!("J={:.6} stderr={:.2e} v={:.6} gap={:.3e}", r.j, r.stderr, r.v, r.gap);
                    if let Some(c) = &r.comparison {
                        println!("{}", serde_json::to_string(c)?);
                    }
                    "run"
                }
                Command::Verify { .. } | Command::Report { .. } => unreachable!(),
            };
            let m = run.manifest(name)?;
            eprintln!("config_hash={} seed={}", m.config_hash, m.seed);
            Ok(())
        }
    }
}
