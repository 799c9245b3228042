//! Acceptance criteria. Each criterion prints one `PASS`/`FAIL` line with the
//! checks behind it; the process exits non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use hjb_cli::verify::{self, Check, VerificationReport};

const SEED: u64 = 20_261_014;

/// Wall-clock limits, in seconds, of the quick criteria.
const LIMIT_COVARIANCE: f64 = 1.0;
const LIMIT_SMOOTHING: f64 = 1.0;
const LIMIT_GRADIENT: f64 = 30.0;
const LIMIT_HAMILTONIAN: f64 = 10.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn pick(report: &VerificationReport, prefixes: &[&str]) -> Vec<Check> {
    report
        .checks
        .iter()
        .filter(|c| prefixes.iter().any(|p| c.id.starts_with(p)))
        .cloned()
        .collect()
}

fn judge(checks: &[Check], limit: Option<f64>) -> Outcome {
    let runtime: f64 = checks.iter().map(|c| c.runtime).sum();
    let mut pass = !checks.is_empty() && checks.iter().all(Check::is_pass);
    let mut parts: Vec<String> = checks
        .iter()
        .map(|c| format!("{}={:.3e} [{}]", c.id, c.measured, c.tolerance))
        .collect();
    if let Some(l) = limit {
        pass &= runtime < l;
        parts.push(format!("runtime={runtime:.2}s [< {l}s]"));
    }
    if checks.is_empty() {
        parts.push("no checks found".into());
    }
    Outcome {
        pass,
        detail: parts.join(" "),
    }
}

fn json_artifacts(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == "json") {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p)?));
        }
    }
    out.sort();
    Ok(out)
}

fn hjb(args: &[&str]) -> Result<()> {
    let status = Command::new(env!("CARGO_BIN_EXE_hjb"))
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()
        .context("spawning hjb")?;
    if !status.success() {
        bail!("hjb {} exited with {status}", args.join(" "));
    }
    Ok(())
}

/// Identical config and seed under one and four worker threads.
fn determinism() -> Result<Outcome> {
    let root = tempfile::tempdir()?;
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quadratic.json");
    let config = config.to_str().context("config path")?;
    let mut runs = Vec::new();
    for threads in ["1", "4"] {
        let out = root.path().join(format!("t{threads}"));
        let out = out.to_str().context("output path")?;
        hjb(&["--config", config, "--threads", threads, "--out", out, "run"])?;
        hjb(&["--seed", "5", "--threads", threads, "--out", out, "verify", "--suite", "hamiltonian"])?;
        runs.push(json_artifacts(Path::new(out))?);
    }
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    let same = runs[0] == runs[1];
    Ok(Outcome {
        pass: same && names.len() >= 5,
        detail: format!("byte-identical={same} artifacts={}", names.join(",")),
    })
}

fn main() {
    let clock = Instant::now();
    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: Result<Outcome>| {
        let o = outcome.unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!("error: {e:#}"),
        });
        if !o.pass {
            failures += 1;
        }
        println!("{} criterion {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };

    let spectral = verify::spectral(SEED);
    let with = |r: &Result<VerificationReport>, f: &dyn Fn(&VerificationReport) -> Outcome| match r {
        Ok(r) => Ok(f(r)),
        Err(e) => Err(anyhow::anyhow!("{e:#}")),
    };
    report(1, "spectral closed forms", with(&spectral, &|r| judge(&pick(r, &["covariance_"]), Some(LIMIT_COVARIANCE))));
    report(2, "smoothing rate", with(&spectral, &|r| judge(&pick(r, &["smoothing_"]), Some(LIMIT_SMOOTHING))));
    report(3, "gradient identity", with(&spectral, &|r| judge(&pick(r, &["gradient_identity_"]), Some(LIMIT_GRADIENT))));

    let ham_clock = Instant::now();
    let ham = verify::hamiltonian(SEED);
    let ham_time = ham_clock.elapsed().as_secs_f64();
    report(
        4,
        "hamiltonian",
        with(&ham, &|r| {
            let mut o = judge(&r.checks, None);
            o.pass &= ham_time < LIMIT_HAMILTONIAN;
            o.detail.push_str(&format!(" runtime={ham_time:.2}s [< {LIMIT_HAMILTONIAN}s]"));
            o
        }),
    );

    let solvers = verify::solvers(SEED);
    report(
        5,
        "quadratic benchmark",
        with(&solvers, &|r| {
            judge(
                &pick(r, &["hopf_cole_vs_", "quadratic_psi_", "picard_vs_hopf_cole", "bsde_vs_hopf_cole", "bsde_clip_"]),
                None,
            )
        }),
    );
    report(6, "contraction", with(&solvers, &|r| judge(&pick(r, &["picard_max_window", "picard_windows_outside_ball", "picard_sup_v"]), None)));

    report(7, "fundamental relation", verify::control(SEED).map(|r| judge(&r.checks, None)));
    report(8, "gradient blow-up", verify::blowup(SEED).map(|(r, _, _)| judge(&r.checks, None)));
    report(9, "terminal stability", verify::stability(SEED).map(|r| judge(&r.checks, None)));
    report(10, "girsanov consistency", with(&solvers, &|r| judge(&pick(r, &["girsanov_", "equivalent_representation"]), None)));
    report(11, "determinism", determinism());

    println!("acceptance: {failures} failing criteria, {:.0}s", clock.elapsed().as_secs_f64());
    if failures > 0 {
        std::process::exit(1);
    }
}
