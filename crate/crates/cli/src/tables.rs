//! CSV tables from JSON artifacts, with a fixed column order.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hjb_core::fbsde::{BsdeSolution, ZProfile};
use hjb_core::picard::ValueField;

enum Artifact {
    Field(Box<ValueField>),
    Bsde(Box<BsdeSolution>),
    Profile(ZProfile),
}

fn classify(path: &Path) -> Result<Artifact> {
    if !path.exists() {
        bail!("missing artifact: {}", path.display());
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let has = |k: &str| value.get(k).is_some();
    if has("coeffs") && has("report") {
        Ok(Artifact::Field(Box::new(serde_json::from_value(value)?)))
    } else if has("y0") && has("grid") {
        Ok(Artifact::Bsde(Box::new(serde_json::from_value(value)?)))
    } else if has("rows") && has("fit") {
        Ok(Artifact::Profile(serde_json::from_value(value)?))
    } else {
        bail!("unrecognised artifact: {}", path.display())
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// `h,y0,y0_stderr,order`, sorted by decreasing step. The order column is the
/// observed rate `ln(|d_i| / |d_{i+1}|) / ln(h_i / h_{i+1})` of successive
/// differences, left empty where fewer than three steps are available.
pub fn ladder_csv(runs: &[(f64, f64, f64)]) -> String {
    let mut rows = runs.to_vec();
    rows.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut s = String::from("h,y0,y0_stderr,order\n");
    for i in 0..rows.len() {
        let order = if i + 2 < rows.len() {
            let d1 = (rows[i].1 - rows[i + 1].1).abs();
            let d2 = (rows[i + 1].1 - rows[i + 2].1).abs();
            format!("{:.4}", (d1 / d2).ln() / (rows[i].0 / rows[i + 1].0).ln())
        } else {
            String::new()
        };
        s.push_str(&format!("{:e},{:e},{:e},{}\n", rows[i].0, rows[i].1, rows[i].2, order));
    }
    s
}

/// Writes the tables derived from `paths` into `out` and returns their paths.
pub fn report(paths: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let artifacts = paths.iter().map(|p| classify(p).map(|a| (p, a))).collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let n_fields = artifacts.iter().filter(|(_, a)| matches!(a, Artifact::Field(_))).count();
    let mut ladder = Vec::new();
    let mut slopes = String::from("artifact,slope,slope_stderr,ci_low,ci_high\n");
    let mut n_profiles = 0;
    for (path, a) in &artifacts {
        match a {
            Artifact::Field(f) => {
                let name = if n_fields == 1 { "windows.csv".to_string() } else { format!("{}_windows.csv", stem(path)) };
                let mut csv = Vec::new();
                f.report().write_csv(&mut csv)?;
                let target = out.join(name);
                fs::write(&target, csv)?;
                written.push(target);
            }
            Artifact::Bsde(b) => ladder.push((b.grid.h(), b.y0, b.y0_stderr)),
            Artifact::Profile(p) => {
                n_profiles += 1;
                let mut csv = String::from("tau,sup_z,argmax_probe\n");
                for r in &p.rows {
                    csv.push_str(&format!("{:e},{:e},{}\n", r.tau, r.sup_z, r.argmax_probe));
                }
                let target = out.join(format!("{}_rows.csv", stem(path)));
                fs::write(&target, csv)?;
                written.push(target);
                slopes.push_str(&format!(
                    "{},{:.6},{:.6},{:.6},{:.6}\n",
                    stem(path),
                    p.fit.slope,
                    p.fit.slope_stderr,
                    p.fit.ci_low,
                    p.fit.ci_high
                ));
            }
        }
    }
    if !ladder.is_empty() {
        let target = out.join("bsde_ladder.csv");
        fs::write(&target, ladder_csv(&ladder))?;
        written.push(target);
    }
    if n_profiles > 0 {
        let target = out.join("slope_fits.csv");
        fs::write(&target, slopes)?;
        written.push(target);
    }
    Ok(written)
}
