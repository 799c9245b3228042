//! Pipeline stages and their artifacts. Every JSON artifact is a pure function
//! of the config and the seed.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hjb_core::control::{fundamental_gap, synthesize_feedback, ControlProblem};
use hjb_core::fbsde::{solve_bsde, BsdeSolution};
use hjb_core::functions::ScalarField;
use hjb_core::hamiltonian::{Hamiltonian, HamiltonianSpec};
use hjb_core::ou_sim::{Policy, ZeroPolicy};
use hjb_core::picard::{hopf_cole_reference, solve_mild, SemigroupQuadrature, ValueField};
use hjb_core::spectral::SpectralModel;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Policy selector of the control stage.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyChoice {
    Feedback,
    Zero,
    Const(Vec<f64>),
}

pub fn parse_policy(s: &str, dim: usize) -> Result<PolicyChoice> {
    match s {
        "feedback" => Ok(PolicyChoice::Feedback),
        "zero" => Ok(PolicyChoice::Zero),
        _ => {
            let rest = s
                .strip_prefix("const:")
                .ok_or_else(|| anyhow!("unknown policy `{s}` (feedback | zero | const:u1,u2,...)"))?;
            let mut u = rest
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("bad control value `{v}`: {e}")))
                .collect::<Result<Vec<f64>>>()?;
            if u.len() > dim {
                bail!("constant control has {} entries for {dim} modes", u.len());
            }
            u.resize(dim, 0.0);
            Ok(PolicyChoice::Const(u))
        }
    }
}

/// Resolved inputs shared by all stages.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub model: SpectralModel,
    pub ham: HamiltonianSpec,
    pub x: Vec<f64>,
    pub seed: u64,
    pub out: PathBuf,
    artifacts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub artifacts: Vec<String>,
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    #[serde(rename = "J")]
    pub j: f64,
    pub stderr: f64,
    pub v: f64,
    pub gap: f64,
    pub gap_stderr: f64,
    pub policy: String,
    pub n_paths: usize,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

/// Cross-solver comparison at the start point, with the exponential-transform
/// reference when the Hamiltonian is the standard quadratic one and `l = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub picard_v: Option<f64>,
    pub bsde_y0: Option<f64>,
    pub bsde_stderr: Option<f64>,
    pub hopf_cole: Option<f64>,
    pub picard_error: Option<f64>,
    pub bsde_error: Option<f64>,
}

impl Run {
    pub fn new(cfg: ExperimentConfig, seed: Option<u64>, out: &Path) -> Result<Self> {
        let model = cfg.build_model()?;
        let ham = HamiltonianSpec::new(cfg.hamiltonian.clone(), model.dim())?;
        let x = cfg.start_point(model.dim())?;
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            seed: seed.unwrap_or(cfg.seed),
            cfg,
            model,
            ham,
            x,
            out: out.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn manifest(&mut self, command: &str) -> Result<Manifest> {
        let m = Manifest {
            command: command.to_string(),
            config_hash: self.cfg.hash(),
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            artifacts: self.artifacts.clone(),
        };
        let name = self.cfg.outputs.manifest.clone();
        self.write_json(&name, &m)?;
        Ok(m)
    }

    /// Spectrum and smoothing table; returns the CSV of the table.
    pub fn model_stage(&mut self) -> Result<String> {
        let mut spec = String::from("k,alpha,lambda\n");
        for m in self.model.modes() {
            spec.push_str(&format!("{},{:e},{:e}\n", m.k, m.alpha, m.lambda));
        }
        let table = smoothing_table(&self.model)?;
        let name = self.cfg.outputs.model.clone();
        self.write(&name, table.as_bytes())?;
        self.write("spectrum.csv", spec.as_bytes())?;
        Ok(format!("{spec}\n{table}"))
    }

    pub fn picard_stage(&mut self) -> Result<ValueField> {
        let pc = self.cfg.picard.clone().unwrap_or_default();
        let field = solve_mild(&self.model, &self.ham, &self.cfg.terminal, &self.cfg.running, &pc)?;
        let name = self.cfg.outputs.field.clone();
        self.write_json(&name, &field)?;
        let mut csv = Vec::new();
        field.report().write_csv(&mut csv)?;
        let name = self.cfg.outputs.windows.clone();
        self.write(&name, &csv)?;
        Ok(field)
    }

    pub fn bsde_stage(&mut self) -> Result<BsdeSolution> {
        let bc = self.cfg.bsde.clone().unwrap_or_default();
        let sol = solve_bsde(
            &self.model,
            &self.ham,
            &self.cfg.terminal,
            &self.cfg.running,
            self.cfg.start.t,
            &self.x,
            &bc,
            self.seed,
        )?;
        let name = self.cfg.outputs.bsde.clone();
        self.write_json(&name, &sol)?;
        let mut csv = Vec::new();
        sol.write_csv(&mut csv)?;
        let name = self.cfg.outputs.diagnostics.clone();
        self.write(&name, &csv)?;
        Ok(sol)
    }

    pub fn load_field(&self, path: &Path) -> Result<ValueField> {
        let text = fs::read_to_string(path).with_context(|| format!("reading field {}", path.display()))?;
        let field: ValueField = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if field.model != self.model {
            bail!("field {} was solved for a different model", path.display());
        }
        Ok(field)
    }

    pub fn control_stage(
        &mut self,
        field: &ValueField,
        policy: &PolicyChoice,
        label: &str,
        comparison: Option<Comparison>,
    ) -> Result<ControlReport> {
        let cc = self.cfg.control.clone().unwrap_or_default();
        let problem = ControlProblem::new(
            self.model.clone(),
            self.ham.clone(),
            self.cfg.running.clone(),
            self.cfg.terminal.clone(),
            self.cfg.start.t,
            self.x.clone(),
            cc.steps,
        )?;
        let constant;
        let feedback;
        let p: &dyn Policy = match policy {
            PolicyChoice::Feedback => {
                feedback = synthesize_feedback(field, &self.ham, self.cfg.start.t)?;
                &feedback
            }
            PolicyChoice::Zero => &ZeroPolicy,
            PolicyChoice::Const(u) => {
                let u = u.clone();
                constant = move |_t: f64, _x: &[f64], out: &mut [f64]| out.copy_from_slice(&u);
                &constant
            }
        };
        let g = fundamental_gap(&problem, p, field, cc.n_paths, self.seed)?;
        let report = ControlReport {
            j: g.cost.j,
            stderr: g.cost.stderr,
            v: g.v,
            gap: g.gap,
            gap_stderr: g.gap_stderr,
            policy: label.to_string(),
            n_paths: cc.n_paths,
            h: g.cost.h,
            comparison,
        };
        let name = self.cfg.outputs.report.clone();
        self.write_json(&name, &report)?;
        Ok(report)
    }

    /// Start-point comparison of the solvers and the exponential transform.
    pub fn comparison(&self, field: Option<&ValueField>, bsde: Option<&BsdeSolution>) -> Result<Option<Comparison>> {
        let t = self.cfg.start.t;
        let hc = if self.ham.is_standard_quadratic() && self.cfg.running.is_constant() && self.cfg.running.sup_bound() == 0.0 {
            Some(hopf_cole_reference(
                &self.model,
                &self.ham,
                &self.cfg.terminal,
                &self.cfg.running,
                t,
                &self.x,
                &SemigroupQuadrature::default(),
            )?)
        } else {
            None
        };
        let picard_v = field.map(|f| f.value(t, &self.x)).transpose()?;
        let bsde_y0 = bsde.map(|b| b.y0);
        if picard_v.is_none() && bsde_y0.is_none() {
            return Ok(None);
        }
        Ok(Some(Comparison {
            picard_error: picard_v.zip(hc).map(|(a, b)| (a - b).abs()),
            bsde_error: bsde_y0.zip(hc).map(|(a, b)| (a - b).abs()),
            picard_v,
            bsde_y0,
            bsde_stderr: bsde.map(|b| b.y0_stderr),
            hopf_cole: hc,
        }))
    }

    /// Full pipeline: model, Picard field, BSDE (if configured), control.
    pub fn run_all(&mut self) -> Result<ControlReport> {
        self.model_stage()?;
        let field = self.picard_stage()?;
        let bsde = if self.cfg.bsde.is_some() { Some(self.bsde_stage()?) } else { None };
        let cmp = self.comparison(Some(&field), bsde.as_ref())?;
        let policy = self.cfg.control.clone().unwrap_or_default().policy;
        let choice = parse_policy(&policy, self.model.dim())?;
        self.control_stage(&field, &choice, &policy, cmp)
    }
}

/// `t, norm, t^{1/2} norm` on 41 log-spaced times in `[1e-4 T, T]`.
pub fn smoothing_table(model: &SpectralModel) -> Result<String> {
    let mut s = String::from("t,norm,t_half_times_norm\n");
    let horizon = model.horizon();
    for i in 0..=40 {
        let t = horizon * 10f64.powf(-4.0 + 4.0 * i as f64 / 40.0);
        let n = model.smoothing_norm(t)?;
        s.push_str(&format!("{t:e},{n:e},{:e}\n", t.sqrt() * n));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_parse() {
        assert_eq!(parse_policy("zero", 2).unwrap(), PolicyChoice::Zero);
        assert_eq!(parse_policy("const:0.5", 3).unwrap(), PolicyChoice::Const(vec![0.5, 0.0, 0.0]));
        assert!(parse_policy("const:1,2,3", 2).is_err());
        assert!(parse_policy("greedy", 2).is_err());
    }
}
