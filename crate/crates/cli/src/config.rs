//! Experiment configuration: one JSON document with a fragment per module.
//! Unknown keys are rejected everywhere and parse errors name the key path.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use hjb_core::fbsde::BsdeConfig;
use hjb_core::functions::CylFunction;
use hjb_core::hamiltonian::HamiltonianConfig;
use hjb_core::mollify::Terminal;
use hjb_core::picard::PicardConfig;
use hjb_core::spectral::{ModelConfig, SpectralModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

fn zero_running() -> CylFunction {
    CylFunction::constant(0.0)
}

/// Starting point `(t, x)`; a missing `x` means the origin.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Start {
    #[serde(default)]
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
}

fn default_control_steps() -> usize {
    20
}
fn default_control_paths() -> usize {
    10_000
}

/// Settings of the control stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default = "default_control_steps")]
    pub steps: usize,
    #[serde(default = "default_control_paths")]
    pub n_paths: usize,
    /// `feedback`, `zero` or `const:u1,u2,...`.
    #[serde(default = "default_policy")]
    pub policy: String,
}

fn default_policy() -> String {
    "feedback".into()
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            steps: default_control_steps(),
            n_paths: default_control_paths(),
            policy: default_policy(),
        }
    }
}

fn name(s: &str) -> String {
    s.to_string()
}

/// Artifact file names, relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "Outputs::d_model")]
    pub model: String,
    #[serde(default = "Outputs::d_field")]
    pub field: String,
    #[serde(default = "Outputs::d_windows")]
    pub windows: String,
    #[serde(default = "Outputs::d_bsde")]
    pub bsde: String,
    #[serde(default = "Outputs::d_diagnostics")]
    pub diagnostics: String,
    #[serde(default = "Outputs::d_report")]
    pub report: String,
    #[serde(default = "Outputs::d_manifest")]
    pub manifest: String,
}

impl Outputs {
    fn d_model() -> String {
        name("model.csv")
    }
    fn d_field() -> String {
        name("field.json")
    }
    fn d_windows() -> String {
        name("windows.csv")
    }
    fn d_bsde() -> String {
        name("bsde.json")
    }
    fn d_diagnostics() -> String {
        name("bsde_diagnostics.csv")
    }
    fn d_report() -> String {
        name("report.json")
    }
    fn d_manifest() -> String {
        name("manifest.json")
    }
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            model: Self::d_model(),
            field: Self::d_field(),
            windows: Self::d_windows(),
            bsde: Self::d_bsde(),
            diagnostics: Self::d_diagnostics(),
            report: Self::d_report(),
            manifest: Self::d_manifest(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub hamiltonian: HamiltonianConfig,
    pub terminal: Terminal,
    #[serde(default = "zero_running")]
    pub running: CylFunction,
    #[serde(default)]
    pub start: Start,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picard: Option<PicardConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bsde: Option<BsdeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub outputs: Outputs,
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the offending key path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow!("config key `{}`: {}", path, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the canonical (compact) serialisation.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_model(&self) -> Result<SpectralModel> {
        self.model.build().map_err(|e| anyhow!("config key `model`: {e}"))
    }

    pub fn start_point(&self, dim: usize) -> Result<Vec<f64>> {
        match &self.start.x {
            None => Ok(vec![0.0; dim]),
            Some(x) if x.len() == dim => Ok(x.clone()),
            Some(x) => Err(anyhow!("config key `start.x`: expected {dim} coordinates, got {}", x.len())),
        }
    }

    fn validate(&self) -> Result<()> {
        let model = self.build_model()?;
        let dim = model.dim();
        self.terminal
            .base()
            .validate(dim)
            .map_err(|e| anyhow!("config key `terminal`: {e}"))?;
        self.running.validate(dim).map_err(|e| anyhow!("config key `running`: {e}"))?;
        hjb_core::hamiltonian::HamiltonianSpec::new(self.hamiltonian.clone(), dim)
            .map_err(|e| anyhow!("config key `hamiltonian`: {e}"))?;
        if !(self.start.t >= 0.0 && self.start.t < model.horizon()) {
            return Err(anyhow!("config key `start.t`: must lie in [0, T)"));
        }
        self.start_point(dim)?;
        if let Some(c) = &self.control {
            crate::experiment::parse_policy(&c.policy, dim).context("config key `control.policy`")?;
        }
        Ok(())
    }
}
