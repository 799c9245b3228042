//! Backward Euler scheme with least-squares regression for
//! `dY = -(psi(Z) + l(X)) ds + <Z, dW>`, `Y_T = phi(X_T)`, along exact OU paths.
//!
//! At each step the conditional expectation `E_i[Y_{i+1}]` and the covariance
//! estimator `Z_i = E_i[(Y_{i+1} - E_i Y_{i+1}) dW_i] / h` are regressed on
//! standardised Hermite features of `X_i`. The next target is the fitted
//! function of the previous step evaluated on the paths, which keeps the
//! variance of `Z` estimates at the level of a single step. The driver input is
//! clipped at `kappa (T - t_i)^{-1/2}`, the rate of the gradient estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::functions::{CylFunction, ScalarField};
use crate::hamiltonian::{norm, Hamiltonian};
use crate::ou_sim::{sample_ou_grid, PathEnsemble, SimConfig, TimeGrid};
use crate::picard::mean_stderr;
use crate::quadrature::{for_each_tensor_index, GaussHermite};
use crate::regression::{FeatureMap, Regression};
use crate::spectral::SpectralModel;

fn default_h() -> f64 {
    0.02
}
fn default_paths() -> usize {
    10_000
}
fn default_ridge() -> f64 {
    1e-8
}
fn default_degree() -> usize {
    4
}
fn default_modes() -> usize {
    4
}

/// Settings of the regression scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsdeConfig {
    #[serde(default = "default_h")]
    pub h: f64,
    /// Fixed number of steps, overriding `h`.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    /// Ridge parameter per path.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Leading modes entering the features (and carrying `Z`).
    #[serde(default = "default_modes")]
    pub modes: usize,
}

impl Default for BsdeConfig {
    fn default() -> Self {
        Self {
            h: default_h(),
            steps: None,
            n_paths: default_paths(),
            ridge: default_ridge(),
            degree: default_degree(),
            modes: default_modes(),
        }
    }
}

impl BsdeConfig {
    pub fn steps_for(&self, tau: f64) -> usize {
        self.steps
            .unwrap_or_else(|| (tau / self.h - 1e-9).ceil().max(1.0) as usize)
    }

    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(invalid("h", "step must be positive"));
        }
        if self.n_paths < 2 {
            return Err(invalid("n_paths", "need at least two paths"));
        }
        if !(self.ridge >= 0.0) {
            return Err(invalid("ridge", "ridge must be nonnegative"));
        }
        if self.steps == Some(0) {
            return Err(invalid("steps", "need at least one step"));
        }
        Ok(())
    }
}

/// Regression output of one time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub map: FeatureMap,
    /// Coefficients of `E_i[Y_{i+1}]`.
    pub y_coeffs: Vec<f64>,
    /// Coordinates carrying `Z` and their coefficients.
    pub z_modes: Vec<usize>,
    pub z_coeffs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub clip_count: usize,
    pub residual_y: f64,
    pub residual_z: f64,
    pub bmo_proxy: f64,
    pub ridge_flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BsdeSolution {
    pub grid: TimeGrid,
    pub x: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub y0: f64,
    pub y0_stderr: f64,
    pub z0: Vec<f64>,
    pub kappa: f64,
    pub bmo_proxy: f64,
    pub clip_total: usize,
    pub ridge_flags: usize,
    pub steps: Vec<StepRecord>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl BsdeSolution {
    /// CSV with columns `step,clip_count,residual_Y,residual_Z,bmo_proxy`.
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "step,clip_count,residual_Y,residual_Z,bmo_proxy")?;
        for d in &self.diagnostics {
            writeln!(
                w,
                "{},{},{:e},{:e},{:e}",
                d.step, d.clip_count, d.residual_y, d.residual_z, d.bmo_proxy
            )?;
        }
        Ok(())
    }
}

/// Clip level constant `kappa = 4 c ||phi||_inf`.
pub fn clip_constant(model: &SpectralModel, phi: &dyn ScalarField) -> f64 {
    4.0 * model.measured_smoothing_constant() * phi.sup_bound()
}

/// Standardised Gauss-Hermite probes (5 nodes per active coordinate).
fn probe_points(map: &FeatureMap) -> Vec<Vec<f64>> {
    let gh = GaussHermite::new(5);
    let d = map.active.len();
    let mut out = Vec::new();
    for_each_tensor_index(gh.len(), d, |ix| {
        out.push(ix.iter().map(|&i| gh.nodes[i]).collect());
    });
    out
}

fn z_vector(dim: usize, modes: &[usize], fitted: &[Vec<f64>], p: usize) -> Vec<f64> {
    let mut z = vec![0.0; dim];
    for (j, &k) in modes.iter().enumerate() {
        z[k] = fitted[j][p];
    }
    z
}

fn clip(z: &mut [f64], cap: f64) -> bool {
    let n = norm(z);
    if n > cap {
        let s = cap / n;
        z.iter_mut().for_each(|v| *v *= s);
        true
    } else {
        false
    }
}

struct Setup {
    candidates: Vec<usize>,
    z_modes: Vec<usize>,
    z_slots: Vec<usize>,
}

fn setup(model: &SpectralModel, ens: &PathEnsemble, cfg: &BsdeConfig) -> Setup {
    let r = cfg.modes.min(model.dim()).max(1);
    let candidates: Vec<usize> = (0..r).collect();
    let mut z_modes = Vec::new();
    let mut z_slots = Vec::new();
    for (slot, &k) in ens.noisy_modes().iter().enumerate() {
        if k < r {
            z_modes.push(k);
            z_slots.push(slot);
        }
    }
    Setup {
        candidates,
        z_modes,
        z_slots,
    }
}

/// Solves from `(t, x)` with `cfg.steps_for(T - t)` uniform steps.
#[allow(clippy::too_many_arguments)]
pub fn solve_bsde(
    model: &SpectralModel,
    ham: &dyn Hamiltonian,
    phi: &dyn ScalarField,
    l: &CylFunction,
    t: f64,
    x: &[f64],
    cfg: &BsdeConfig,
    seed: u64,
) -> Result<BsdeSolution> {
    cfg.validate()?;
    let horizon = model.horizon();
    if !(t >= 0.0 && t < horizon) {
        return Err(Error::InvalidTime {
            t,
            reason: "start must lie in [0, T)".into(),
        });
    }
    let grid = TimeGrid::new(t, horizon, cfg.steps_for(horizon - t))?;
    solve_on_grid(model, ham, phi, l, x, &grid, cfg, seed)
}

#[allow(clippy::too_many_arguments)]
fn solve_on_grid(
    model: &SpectralModel,
    ham: &dyn Hamiltonian,
    phi: &dyn ScalarField,
    l: &CylFunction,
    x: &[f64],
    grid: &TimeGrid,
    cfg: &BsdeConfig,
    seed: u64,
) -> Result<BsdeSolution> {
    model.check_dim(x)?;
    l.validate(model.dim())?;
    let n = cfg.n_paths;
    let dim = model.dim();
    let ens = sample_ou_grid(model, x, grid, SimConfig::new(n, seed))?;
    let su = setup(model, &ens, cfg);
    let m = grid.steps;
    let h = grid.h();
    let horizon = model.horizon();
    let kappa = clip_constant(model, phi);

    let mut y_next: Vec<f64> = (0..n).into_par_iter().map(|p| phi.eval(ens.state(p, m))).collect();
    let mut tail = vec![0.0; n];
    let mut steps = Vec::with_capacity(m);
    let mut diags = Vec::with_capacity(m);
    let mut y0_stderr = 0.0;
    let mut z0 = vec![0.0; dim];
    for i in (0..m).rev() {
        let ti = grid.time(i);
        let map = FeatureMap::fit(n, |p| ens.state(p, i), &su.candidates, cfg.degree);
        let reg = Regression::new(map, n, |p| ens.state(p, i), cfg.ridge);
        let e = reg.fit(&y_next);
        let mut z_fits = Vec::with_capacity(su.z_modes.len());
        let mut z_coeffs = Vec::with_capacity(su.z_modes.len());
        let mut residual_z: f64 = 0.0;
        for &slot in &su.z_slots {
            let target: Vec<f64> = (0..n)
                .map(|p| (y_next[p] - e.fitted[p]) * ens.increment(p, i)[slot] / h)
                .collect();
            let f = reg.fit(&target);
            residual_z = residual_z.max(f.residual);
            z_coeffs.push(f.coeffs);
            z_fits.push(f.fitted);
        }
        let cap = if kappa > 0.0 { kappa / (horizon - ti).sqrt() } else { f64::INFINITY };
        let step_out: Vec<(f64, f64, bool)> = (0..n)
            .into_par_iter()
            .map(|p| {
                let mut z = z_vector(dim, &su.z_modes, &z_fits, p);
                let z2 = z.iter().map(|v| v * v).sum::<f64>();
                let clipped = clip(&mut z, cap);
                let y = e.fitted[p] + h * (ham.psi(&z) + l.eval(ens.state(p, i)));
                (y, z2, clipped)
            })
            .collect();
        let clip_count = step_out.iter().filter(|o| o.2).count();
        for (tp, o) in tail.iter_mut().zip(&step_out) {
            *tp += o.1 * h;
        }
        let tail_fit = reg.fit(&tail);
        let probes = probe_points(&reg.map);
        let mut feat = vec![0.0; reg.map.len()];
        let mut sup_tail: f64 = 0.0;
        for u in &probes {
            reg.map.eval_standardised(u, &mut feat);
            let v: f64 = feat.iter().zip(&tail_fit.coeffs).map(|(a, b)| a * b).sum();
            sup_tail = sup_tail.max(v);
        }
        if i == 0 {
            y0_stderr = mean_stderr(&y_next).1;
            z0 = z_vector(dim, &su.z_modes, &z_fits, 0);
        }
        diags.push(StepDiagnostics {
            step: i,
            clip_count,
            residual_y: e.residual,
            residual_z,
            bmo_proxy: sup_tail.max(0.0).sqrt(),
            ridge_flagged: reg.flagged,
        });
        steps.push(StepRecord {
            t: ti,
            map: reg.map.clone(),
            y_coeffs: e.coeffs,
            z_modes: su.z_modes.clone(),
            z_coeffs,
        });
        y_next = step_out.into_iter().map(|o| o.0).collect();
    }
    steps.reverse();
    diags.reverse();
    let y0 = y_next[0];
    Ok(BsdeSolution {
        grid: grid.clone(),
        x: x.to_vec(),
        n_paths: n,
        seed,
        y0,
        y0_stderr,
        z0,
        kappa,
        bmo_proxy: diags.iter().map(|d| d.bmo_proxy).fold(0.0, f64::max),
        clip_total: diags.iter().map(|d| d.clip_count).sum(),
        ridge_flags: diags.iter().filter(|d| d.ridge_flagged).count(),
        steps,
        diagnostics: diags,
    })
}

/// Tangent pair `(F, V)` in direction `xi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentSolution {
    pub f0: f64,
    pub f0_stderr: f64,
    pub v0: Vec<f64>,
    /// `<Z_0, xi>` of the base solution.
    pub z0_dot_xi: f64,
    pub bound: f64,
    pub within_bound: bool,
}

/// Solves the differentiated equation
/// `dF = -(<grad psi(Z), V> + <grad l(X), e^{(s-t)A} sqrt(Q) xi>) ds + <V, dW>`,
/// `F_T = <grad phi(X_T), e^{(T-t)A} sqrt(Q) xi>`, on the paths of `base`
/// (re-simulated from its seed) with the same features.
#[allow(clippy::too_many_arguments)]
pub fn solve_tangent_bsde(
    model: &SpectralModel,
    ham: &dyn Hamiltonian,
    base: &BsdeSolution,
    phi: &dyn ScalarField,
    l: &CylFunction,
    xi: &[f64],
    cfg: &BsdeConfig,
) -> Result<TangentSolution> {
    if !phi.is_differentiable() || !l.is_differentiable() {
        return Err(Error::Unsupported(
            "the tangent equation needs differentiable terminal and running costs".into(),
        ));
    }
    model.check_dim(xi)?;
    let dim = model.dim();
    let n = base.n_paths;
    let grid = &base.grid;
    let ens = sample_ou_grid(model, &base.x, grid, SimConfig::new(n, base.seed))?;
    let su = setup(model, &ens, cfg);
    let m = grid.steps;
    let h = grid.h();
    let t = grid.t0;
    let horizon = model.horizon();
    let eta = |s: f64| -> Vec<f64> {
        model
            .modes()
            .iter()
            .zip(xi)
            .map(|(md, &x)| (-md.alpha * (s - t)).exp() * md.lambda.sqrt() * x)
            .collect()
    };
    let eta_t = eta(horizon);
    let mut f_next: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut g = vec![0.0; dim];
            phi.add_gradient(ens.state(p, m), &mut g);
            g.iter().zip(&eta_t).map(|(a, b)| a * b).sum()
        })
        .collect();
    let mut f0_stderr = 0.0;
    let mut v0 = vec![0.0; dim];
    for i in (0..m).rev() {
        let ti = grid.time(i);
        let rec = &base.steps[i];
        let reg = Regression::new(rec.map.clone().ready(), n, |p| ens.state(p, i), cfg.ridge);
        let e = reg.fit(&f_next);
        let mut v_fits = Vec::with_capacity(su.z_slots.len());
        for &slot in &su.z_slots {
            let target: Vec<f64> = (0..n)
                .map(|p| (f_next[p] - e.fitted[p]) * ens.increment(p, i)[slot] / h)
                .collect();
            v_fits.push(reg.fit(&target).fitted);
        }
        let cap = if base.kappa > 0.0 { base.kappa / (horizon - ti).sqrt() } else { f64::INFINITY };
        let eta_i = eta(ti);
        let next: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|p| {
                let feats = reg.features(p);
                let mut z = vec![0.0; dim];
                for (j, &k) in rec.z_modes.iter().enumerate() {
                    z[k] = feats.iter().zip(&rec.z_coeffs[j]).map(|(a, b)| a * b).sum();
                }
                clip(&mut z, cap);
                let gpsi = ham.grad(&z);
                let v = z_vector(dim, &su.z_modes, &v_fits, p);
                let mut gl = vec![0.0; dim];
                l.add_gradient(ens.state(p, i), &mut gl);
                let drive: f64 = gpsi.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()
                    + gl.iter().zip(&eta_i).map(|(a, b)| a * b).sum::<f64>();
                e.fitted[p] + h * drive
            })
            .collect();
        if i == 0 {
            f0_stderr = mean_stderr(&f_next).1;
            v0 = z_vector(dim, &su.z_modes, &v_fits, 0);
        }
        f_next = next;
    }
    let f0 = f_next[0];
    let root_lambda = model.modes().iter().map(|md| md.lambda.sqrt()).fold(0.0, f64::max);
    let norm1 = |f: &dyn ScalarField| f.sup_bound() + f.lipschitz_bound().unwrap_or(f64::INFINITY) * root_lambda;
    let bound = (norm1(phi) + horizon * norm1(l)) * norm(xi);
    Ok(TangentSolution {
        f0,
        f0_stderr,
        v0,
        z0_dot_xi: base.z0.iter().zip(xi).map(|(a, b)| a * b).sum(),
        bound,
        within_bound: f0.abs() <= bound,
    })
}

/// Least-squares line with a normal-approximation 95% interval on the slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> SlopeFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let se = if xs.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    SlopeFit {
        slope,
        intercept,
        slope_stderr: se,
        ci_low: slope - 1.96 * se,
        ci_high: slope + 1.96 * se,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub tau: f64,
    pub sup_z: f64,
    pub argmax_probe: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZProfile {
    pub rows: Vec<ProfileRow>,
    pub fit: SlopeFit,
}

/// `|Z_t(x)|` from one solve per `(T - t, probe)` with common random numbers,
/// the sup over probes, and the fitted slope of `log sup|Z|` against `log(T - t)`.
#[allow(clippy::too_many_arguments)]
pub fn z_profile(
    model: &SpectralModel,
    ham: &dyn Hamiltonian,
    phi: &dyn ScalarField,
    l: &CylFunction,
    taus: &[f64],
    probes: &[Vec<f64>],
    cfg: &BsdeConfig,
    seed: u64,
) -> Result<ZProfile> {
    if taus.len() < 2 || probes.is_empty() {
        return Err(invalid("taus", "need at least two times and one probe"));
    }
    let horizon = model.horizon();
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(tau > 0.0 && tau <= horizon) {
            return Err(invalid("taus", format!("time to go {tau} outside (0, T]")));
        }
        let mut best = (0usize, 0.0f64);
        for (j, x) in probes.iter().enumerate() {
            let s = solve_bsde(model, ham, phi, l, horizon - tau, x, cfg, seed)?;
            let z = norm(&s.z0);
            if z > best.1 {
                best = (j, z);
            }
        }
        rows.push(ProfileRow {
            tau,
            sup_z: best.1,
            argmax_probe: best.0,
        });
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.sup_z > 0.0)
        .map(|r| (r.tau.ln(), r.sup_z.ln()))
        .unzip();
    let fit = if lx.len() >= 2 {
        fit_line(&lx, &ly)
    } else {
        SlopeFit {
            slope: 0.0,
            intercept: 0.0,
            slope_stderr: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
        }
    };
    Ok(ZProfile { rows, fit })
}

/// Sup of `|phi_a - phi_b|` over a dense grid of the joint support and the probes.
pub fn sup_difference(
    model: &SpectralModel,
    phi_a: &dyn ScalarField,
    phi_b: &dyn ScalarField,
    probes: &[Vec<f64>],
) -> f64 {
    let mut support = phi_a.support();
    support.extend(phi_b.support());
    support.sort_unstable();
    support.dedup();
    let dim = model.dim();
    let mut sup: f64 = probes
        .iter()
        .map(|x| (phi_a.eval(x) - phi_b.eval(x)).abs())
        .fold(0.0, f64::max);
    let per = match support.len() {
        0 => 1,
        1 => 4001,
        2 => 201,
        _ => 9,
    };
    let sd: Vec<f64> = support
        .iter()
        .map(|&k| model.modes()[k].stationary_variance().sqrt().max(1e-3))
        .collect();
    let pts: Vec<Vec<f64>> = {
        let mut v = Vec::new();
        for_each_tensor_index(per, support.len(), |ix| {
            let mut x = vec![0.0; dim];
            for (j, &k) in support.iter().enumerate() {
                let u = if per > 1 { -1.0 + 2.0 * ix[j] as f64 / (per - 1) as f64 } else { 0.0 };
                x[k] = 4.0 * sd[j] * u;
            }
            v.push(x);
        });
        v
    };
    let grid_sup = pts
        .par_iter()
        .map(|x| (phi_a.eval(x) - phi_b.eval(x)).abs())
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0, f64::max);
    sup = sup.max(grid_sup);
    sup
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub ratio: f64,
    pub sup_phi_difference: f64,
    /// `(T - t, sup over probes of (T - t)^{1/2} |Z_a - Z_b|)`.
    pub rows: Vec<(f64, f64)>,
}

/// Weighted sensitivity of `Z` to the terminal data:
/// `sup_t (T - t)^{1/2} |Z^a_t - Z^b_t| / ||phi_a - phi_b||_inf`.
#[allow(clippy::too_many_arguments)]
pub fn terminal_stability(
    model: &SpectralModel,
    ham: &dyn Hamiltonian,
    phi_a: &dyn ScalarField,
    phi_b: &dyn ScalarField,
    l: &CylFunction,
    taus: &[f64],
    probes: &[Vec<f64>],
    cfg: &BsdeConfig,
    seed: u64,
) -> Result<StabilityReport> {
    let diff = sup_difference(model, phi_a, phi_b, probes);
    if diff == 0.0 {
        return Err(invalid("phi_b", "terminal data coincide; the ratio is undefined"));
    }
    let horizon = model.horizon();
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(tau > 0.0 && tau <= horizon) {
            return Err(invalid("taus", format!("time to go {tau} outside (0, T]")));
        }
        let mut sup: f64 = 0.0;
        for x in probes {
            let a = solve_bsde(model, ham, phi_a, l, horizon - tau, x, cfg, seed)?;
            let b = solve_bsde(model, ham, phi_b, l, horizon - tau, x, cfg, seed)?;
            let dz: Vec<f64> = a.z0.iter().zip(&b.z0).map(|(p, q)| p - q).collect();
            sup = sup.max(tau.sqrt() * norm(&dz));
        }
        rows.push((tau, sup));
    }
    let ratio = rows.iter().map(|r| r.1).fold(0.0, f64::max) / diff;
    Ok(StabilityReport {
        ratio,
        sup_phi_difference: diff,
        rows,
    })
}
