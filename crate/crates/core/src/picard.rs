//! Mild solutions of the semilinear Kolmogorov equation by Picard iteration.
//!
//! With the convention `v_t + L v + psi(D v) + l = 0`, `v(T) = phi`, where
//! `D = sqrt(Q) grad`, the mild formula reads
//! `v(t) = P_{T-t} phi + int_t^T P_{s-t} [psi(D v(s)) + l] ds`.
//!
//! The field is stored as `v = P_{T-t} phi + N(t)`. The first part is
//! evaluated exactly by tensor Gauss-Hermite quadrature over the support of
//! `phi`, its gradient by the Bismut-type kernel. The correction `N` is a
//! polynomial in orthonormal Hermite functions of `y_k = x_k / sigma_k` over the
//! leading `m` modes (`sigma_k^2` the stationary variance). Mehler's formula
//! makes the semigroup diagonal on these coefficients, so the right-endpoint
//! Riemann sum becomes the recursion `N_i = S_h (N_{i+1} + h g_{i+1})`, where
//! `g` is the Gauss-Hermite projection of `psi(D v) + l` under the
//! stationary law.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::HermiteBasis;
use crate::error::{invalid, Error, Result};
use crate::functions::{CylFunction, ScalarField};
use crate::hamiltonian::{norm, Hamiltonian};
use crate::mollify::Terminal;
use crate::ou_sim::{simulate_controlled, Actuation, SimConfig, TimeGrid};
use crate::quadrature::{for_each_tensor_index, GaussHermite, GaussLegendre};
use crate::spectral::SpectralModel;

/// Tensor Gauss-Hermite rule for Gaussian integrals of cylindrical functions,
/// or nested adaptive Gauss-Legendre quadrature for kinked integrands.
#[derive(Clone, Debug)]
pub struct SemigroupQuadrature {
    gh: GaussHermite,
    max_support: usize,
    adaptive_tol: Option<f64>,
}

/// Half-width, in standard deviations, of the adaptive integration box.
const ADAPTIVE_RADIUS: f64 = 10.0;
const ADAPTIVE_PANELS: usize = 20;
const ADAPTIVE_NODES: usize = 8;
/// Inner tolerance of the nested rule relative to the outer one.
const INNER_TOL_FRACTION: f64 = 1e-2;

impl SemigroupQuadrature {
    pub fn new(n_gh: usize, max_support: usize) -> Self {
        Self {
            gh: GaussHermite::new(n_gh.max(1)),
            max_support,
            adaptive_tol: None,
        }
    }

    /// Nested adaptive rule on supports of at most two modes. Slow; meant for
    /// reference values of non-smooth functions.
    pub fn adaptive(tol: f64) -> Self {
        Self {
            gh: GaussHermite::new(1),
            max_support: 2,
            adaptive_tol: Some(tol),
        }
    }

    pub fn n_gh(&self) -> usize {
        self.gh.len()
    }

    pub fn max_support(&self) -> usize {
        self.max_support
    }
}

impl Default for SemigroupQuadrature {
    fn default() -> Self {
        Self::new(48, 4)
    }
}

/// `E f(e^{dt A} x + Q_dt^{1/2} xi)` and, optionally, the `sqrt(Q)`-gradient of
/// that expectation along each support coordinate.
fn gaussian_moments(
    model: &SpectralModel,
    dt: f64,
    f: &dyn ScalarField,
    x: &[f64],
    quad: &SemigroupQuadrature,
    with_grad: bool,
) -> Result<(f64, Vec<(usize, f64)>)> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidTime {
            t: dt,
            reason: "semigroup needs dt >= 0".into(),
        });
    }
    model.check_dim(x)?;
    let support = f.support();
    if support.len() > quad.max_support {
        return Err(invalid(
            "support",
            format!(
                "function depends on {} modes, quadrature handles at most {}",
                support.len(),
                quad.max_support
            ),
        ));
    }
    if support.is_empty() || dt == 0.0 {
        return Ok((f.eval(x), support.iter().map(|&k| (k, 0.0)).collect()));
    }
    let modes = model.modes();
    let mean: Vec<f64> = support.iter().map(|&k| x[k] * (-modes[k].alpha * dt).exp()).collect();
    let sd: Vec<f64> = support.iter().map(|&k| modes[k].variance(dt).sqrt()).collect();
    let kern: Vec<f64> = support
        .iter()
        .zip(&sd)
        .map(|(&k, &s)| {
            if s > 0.0 {
                modes[k].lambda.sqrt() * (-modes[k].alpha * dt).exp() / s
            } else {
                0.0
            }
        })
        .collect();
    if let Some(tol) = quad.adaptive_tol {
        return Ok(adaptive_moments(f, x, &support, &mean, &sd, &kern, tol, with_grad));
    }
    let gh = &quad.gh;
    let mut y = x.to_vec();
    let mut value = 0.0;
    let mut grad = vec![0.0; support.len()];
    for_each_tensor_index(gh.len(), support.len(), |ix| {
        let mut w = 1.0;
        for (j, &k) in support.iter().enumerate() {
            y[k] = mean[j] + sd[j] * gh.nodes[ix[j]];
            w *= gh.weights[ix[j]];
        }
        let fv = w * f.eval(&y);
        value += fv;
        if with_grad {
            for j in 0..support.len() {
                grad[j] += fv * gh.nodes[ix[j]] * kern[j];
            }
        }
    });
    Ok((value, support.into_iter().zip(grad).collect()))
}

/// Moments of `gaussian_moments` by nested adaptive Gauss-Legendre over the
/// standardised variables, which resolves kinks by local refinement.
#[allow(clippy::too_many_arguments)]
fn adaptive_moments(
    f: &dyn ScalarField,
    x: &[f64],
    support: &[usize],
    mean: &[f64],
    sd: &[f64],
    kern: &[f64],
    tol: f64,
    with_grad: bool,
) -> (f64, Vec<(usize, f64)>) {
    let density = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let r = ADAPTIVE_RADIUS;
    let gl = GaussLegendre::new(ADAPTIVE_NODES);
    let standard = |j: usize, ks: Vec<f64>| -> Vec<f64> { ks.into_iter().map(|k| (k - mean[j]) / sd[j]).collect() };
    // `moment` selects the weight 1, u_0 or u_1 in front of f.
    let integrate = |moment: Option<usize>| -> f64 {
        let point = |u: &[f64], y: &mut Vec<f64>| -> f64 {
            for (j, &k) in support.iter().enumerate() {
                y[k] = mean[j] + sd[j] * u[j];
            }
            let m = moment.map_or(1.0, |j| u[j]);
            m * f.eval(y) * u.iter().map(|&v| density(v)).product::<f64>()
        };
        let outer = standard(0, f.kinks(support[0]));
        match support.len() {
            1 => gl.integrate_adaptive_split(-r, r, &outer, ADAPTIVE_PANELS, tol, &|u| point(&[u], &mut x.to_vec())),
            _ => gl.integrate_adaptive_split(-r, r, &outer, ADAPTIVE_PANELS, tol, &|a| {
                let mut y = x.to_vec();
                y[support[0]] = mean[0] + sd[0] * a;
                let inner = standard(1, f.slice_kinks(support[1], &y));
                gl.integrate_adaptive_split(-r, r, &inner, ADAPTIVE_PANELS, INNER_TOL_FRACTION * tol, &|b| {
                    point(&[a, b], &mut y.clone())
                })
            }),
        }
    };
    let value = integrate(None);
    let grad = support
        .iter()
        .enumerate()
        .map(|(j, &k)| (k, if with_grad { kern[j] * integrate(Some(j)) } else { 0.0 }))
        .collect();
    (value, grad)
}

/// `P_dt f (x)`.
pub fn apply_semigroup(
    model: &SpectralModel,
    dt: f64,
    f: &dyn ScalarField,
    x: &[f64],
    quad: &SemigroupQuadrature,
) -> Result<f64> {
    Ok(gaussian_moments(model, dt, f, x, quad, false)?.0)
}

/// Directional derivative of `P_dt f` at `x` along `sqrt(Q) xi`, by the
/// Gaussian kernel identity (no differentiation of `f`).
pub fn apply_grad_semigroup(
    model: &SpectralModel,
    dt: f64,
    f: &dyn ScalarField,
    x: &[f64],
    xi: &[f64],
    quad: &SemigroupQuadrature,
) -> Result<f64> {
    model.check_dim(xi)?;
    let g = semigroup_gradient(model, dt, f, x, quad)?;
    Ok(g.iter().zip(xi).map(|(a, b)| a * b).sum())
}

/// The full `sqrt(Q)`-gradient of `P_dt f` at `x`.
pub fn semigroup_gradient(
    model: &SpectralModel,
    dt: f64,
    f: &dyn ScalarField,
    x: &[f64],
    quad: &SemigroupQuadrature,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidTime {
            t: dt,
            reason: "the gradient kernel is singular at dt = 0; use the terminal gradient".into(),
        });
    }
    let (_, parts) = gaussian_moments(model, dt, f, x, quad, true)?;
    let mut g = vec![0.0; model.dim()];
    for (k, v) in parts {
        g[k] = v;
    }
    Ok(g)
}

/// `sqrt(Q)`-gradient of a differentiable function.
fn sqrt_q_gradient(model: &SpectralModel, f: &dyn ScalarField, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; model.dim()];
    f.add_gradient(x, &mut g);
    for (gk, m) in g.iter_mut().zip(model.modes()) {
        *gk *= m.lambda.sqrt();
    }
    g
}

fn default_tol() -> f64 {
    1e-9
}
fn default_max_iter() -> usize {
    60
}
fn default_degree() -> usize {
    4
}
fn default_modes() -> usize {
    4
}
fn default_substeps() -> usize {
    32
}
fn default_n_gh() -> usize {
    48
}
fn default_fit_tol() -> f64 {
    5e-2
}
fn default_halvings() -> usize {
    6
}

/// Solver settings of the Picard scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    /// Upper bound on the window length; the contraction bound may shorten it.
    #[serde(default)]
    pub delta_hint: Option<f64>,
    /// Stopping tolerance on the distance between successive iterates.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Total polynomial degree `d` of the correction.
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Number `m` of leading modes carried by the correction.
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Time steps per window.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_n_gh")]
    pub n_gh: usize,
    /// Weighted RMS projection residual above which a window is flagged.
    #[serde(default = "default_fit_tol")]
    pub fit_tol: f64,
    #[serde(default = "default_halvings")]
    pub max_halvings: usize,
    #[serde(default)]
    pub t0: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            delta_hint: None,
            tol: default_tol(),
            max_iter: default_max_iter(),
            degree: default_degree(),
            modes: default_modes(),
            substeps: default_substeps(),
            n_gh: default_n_gh(),
            fit_tol: default_fit_tol(),
            max_halvings: default_halvings(),
            t0: 0.0,
        }
    }
}

/// One Picard iteration on one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Distance to the previous iterate.
    pub distance: f64,
    /// `distance / previous distance`; absent on the first iteration.
    pub ratio: Option<f64>,
    pub sup_v: f64,
    pub weighted_sup_d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub halvings: usize,
    pub iterations: Vec<IterationRecord>,
    pub max_ratio: f64,
    pub converged: bool,
    pub in_ball: bool,
    pub max_fit_residual: f64,
    pub fit_flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub r0: f64,
    pub c_r0: f64,
    pub smoothing_constant: f64,
    pub delta_bound: f64,
    pub delta: f64,
    pub windows: Vec<WindowReport>,
}

impl ConvergenceReport {
    pub fn max_ratio(&self) -> f64 {
        self.windows.iter().map(|w| w.max_ratio).fold(0.0, f64::max)
    }

    pub fn sup_v(&self) -> f64 {
        self.windows
            .iter()
            .flat_map(|w| w.iterations.last())
            .map(|r| r.sup_v)
            .fold(0.0, f64::max)
    }

    pub fn weighted_sup_d(&self) -> f64 {
        self.windows
            .iter()
            .flat_map(|w| w.iterations.last())
            .map(|r| r.weighted_sup_d)
            .fold(0.0, f64::max)
    }

    /// CSV with columns `window,iter,ratio,sup_v,weighted_sup_D`.
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "window,iter,ratio,sup_v,weighted_sup_D")?;
        for win in &self.windows {
            for r in &win.iterations {
                let ratio = r.ratio.map(|v| format!("{v:e}")).unwrap_or_default();
                writeln!(
                    w,
                    "{},{},{},{:e},{:e}",
                    win.index, r.iter, ratio, r.sup_v, r.weighted_sup_d
                )?;
            }
        }
        Ok(())
    }
}

/// A solved value function on `[t0, T]` with its `sqrt(Q)`-gradient.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValueField {
    pub model: SpectralModel,
    pub terminal: Terminal,
    pub running: CylFunction,
    pub degree: usize,
    pub modes: usize,
    pub n_gh: usize,
    /// Stationary standard deviations of the carried modes.
    pub sigma: Vec<f64>,
    /// Ascending time grid ending at `T`.
    pub times: Vec<f64>,
    /// Correction coefficients per grid time.
    pub coeffs: Vec<Vec<f64>>,
    /// Time offset used for the terminal gradient of non-differentiable data.
    pub terminal_offset: f64,
    /// Radius of the ball holding the iterates.
    pub r0: f64,
    pub weight_exponent: f64,
    pub report: ConvergenceReport,
    #[serde(skip)]
    basis: OnceLock<HermiteBasis>,
    #[serde(skip)]
    quad: OnceLock<SemigroupQuadrature>,
}

impl ValueField {
    fn basis(&self) -> &HermiteBasis {
        self.basis.get_or_init(|| HermiteBasis::new(self.modes, self.degree))
    }

    fn quad(&self) -> &SemigroupQuadrature {
        self.quad
            .get_or_init(|| SemigroupQuadrature::new(self.n_gh, self.modes.max(1)))
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("nonempty grid")
    }

    pub fn covers(&self, t: f64) -> bool {
        t >= self.t0() - 1e-12 && t <= self.horizon() + 1e-12
    }

    fn check_time(&self, s: f64) -> Result<f64> {
        if !self.covers(s) {
            return Err(Error::InvalidTime {
                t: s,
                reason: format!("field covers [{}, {}]", self.t0(), self.horizon()),
            });
        }
        Ok(s.clamp(self.t0(), self.horizon()))
    }

    /// Correction coefficients at `s`, linear in time between grid points.
    fn coeffs_at(&self, s: f64) -> Vec<f64> {
        let i = self.times.partition_point(|&t| t <= s);
        if i == 0 {
            return self.coeffs[0].clone();
        }
        if i >= self.times.len() {
            return self.coeffs[self.times.len() - 1].clone();
        }
        let (ta, tb) = (self.times[i - 1], self.times[i]);
        let th = if tb > ta { (s - ta) / (tb - ta) } else { 0.0 };
        self.coeffs[i - 1]
            .iter()
            .zip(&self.coeffs[i])
            .map(|(a, b)| a + th * (b - a))
            .collect()
    }

    fn coords(&self, x: &[f64]) -> Vec<f64> {
        (0..self.modes)
            .map(|k| (x[k] / self.sigma[k]).clamp(-TRUST_RADIUS, TRUST_RADIUS))
            .collect()
    }

    /// `v(s, x)`.
    pub fn value(&self, s: f64, x: &[f64]) -> Result<f64> {
        let s = self.check_time(s)?;
        let a = apply_semigroup(&self.model, self.horizon() - s, &self.terminal, x, self.quad())?;
        let c = self.coeffs_at(s);
        Ok(a + self.basis().combine(&c, &self.coords(x)))
    }

    /// `D(s, x) = sqrt(Q) grad v(s, x)` over all model coordinates.
    pub fn gradient(&self, s: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(s, x)?.1)
    }

    pub fn value_and_gradient(&self, s: f64, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let s = self.check_time(s)?;
        let tau = self.horizon() - s;
        let (a, mut d) = principal_part(
            &self.model,
            &self.terminal,
            tau,
            self.terminal_offset,
            x,
            self.quad(),
        )?;
        let c = self.coeffs_at(s);
        let mut gy = vec![0.0; self.modes];
        let n = self.basis().combine_with_gradient(&c, &self.coords(x), &mut gy);
        for k in 0..self.modes {
            if (x[k] / self.sigma[k]).abs() < TRUST_RADIUS {
                d[k] += self.model.modes()[k].lambda.sqrt() / self.sigma[k] * gy[k];
            }
        }
        Ok((a + n, d))
    }

    pub fn report(&self) -> &ConvergenceReport {
        &self.report
    }
}

/// `P_tau phi(x)` and its `sqrt(Q)`-gradient, using the terminal slot at `tau = 0`.
fn principal_part(
    model: &SpectralModel,
    phi: &dyn ScalarField,
    tau: f64,
    offset: f64,
    x: &[f64],
    quad: &SemigroupQuadrature,
) -> Result<(f64, Vec<f64>)> {
    if tau > 0.0 {
        let (v, parts) = gaussian_moments(model, tau, phi, x, quad, true)?;
        let mut g = vec![0.0; model.dim()];
        for (k, gk) in parts {
            g[k] = gk;
        }
        return Ok((v, g));
    }
    let v = phi.eval(x);
    if phi.is_differentiable() {
        Ok((v, sqrt_q_gradient(model, phi, x)))
    } else {
        Ok((v, semigroup_gradient(model, offset, phi, x, quad)?))
    }
}

/// Gauss-Hermite nodes per carried mode of the diagnostic probe set.
pub const DIAGNOSTIC_NODES: usize = 5;

/// The correction is evaluated with normalised coordinates clamped to this
/// radius; beyond it the polynomial is not backed by projection nodes.
pub const TRUST_RADIUS: f64 = 4.5;

/// Probe set and precomputed basis tables.
struct Probes {
    x: Vec<Vec<f64>>,
    w: Vec<f64>,
    vals: Vec<Vec<f64>>,
    grads: Vec<Vec<Vec<f64>>>,
}

impl Probes {
    /// Tensor Gauss-Hermite nodes of the stationary law over the carried modes.
    fn stationary(basis: &HermiteBasis, sigma: &[f64], dim: usize, per_dim: usize) -> Self {
        let m = sigma.len();
        let gh = GaussHermite::new(per_dim);
        let mut x = Vec::new();
        let mut w = Vec::new();
        for_each_tensor_index(per_dim, m, |ix| {
            let mut p = vec![0.0; dim];
            let mut wp = 1.0;
            for k in 0..m {
                p[k] = sigma[k] * gh.nodes[ix[k]];
                wp *= gh.weights[ix[k]];
            }
            x.push(p);
            w.push(wp);
        });
        let nb = basis.len();
        let mut vals = Vec::with_capacity(x.len());
        let mut grads = Vec::with_capacity(x.len());
        for p in &x {
            let y: Vec<f64> = (0..m).map(|k| p[k] / sigma[k]).collect();
            let mut v = vec![0.0; nb];
            let mut g = vec![vec![0.0; nb]; m];
            basis.eval_with_gradient(&y, &mut v, &mut g);
            vals.push(v);
            grads.push(g);
        }
        Self { x, w, vals, grads }
    }
}

/// Principal part at all probes for one time.
struct PrincipalSlice {
    a: Vec<f64>,
    d: Vec<Vec<f64>>,
}

struct Solver<'a> {
    model: &'a SpectralModel,
    ham: &'a dyn Hamiltonian,
    phi: &'a Terminal,
    l: &'a CylFunction,
    cfg: &'a PicardConfig,
    basis: HermiteBasis,
    quad: SemigroupQuadrature,
    /// Projection nodes.
    nodes: Probes,
    /// Diagnostic probes in the bulk of the stationary law.
    diag: Probes,
    dscale: Vec<f64>,
    rates: Vec<f64>,
    horizon: f64,
    offset: f64,
    r0: f64,
}

struct WindowOutcome {
    times: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
    forcing_start: Vec<f64>,
    report: WindowReport,
    last_distance: f64,
}

impl<'a> Solver<'a> {
    fn slice(&self, set: &Probes, tau: f64) -> Result<PrincipalSlice> {
        let res: Vec<Result<(f64, Vec<f64>)>> = set
            .x
            .par_iter()
            .map(|x| principal_part(self.model, self.phi, tau, self.offset, x, &self.quad))
            .collect();
        let mut a = Vec::with_capacity(res.len());
        let mut d = Vec::with_capacity(res.len());
        for r in res {
            let (v, g) = r?;
            a.push(v);
            d.push(g[..self.cfg.modes].to_vec());
        }
        Ok(PrincipalSlice { a, d })
    }

    /// Values and gradients of `v` at the probes.
    fn probe_fields(&self, set: &Probes, s: &PrincipalSlice, c: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let m = self.cfg.modes;
        let mut v = Vec::with_capacity(s.a.len());
        let mut d = Vec::with_capacity(s.a.len());
        for p in 0..s.a.len() {
            v.push(s.a[p] + dotv(&set.vals[p], c));
            let mut dp = s.d[p].clone();
            for k in 0..m {
                dp[k] += self.dscale[k] * dotv(&set.grads[p][k], c);
            }
            d.push(dp);
        }
        (v, d)
    }

    /// Projection of `psi(D) + l` onto the basis; returns coefficients and the
    /// residual in the stationary-weighted RMS norm.
    fn forcing(&self, d: &[Vec<f64>], tau: f64) -> (Vec<f64>, f64) {
        let n = self.model.dim();
        let cap = self.clip_level(tau);
        let g: Vec<f64> = d
            .par_iter()
            .zip(&self.nodes.x)
            .map(|(dp, x)| {
                let mut z = vec![0.0; n];
                z[..dp.len()].copy_from_slice(dp);
                let nz = norm(&z);
                if nz > cap {
                    z.iter_mut().for_each(|v| *v *= cap / nz);
                }
                self.ham.psi(&z) + self.l.eval(x)
            })
            .collect();
        let nb = self.basis.len();
        let mut c = vec![0.0; nb];
        for (p, gp) in g.iter().enumerate() {
            let wg = self.nodes.w[p] * gp;
            for (cj, bj) in c.iter_mut().zip(&self.nodes.vals[p]) {
                *cj += wg * bj;
            }
        }
        let mut err2 = 0.0;
        for (p, gp) in g.iter().enumerate() {
            let fit = dotv(&self.nodes.vals[p], &c);
            err2 += self.nodes.w[p] * (gp - fit).powi(2);
        }
        (c, err2.sqrt())
    }

    /// Radius of the gradient ball at time-to-go `tau`: `R0` for Lipschitz data,
    /// `R0 tau^{-1/2}` otherwise.
    fn clip_level(&self, tau: f64) -> f64 {
        if self.phi.lipschitz_bound().is_some() {
            self.r0
        } else {
            self.r0 / tau.max(self.offset).sqrt()
        }
    }

    fn propagate(&self, c: &[f64], dt: f64) -> Vec<f64> {
        let f = self.basis.semigroup_factors(&self.rates, dt);
        c.iter().zip(f).map(|(a, b)| a * b).collect()
    }

    fn diagnostics(&self, times: &[f64], slices: &[PrincipalSlice], coeffs: &[Vec<f64>]) -> (f64, f64) {
        let mut sup_v: f64 = 0.0;
        let mut sup_d: f64 = 0.0;
        for j in 1..times.len() {
            let (v, d) = self.probe_fields(&self.diag, &slices[j], &coeffs[j]);
            let wt = (self.horizon - times[j]).max(0.0).sqrt();
            sup_v = v.iter().fold(sup_v, |a, b| a.max(b.abs()));
            sup_d = d.iter().fold(sup_d, |a, b| a.max(wt * norm(b)));
        }
        (sup_v, sup_d)
    }

    /// Iterates on `[b - len, b]` given the correction and the forcing at `b`.
    fn window(
        &self,
        index: usize,
        b: f64,
        len: f64,
        a_floor: f64,
        c_b: &[f64],
        g_b: &[f64],
        r0: f64,
    ) -> Result<WindowOutcome> {
        let s = self.cfg.substeps.max(1);
        let a = if b - len < a_floor + 1e-12 * self.horizon { a_floor } else { b - len };
        let times: Vec<f64> = (0..=s)
            .map(|j| if j == s { a } else { b - (b - a) * j as f64 / s as f64 })
            .collect();
        let slices: Vec<PrincipalSlice> = times
            .iter()
            .map(|&t| self.slice(&self.nodes, self.horizon - t))
            .collect::<Result<_>>()?;
        let diag_slices: Vec<PrincipalSlice> = times
            .iter()
            .map(|&t| self.slice(&self.diag, self.horizon - t))
            .collect::<Result<_>>()?;
        let mut coeffs: Vec<Vec<f64>> = times.iter().map(|&t| self.propagate(c_b, b - t)).collect();
        coeffs[0] = c_b.to_vec();
        let nb = self.basis.len();
        let mut forcing = vec![vec![0.0; nb]; s];
        forcing[0] = g_b.to_vec();
        let mut records = Vec::new();
        let mut prev: Option<f64> = None;
        let mut converged = false;
        let mut max_resid: f64 = 0.0;
        let mut last = f64::INFINITY;
        for iter in 1..=self.cfg.max_iter {
            for j in 1..s {
                let (_, d) = self.probe_fields(&self.nodes, &slices[j], &coeffs[j]);
                let (g, r) = self.forcing(&d, self.horizon - times[j]);
                forcing[j] = g;
                max_resid = max_resid.max(r);
            }
            let mut next = vec![c_b.to_vec(); s + 1];
            for j in 0..s {
                let h = times[j] - times[j + 1];
                let acc: Vec<f64> = next[j].iter().zip(&forcing[j]).map(|(c, g)| c + h * g).collect();
                next[j + 1] = self.propagate(&acc, h);
            }
            let mut dist: f64 = 0.0;
            for j in 1..=s {
                let delta: Vec<f64> = next[j].iter().zip(&coeffs[j]).map(|(a, b)| a - b).collect();
                let wt = (self.horizon - times[j]).max(0.0).sqrt();
                let mut sv: f64 = 0.0;
                let mut sd: f64 = 0.0;
                for p in 0..self.diag.x.len() {
                    sv = sv.max(dotv(&self.diag.vals[p], &delta).abs());
                    let dd: Vec<f64> = (0..self.cfg.modes)
                        .map(|k| self.dscale[k] * dotv(&self.diag.grads[p][k], &delta))
                        .collect();
                    sd = sd.max(norm(&dd));
                }
                dist = dist.max(sv + wt * sd);
            }
            coeffs = next;
            let (sup_v, wsd) = self.diagnostics(&times, &diag_slices, &coeffs);
            let ratio = prev.map(|p| if p > 0.0 { dist / p } else { 0.0 });
            records.push(IterationRecord {
                iter,
                distance: dist,
                ratio,
                sup_v,
                weighted_sup_d: wsd,
            });
            last = dist;
            if dist <= self.cfg.tol {
                converged = true;
                break;
            }
            prev = Some(dist);
        }
        let (_, d_a) = self.probe_fields(&self.nodes, &slices[s], &coeffs[s]);
        let (g_a, r_a) = self.forcing(&d_a, self.horizon - times[s]);
        max_resid = max_resid.max(r_a);
        let max_ratio = records.iter().filter_map(|r| r.ratio).fold(0.0, f64::max);
        let in_ball = records.iter().all(|r| r.sup_v <= 0.5 * r0 && r.weighted_sup_d <= r0);
        Ok(WindowOutcome {
            report: WindowReport {
                index,
                start: a,
                end: b,
                halvings: 0,
                iterations: records,
                max_ratio,
                converged,
                in_ball,
                max_fit_residual: max_resid,
                fit_flagged: max_resid > self.cfg.fit_tol,
            },
            times,
            coeffs,
            forcing_start: g_a,
            last_distance: last,
        })
    }
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Positive root `delta` of `1/2 + delta C + sqrt(delta) c C = 1`.
pub fn contraction_window(c_r0: f64, smoothing: f64) -> f64 {
    if c_r0 <= 0.0 {
        return f64::INFINITY;
    }
    let b = smoothing * c_r0;
    let x = (-b + (b * b + 2.0 * c_r0).sqrt()) / (2.0 * c_r0);
    x * x
}

/// Ball radius `R0 = 2 (||phi||_1 + T ||l||_1)`, with `||f||_1 = sup|f| + sup|D f|`.
/// For terminal data without a Lipschitz bound the gradient part is replaced by
/// the smoothing bound `c sup|phi|` of the weighted norm.
pub fn ball_radius(model: &SpectralModel, phi: &dyn ScalarField, l: &CylFunction, smoothing: f64) -> f64 {
    let root_lambda = model.modes().iter().map(|m| m.lambda.sqrt()).fold(0.0, f64::max);
    let norm1 = |f: &dyn ScalarField| match f.lipschitz_bound() {
        Some(lip) => f.sup_bound() + lip * root_lambda,
        None => f.sup_bound() * (1.0 + smoothing),
    };
    2.0 * (norm1(phi) + model.horizon() * norm1(l))
}

/// Solves the mild equation on `[cfg.t0, T]` by windowed Picard iteration.
pub fn solve_mild(
    model: &SpectralModel,
    ham: &dyn Hamiltonian,
    phi: &Terminal,
    l: &CylFunction,
    cfg: &PicardConfig,
) -> Result<ValueField> {
    let dim = model.dim();
    let mut cfg = cfg.clone();
    cfg.modes = cfg.modes.min(dim).max(1);
    let m = cfg.modes;
    let horizon = model.horizon();
    if !(cfg.t0 >= 0.0 && cfg.t0 < horizon) {
        return Err(Error::InvalidTime {
            t: cfg.t0,
            reason: "start time must lie in [0, T)".into(),
        });
    }
    if cfg.substeps == 0 || cfg.max_iter == 0 {
        return Err(invalid("substeps", "substeps and max_iter must be positive"));
    }
    l.validate(dim)?;
    for k in phi.support().into_iter().chain(l.support()) {
        if k >= m {
            return Err(invalid(
                "modes",
                format!("data depend on mode {} beyond the {m} carried modes", k + 1),
            ));
        }
    }
    let modes = model.modes();
    if modes[..m].iter().any(|md| !md.is_noisy()) {
        return Err(invalid("modes", "carried modes must be noisy"));
    }
    let sigma: Vec<f64> = modes[..m].iter().map(|md| md.stationary_variance().sqrt()).collect();
    let rates: Vec<f64> = modes[..m].iter().map(|md| md.alpha).collect();
    let smoothing = model.measured_smoothing_constant();
    let r0 = ball_radius(model, phi, l, smoothing);
    let c_r0 = ham.lipschitz_on_ball(r0);
    let delta_bound = 0.99 * contraction_window(c_r0, smoothing);
    let span = horizon - cfg.t0;
    let mut delta = delta_bound.min(span);
    if let Some(hint) = cfg.delta_hint {
        if !(hint > 0.0) {
            return Err(invalid("delta_hint", "window hint must be positive"));
        }
        delta = delta.min(hint);
    }
    let n_windows = (span / delta - 1e-9).ceil().max(1.0);
    let delta = span / n_windows;
    let offset = 0.5 * delta / cfg.substeps as f64;

    let basis = HermiteBasis::new(m, cfg.degree);
    // Products of a forcing of degree about 2d with the basis stay below the
    // exactness degree of the rule.
    let nodes = Probes::stationary(&basis, &sigma, dim, 3 * cfg.degree / 2 + 2);
    let diag = Probes::stationary(&basis, &sigma, dim, DIAGNOSTIC_NODES);
    let nb = basis.len();
    let dscale: Vec<f64> = (0..m).map(|k| modes[k].lambda.sqrt() / sigma[k]).collect();
    let solver = Solver {
        model,
        ham,
        phi,
        l,
        cfg: &cfg,
        basis,
        quad: SemigroupQuadrature::new(cfg.n_gh, m),
        nodes,
        diag,
        dscale,
        rates,
        horizon,
        offset,
        r0,
    };

    let terminal = solver.slice(&solver.nodes, 0.0)?;
    let zero = vec![0.0; nb];
    let (_, d_t) = solver.probe_fields(&solver.nodes, &terminal, &zero);
    let (g_t, _) = solver.forcing(&d_t, 0.0);

    let mut times_rev = vec![horizon];
    let mut coeffs_rev = vec![zero];
    let mut g_b = g_t;
    let mut windows = Vec::new();
    let mut b = horizon;
    let eps = 1e-12 * horizon;
    while b > cfg.t0 + eps {
        let index = windows.len();
        let mut len = delta.min(b - cfg.t0);
        let mut halvings = 0;
        let outcome = loop {
            let c_b = coeffs_rev.last().expect("nonempty");
            let out = solver.window(index, b, len, cfg.t0, c_b, &g_b, r0)?;
            if out.report.converged && out.report.max_ratio < 0.9 {
                break out;
            }
            if halvings >= cfg.max_halvings {
                return Err(Error::NoContraction {
                    window: index,
                    ratio: out.report.max_ratio,
                    distance: out.last_distance,
                });
            }
            len *= 0.5;
            halvings += 1;
        };
        let mut report = outcome.report;
        report.halvings = halvings;
        for j in 1..outcome.times.len() {
            times_rev.push(outcome.times[j]);
            coeffs_rev.push(outcome.coeffs[j].clone());
        }
        g_b = outcome.forcing_start;
        b = report.start;
        windows.push(report);
    }
    times_rev.reverse();
    coeffs_rev.reverse();
    Ok(ValueField {
        model: model.clone(),
        terminal: phi.clone(),
        running: l.clone(),
        degree: cfg.degree,
        modes: m,
        n_gh: cfg.n_gh,
        sigma,
        times: times_rev,
        coeffs: coeffs_rev,
        terminal_offset: offset,
        r0,
        weight_exponent: 0.5,
        report: ConvergenceReport {
            r0,
            c_r0,
            smoothing_constant: smoothing,
            delta_bound,
            delta,
            windows,
        },
        basis: OnceLock::new(),
        quad: OnceLock::new(),
    })
}

/// `exp(scale f)`.
struct Exponential<'a> {
    f: &'a dyn ScalarField,
    scale: f64,
}

impl ScalarField for Exponential<'_> {
    fn eval(&self, x: &[f64]) -> f64 {
        (self.scale * self.f.eval(x)).exp()
    }

    fn support(&self) -> Vec<usize> {
        self.f.support()
    }

    fn sup_bound(&self) -> f64 {
        (self.scale.abs() * self.f.sup_bound()).exp()
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        self.f
            .lipschitz_bound()
            .map(|l| l * self.scale.abs() * self.sup_bound())
    }
}

fn check_hopf_cole(ham: &dyn Hamiltonian, l: &CylFunction) -> Result<()> {
    if !ham.is_standard_quadratic() {
        return Err(Error::Unsupported(
            "the exponential transform needs psi(z) = -|z|^2/4".into(),
        ));
    }
    let zero_l = l.is_constant() && l.sup_bound() == 0.0;
    if !zero_l {
        return Err(Error::Unsupported("the exponential transform needs l = 0".into()));
    }
    Ok(())
}

/// Exact value in the quadratic case: `v = -2 log P_{T-t} [exp(-phi/2)]`.
pub fn hopf_cole_reference(
    model: &SpectralModel,
    ham: &dyn Hamiltonian,
    phi: &dyn ScalarField,
    l: &CylFunction,
    t: f64,
    x: &[f64],
    quad: &SemigroupQuadrature,
) -> Result<f64> {
    check_hopf_cole(ham, l)?;
    let tau = model.horizon() - t;
    if tau < 0.0 {
        return Err(Error::InvalidTime {
            t,
            reason: "time beyond the horizon".into(),
        });
    }
    let e = Exponential { f: phi, scale: -0.5 };
    Ok(-2.0 * apply_semigroup(model, tau, &e, x, quad)?.ln())
}

/// Exact `sqrt(Q)`-gradient in the quadratic case:
/// `Z = -2 D P[exp(-phi/2)] / P[exp(-phi/2)]`.
pub fn hopf_cole_gradient(
    model: &SpectralModel,
    ham: &dyn Hamiltonian,
    phi: &dyn ScalarField,
    l: &CylFunction,
    t: f64,
    x: &[f64],
    quad: &SemigroupQuadrature,
) -> Result<Vec<f64>> {
    check_hopf_cole(ham, l)?;
    let tau = model.horizon() - t;
    if tau <= 0.0 {
        if phi.is_differentiable() {
            return Ok(sqrt_q_gradient(model, phi, x));
        }
        return Err(Error::InvalidTime {
            t,
            reason: "terminal gradient of non-differentiable data".into(),
        });
    }
    let e = Exponential { f: phi, scale: -0.5 };
    let (p, parts) = gaussian_moments(model, tau, &e, x, quad, true)?;
    let mut g = vec![0.0; model.dim()];
    for (k, v) in parts {
        g[k] = -2.0 * v / p;
    }
    Ok(g)
}

/// Outcome of the drifted-OU representation check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationReport {
    pub estimate: f64,
    pub stderr: f64,
    pub v: f64,
    pub residual: f64,
    pub h: f64,
    pub n_paths: usize,
    pub max_drift: f64,
}

/// Averaged gradient `G = int_0^1 grad psi(s z) ds` (16-point Gauss-Legendre).
pub fn averaged_gradient(ham: &dyn Hamiltonian, z: &[f64], gl: &GaussLegendre, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut g = vec![0.0; z.len()];
    let mut sz = vec![0.0; z.len()];
    for (&node, &w) in gl.nodes.iter().zip(&gl.weights) {
        let s = 0.5 * (node + 1.0);
        for (a, b) in sz.iter_mut().zip(z) {
            *a = s * b;
        }
        ham.grad_into(&sz, &mut g);
        for (o, gk) in out.iter_mut().zip(&g) {
            *o += 0.5 * w * gk;
        }
    }
}

/// Estimates `E phi(Theta_T) + int E [l + psi(0)] ds` for the OU process with
/// drift `sqrt(Q) G`, `G` the averaged gradient along the solved field, and
/// compares with `v(t, x)`. Since `psi(D) = psi(0) + <G, D>`, the solved field
/// is the value of this linear problem.
pub fn equivalent_representation_check(
    field: &ValueField,
    ham: &dyn Hamiltonian,
    t: f64,
    x: &[f64],
    steps: usize,
    sim: SimConfig,
) -> Result<RepresentationReport> {
    let model = &field.model;
    let horizon = model.horizon();
    if !field.covers(t) || t >= horizon {
        return Err(Error::InvalidTime {
            t,
            reason: "start outside the solved range".into(),
        });
    }
    let grid = TimeGrid::new(t, horizon, steps)?;
    let gl = GaussLegendre::new(16);
    let dim = model.dim();
    let bound = field.r0;
    let max_bits = AtomicU64::new(0f64.to_bits());
    let policy = |s: f64, y: &[f64], out: &mut [f64]| {
        let d = field.gradient(s, y).unwrap_or_else(|_| vec![0.0; dim]);
        averaged_gradient(ham, &d, &gl, out);
        let n = norm(out);
        max_bits.fetch_max(n.to_bits(), Ordering::Relaxed);
    };
    let ens = simulate_controlled(model, &policy, Actuation::Raw, x, &grid, sim)?;
    let max_drift = f64::from_bits(max_bits.load(Ordering::Relaxed));
    if max_drift > bound {
        return Err(Error::DriftBound {
            step: 0,
            norm: max_drift,
            bound,
        });
    }
    let h = grid.h();
    let psi0 = ham.psi(&vec![0.0; dim]);
    let samples: Vec<f64> = (0..ens.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut acc = field.terminal.eval(ens.state(p, grid.steps));
            for i in 0..grid.steps {
                acc += h * (field.running.eval(ens.state(p, i)) + psi0);
            }
            acc
        })
        .collect();
    let (mean, stderr) = mean_stderr(&samples);
    let v = field.value(t, x)?;
    Ok(RepresentationReport {
        estimate: mean,
        stderr,
        v,
        residual: mean - v,
        h,
        n_paths: ens.n_paths(),
        max_drift,
    })
}

/// Sample mean and its standard error, summed in index order.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if xs.iter().all(|&v| v == xs[0]) {
        return (xs[0], 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{HamiltonianConfig, HamiltonianSpec, LinearHamiltonian};
    use crate::spectral::{ModeSpec, NoiseRule};

    fn heat(n: usize) -> SpectralModel {
        SpectralModel::heat_preset(2.0 * std::f64::consts::PI, n, NoiseRule::White { sigma2: 1.0 }).unwrap()
    }

    #[test]
    fn semigroup_moments() {
        let m = heat(3);
        let q = SemigroupQuadrature::default();
        let x = [0.7, -0.2, 0.4];
        let c = CylFunction::constant(1.3);
        assert_eq!(apply_semigroup(&m, 0.4, &c, &x, &q).unwrap(), 1.3);
        let sq = CylFunction::QuadraticForm {
            modes: vec![1],
            coeffs: vec![2.0],
            cap: 1e6,
        };
        let dt = 0.3;
        let mean = 0.7 * (-m.modes()[0].alpha * dt).exp();
        let expected = mean * mean + m.modes()[0].variance(dt);
        assert!((apply_semigroup(&m, dt, &sq, &x, &q).unwrap() - expected).abs() < 1e-12);
        assert!((apply_semigroup(&m, 0.0, &sq, &x, &q).unwrap() - 0.49).abs() < 1e-15);
        assert!(semigroup_gradient(&m, 0.0, &sq, &x, &q).is_err());
    }

    #[test]
    fn gradient_kernel_matches_finite_difference() {
        let m = heat(2);
        let q = SemigroupQuadrature::default();
        let f = CylFunction::Product {
            factors: vec![CylFunction::tanh(1.0, 0.2, 1), CylFunction::tanh(1.5, 0.0, 2)],
        };
        let x = [0.3, -0.5];
        let dt = 0.25;
        let g = semigroup_gradient(&m, dt, &f, &x, &q).unwrap();
        for k in 0..2 {
            let e = 1e-4 * m.modes()[k].lambda.sqrt();
            let mut xp = x;
            let mut xm = x;
            xp[k] += e;
            xm[k] -= e;
            let fd = (apply_semigroup(&m, dt, &f, &xp, &q).unwrap() - apply_semigroup(&m, dt, &f, &xm, &q).unwrap())
                / 2e-4;
            assert!((fd - g[k]).abs() <= 1e-6 * fd.abs().max(1e-3), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn linear_equation_converges_in_one_iteration() {
        let m = heat(3);
        let zero = LinearHamiltonian { b: vec![0.0; 3] };
        let phi: Terminal = CylFunction::tanh(1.0, 0.0, 1).into();
        let cfg = PicardConfig {
            modes: 2,
            degree: 4,
            delta_hint: Some(0.25),
            ..PicardConfig::default()
        };
        let f = solve_mild(&m, &zero, &phi, &CylFunction::constant(0.0), &cfg).unwrap();
        assert!(f.report.windows.iter().all(|w| w.iterations.len() == 1));
        let q = SemigroupQuadrature::default();
        let x = [0.4, 0.1, 0.0];
        let v = f.value(0.2, &x).unwrap();
        assert!((v - apply_semigroup(&m, 0.8, &phi, &x, &q).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn constant_terminal_data_is_stationary() {
        let m = heat(2);
        let ham = HamiltonianSpec::new(HamiltonianConfig::quadratic(), 2).unwrap();
        let phi: Terminal = CylFunction::constant(0.6).into();
        let f = solve_mild(&m, &ham, &phi, &CylFunction::constant(0.0), &PicardConfig::default()).unwrap();
        let (v, d) = f.value_and_gradient(0.0, &[0.3, 0.2]).unwrap();
        assert!((v - 0.6).abs() < 1e-14);
        assert!(d.iter().all(|g| g.abs() < 1e-14));
    }

    #[test]
    fn running_cost_shift_is_linear_in_time() {
        let m = heat(2);
        let zero = LinearHamiltonian { b: vec![0.0; 2] };
        let phi: Terminal = CylFunction::constant(0.0).into();
        let cfg = PicardConfig {
            modes: 1,
            degree: 2,
            ..PicardConfig::default()
        };
        let f = solve_mild(&m, &zero, &phi, &CylFunction::constant(0.5), &cfg).unwrap();
        let v = f.value(0.25, &[0.1, 0.0]).unwrap();
        assert!((v - 0.5 * 0.75).abs() < 1e-12);
    }

    #[test]
    fn hopf_cole_matches_picard_in_one_mode() {
        let m = SpectralModel::custom(vec![ModeSpec { k: 1, alpha: 0.25, lambda: 1.0 }], 1.0).unwrap();
        let ham = HamiltonianSpec::new(HamiltonianConfig::quadratic(), 1).unwrap();
        let phi: Terminal = CylFunction::tanh(1.0, 0.0, 1).into();
        let l = CylFunction::constant(0.0);
        let cfg = PicardConfig {
            modes: 1,
            degree: 12,
            ..PicardConfig::default()
        };
        let f = solve_mild(&m, &ham, &phi, &l, &cfg).unwrap();
        assert!(f.report.max_ratio() < 0.9);
        let q = SemigroupQuadrature::default();
        for x in [-2.0, -0.5, 0.0, 0.8, 1.7] {
            let hc = hopf_cole_reference(&m, &ham, &phi, &l, 0.0, &[x], &q).unwrap();
            let v = f.value(0.0, &[x]).unwrap();
            assert!((v - hc).abs() < 5e-3, "x = {x}: {v} vs {hc}");
            let z = hopf_cole_gradient(&m, &ham, &phi, &l, 0.0, &[x], &q).unwrap();
            let d = f.gradient(0.0, &[x]).unwrap();
            assert!((z[0] - d[0]).abs() < 1e-2, "x = {x}: {} vs {}", d[0], z[0]);
        }
    }

    #[test]
    fn hopf_cole_rejects_other_drivers() {
        let m = heat(1);
        let ham = HamiltonianSpec::new(HamiltonianConfig::power(1.5), 1).unwrap();
        let phi = CylFunction::tanh(1.0, 0.0, 1);
        let q = SemigroupQuadrature::default();
        assert!(hopf_cole_reference(&m, &ham, &phi, &CylFunction::constant(0.0), 0.0, &[0.0], &q).is_err());
        let ham = HamiltonianSpec::new(HamiltonianConfig::quadratic(), 1).unwrap();
        assert!(hopf_cole_reference(&m, &ham, &phi, &CylFunction::constant(0.1), 0.0, &[0.0], &q).is_err());
        let c = CylFunction::constant(0.8);
        let v = hopf_cole_reference(&m, &ham, &c, &CylFunction::constant(0.0), 0.3, &[0.0], &q).unwrap();
        assert!((v - 0.8).abs() < 1e-14);
    }

    #[test]
    fn support_beyond_carried_modes_is_rejected() {
        let m = heat(3);
        let zero = LinearHamiltonian { b: vec![0.0; 3] };
        let phi: Terminal = CylFunction::tanh(1.0, 0.0, 3).into();
        let cfg = PicardConfig {
            modes: 2,
            ..PicardConfig::default()
        };
        assert!(solve_mild(&m, &zero, &phi, &CylFunction::constant(0.0), &cfg).is_err());
    }

    #[test]
    fn window_bound_solves_the_inequality() {
        let (c, k) = (2.0, 1.0);
        let d = contraction_window(c, k);
        assert!((0.5 + d * c + d.sqrt() * k * c - 1.0).abs() < 1e-12);
        assert!(contraction_window(0.0, 1.0).is_infinite());
    }
}
