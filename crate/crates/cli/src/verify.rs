//! Verification suites. Each check records the measured value and the pinned
//! tolerance; wall-clock time is kept next to the report, never inside it, so
//! reports are byte-identical across runs.

use std::time::Instant;

use anyhow::{anyhow, Result};
use hjb_core::control::{
    fundamental_gap, perturbations, synthesize_feedback, ControlProblem, PerturbedPolicy, DISCRETISATION_KAPPA,
    INTEGRAND_TOLERANCE,
};
use hjb_core::fbsde::{fit_line, solve_bsde, terminal_stability, z_profile, BsdeConfig, ZProfile};
use hjb_core::functions::{CylFunction, ScalarField};
use hjb_core::hamiltonian::{norm, Hamiltonian, HamiltonianConfig, HamiltonianSpec};
use hjb_core::mollify::{MollifiedFunction, Scheme, Terminal};
use hjb_core::oracle::{adaptive_simpson, CrankNicolson1d};
use hjb_core::ou_sim::{girsanov_logweight, sample_ou_exact, simulate_controlled, Actuation, SimConfig, TimeGrid, ZeroPolicy};
use hjb_core::picard::{
    apply_grad_semigroup, apply_semigroup, equivalent_representation_check, hopf_cole_reference, mean_stderr,
    solve_mild, PicardConfig, SemigroupQuadrature, ValueField,
};
use hjb_core::spectral::{ModeSpec, NoiseRule, SpectralModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const SUITES: [&str; 6] = ["spectral", "hamiltonian", "solvers", "control", "blowup", "stability"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    pub status: Status,
    pub measured: f64,
    pub tolerance: String,
    #[serde(skip)]
    pub runtime: f64,
}

impl Check {
    fn new(id: &str, ok: bool, measured: f64, tolerance: String) -> Self {
        Self {
            id: id.to_string(),
            status: if ok { Status::Pass } else { Status::Fail },
            measured,
            tolerance,
            runtime: 0.0,
        }
    }

    pub fn le(id: &str, measured: f64, tol: f64) -> Self {
        Self::new(id, measured <= tol, measured, format!("<= {tol:e}"))
    }

    pub fn ge(id: &str, measured: f64, tol: f64) -> Self {
        Self::new(id, measured >= tol, measured, format!(">= {tol:e}"))
    }

    pub fn lt(id: &str, measured: f64, tol: f64) -> Self {
        Self::new(id, measured < tol, measured, format!("< {tol:e}"))
    }

    pub fn within(id: &str, measured: f64, lo: f64, hi: f64) -> Self {
        Self::new(id, measured >= lo && measured <= hi, measured, format!("in [{lo}, {hi}]"))
    }

    pub fn is_pass(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::is_pass)
    }

    pub fn get(&self, id: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.id == id)
    }

    /// Suite wall-clock time in seconds.
    pub fn runtime(&self) -> f64 {
        self.checks.iter().map(|c| c.runtime).sum()
    }

    /// `id,status,measured,tolerance,runtime_s`.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("id,status,measured,tolerance,runtime_s\n");
        for c in &self.checks {
            s.push_str(&format!(
                "{},{},{:e},\"{}\",{:.3}\n",
                c.id,
                if c.is_pass() { "pass" } else { "fail" },
                c.measured,
                c.tolerance,
                c.runtime
            ));
        }
        s
    }
}

/// Collects checks and attributes elapsed time to each group.
struct Recorder {
    suite: String,
    seed: u64,
    checks: Vec<Check>,
    clock: Instant,
}

impl Recorder {
    fn new(suite: &str, seed: u64) -> Self {
        Self {
            suite: suite.to_string(),
            seed,
            checks: Vec::new(),
            clock: Instant::now(),
        }
    }

    /// Adds a group of checks; the time since the last group is split evenly.
    fn push(&mut self, group: Vec<Check>) {
        let dt = self.clock.elapsed().as_secs_f64() / group.len().max(1) as f64;
        self.clock = Instant::now();
        for mut c in group {
            c.runtime = dt;
            self.checks.push(c);
        }
    }

    fn finish(self) -> VerificationReport {
        VerificationReport {
            suite: self.suite,
            seed: self.seed,
            checks: self.checks,
        }
    }
}

pub fn run_suite(suite: &str, seed: u64) -> Result<VerificationReport> {
    match suite {
        "spectral" => spectral(seed),
        "hamiltonian" => hamiltonian(seed),
        "solvers" => solvers(seed),
        "control" => control(seed),
        "blowup" => blowup(seed).map(|r| r.0),
        "stability" => stability(seed),
        other => Err(anyhow!("unknown suite `{other}` (expected one of {})", SUITES.join(", "))),
    }
}

fn heat(length: f64, n: usize) -> SpectralModel {
    SpectralModel::heat_preset(length, n, NoiseRule::White { sigma2: 1.0 }).expect("valid preset")
}

/// Covariance closed forms, the smoothing rate and the gradient identity.
pub fn spectral(seed: u64) -> Result<VerificationReport> {
    let mut rec = Recorder::new("spectral", seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Closed-form covariance against adaptive quadrature of int_0^t lambda e^{-2 alpha s} ds.
    let models = [
        heat(1.0, 64),
        SpectralModel::heat_preset(1.0, 64, NoiseRule::Power { beta: 0.5 })?,
    ];
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = &models[rng.random_range(0..2)];
        let k = rng.random_range(0..m.dim());
        let t = 10f64.powf(rng.random_range(-4.0..0.0)) * m.horizon();
        let md = m.modes()[k];
        let closed = m.ou_covariance(t)?[k];
        let scale = md.lambda * (1.0 - (-2.0 * md.alpha * t).exp()) / (2.0 * md.alpha);
        let quad = adaptive_simpson(&|s: f64| md.lambda * (-2.0 * md.alpha * s).exp(), 0.0, t, 1e-14 * scale);
        worst = worst.max((closed - quad).abs() / quad.abs());
    }
    rec.push(vec![Check::le("covariance_closed_form_rel_error", worst, 1e-10)]);

    // Smoothing rate on the white-noise heat preset.
    let m = heat(1.0, 200);
    let ts: Vec<f64> = (0..=20).map(|i| 10f64.powf(-4.0 + 2.0 * i as f64 / 20.0)).collect();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut logs = (Vec::new(), Vec::new());
    for &t in &ts {
        let n = m.smoothing_norm(t)?;
        lo = lo.min(t.sqrt() * n);
        hi = hi.max(t.sqrt() * n);
        logs.0.push(t.ln());
        logs.1.push(n.ln());
    }
    let slope = fit_line(&logs.0, &logs.1).slope;
    rec.push(vec![
        Check::ge("smoothing_weighted_norm_min", lo, 0.8),
        Check::le("smoothing_weighted_norm_max", hi, 1.05),
        Check::within("smoothing_norm_loglog_slope", slope, -0.55, -0.45),
    ]);

    // Gradient identity: kernel formula against fourth-order central
    // differences, both by kink-aware adaptive quadrature.
    let (m, t, x, xi) = gradient_setup();
    let quad = SemigroupQuadrature::adaptive(1e-10);
    let fns = gradient_catalog();
    let dir: Vec<f64> = m.modes().iter().zip(&xi).map(|(md, v)| md.lambda.sqrt() * v).collect();
    let mut worst: f64 = 0.0;
    let mut reference = Vec::new();
    for f in &fns {
        let g = apply_grad_semigroup(&m, t, f, &x, &xi, &quad)?;
        let eps = 5e-3;
        let p = |s: f64| -> Result<f64> {
            let y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
            Ok(apply_semigroup(&m, t, f, &y, &quad)?)
        };
        let fd = (8.0 * (p(eps)? - p(-eps)?) - (p(2.0 * eps)? - p(-2.0 * eps)?)) / (12.0 * eps);
        worst = worst.max((g - fd).abs() / fd.abs().max(1e-2));
        reference.push(g);
    }
    rec.push(vec![Check::le("gradient_identity_quadrature_rel_error", worst, 1e-4)]);

    let mut worst: f64 = 0.0;
    for (j, (f, &g)) in fns.iter().zip(&reference).enumerate() {
        let (mc, _) = mc_gradient(&m, t, f, &x, &xi, 1_000_000, seed.wrapping_add(j as u64))?;
        worst = worst.max((mc - g).abs() / g.abs().max(1e-2));
    }
    rec.push(vec![Check::le("gradient_identity_mc_rel_error", worst, 1e-2)]);
    Ok(rec.finish())
}

fn gradient_setup() -> (SpectralModel, f64, Vec<f64>, Vec<f64>) {
    let m = heat(2.0 * std::f64::consts::PI, 5);
    (m, 0.3, vec![0.3, -0.2, 0.1, 0.0, 0.5], vec![1.0, 0.5, 0.0, 0.0, 0.0])
}

fn gradient_catalog() -> Vec<CylFunction> {
    vec![
        CylFunction::tanh(1.3, 0.2, 1),
        CylFunction::clipped_power(1.0, 1),
        CylFunction::QuadraticForm {
            modes: vec![1, 2],
            coeffs: vec![1.0, 0.5],
            cap: 0.3,
        },
        CylFunction::Product {
            factors: vec![CylFunction::tanh(1.0, 0.0, 1), CylFunction::tanh(1.0, 0.3, 2)],
        },
        CylFunction::Sum {
            terms: vec![CylFunction::tanh(0.7, 0.0, 2), CylFunction::clipped_power(0.5, 1)],
        },
    ]
}

/// Monte Carlo estimate of the kernel formula, with `f(mean)` as control variate.
pub fn mc_gradient(
    m: &SpectralModel,
    t: f64,
    f: &dyn ScalarField,
    x: &[f64],
    xi: &[f64],
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let ens = sample_ou_exact(m, 0.0, x, t, 1, n, seed)?;
    let mean = m.semigroup_mean(t, x)?;
    let f0 = f.eval(&mean);
    let samples: Vec<f64> = (0..n)
        .map(|p| {
            let y = ens.state(p, 1);
            let z: Vec<f64> = y.iter().zip(&mean).map(|(a, b)| a - b).collect();
            (f.eval(y) - f0) * m.grad_kernel_weight(t, &z, xi).unwrap_or(f64::NAN)
        })
        .collect();
    Ok(mean_stderr(&samples))
}

/// Closed forms against the minimisation oracle, the Legendre inequality and
/// the minimiser radius.
pub fn hamiltonian(seed: u64) -> Result<VerificationReport> {
    let mut rec = Recorder::new("hamiltonian", seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 3;
    let random_vec = |rng: &mut ChaCha8Rng, scale: f64| -> Vec<f64> {
        let r = scale * rng.random::<f64>();
        let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let n = norm(&v).max(1e-12);
        v.iter().map(|a| a * r / n).collect()
    };
    let mut group = Vec::new();
    let mut legendre_min = f64::INFINITY;
    let mut radius_margin = f64::INFINITY;
    for q in [1.25, 1.5, 2.0] {
        let spec = HamiltonianSpec::new(HamiltonianConfig::power(q), dim)?;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let z = random_vec(&mut rng, 4.0);
            worst = worst.max((spec.psi_eval(&z) - spec.psi_numeric(&z)).abs());
            let bound = spec.radius_constant() * (1.0 + norm(&z).powf(spec.p() - 1.0));
            radius_margin = radius_margin.min(bound - norm(&spec.gamma_argmin(&z)));
        }
        group.push(Check::le(&format!("psi_closed_form_q{q}"), worst, 1e-6));
        for _ in 0..10_000 / 3 + 1 {
            let z = random_vec(&mut rng, 4.0);
            let u = random_vec(&mut rng, 4.0);
            legendre_min = legendre_min.min(spec.objective(&z, &u) - spec.psi_eval(&z));
        }
    }
    rec.push(group);
    rec.push(vec![
        Check::ge("legendre_inequality_min", legendre_min, -INTEGRAND_TOLERANCE),
        Check::ge("minimiser_radius_margin", radius_margin, 0.0),
    ]);
    Ok(rec.finish())
}

/// Benchmark model of the solver comparison: heat preset on `(0, 2 pi)`, 5 modes.
pub fn benchmark_model() -> SpectralModel {
    heat(2.0 * std::f64::consts::PI, 5)
}

pub fn benchmark_probes() -> Vec<Vec<f64>> {
    (0..20)
        .map(|j| {
            let s = j as f64;
            vec![-1.9 + 0.2 * s, 0.6 * s.sin(), 0.2 * s.cos(), 0.1 * (0.5 * s).sin(), 0.0]
        })
        .collect()
}

pub fn benchmark_picard() -> PicardConfig {
    PicardConfig {
        modes: 2,
        degree: 10,
        ..PicardConfig::default()
    }
}

pub fn benchmark_bsde() -> BsdeConfig {
    BsdeConfig {
        h: 1.0 / 50.0,
        steps: None,
        n_paths: 100_000,
        degree: 5,
        modes: 2,
        ..BsdeConfig::default()
    }
}

/// Quadratic benchmark, contraction diagnostics and the Girsanov checks.
pub fn solvers(seed: u64) -> Result<VerificationReport> {
    let mut rec = Recorder::new("solvers", seed);
    let quad = SemigroupQuadrature::default();

    // The exponential transform against a one-mode Crank-Nicolson solve.
    let m1 = SpectralModel::custom(vec![ModeSpec { k: 1, alpha: 0.25, lambda: 1.0 }], 1.0)?;
    let h1 = HamiltonianSpec::new(HamiltonianConfig::quadratic(), 1)?;
    let tanh1 = CylFunction::tanh(1.0, 0.0, 1);
    let zero = CylFunction::constant(0.0);
    let cn = CrankNicolson1d::solve(0.25, 1.0, &|x: f64| x.tanh(), 1.0, 2001, 1000);
    let mut worst: f64 = 0.0;
    for x in [-2.0, -1.0, -0.3, 0.0, 0.4, 1.2, 2.0] {
        let hc = hopf_cole_reference(&m1, &h1, &tanh1, &zero, 0.0, &[x], &quad)?;
        worst = worst.max((hc - cn.value(x)).abs());
    }
    let ham = HamiltonianSpec::new(HamiltonianConfig::quadratic(), 5)?;
    let mut psi_err: f64 = 0.0;
    for z in [[0.3, -1.0, 0.0, 2.0, 0.1], [1.0, 0.0, 0.0, 0.0, 0.0]] {
        psi_err = psi_err.max((ham.psi(&z) + 0.25 * norm(&z).powi(2)).abs());
    }
    rec.push(vec![
        Check::le("hopf_cole_vs_crank_nicolson", worst, 1e-3),
        Check::le("quadratic_psi_closed_form", psi_err, 1e-12),
    ]);

    let m = benchmark_model();
    let phi: Terminal = tanh1.clone().into();
    let probes = benchmark_probes();
    let field = solve_mild(&m, &ham, &phi, &zero, &benchmark_picard())?;
    let refs: Vec<f64> = probes
        .iter()
        .map(|x| hopf_cole_reference(&m, &ham, &phi, &zero, 0.0, x, &quad))
        .collect::<hjb_core::error::Result<_>>()?;
    let mut worst: f64 = 0.0;
    for (x, r) in probes.iter().zip(&refs) {
        worst = worst.max((field.value(0.0, x)? - r).abs());
    }
    rec.push(vec![Check::le("picard_vs_hopf_cole_max_error", worst, 2e-2)]);

    let report = field.report();
    let a_priori = phi.sup_bound() + m.horizon() * zero.sup_bound();
    rec.push(vec![
        Check::lt("picard_max_window_ratio", report.max_ratio(), 1.0),
        Check::le(
            "picard_windows_outside_ball",
            report.windows.iter().filter(|w| !w.in_ball).count() as f64,
            0.0,
        ),
        Check::le("picard_sup_v_over_a_priori_bound", report.sup_v() / a_priori, 1.0 + 1e-2),
    ]);

    let bc = benchmark_bsde();
    let mut worst: f64 = 0.0;
    let mut clips = 0usize;
    for (x, r) in probes.iter().zip(&refs) {
        let s = solve_bsde(&m, &ham, &phi, &zero, 0.0, x, &bc, seed)?;
        worst = worst.max((s.y0 - r).abs());
        clips += s.clip_total;
    }
    rec.push(vec![
        Check::le("bsde_vs_hopf_cole_max_error", worst, 2e-2),
        Check::le("bsde_clip_events_lipschitz", clips as f64, 0.0),
    ]);

    let (girsanov, repr) = girsanov_checks(seed)?;
    rec.push(girsanov);
    rec.push(vec![repr]);
    Ok(rec.finish())
}

/// Weighted uncontrolled expectations against drifted simulations for three
/// bounded drifts, and the equivalent representation on a 2-mode quadratic case.
fn girsanov_checks(seed: u64) -> Result<(Vec<Check>, Check)> {
    let m = heat(2.0 * std::f64::consts::PI, 2);
    let x = [0.3, -0.4];
    let grid = TimeGrid::new(0.0, 1.0, 20)?;
    let n = 100_000;
    let f = CylFunction::tanh(1.0, 0.0, 1);
    let free = simulate_controlled(&m, &ZeroPolicy, Actuation::Raw, &x, &grid, SimConfig::new(n, seed))?;
    type Drift = fn(f64, &[f64], &mut [f64]);
    let drifts: [(&str, Drift); 3] = [
        ("girsanov_constant_drift", |_t, _x, o| {
            o[0] = 0.5;
            o[1] = 0.0;
        }),
        ("girsanov_state_drift", |_t, x, o| {
            o[0] = 0.8 * x[0].tanh();
            o[1] = 0.0;
        }),
        ("girsanov_coupled_drift", |t, x, o| {
            o[0] = 0.3 * x[1].cos();
            o[1] = 0.4 * (x[0] + t).sin();
        }),
    ];
    let mut checks = Vec::new();
    for (id, d) in drifts {
        let lw = girsanov_logweight(&free, &d, 10.0)?;
        let weighted: Vec<f64> = (0..n).map(|p| lw[p].exp() * f.eval(free.state(p, 20))).collect();
        let drifted = simulate_controlled(&m, &d, Actuation::Raw, &x, &grid, SimConfig::new(n, seed.wrapping_add(1)))?;
        let direct: Vec<f64> = (0..n).map(|p| f.eval(drifted.state(p, 20))).collect();
        let (a, sa) = mean_stderr(&weighted);
        let (b, sb) = mean_stderr(&direct);
        checks.push(Check::le(id, (a - b).abs() / (sa * sa + sb * sb).sqrt(), 3.0));
    }

    let ham = HamiltonianSpec::new(HamiltonianConfig::quadratic(), 2)?;
    let phi: Terminal = CylFunction::Sum {
        terms: vec![CylFunction::tanh(1.0, 0.0, 1), CylFunction::tanh(0.5, 0.2, 2)],
    }
    .into();
    let field = solve_mild(&m, &ham, &phi, &CylFunction::constant(0.0), &benchmark_picard())?;
    let r = equivalent_representation_check(&field, &ham, 0.0, &x, 20, SimConfig::new(40_000, seed))?;
    let allowance = 3.0 * (r.stderr + DISCRETISATION_KAPPA * r.h);
    let repr = Check::le("equivalent_representation_residual_over_allowance", r.residual.abs() / allowance, 1.0);
    Ok((checks, repr))
}

/// One-mode control benchmark.
pub fn control_problem(steps: usize) -> Result<(ControlProblem, ValueField)> {
    let m = SpectralModel::custom(vec![ModeSpec { k: 1, alpha: 0.5, lambda: 1.0 }], 1.0)?;
    let ham = HamiltonianSpec::new(HamiltonianConfig::quadratic(), 1)?;
    let phi: Terminal = CylFunction::tanh(1.0, 0.0, 1).into();
    let zero = CylFunction::constant(0.0);
    let cfg = PicardConfig {
        modes: 1,
        degree: 10,
        ..PicardConfig::default()
    };
    let field = solve_mild(&m, &ham, &phi, &zero, &cfg)?;
    let p = ControlProblem::new(m, ham, zero, phi, 0.0, vec![0.4], steps)?;
    Ok((p, field))
}

/// Fundamental relation: optimality of the feedback, value dominance under
/// perturbations, and the pointwise integrand sign.
pub fn control(seed: u64) -> Result<VerificationReport> {
    let mut rec = Recorder::new("control", seed);
    let (p, field) = control_problem(20)?;
    let n = 20_000;
    let fb = synthesize_feedback(&field, &p.ham, p.t)?;
    let g = fundamental_gap(&p, &fb, &field, n, seed)?;
    let kh = DISCRETISATION_KAPPA * g.cost.h;
    let mut min_integrand = g.min_integrand;
    rec.push(vec![
        Check::le("feedback_abs_j_minus_v_over_allowance", g.direct_gap.abs() / (3.0 * (g.cost.stderr + kh)), 1.0),
        Check::le("feedback_gap_abs", g.gap.abs(), 3.0 * g.gap_stderr.max(1e-12)),
        Check::le(
            "gap_vs_direct_consistency",
            (g.direct_gap - g.gap).abs() / (3.0 * g.consistency_stderr + kh),
            1.0,
        ),
    ]);
    let mut worst = f64::INFINITY;
    for (i, pert) in perturbations(1, 1, 10, 0.5, seed).into_iter().enumerate() {
        let pp = PerturbedPolicy {
            base: &fb,
            ham: &p.ham,
            perturbation: pert,
        };
        let r = fundamental_gap(&p, &pp, &field, n, seed.wrapping_add(1 + i as u64))?;
        worst = worst.min(r.direct_gap / r.cost.stderr);
        min_integrand = min_integrand.min(r.min_integrand);
    }
    let z = fundamental_gap(&p, &ZeroPolicy, &field, n, seed)?;
    min_integrand = min_integrand.min(z.min_integrand);
    rec.push(vec![
        Check::ge("perturbed_min_j_minus_v_over_stderr", worst, -2.0),
        Check::ge("zero_policy_gap_over_stderr", z.gap / z.gap_stderr, 3.0),
        Check::ge("pointwise_integrand_min", min_integrand, -INTEGRAND_TOLERANCE),
    ]);
    Ok(rec.finish())
}

/// Model of the blow-up and stability studies: `alpha_1 = 1/2`, `lambda = 1`.
pub fn blowup_model() -> SpectralModel {
    heat(std::f64::consts::PI / 0.5f64.sqrt(), 3)
}

pub fn blowup_bsde() -> BsdeConfig {
    BsdeConfig {
        steps: Some(20),
        n_paths: 10_000,
        degree: 6,
        modes: 1,
        ..BsdeConfig::default()
    }
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn tip_probes(n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|j| {
            let mut x = vec![0.0; dim];
            x[0] = 1e-3 * 2f64.powf(0.5 * (j * 24 / n) as f64);
            x
        })
        .collect()
}

/// Gradient blow-up profiles for the cusp and a Lipschitz terminal datum.
pub fn blowup(seed: u64) -> Result<(VerificationReport, ZProfile, ZProfile)> {
    let mut rec = Recorder::new("blowup", seed);
    let m = blowup_model();
    let ham = HamiltonianSpec::new(HamiltonianConfig::quadratic(), m.dim())?;
    let zero = CylFunction::constant(0.0);
    let taus = geometric(0.01, 0.5, 10);
    let probes = tip_probes(24, m.dim());
    let cfg = blowup_bsde();
    let cusp = z_profile(&m, &ham, &CylFunction::clipped_power(1.0 / 3.0, 1), &zero, &taus, &probes, &cfg, seed)?;
    rec.push(vec![Check::within("cusp_profile_slope", cusp.fit.slope, -0.65, -0.35)]);
    let lip = z_profile(&m, &ham, &CylFunction::tanh(1.0, 0.0, 1), &zero, &taus, &probes, &cfg, seed)?;
    let bounded = lip.rows.iter().map(|r| r.sup_z).fold(0.0, f64::max);
    rec.push(vec![
        Check::lt("lipschitz_profile_abs_slope", lip.fit.slope.abs(), 0.15),
        Check::le("lipschitz_profile_sup", bounded, 2.0),
    ]);
    Ok((rec.finish(), cusp, lip))
}

/// Stability of `Z` in the terminal data across a mollified ladder.
pub fn stability(seed: u64) -> Result<VerificationReport> {
    let mut rec = Recorder::new("stability", seed);
    let m = blowup_model();
    let ham = HamiltonianSpec::new(HamiltonianConfig::quadratic(), m.dim())?;
    let zero = CylFunction::constant(0.0);
    let base = CylFunction::clipped_power(1.0 / 3.0, 1);
    let taus = geometric(0.01, 0.5, 8);
    let probes = tip_probes(12, m.dim());
    let cfg = blowup_bsde();
    let ladder = [4.0, 16.0, 64.0, 256.0]
        .iter()
        .map(|&n| MollifiedFunction::new(base.clone(), n, Scheme::Inf))
        .collect::<hjb_core::error::Result<Vec<_>>>()?;
    let mut ratios = Vec::new();
    let mut group = Vec::new();
    for (i, w) in ladder.windows(2).enumerate() {
        let r = terminal_stability(&m, &ham, &w[0], &w[1], &zero, &taus, &probes, &cfg, seed)?;
        group.push(Check::lt(&format!("stability_ratio_pair{i}"), r.ratio, f64::INFINITY));
        ratios.push(r.ratio);
    }
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    group.push(Check::le("stability_ratio_spread", hi / lo, 3.0));
    let shifted = terminal_stability(&m, &ham, &base, &base.clone().shifted(0.5), &zero, &taus[..2], &probes[..2], &cfg, seed)?;
    group.push(Check::le("stability_constant_shift_ratio", shifted.ratio, 1e-10));
    rec.push(group);
    Ok(rec.finish())
}
