//! Forward simulation of the OU model, with and without control.
//!
//! Each step samples, per noisy mode, the pair `(I, dW)` with
//! `I = int e^{-alpha (h - s)} dW_s` exactly: `I` drives the exact OU
//! transition and `dW` is stored for the Girsanov weights and the BSDE
//! regressions. Controls enter through `sqrt(Q) R u`, frozen over a step
//! (exponential Euler). Every path draws from its own ChaCha stream keyed by
//! the seed, so results do not depend on the number of threads.
//!
//! With `refine > 1` the noise is generated on a grid `refine` times finer and
//! aggregated exactly, which couples ensembles whose steps differ by powers of
//! two for self-convergence studies.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::spectral::{mode_response, SpectralModel};

/// Uniform time grid `t0 < t0 + h < ... < t_end`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end >= t0) || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidTime {
                t: t_end,
                reason: format!("end time must not precede the start {t0}"),
            });
        }
        if steps == 0 && t_end > t0 {
            return Err(invalid("steps", "a nontrivial interval needs at least one step"));
        }
        Ok(Self { t0, t_end, steps })
    }

    pub fn h(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            (self.t_end - self.t0) / self.steps as f64
        }
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.t_end
        } else {
            self.t0 + self.h() * i as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }
}

/// Ensemble sizes and the random stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Noise substeps per grid step.
    pub refine: usize,
}

impl SimConfig {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            seed,
            refine: 1,
        }
    }

    pub fn with_refine(mut self, refine: usize) -> Self {
        self.refine = refine;
        self
    }
}

/// A feedback law `u = policy(t, x)`. Implementations must be pure.
pub trait Policy: Sync + Send {
    fn control(&self, t: f64, x: &[f64], out: &mut [f64]);
}

impl<F> Policy for F
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync + Send,
{
    fn control(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self(t, x, out)
    }
}

/// The zero control.
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn control(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|u| *u = 0.0);
    }
}

/// How a policy output acts on the state: raw drift `sqrt(Q) u`, or through
/// the control map and constraint set of a Hamiltonian.
#[derive(Clone, Copy)]
pub enum Actuation<'a> {
    Raw,
    Spec(&'a HamiltonianSpec),
}

/// Simulated paths on a uniform grid.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    grid: TimeGrid,
    dim: usize,
    n_paths: usize,
    seed: u64,
    noisy: Vec<usize>,
    states: Vec<f64>,
    increments: Vec<f64>,
    controls: Option<Vec<f64>>,
    log_weight: Option<Vec<f64>>,
}

impl PathEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// 0-based indices of the noisy modes, in the order used by [`Self::increment`].
    pub fn noisy_modes(&self) -> &[usize] {
        &self.noisy
    }

    /// State of path `p` at grid index `i`.
    pub fn state(&self, p: usize, i: usize) -> &[f64] {
        let base = (p * (self.grid.steps + 1) + i) * self.dim;
        &self.states[base..base + self.dim]
    }

    /// Brownian increments of the noisy modes over `[t_i, t_{i+1}]`.
    pub fn increment(&self, p: usize, i: usize) -> &[f64] {
        let nn = self.noisy.len();
        let base = (p * self.grid.steps + i) * nn;
        &self.increments[base..base + nn]
    }

    /// Control applied by path `p` on `[t_i, t_{i+1}]`, for controlled ensembles.
    pub fn control(&self, p: usize, i: usize) -> Option<&[f64]> {
        self.controls.as_ref().map(|c| {
            let base = (p * self.grid.steps + i) * self.dim;
            &c[base..base + self.dim]
        })
    }

    pub fn log_weight(&self) -> Option<&[f64]> {
        self.log_weight.as_deref()
    }

    pub fn set_log_weight(&mut self, w: Vec<f64>) {
        self.log_weight = Some(w);
    }

    /// Writes `path,step,mode,value` rows.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "path,step,mode,value")?;
        for p in 0..self.n_paths {
            for i in 0..=self.grid.steps {
                for (k, v) in self.state(p, i).iter().enumerate() {
                    writeln!(w, "{p},{i},{},{v:e}", k + 1)?;
                }
            }
        }
        Ok(())
    }
}

/// Per-mode constants of one grid step and its noise substeps.
struct StepConstants {
    decay: Vec<f64>,
    response: Vec<f64>,
    sqrt_lambda: Vec<f64>,
    // Fine-step pair sampling, per noisy mode.
    sigma_i: Vec<f64>,
    w_coef: Vec<f64>,
    w_resid: Vec<f64>,
    fine_decay: Vec<f64>,
}

impl StepConstants {
    fn new(model: &SpectralModel, h: f64, refine: usize, noisy: &[usize]) -> Self {
        let modes = model.modes();
        let d = h / refine as f64;
        let mut sigma_i = Vec::new();
        let mut w_coef = Vec::new();
        let mut w_resid = Vec::new();
        let mut fine_decay = Vec::new();
        for &k in noisy {
            let a = modes[k].alpha;
            let var_i = -(-2.0 * a * d).exp_m1() / (2.0 * a);
            let cov = mode_response(a, d);
            sigma_i.push(var_i.sqrt());
            let coef = if var_i > 0.0 { cov / var_i } else { 0.0 };
            w_coef.push(coef);
            w_resid.push((d - coef * cov).max(0.0).sqrt());
            fine_decay.push((-a * d).exp());
        }
        Self {
            decay: modes.iter().map(|m| (-m.alpha * h).exp()).collect(),
            response: modes.iter().map(|m| mode_response(m.alpha, h)).collect(),
            sqrt_lambda: modes.iter().map(|m| m.lambda.sqrt()).collect(),
            sigma_i,
            w_coef,
            w_resid,
            fine_decay,
        }
    }
}

/// Stream for a path: the seed keys the generator, the path index selects the stream.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

struct Controlled<'a> {
    policy: &'a dyn Policy,
    actuation: Actuation<'a>,
}

#[allow(clippy::too_many_arguments)]
fn run_path(
    model: &SpectralModel,
    consts: &StepConstants,
    grid: &TimeGrid,
    refine: usize,
    noisy: &[usize],
    x0: &[f64],
    rng: &mut ChaCha8Rng,
    ctrl: Option<&Controlled>,
    states: &mut [f64],
    incs: &mut [f64],
    mut controls: Option<&mut [f64]>,
) -> Result<()> {
    let n = model.dim();
    let nn = noisy.len();
    states[..n].copy_from_slice(x0);
    let mut u = vec![0.0; n];
    let mut ru = vec![0.0; n];
    let mut ii = vec![0.0; nn];
    for i in 0..grid.steps {
        let t = grid.time(i);
        let (prev, next) = states[i * n..(i + 2) * n].split_at_mut(n);
        if let Some(c) = ctrl {
            c.policy.control(t, prev, &mut u);
            match c.actuation {
                Actuation::Raw => ru.copy_from_slice(&u),
                Actuation::Spec(spec) => {
                    if !spec.contains(&u, 1e-9) {
                        return Err(Error::InadmissibleControl {
                            step: i,
                            t,
                            detail: format!("u = {u:?}"),
                        });
                    }
                    spec.apply_map_into(&u, &mut ru);
                }
            }
            if let Some(cs) = controls.as_deref_mut() {
                cs[i * n..(i + 1) * n].copy_from_slice(&u);
            }
        }
        // Noise: aggregate `refine` exact fine pairs.
        let dw = &mut incs[i * nn..(i + 1) * nn];
        ii.iter_mut().for_each(|v| *v = 0.0);
        dw.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..refine {
            for j in 0..nn {
                let xi1: f64 = rng.sample(StandardNormal);
                let xi2: f64 = rng.sample(StandardNormal);
                let fine_i = consts.sigma_i[j] * xi1;
                let fine_w = consts.w_coef[j] * fine_i + consts.w_resid[j] * xi2;
                ii[j] = consts.fine_decay[j] * ii[j] + fine_i;
                dw[j] += fine_w;
            }
        }
        for k in 0..n {
            let drift = if ctrl.is_some() {
                consts.sqrt_lambda[k] * ru[k] * consts.response[k]
            } else {
                0.0
            };
            next[k] = consts.decay[k] * prev[k] + drift;
        }
        for (j, &k) in noisy.iter().enumerate() {
            next[k] += consts.sqrt_lambda[k] * ii[j];
        }
    }
    Ok(())
}

fn simulate(
    model: &SpectralModel,
    x: &[f64],
    grid: &TimeGrid,
    sim: SimConfig,
    ctrl: Option<Controlled>,
) -> Result<PathEnsemble> {
    model.check_dim(x)?;
    if sim.refine == 0 {
        return Err(invalid("refine", "at least one noise substep is required"));
    }
    // Grid times may exceed T only by rounding.
    if grid.t_end > model.horizon() * (1.0 + 1e-12) || grid.t0 < 0.0 {
        return Err(Error::InvalidTime {
            t: grid.t_end,
            reason: format!("grid must lie in [0, {}]", model.horizon()),
        });
    }
    let n = model.dim();
    let noisy = model.noisy_modes();
    let nn = noisy.len();
    let m = grid.steps;
    let consts = StepConstants::new(model, grid.h(), sim.refine, &noisy);
    let mut states = vec![0.0; sim.n_paths * (m + 1) * n];
    let mut increments = vec![0.0; sim.n_paths * m * nn];
    let mut controls = ctrl.as_ref().map(|_| vec![0.0; sim.n_paths * m * n]);
    let state_chunk = (m + 1) * n;
    let inc_chunk = (m * nn).max(1);
    let ctrl_chunk = (m * n).max(1);

    let results: Vec<Result<()>> = if m * nn == 0 {
        states
            .par_chunks_mut(state_chunk)
            .enumerate()
            .map(|(p, st)| {
                let mut rng = path_rng(sim.seed, p);
                run_path(model, &consts, grid, sim.refine, &noisy, x, &mut rng, ctrl.as_ref(), st, &mut [], None)
            })
            .collect()
    } else if let Some(cs) = controls.as_mut() {
        states
            .par_chunks_mut(state_chunk)
            .zip(increments.par_chunks_mut(inc_chunk))
            .zip(cs.par_chunks_mut(ctrl_chunk))
            .enumerate()
            .map(|(p, ((st, inc), c))| {
                let mut rng = path_rng(sim.seed, p);
                run_path(model, &consts, grid, sim.refine, &noisy, x, &mut rng, ctrl.as_ref(), st, inc, Some(c))
            })
            .collect()
    } else {
        states
            .par_chunks_mut(state_chunk)
            .zip(increments.par_chunks_mut(inc_chunk))
            .enumerate()
            .map(|(p, (st, inc))| {
                let mut rng = path_rng(sim.seed, p);
                run_path(model, &consts, grid, sim.refine, &noisy, x, &mut rng, None, st, inc, None)
            })
            .collect()
    };
    // Report the failure of the lowest path index for determinism.
    for r in results {
        r?;
    }
    if m > 0 && nn == 0 {
        increments.clear();
    }
    Ok(PathEnsemble {
        grid: *grid,
        dim: n,
        n_paths: sim.n_paths,
        seed: sim.seed,
        noisy,
        states,
        increments,
        controls,
        log_weight: None,
    })
}

/// Exact OU paths from `(t, x)` to time `s` on `steps` uniform steps.
pub fn sample_ou_exact(
    model: &SpectralModel,
    t: f64,
    x: &[f64],
    s: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if s < t {
        return Err(Error::InvalidTime {
            t: s,
            reason: format!("end time precedes the start {t}"),
        });
    }
    let steps = if s == t { 0 } else { steps.max(1) };
    let grid = TimeGrid::new(t, s, steps)?;
    simulate(model, x, &grid, SimConfig::new(n_paths, seed), None)
}

/// Exact OU paths on a given grid.
pub fn sample_ou_grid(model: &SpectralModel, x: &[f64], grid: &TimeGrid, sim: SimConfig) -> Result<PathEnsemble> {
    simulate(model, x, grid, sim, None)
}

/// Controlled paths with exponential Euler and frozen control per step.
pub fn simulate_controlled(
    model: &SpectralModel,
    policy: &dyn Policy,
    actuation: Actuation,
    x: &[f64],
    grid: &TimeGrid,
    sim: SimConfig,
) -> Result<PathEnsemble> {
    if grid.steps > 0 && grid.h() > model.horizon() / 10.0 * (1.0 + 1e-12) {
        return Err(invalid("h", "controlled simulation needs h <= T/10"));
    }
    simulate(
        model,
        x,
        grid,
        sim,
        Some(Controlled { policy, actuation }),
    )
}

/// Log Girsanov weights turning the uncontrolled ensemble into the law of the
/// OU process with drift `sqrt(Q) G`:
/// `log rho = sum_i <G(t_i, X_i), dW_i> - 1/2 sum_i |G(t_i, X_i)|^2 h`,
/// summed over noisy modes. `E[rho f(X)] = E[f(X^G)]` holds exactly for the
/// discrete scheme because both use the same frozen drift.
pub fn girsanov_logweight(ens: &PathEnsemble, drift: &dyn Policy, bound: f64) -> Result<Vec<f64>> {
    let h = ens.grid.h();
    let n = ens.dim;
    let res: Vec<Result<f64>> = (0..ens.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut g = vec![0.0; n];
            let mut lw = 0.0;
            for i in 0..ens.grid.steps {
                drift.control(ens.grid.time(i), ens.state(p, i), &mut g);
                let nrm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(nrm <= bound) {
                    return Err(Error::DriftBound {
                        step: i,
                        norm: nrm,
                        bound,
                    });
                }
                let dw = ens.increment(p, i);
                for (j, &k) in ens.noisy.iter().enumerate() {
                    lw += g[k] * dw[j] - 0.5 * g[k] * g[k] * h;
                }
            }
            Ok(lw)
        })
        .collect();
    res.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{ModeSpec, NoiseRule};

    fn model() -> SpectralModel {
        SpectralModel::heat_preset(2.0 * std::f64::consts::PI, 3, NoiseRule::White { sigma2: 1.0 }).unwrap()
    }

    #[test]
    fn zero_length_interval_keeps_initial_state() {
        let m = model();
        let e = sample_ou_exact(&m, 0.3, &[1.0, 2.0, 3.0], 0.3, 10, 5, 1).unwrap();
        for p in 0..5 {
            assert_eq!(e.state(p, 0), &[1.0, 2.0, 3.0]);
        }
        assert!(sample_ou_exact(&m, 0.3, &[1.0, 2.0, 3.0], 0.2, 10, 5, 1).is_err());
    }

    #[test]
    fn zero_policy_is_bit_identical_to_exact_sampling() {
        let m = model();
        let x = [0.5, -0.2, 0.1];
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let a = sample_ou_grid(&m, &x, &grid, SimConfig::new(64, 9)).unwrap();
        let b = simulate_controlled(&m, &ZeroPolicy, Actuation::Raw, &x, &grid, SimConfig::new(64, 9)).unwrap();
        for p in 0..64 {
            for i in 0..=20 {
                assert_eq!(a.state(p, i), b.state(p, i));
            }
        }
    }

    #[test]
    fn degenerate_mode_ignores_control() {
        let modes = vec![
            ModeSpec { k: 1, alpha: 0.7, lambda: 2.0 },
            ModeSpec { k: 2, alpha: 1.5, lambda: 0.0 },
        ];
        let m = SpectralModel::custom(modes, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let pol = |_t: f64, _x: &[f64], u: &mut [f64]| {
            u[0] = 0.0;
            u[1] = 0.3;
        };
        let e = simulate_controlled(&m, &pol, Actuation::Raw, &[1.0, 2.0], &grid, SimConfig::new(3, 1)).unwrap();
        let expected = 2.0 * (-1.5f64).exp();
        for p in 0..3 {
            assert!((e.state(p, 10)[1] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_control_response_matches_linear_ode() {
        // With common noise the controlled and uncontrolled paths differ by the
        // solution of y' = -a y + sqrt(lambda) u, y(0) = 0.
        let modes = vec![
            ModeSpec { k: 1, alpha: 0.8, lambda: 0.5 },
            ModeSpec { k: 2, alpha: 2.0, lambda: 1.0 },
        ];
        let m = SpectralModel::custom(modes, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let pol = |_t: f64, _x: &[f64], u: &mut [f64]| {
            u[0] = 0.4;
            u[1] = 0.0;
        };
        let x = [1.0, -0.5];
        let c = simulate_controlled(&m, &pol, Actuation::Raw, &x, &grid, SimConfig::new(8, 3)).unwrap();
        let z = sample_ou_grid(&m, &x, &grid, SimConfig::new(8, 3)).unwrap();
        for p in 0..8 {
            for i in 0..=10 {
                let t = grid.time(i);
                let y = 0.5f64.sqrt() * 0.4 * (1.0 - (-0.8 * t).exp()) / 0.8;
                assert!((c.state(p, i)[0] - z.state(p, i)[0] - y).abs() < 1e-14);
                assert_eq!(c.state(p, i)[1], z.state(p, i)[1]);
            }
        }
    }

    #[test]
    fn inadmissible_control_is_reported_with_step() {
        let m = model();
        let spec = HamiltonianSpec::new(
            crate::hamiltonian::HamiltonianConfig {
                constraint: crate::hamiltonian::ConstraintSet::Ball { radius: 0.5 },
                ..crate::hamiltonian::HamiltonianConfig::quadratic()
            },
            3,
        )
        .unwrap();
        let pol = |t: f64, _x: &[f64], u: &mut [f64]| {
            u.iter_mut().for_each(|v| *v = 0.0);
            if t > 0.45 {
                u[0] = 1.0;
            }
        };
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        match simulate_controlled(&m, &pol, Actuation::Spec(&spec), &[0.0; 3], &grid, SimConfig::new(4, 1)) {
            Err(Error::InadmissibleControl { step, .. }) => assert_eq!(step, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_drift_gives_zero_weight() {
        let m = model();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let e = sample_ou_grid(&m, &[0.0; 3], &grid, SimConfig::new(10, 2)).unwrap();
        let w = girsanov_logweight(&e, &ZeroPolicy, 1.0).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
        let big = |_t: f64, _x: &[f64], g: &mut [f64]| g.iter_mut().for_each(|v| *v = 5.0);
        assert!(girsanov_logweight(&e, &big, 1.0).is_err());
    }

    #[test]
    fn refined_noise_preserves_the_law() {
        // Aggregated fine pairs reproduce the coarse-step variance of I and dW.
        let modes = vec![ModeSpec { k: 1, alpha: 3.0, lambda: 1.0 }];
        let m = SpectralModel::custom(modes, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 0.5, 1).unwrap();
        let n = 100_000;
        let e = sample_ou_grid(&m, &[0.0], &grid, SimConfig::new(n, 5).with_refine(8)).unwrap();
        let (mut sx, mut sw, mut sxw) = (0.0, 0.0, 0.0);
        for p in 0..n {
            let x = e.state(p, 1)[0];
            let w = e.increment(p, 0)[0];
            sx += x * x;
            sw += w * w;
            sxw += x * w;
        }
        let nf = n as f64;
        let q = m.modes()[0].variance(0.5);
        assert!((sx / nf / q - 1.0).abs() < 0.02);
        assert!((sw / nf / 0.5 - 1.0).abs() < 0.02);
        let cov = mode_response(3.0, 0.5);
        assert!((sxw / nf / cov - 1.0).abs() < 0.03);
    }
}
