//! The Hamiltonian `psi(z) = inf_{u in K} { g(u) + <z, R u> }`.
//!
//! Power costs on the full space or a centred ball reduce to a radial problem
//! in `w = R z` and have a closed form. Other radial costs use golden-section
//! search on the radial profile; box constraints use multi-start projected
//! gradient descent. All constants of the growth lemma (search radius, lower
//! growth, local Lipschitz) are computed by scans when the spec is built.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optim::{bisect, golden_section};

/// Anything usable as a driver by the solvers.
pub trait Hamiltonian: Sync + Send {
    fn psi(&self, z: &[f64]) -> f64;

    /// Gradient of `psi` (a subgradient element where it is not smooth).
    fn grad_into(&self, z: &[f64], out: &mut [f64]);

    /// Conjugate exponent `p` of the growth `|psi(z)| <= C (1 + |z|^p)`.
    fn growth_exponent(&self) -> f64;

    /// `sup_{|z| <= r} |grad psi(z)|`.
    fn lipschitz_on_ball(&self, r: f64) -> f64;

    /// True for `psi(z) = -|z|^2/4`, the case with a Hopf-Cole reference.
    fn is_standard_quadratic(&self) -> bool {
        false
    }

    fn grad(&self, z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; z.len()];
        self.grad_into(z, &mut g);
        g
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostSpec {
    /// `coeff |u|^q`.
    Power { coeff: f64 },
    /// `coeff ((|u|^2 + eps^2)^{q/2} - eps^q)`, smooth at the origin.
    SmoothedPower { coeff: f64, eps: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControlMap {
    Identity,
    /// `R u = (r_k u_k)_k`.
    Diagonal { scales: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConstraintSet {
    Full,
    Ball { radius: f64 },
    Box { bound: f64 },
}

/// Serializable description of a Hamiltonian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianConfig {
    pub q: f64,
    #[serde(default = "default_cost")]
    pub cost: CostSpec,
    #[serde(default = "default_map", rename = "R")]
    pub map: ControlMap,
    #[serde(default = "default_constraint", rename = "K")]
    pub constraint: ConstraintSet,
}

fn default_cost() -> CostSpec {
    CostSpec::Power { coeff: 1.0 }
}
fn default_map() -> ControlMap {
    ControlMap::Identity
}
fn default_constraint() -> ConstraintSet {
    ConstraintSet::Full
}

impl HamiltonianConfig {
    pub fn power(q: f64) -> Self {
        Self {
            q,
            cost: default_cost(),
            map: default_map(),
            constraint: default_constraint(),
        }
    }

    pub fn quadratic() -> Self {
        Self::power(2.0)
    }
}

/// A validated Hamiltonian over an `dim`-dimensional control space.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSpec {
    config: HamiltonianConfig,
    dim: usize,
    q: f64,
    scales: Vec<f64>,
    c_rad: f64,
    c_lower: f64,
    c_lip: f64,
}

/// Minimiser together with a flag that a constraint is active.
#[derive(Clone, Debug, PartialEq)]
pub struct Argmin {
    pub u: Vec<f64>,
    pub value: f64,
    pub constrained: bool,
}

const SCAN_MAX: f64 = 1e6;

impl HamiltonianSpec {
    pub fn new(config: HamiltonianConfig, dim: usize) -> Result<Self> {
        let q = config.q;
        if !(q > 1.0 && q <= 2.0) {
            return Err(invalid("q", "exponent must lie in (1, 2]"));
        }
        if dim == 0 {
            return Err(invalid("dim", "control space must be nonempty"));
        }
        match &config.cost {
            CostSpec::Power { coeff } => {
                if !(*coeff > 0.0) || !coeff.is_finite() {
                    return Err(invalid("coeff", "cost coefficient must be positive"));
                }
            }
            CostSpec::SmoothedPower { coeff, eps } => {
                if !(*coeff > 0.0) || !(*eps > 0.0) || !coeff.is_finite() || !eps.is_finite() {
                    return Err(invalid("coeff", "cost coefficient and eps must be positive"));
                }
            }
        }
        let scales = match &config.map {
            ControlMap::Identity => vec![1.0; dim],
            ControlMap::Diagonal { scales } => {
                if scales.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: scales.len(),
                    });
                }
                if scales.iter().any(|s| !s.is_finite()) {
                    return Err(invalid("scales", "control map scales must be finite"));
                }
                scales.clone()
            }
        };
        match config.constraint {
            ConstraintSet::Full => {}
            ConstraintSet::Ball { radius: r } | ConstraintSet::Box { bound: r } => {
                if !(r >= 0.0) || !r.is_finite() {
                    return Err(invalid("radius", "constraint size must be nonnegative"));
                }
            }
        }
        let mut spec = Self {
            config,
            dim,
            q,
            scales,
            c_rad: 0.0,
            c_lower: 0.0,
            c_lip: 0.0,
        };
        spec.c_rad = spec.scan_radius_constant();
        spec.c_lower = spec.scan_lower_constant();
        spec.c_lip = spec.scan_lipschitz_constant();
        spec.check_growth()?;
        Ok(spec)
    }

    pub fn config(&self) -> &HamiltonianConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `p = q / (q - 1)`.
    pub fn p(&self) -> f64 {
        self.q / (self.q - 1.0)
    }

    /// Radius constant: minimisers satisfy `|u| <= c_rad (1 + |z|^{p-1})`.
    pub fn radius_constant(&self) -> f64 {
        self.c_rad
    }

    /// Lower growth: `psi(z) >= -c (1 + |z|^p)`.
    pub fn lower_growth_constant(&self) -> f64 {
        self.c_lower
    }

    /// Local Lipschitz: `|psi(z1) - psi(z2)| <= c (1 + |z1|^{p-1} + |z2|^{p-1}) |z1 - z2|`.
    pub fn local_lipschitz_constant(&self) -> f64 {
        self.c_lip
    }

    pub fn search_radius(&self, znorm: f64) -> f64 {
        self.c_rad * (1.0 + znorm.powf(self.p() - 1.0))
    }

    fn max_scale(&self) -> f64 {
        self.scales.iter().map(|s| s.abs()).fold(0.0, f64::max)
    }

    /// Radial cost profile `g(s)` for `|u| = s`.
    fn radial_cost(&self, s: f64) -> f64 {
        match self.config.cost {
            CostSpec::Power { coeff } => coeff * s.powf(self.q),
            CostSpec::SmoothedPower { coeff, eps } => {
                coeff * ((s * s + eps * eps).powf(0.5 * self.q) - eps.powf(self.q))
            }
        }
    }

    fn radial_cost_derivative(&self, s: f64) -> f64 {
        match self.config.cost {
            CostSpec::Power { coeff } => coeff * self.q * s.powf(self.q - 1.0),
            CostSpec::SmoothedPower { coeff, eps } => {
                coeff * self.q * s * (s * s + eps * eps).powf(0.5 * self.q - 1.0)
            }
        }
    }

    /// Control cost `g(u)`.
    pub fn cost(&self, u: &[f64]) -> f64 {
        self.radial_cost(norm(u))
    }

    /// `R u`.
    pub fn apply_map(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.scales).map(|(a, s)| a * s).collect()
    }

    pub fn apply_map_into(&self, u: &[f64], out: &mut [f64]) {
        for ((o, a), s) in out.iter_mut().zip(u).zip(&self.scales) {
            *o = a * s;
        }
    }

    /// Membership in `K` up to a relative tolerance.
    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        match self.config.constraint {
            ConstraintSet::Full => u.iter().all(|v| v.is_finite()),
            ConstraintSet::Ball { radius } => norm(u) <= radius * (1.0 + tol) + tol,
            ConstraintSet::Box { bound } => u.iter().all(|v| v.abs() <= bound * (1.0 + tol) + tol),
        }
    }

    /// `g(u) + <z, R u>`.
    pub fn objective(&self, z: &[f64], u: &[f64]) -> f64 {
        let lin: f64 = z
            .iter()
            .zip(u)
            .zip(&self.scales)
            .map(|((a, b), s)| a * b * s)
            .sum();
        self.cost(u) + lin
    }

    fn w(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.scales).map(|(a, s)| a * s).collect()
    }

    fn radial_limit(&self) -> f64 {
        match self.config.constraint {
            ConstraintSet::Ball { radius } => radius,
            _ => f64::INFINITY,
        }
    }

    fn has_closed_form(&self) -> bool {
        matches!(self.config.cost, CostSpec::Power { .. })
            && !matches!(self.config.constraint, ConstraintSet::Box { .. })
    }

    /// Unconstrained radial minimiser of `g(s) - s a` for the power cost.
    fn power_radius(&self, a: f64) -> f64 {
        let CostSpec::Power { coeff } = self.config.cost else {
            unreachable!("closed form used only for the power cost")
        };
        (a / (coeff * self.q)).powf(1.0 / (self.q - 1.0))
    }

    /// Minimiser and value of `psi`.
    pub fn argmin(&self, z: &[f64]) -> Argmin {
        if self.has_closed_form() {
            self.argmin_closed_form(z)
        } else {
            self.argmin_numeric(z)
        }
    }

    fn argmin_closed_form(&self, z: &[f64]) -> Argmin {
        let w = self.w(z);
        let a = norm(&w);
        if a == 0.0 {
            return Argmin {
                u: vec![0.0; self.dim],
                value: 0.0,
                constrained: false,
            };
        }
        let free = self.power_radius(a);
        let limit = self.radial_limit();
        let s = free.min(limit);
        let value = if s == free {
            -(self.q - 1.0) / self.q * s * a
        } else {
            self.radial_cost(s) - s * a
        };
        Argmin {
            u: w.iter().map(|v| -s * v / a).collect(),
            value,
            constrained: free > limit,
        }
    }

    /// Purely numerical minimisation, used as an oracle for the closed form.
    pub fn argmin_numeric(&self, z: &[f64]) -> Argmin {
        match self.config.constraint {
            ConstraintSet::Box { bound } => self.argmin_box(z, bound),
            _ => self.argmin_radial(z),
        }
    }

    fn argmin_radial(&self, z: &[f64]) -> Argmin {
        let w = self.w(z);
        let a = norm(&w);
        if a == 0.0 {
            return Argmin {
                u: vec![0.0; self.dim],
                value: 0.0,
                constrained: false,
            };
        }
        let hi = self.search_radius(norm(z)).min(self.radial_limit());
        let (s, v) = golden_section(|s| self.radial_cost(s) - s * a, 0.0, hi, 1e-15 * (1.0 + hi));
        // Failing to improve on u = 0 keeps psi(0)-level value 0.
        if !(v < 0.0) {
            return Argmin {
                u: vec![0.0; self.dim],
                value: 0.0,
                constrained: false,
            };
        }
        Argmin {
            u: w.iter().map(|x| -s * x / a).collect(),
            value: v,
            constrained: s >= self.radial_limit() * (1.0 - 1e-12),
        }
    }

    fn argmin_box(&self, z: &[f64], bound: f64) -> Argmin {
        let w = self.w(z);
        if norm(&w) == 0.0 || bound == 0.0 {
            return Argmin {
                u: vec![0.0; self.dim],
                value: 0.0,
                constrained: false,
            };
        }
        let radius = self.search_radius(norm(z));
        let project = |u: &mut [f64]| {
            for v in u.iter_mut() {
                *v = v.clamp(-bound, bound);
            }
            let n = norm(u);
            if n > radius {
                u.iter_mut().for_each(|v| *v *= radius / n);
            }
        };
        let obj = |u: &[f64]| self.radial_cost(norm(u)) + dot(&w, u);
        let mut best: Option<(Vec<f64>, f64)> = None;
        // Eight deterministic starts: the origin, the clipped steepest-descent
        // direction at several scales and sign-pattern corners.
        let wn = norm(&w);
        let mut starts: Vec<Vec<f64>> = vec![vec![0.0; self.dim]];
        for scale in [0.25, 1.0, 4.0] {
            let s = scale * self.power_like_radius(wn);
            starts.push(w.iter().map(|x| -s * x / wn).collect());
        }
        starts.push(w.iter().map(|x| -bound * x.signum()).collect());
        starts.push(w.iter().map(|x| -0.5 * bound * x.signum()).collect());
        starts.push(w.iter().map(|x| -bound * x / wn).collect());
        starts.push(
            w.iter()
                .map(|x| if x.abs() >= 0.5 * wn { -bound * x.signum() } else { 0.0 })
                .collect(),
        );
        for mut u in starts {
            project(&mut u);
            let mut f = obj(&u);
            let mut step = 1.0;
            for _ in 0..2000 {
                let n = norm(&u);
                let gscale = if n > 0.0 { self.radial_cost_derivative(n) / n } else { 0.0 };
                let g: Vec<f64> = u.iter().zip(&w).map(|(a, b)| gscale * a + b).collect();
                let mut improved = false;
                while step > 1e-16 {
                    let mut cand: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a - step * b).collect();
                    project(&mut cand);
                    let fc = obj(&cand);
                    if fc < f - 1e-16 * (1.0 + f.abs()) {
                        let moved = cand.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                        u = cand;
                        f = fc;
                        improved = moved > 1e-15;
                        step *= 1.5;
                        break;
                    }
                    step *= 0.5;
                }
                if !improved {
                    break;
                }
            }
            if best.as_ref().is_none_or(|b| f < b.1) {
                best = Some((u, f));
            }
        }
        let (u, v) = best.expect("at least one start");
        if !(v < 0.0) {
            return Argmin {
                u: vec![0.0; self.dim],
                value: 0.0,
                constrained: false,
            };
        }
        let constrained = u.iter().any(|x| x.abs() >= bound * (1.0 - 1e-9));
        Argmin { u, value: v, constrained }
    }

    /// Radius of the unconstrained radial minimiser for any radial cost.
    fn power_like_radius(&self, a: f64) -> f64 {
        if a == 0.0 {
            return 0.0;
        }
        let hi = self.search_radius(a / self.max_scale().max(1e-300));
        golden_section(|s| self.radial_cost(s) - s * a, 0.0, hi.max(1e-12), 1e-14 * (1.0 + hi)).0
    }

    /// `psi(z)`.
    pub fn psi_eval(&self, z: &[f64]) -> f64 {
        self.argmin(z).value
    }

    /// `psi(z)` through the numerical path only.
    pub fn psi_numeric(&self, z: &[f64]) -> f64 {
        self.argmin_numeric(z).value
    }

    /// Gradient by the envelope theorem, `R gamma(z)`, and whether a constraint is active.
    pub fn psi_grad(&self, z: &[f64]) -> (Vec<f64>, bool) {
        let a = self.argmin(z);
        (self.apply_map(&a.u), a.constrained)
    }

    /// Minimal-norm minimiser `gamma(z)`.
    pub fn gamma_argmin(&self, z: &[f64]) -> Vec<f64> {
        self.argmin(z).u
    }

    /// `psi` along the worst direction for the diagonal map, as a function of `|z|`.
    fn radial_psi(&self, r: f64) -> f64 {
        let mut z = vec![0.0; self.dim];
        let k = (0..self.dim)
            .max_by(|&a, &b| self.scales[a].abs().total_cmp(&self.scales[b].abs()))
            .unwrap_or(0);
        z[k] = r;
        self.psi_eval(&z)
    }

    fn scan_grid() -> Vec<f64> {
        let n = 240;
        (0..=n)
            .map(|i| 10f64.powf(-6.0 + 12.0 * i as f64 / n as f64))
            .collect()
    }

    /// Constructive search radius: beyond `s0(|z|)` the objective provably
    /// exceeds its value at `u = 0`, since `g(s) - r_max |z| s > 0` there.
    fn scan_radius_constant(&self) -> f64 {
        let rmax = self.max_scale();
        let p = self.p();
        let mut c: f64 = 0.0;
        for r in Self::scan_grid().into_iter().filter(|&r| r <= SCAN_MAX) {
            let a = rmax * r;
            if a == 0.0 {
                continue;
            }
            // g(s)/s is increasing for these convex costs; find g(s0) = a s0.
            let mut hi = 1.0;
            while self.radial_cost(hi) <= a * hi {
                hi *= 2.0;
            }
            let s0 = bisect(|s| self.radial_cost(s) - a * s, 1e-300, hi, 1e-14 * hi);
            c = c.max(s0 / (1.0 + r.powf(p - 1.0)));
        }
        (c * 1.01).max(1e-12)
    }

    fn scan_lower_constant(&self) -> f64 {
        let p = self.p();
        let mut c: f64 = 0.0;
        for r in Self::scan_grid().into_iter().filter(|&r| r <= 1e3) {
            c = c.max(-self.radial_psi(r) / (1.0 + r.powf(p)));
        }
        c * 1.01
    }

    fn scan_lipschitz_constant(&self) -> f64 {
        let p = self.p();
        let rmax = self.max_scale();
        let mut c: f64 = 0.0;
        for r in Self::scan_grid().into_iter().filter(|&r| r <= 1e3) {
            let mut z = vec![0.0; self.dim];
            let k = (0..self.dim)
                .max_by(|&a, &b| self.scales[a].abs().total_cmp(&self.scales[b].abs()))
                .unwrap_or(0);
            z[k] = r;
            let g = norm(&self.psi_grad(&z).0);
            c = c.max(g / (1.0 + r.powf(p - 1.0)));
        }
        if matches!(self.config.constraint, ConstraintSet::Box { .. }) {
            c = c.max(rmax * self.c_rad);
        }
        c * 1.01
    }

    /// Sampled check of `0 <= g(u) <= c (1 + |u|)^q` and the lower power growth.
    fn check_growth(&self) -> Result<()> {
        let (coeff, lower) = match self.config.cost {
            CostSpec::Power { coeff } => (coeff, coeff),
            CostSpec::SmoothedPower { coeff, eps } => (coeff * (1.0 + eps).powf(self.q), coeff),
        };
        for i in 0..200 {
            let s = 10f64.powf(-4.0 + 8.0 * i as f64 / 199.0);
            let g = self.radial_cost(s);
            if !(g >= 0.0) || g > coeff * (1.0 + s).powf(self.q) * (1.0 + 1e-12) {
                return Err(invalid("cost", format!("growth bound fails at |u| = {s}")));
            }
            if s >= 10.0 && g < 0.5 * lower * s.powf(self.q) {
                return Err(invalid("cost", format!("lower growth fails at |u| = {s}")));
            }
        }
        Ok(())
    }
}

impl Hamiltonian for HamiltonianSpec {
    fn psi(&self, z: &[f64]) -> f64 {
        self.psi_eval(z)
    }

    fn grad_into(&self, z: &[f64], out: &mut [f64]) {
        let a = self.argmin(z);
        self.apply_map_into(&a.u, out);
    }

    fn growth_exponent(&self) -> f64 {
        self.p()
    }

    fn lipschitz_on_ball(&self, r: f64) -> f64 {
        // |grad psi| = |R gamma| grows with |z| along the worst direction.
        let n = 64;
        (0..=n)
            .map(|i| {
                let rr = r * i as f64 / n as f64;
                let mut z = vec![0.0; self.dim];
                let k = (0..self.dim)
                    .max_by(|&a, &b| self.scales[a].abs().total_cmp(&self.scales[b].abs()))
                    .unwrap_or(0);
                z[k] = rr;
                norm(&self.psi_grad(&z).0)
            })
            .fold(0.0, f64::max)
    }

    fn is_standard_quadratic(&self) -> bool {
        self.q == 2.0
            && self.config.cost == (CostSpec::Power { coeff: 1.0 })
            && self.scales.iter().all(|&s| s == 1.0)
            && self.config.constraint == ConstraintSet::Full
    }
}

/// `psi(z) = <b, z>`: a driver with constant gradient, used for shifted-OU checks.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHamiltonian {
    pub b: Vec<f64>,
}

impl Hamiltonian for LinearHamiltonian {
    fn psi(&self, z: &[f64]) -> f64 {
        dot(&self.b, z)
    }

    fn grad_into(&self, _z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
    }

    fn growth_exponent(&self) -> f64 {
        2.0
    }

    fn lipschitz_on_ball(&self, _r: f64) -> f64 {
        norm(&self.b)
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(q: f64, dim: usize) -> HamiltonianSpec {
        HamiltonianSpec::new(HamiltonianConfig::power(q), dim).unwrap()
    }

    #[test]
    fn closed_form_values() {
        let h = spec(2.0, 2);
        assert_eq!(h.psi_eval(&[0.0, 0.0]), 0.0);
        assert!((h.psi_eval(&[1.0, 0.0]) + 0.25).abs() < 1e-15);
        let h = spec(1.5, 3);
        let expected = (1.0f64 / 1.5).powi(2) * (1.0 - 1.5) / 1.5;
        assert!((h.psi_eval(&[0.6, 0.8, 0.0]) - expected).abs() < 1e-14);
        assert!((expected + 0.148148148148).abs() < 1e-11);
        assert!((h.psi_numeric(&[0.6, 0.8, 0.0]) - expected).abs() < 1e-8);
        assert!((h.p() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_and_argmin_quadratic() {
        let h = spec(2.0, 2);
        let (g, flag) = h.psi_grad(&[1.0, 0.0]);
        assert!((g[0] + 0.5).abs() < 1e-15 && g[1] == 0.0 && !flag);
        assert_eq!(h.gamma_argmin(&[0.0, 0.0]), vec![0.0, 0.0]);
        let u = h.gamma_argmin(&[1.0, 0.0]);
        assert!((u[0] + 0.5).abs() < 1e-15 && u[1] == 0.0);
        assert!(h.is_standard_quadratic());
    }

    #[test]
    fn ball_projection() {
        let cfg = HamiltonianConfig {
            constraint: ConstraintSet::Ball { radius: 0.1 },
            ..HamiltonianConfig::quadratic()
        };
        let h = HamiltonianSpec::new(cfg, 2).unwrap();
        let a = h.argmin(&[1.0, 0.0]);
        assert!((a.u[0] + 0.1).abs() < 1e-15 && a.u[1] == 0.0 && a.constrained);
        assert!((a.value - (0.01 - 0.1)).abs() < 1e-15);
        assert!((h.psi_numeric(&[1.0, 0.0]) - a.value).abs() < 1e-12);
    }

    #[test]
    fn zero_radius_ball_gives_zero_hamiltonian() {
        let cfg = HamiltonianConfig {
            constraint: ConstraintSet::Ball { radius: 0.0 },
            ..HamiltonianConfig::quadratic()
        };
        let h = HamiltonianSpec::new(cfg, 3).unwrap();
        assert_eq!(h.psi_eval(&[3.0, -1.0, 2.0]), 0.0);
        assert_eq!(h.grad(&[3.0, -1.0, 2.0]), vec![0.0; 3]);
    }

    #[test]
    fn box_constraint_matches_coordinatewise_oracle() {
        // Quadratic cost and identity map separate per coordinate under a box:
        // u_k = clamp(-z_k/2, -b, b).
        let cfg = HamiltonianConfig {
            constraint: ConstraintSet::Box { bound: 0.3 },
            ..HamiltonianConfig::quadratic()
        };
        let h = HamiltonianSpec::new(cfg, 3).unwrap();
        let z = [1.0, -0.2, 0.5];
        let a = h.argmin(&z);
        let expected: Vec<f64> = z.iter().map(|v| (-v / 2.0f64).clamp(-0.3, 0.3)).collect();
        for (x, e) in a.u.iter().zip(&expected) {
            assert!((x - e).abs() < 1e-7, "{:?} vs {:?}", a.u, expected);
        }
        assert!(a.constrained);
    }

    #[test]
    fn smoothed_cost_is_numerical_and_consistent() {
        let cfg = HamiltonianConfig {
            q: 1.5,
            cost: CostSpec::SmoothedPower { coeff: 1.0, eps: 0.2 },
            ..HamiltonianConfig::power(1.5)
        };
        let h = HamiltonianSpec::new(cfg, 2).unwrap();
        let z = [0.7, -0.4];
        let a = h.argmin(&z);
        // First-order condition g'(s) = |z| along -z.
        let s = norm(&a.u);
        assert!((h.radial_cost_derivative(s) - norm(&z)).abs() < 1e-6);
        assert!(a.value < 0.0);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(HamiltonianSpec::new(HamiltonianConfig::power(2.5), 2).is_err());
        assert!(HamiltonianSpec::new(HamiltonianConfig::power(1.0), 2).is_err());
        let cfg = HamiltonianConfig {
            map: ControlMap::Diagonal { scales: vec![1.0] },
            ..HamiltonianConfig::quadratic()
        };
        assert!(HamiltonianSpec::new(cfg, 2).is_err());
    }

    #[test]
    fn lemma_constants_for_power_cost() {
        // For |u|^q the comparison radius is |z|^{p-1}, so the constant tends
        // to 1; lower growth ((q-1)/q) q^{-(p-1)}; Lipschitz q^{-(p-1)}.
        for q in [1.25, 1.5, 2.0] {
            let h = spec(q, 2);
            let p = h.p();
            assert!(h.radius_constant() >= 0.999 && h.radius_constant() <= 1.02);
            let low = (q - 1.0) / q * q.powf(-(p - 1.0));
            assert!(h.lower_growth_constant() >= low * 0.999);
            assert!(h.local_lipschitz_constant() >= q.powf(-(p - 1.0)) * 0.999);
        }
    }

    #[test]
    fn config_parses_the_documented_form() {
        let json = r#"{"q":2.0,"cost":{"kind":"power","coeff":1.0},"R":"identity","K":{"type":"full"}}"#;
        let cfg: HamiltonianConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg, HamiltonianConfig::quadratic());
        let ball: HamiltonianConfig = serde_json::from_str(r#"{"q":1.5,"K":{"type":"ball","radius":2.0}}"#).unwrap();
        assert_eq!(ball.constraint, ConstraintSet::Ball { radius: 2.0 });
    }

}
