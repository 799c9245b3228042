//! Cylindrical test functions: bounded functions of finitely many modes.
//!
//! Terminal and running costs come from a closed catalog so that configs are
//! reproducible bit for bit. Mode indices in configs are 1-based positions in
//! the model's mode list; internally everything is 0-based.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A bounded function on the coordinate space that depends on a few modes.
pub trait ScalarField: Sync + Send {
    fn eval(&self, x: &[f64]) -> f64;

    /// Sorted 0-based coordinates the function depends on.
    fn support(&self) -> Vec<usize>;

    /// A bound on `sup |f|`.
    fn sup_bound(&self) -> f64;

    /// A bound on the Euclidean Lipschitz constant, if the function is Lipschitz.
    fn lipschitz_bound(&self) -> Option<f64>;

    fn is_differentiable(&self) -> bool {
        false
    }

    /// Adds the gradient at `x` into `out` (all coordinates). Only meaningful
    /// when [`ScalarField::is_differentiable`] holds.
    fn add_gradient(&self, _x: &[f64], _out: &mut [f64]) {}

    /// Candidate nonsmooth points along a support coordinate (used to seed
    /// one-dimensional minimisations).
    fn kinks(&self, _coord: usize) -> Vec<f64> {
        Vec::new()
    }

    /// Nonsmooth points along `coord` with the other coordinates fixed at `x`.
    fn slice_kinks(&self, coord: usize, _x: &[f64]) -> Vec<f64> {
        self.kinks(coord)
    }

    /// Bound on `sup f - inf f`.
    fn oscillation_bound(&self) -> f64 {
        2.0 * self.sup_bound()
    }
}

/// The catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CylFunction {
    Constant {
        c: f64,
    },
    /// `tanh(a x_j + b)`.
    LinearTanh {
        a: f64,
        #[serde(default)]
        b: f64,
        mode: usize,
    },
    /// `min(1, |x_j|^r)` with `r` in `(0, 1]`.
    ClippedPower {
        r: f64,
        mode: usize,
    },
    /// `min(cap, 1/2 sum_j c_j x_j^2)` with `c_j >= 0`.
    QuadraticForm {
        modes: Vec<usize>,
        coeffs: Vec<f64>,
        cap: f64,
    },
    Product {
        factors: Vec<CylFunction>,
    },
    Sum {
        terms: Vec<CylFunction>,
    },
}

impl CylFunction {
    pub fn constant(c: f64) -> Self {
        Self::Constant { c }
    }

    /// `tanh(a x_mode + b)` with a 1-based mode.
    pub fn tanh(a: f64, b: f64, mode: usize) -> Self {
        Self::LinearTanh { a, b, mode }
    }

    pub fn clipped_power(r: f64, mode: usize) -> Self {
        Self::ClippedPower { r, mode }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self::Product {
            factors: vec![Self::constant(factor), self],
        }
    }

    pub fn shifted(self, c: f64) -> Self {
        Self::Sum {
            terms: vec![self, Self::constant(c)],
        }
    }

    /// Checks parameters against the catalog rules and a model dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let check_mode = |mode: usize| {
            if mode == 0 || mode > dim {
                Err(invalid("mode", format!("mode {mode} outside 1..={dim}")))
            } else {
                Ok(())
            }
        };
        match self {
            Self::Constant { c } => {
                if !c.is_finite() {
                    return Err(invalid("c", "constant must be finite"));
                }
            }
            Self::LinearTanh { a, b, mode } => {
                if !a.is_finite() || !b.is_finite() {
                    return Err(invalid("a", "tanh parameters must be finite"));
                }
                check_mode(*mode)?;
            }
            Self::ClippedPower { r, mode } => {
                if !(*r > 0.0 && *r <= 1.0) {
                    return Err(invalid("r", "exponent must lie in (0, 1]"));
                }
                check_mode(*mode)?;
            }
            Self::QuadraticForm { modes, coeffs, cap } => {
                if modes.is_empty() || modes.len() != coeffs.len() {
                    return Err(invalid("coeffs", "one coefficient per mode is required"));
                }
                if coeffs.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
                    return Err(invalid("coeffs", "coefficients must be nonnegative"));
                }
                if !(*cap > 0.0) || !cap.is_finite() {
                    return Err(invalid("cap", "cap must be positive and finite"));
                }
                for &m in modes {
                    check_mode(m)?;
                }
            }
            Self::Product { factors } => {
                if factors.is_empty() {
                    return Err(invalid("factors", "empty product"));
                }
                for f in factors {
                    f.validate(dim)?;
                }
            }
            Self::Sum { terms } => {
                if terms.is_empty() {
                    return Err(invalid("terms", "empty sum"));
                }
                for f in terms {
                    f.validate(dim)?;
                }
            }
        }
        Ok(())
    }

    /// `sup |f| + Lip(f)`, or `None` for non-Lipschitz entries.
    pub fn lipschitz_norm(&self) -> Option<f64> {
        self.lipschitz_bound().map(|l| l + self.sup_bound())
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Self::Constant { .. } => true,
            Self::Product { factors } => factors.iter().all(|f| f.is_constant()),
            Self::Sum { terms } => terms.iter().all(|f| f.is_constant()),
            _ => false,
        }
    }
}

impl ScalarField for CylFunction {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant { c } => *c,
            Self::LinearTanh { a, b, mode } => (a * x[mode - 1] + b).tanh(),
            Self::ClippedPower { r, mode } => x[mode - 1].abs().powf(*r).min(1.0),
            Self::QuadraticForm { modes, coeffs, cap } => {
                let s: f64 = modes
                    .iter()
                    .zip(coeffs)
                    .map(|(&m, &c)| c * x[m - 1] * x[m - 1])
                    .sum();
                (0.5 * s).min(*cap)
            }
            Self::Product { factors } => factors.iter().map(|f| f.eval(x)).product(),
            Self::Sum { terms } => terms.iter().map(|f| f.eval(x)).sum(),
        }
    }

    fn support(&self) -> Vec<usize> {
        let mut s = match self {
            Self::Constant { .. } => vec![],
            Self::LinearTanh { mode, .. } | Self::ClippedPower { mode, .. } => vec![mode - 1],
            Self::QuadraticForm { modes, .. } => modes.iter().map(|m| m - 1).collect(),
            Self::Product { factors: fs } | Self::Sum { terms: fs } => {
                fs.iter().flat_map(|f| f.support()).collect()
            }
        };
        s.sort_unstable();
        s.dedup();
        s
    }

    fn sup_bound(&self) -> f64 {
        match self {
            Self::Constant { c } => c.abs(),
            Self::LinearTanh { .. } | Self::ClippedPower { .. } => 1.0,
            Self::QuadraticForm { cap, .. } => *cap,
            Self::Product { factors } => factors.iter().map(|f| f.sup_bound()).product(),
            Self::Sum { terms } => terms.iter().map(|f| f.sup_bound()).sum(),
        }
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        match self {
            Self::Constant { .. } => Some(0.0),
            Self::LinearTanh { a, .. } => Some(a.abs()),
            Self::ClippedPower { r, .. } => (*r >= 1.0).then_some(1.0),
            Self::QuadraticForm { coeffs, cap, .. } => {
                let cmax = coeffs.iter().cloned().fold(0.0, f64::max);
                Some((2.0 * cap * cmax).sqrt())
            }
            Self::Product { factors } => {
                let sups: Vec<f64> = factors.iter().map(|f| f.sup_bound()).collect();
                let mut total = 0.0;
                for (i, f) in factors.iter().enumerate() {
                    let rest: f64 = sups
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, s)| s)
                        .product();
                    total += f.lipschitz_bound()? * rest;
                }
                Some(total)
            }
            Self::Sum { terms } => terms.iter().map(|f| f.lipschitz_bound()).sum(),
        }
    }

    fn is_differentiable(&self) -> bool {
        match self {
            Self::Constant { .. } | Self::LinearTanh { .. } => true,
            Self::ClippedPower { .. } | Self::QuadraticForm { .. } => false,
            Self::Product { factors: fs } | Self::Sum { terms: fs } => {
                fs.iter().all(|f| f.is_differentiable())
            }
        }
    }

    fn add_gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Constant { .. } => {}
            Self::LinearTanh { a, b, mode } => {
                let t = (a * x[mode - 1] + b).tanh();
                out[mode - 1] += a * (1.0 - t * t);
            }
            Self::ClippedPower { r, mode } => {
                // Derivative where it exists; zero on the clipped region and at 0.
                let y = x[mode - 1];
                if y != 0.0 && y.abs() < 1.0 {
                    out[mode - 1] += r * y.abs().powf(r - 1.0) * y.signum();
                }
            }
            Self::QuadraticForm { modes, coeffs, cap } => {
                if self.eval(x) < *cap {
                    for (&m, &c) in modes.iter().zip(coeffs) {
                        out[m - 1] += c * x[m - 1];
                    }
                }
            }
            Self::Product { factors } => {
                let vals: Vec<f64> = factors.iter().map(|f| f.eval(x)).collect();
                let mut g = vec![0.0; out.len()];
                for (i, f) in factors.iter().enumerate() {
                    let rest: f64 = vals
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, v)| v)
                        .product();
                    g.iter_mut().for_each(|v| *v = 0.0);
                    f.add_gradient(x, &mut g);
                    for (o, gi) in out.iter_mut().zip(&g) {
                        *o += rest * gi;
                    }
                }
            }
            Self::Sum { terms } => {
                for f in terms {
                    f.add_gradient(x, out);
                }
            }
        }
    }

    fn kinks(&self, coord: usize) -> Vec<f64> {
        let mut k = match self {
            Self::ClippedPower { mode, .. } if mode - 1 == coord => vec![-1.0, 0.0, 1.0],
            // Extent of the capped region, where slices change shape.
            Self::QuadraticForm { modes, coeffs, cap } => match modes.iter().position(|&m| m - 1 == coord) {
                Some(i) if coeffs[i] > 0.0 => {
                    let s = (2.0 * cap / coeffs[i]).sqrt();
                    vec![-s, s]
                }
                _ => vec![],
            },
            Self::Product { factors: fs } | Self::Sum { terms: fs } => {
                fs.iter().flat_map(|f| f.kinks(coord)).collect()
            }
            _ => vec![],
        };
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }

    fn slice_kinks(&self, coord: usize, x: &[f64]) -> Vec<f64> {
        let mut k = match self {
            Self::QuadraticForm { modes, coeffs, cap } => match modes.iter().position(|&m| m - 1 == coord) {
                Some(i) if coeffs[i] > 0.0 => {
                    let rest: f64 = modes
                        .iter()
                        .zip(coeffs)
                        .filter(|(&m, _)| m - 1 != coord)
                        .map(|(&m, &c)| 0.5 * c * x[m - 1] * x[m - 1])
                        .sum();
                    if rest < *cap {
                        let s = (2.0 * (cap - rest) / coeffs[i]).sqrt();
                        vec![-s, s]
                    } else {
                        vec![]
                    }
                }
                _ => vec![],
            },
            Self::Product { factors: fs } | Self::Sum { terms: fs } => {
                fs.iter().flat_map(|f| f.slice_kinks(coord, x)).collect()
            }
            _ => self.kinks(coord),
        };
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }

    fn oscillation_bound(&self) -> f64 {
        match self {
            Self::Constant { .. } => 0.0,
            Self::ClippedPower { .. } => 1.0,
            Self::QuadraticForm { cap, .. } => *cap,
            _ => 2.0 * self.sup_bound(),
        }
    }
}

/// Gradient of a differentiable field as a fresh vector.
pub fn gradient(f: &dyn ScalarField, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    f.add_gradient(x, &mut g);
    g
}
