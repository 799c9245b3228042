//! Terminal-data regularisation by inf-convolution (Moreau envelope) and
//! inf-sup convolution.
//!
//! For a bounded `phi` with oscillation `osc`, the minimiser of
//! `phi(y) + c |x - y|^2` lies within `sqrt(osc / c)` of `x`, so a grid over
//! that ball around `x` followed by local golden-section refinement captures
//! the infimum. Only the support coordinates of `phi` take part.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::functions::{CylFunction, ScalarField};
use crate::optim::scan_then_refine;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// `inf_y phi(y) + 2n |x - y|^2`.
    Inf,
    /// `sup_z { inf_y [phi(y) + n/2 |z - y|^2] - n |x - z|^2 }`.
    InfSup,
}

/// Largest support handled by the tensor grid search.
pub const MAX_GRID_SUPPORT: usize = 2;

const GRID_1D: usize = 241;
const GRID_2D: usize = 41;
const OUTER_1D: usize = 61;

/// A catalog function regularised at index `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifiedFunction {
    pub base: CylFunction,
    pub n: f64,
    pub scheme: Scheme,
    /// Set when the support is too large for the grid search and coordinate
    /// descent without a capture guarantee was used instead.
    #[serde(default)]
    pub sampled: bool,
}

impl MollifiedFunction {
    pub fn new(base: CylFunction, n: f64, scheme: Scheme) -> Result<Self> {
        if !(n >= 1.0) || !n.is_finite() {
            return Err(invalid("n", "regularisation index must be >= 1"));
        }
        if base.support().len() > MAX_GRID_SUPPORT {
            return Err(Error::Unsupported(format!(
                "support of size {} exceeds the grid search limit {MAX_GRID_SUPPORT}; use `new_sampled`",
                base.support().len()
            )));
        }
        Ok(Self {
            base,
            n,
            scheme,
            sampled: false,
        })
    }

    /// Builds a regularisation for large supports using coordinate descent.
    pub fn new_sampled(base: CylFunction, n: f64, scheme: Scheme) -> Result<Self> {
        if !(n >= 1.0) || !n.is_finite() {
            return Err(invalid("n", "regularisation index must be >= 1"));
        }
        let sampled = base.support().len() > MAX_GRID_SUPPORT;
        Ok(Self {
            base,
            n,
            scheme,
            sampled,
        })
    }
}

impl ScalarField for MollifiedFunction {
    fn eval(&self, x: &[f64]) -> f64 {
        match self.scheme {
            Scheme::Inf => weighted_inf(&self.base, 2.0 * self.n, x),
            Scheme::InfSup => infsup_value(&self.base, self.n, x),
        }
    }

    fn support(&self) -> Vec<usize> {
        self.base.support()
    }

    fn sup_bound(&self) -> f64 {
        self.base.sup_bound()
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        let reg = 2.0 * (2.0 * self.n * self.base.oscillation_bound()).sqrt();
        Some(match self.base.lipschitz_bound() {
            Some(l) => l.min(reg),
            None => reg,
        })
    }

    fn kinks(&self, _coord: usize) -> Vec<f64> {
        Vec::new()
    }

    fn oscillation_bound(&self) -> f64 {
        self.base.oscillation_bound()
    }
}

/// Terminal data: a catalog function or its regularisation.
#[derive(Clone, Debug, PartialEq)]
pub enum Terminal {
    Plain(CylFunction),
    Mollified(MollifiedFunction),
}

impl Terminal {
    pub fn base(&self) -> &CylFunction {
        match self {
            Terminal::Plain(f) => f,
            Terminal::Mollified(m) => &m.base,
        }
    }

    fn field(&self) -> &dyn ScalarField {
        match self {
            Terminal::Plain(f) => f,
            Terminal::Mollified(m) => m,
        }
    }
}

impl From<CylFunction> for Terminal {
    fn from(f: CylFunction) -> Self {
        Terminal::Plain(f)
    }
}

impl ScalarField for Terminal {
    fn eval(&self, x: &[f64]) -> f64 {
        self.field().eval(x)
    }

    fn support(&self) -> Vec<usize> {
        self.field().support()
    }

    fn sup_bound(&self) -> f64 {
        self.field().sup_bound()
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        self.field().lipschitz_bound()
    }

    fn is_differentiable(&self) -> bool {
        self.field().is_differentiable()
    }

    fn add_gradient(&self, x: &[f64], out: &mut [f64]) {
        self.field().add_gradient(x, out)
    }

    fn kinks(&self, coord: usize) -> Vec<f64> {
        self.field().kinks(coord)
    }

    fn oscillation_bound(&self) -> f64 {
        self.field().oscillation_bound()
    }
}

/// The `mollify` key of a terminal config fragment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifySpec {
    pub scheme: Scheme,
    pub n: f64,
}

impl Serialize for Terminal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::Error as _;
        let mut v = serde_json::to_value(self.base()).map_err(S::Error::custom)?;
        if let (Terminal::Mollified(m), Some(obj)) = (self, v.as_object_mut()) {
            let spec = MollifySpec {
                scheme: m.scheme,
                n: m.n,
            };
            obj.insert(
                "mollify".into(),
                serde_json::to_value(spec).map_err(S::Error::custom)?,
            );
        }
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Terminal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut v = serde_json::Value::deserialize(d)?;
        let spec = match v.as_object_mut().and_then(|o| o.remove("mollify")) {
            Some(m) => Some(serde_json::from_value::<MollifySpec>(m).map_err(D::Error::custom)?),
            None => None,
        };
        let base: CylFunction = serde_json::from_value(v).map_err(D::Error::custom)?;
        match spec {
            None => Ok(Terminal::Plain(base)),
            Some(m) => MollifiedFunction::new_sampled(base, m.n, m.scheme)
                .map(Terminal::Mollified)
                .map_err(D::Error::custom),
        }
    }
}

/// Plain inf-convolution `inf_y phi(y) + 2n |x - y|^2`.
pub fn moreau_envelope(phi: &CylFunction, n: f64, x: &[f64]) -> Result<f64> {
    if !(n >= 1.0) {
        return Err(invalid("n", "regularisation index must be >= 1"));
    }
    if phi.support().len() > MAX_GRID_SUPPORT {
        return Err(Error::Unsupported("support too large for grid search".into()));
    }
    Ok(weighted_inf(phi, 2.0 * n, x))
}

/// Inf-sup convolution `sup_z { inf_y [phi(y) + n/2 |z - y|^2] - n |x - z|^2 }`.
pub fn infsup_convolution(phi: &CylFunction, n: f64, x: &[f64]) -> Result<f64> {
    if !(n >= 1.0) {
        return Err(invalid("n", "regularisation index must be >= 1"));
    }
    if phi.support().len() > MAX_GRID_SUPPORT {
        return Err(Error::Unsupported("support too large for grid search".into()));
    }
    Ok(infsup_value(phi, n, x))
}

/// `inf_y f(y) + c |x - y|^2` over the support coordinates of `f`.
pub(crate) fn weighted_inf(f: &dyn ScalarField, c: f64, x: &[f64]) -> f64 {
    let support = f.support();
    if support.is_empty() {
        return f.eval(x);
    }
    let osc = f.oscillation_bound();
    let r = (osc / c).sqrt() * (1.0 + 1e-9) + 1e-12;
    let mut y = x.to_vec();
    match support.len() {
        1 => {
            let j = support[0];
            let xj = x[j];
            let hints = f.kinks(j);
            let (_, v) = scan_then_refine(
                |t| {
                    y[j] = t;
                    f.eval(&y) + c * (t - xj) * (t - xj)
                },
                xj - r,
                xj + r,
                GRID_1D,
                &hints,
                1e-13 * (1.0 + r),
            );
            v.min(f.eval(x))
        }
        2 => {
            let (j, k) = (support[0], support[1]);
            let (xj, xk) = (x[j], x[k]);
            let obj = |y: &mut Vec<f64>, a: f64, b: f64| {
                y[j] = a;
                y[k] = b;
                f.eval(y) + c * ((a - xj).powi(2) + (b - xk).powi(2))
            };
            let step = 2.0 * r / (GRID_2D - 1) as f64;
            let mut best = (xj, xk, f.eval(x));
            for a in 0..GRID_2D {
                for b in 0..GRID_2D {
                    let (ya, yb) = (xj - r + step * a as f64, xk - r + step * b as f64);
                    if (ya - xj).powi(2) + (yb - xk).powi(2) > r * r * 1.0001 {
                        continue;
                    }
                    let v = obj(&mut y, ya, yb);
                    if v < best.2 {
                        best = (ya, yb, v);
                    }
                }
            }
            coordinate_refine(&mut |y: &mut Vec<f64>, a, b| obj(y, a, b), &mut y, best, step)
        }
        _ => {
            // Coordinate descent without a capture guarantee.
            let mut v = f.eval(x);
            for _ in 0..20 {
                for &j in &support {
                    let xj = x[j];
                    let mut z = y.clone();
                    let base: f64 = support
                        .iter()
                        .filter(|&&k| k != j)
                        .map(|&k| c * (y[k] - x[k]).powi(2))
                        .sum();
                    let (t, vt) = scan_then_refine(
                        |t| {
                            z[j] = t;
                            f.eval(&z) + c * (t - xj).powi(2) + base
                        },
                        xj - r,
                        xj + r,
                        61,
                        &[],
                        1e-12,
                    );
                    if vt < v {
                        v = vt;
                        y[j] = t;
                    }
                }
            }
            v
        }
    }
}

fn coordinate_refine(
    obj: &mut dyn FnMut(&mut Vec<f64>, f64, f64) -> f64,
    y: &mut Vec<f64>,
    start: (f64, f64, f64),
    step: f64,
) -> f64 {
    let (mut a, mut b, mut v) = start;
    let mut width = step;
    for _ in 0..40 {
        let bb = b;
        let (na, va) = crate::optim::golden_section(|t| obj(y, t, bb), a - width, a + width, 1e-13);
        if va < v {
            a = na;
            v = va;
        }
        let aa = a;
        let (nb, vb) = crate::optim::golden_section(|t| obj(y, aa, t), b - width, b + width, 1e-13);
        if vb < v {
            b = nb;
            v = vb;
        }
        width *= 0.7;
        if width < 1e-10 {
            break;
        }
    }
    v
}

fn infsup_value(f: &CylFunction, n: f64, x: &[f64]) -> f64 {
    let support = f.support();
    if support.is_empty() {
        return f.eval(x);
    }
    let osc = f.oscillation_bound();
    let r = (osc / n).sqrt() * (1.0 + 1e-9) + 1e-12;
    let inner = |z: &[f64]| weighted_inf(f, 0.5 * n, z);
    let mut z = x.to_vec();
    match support.len() {
        1 => {
            let j = support[0];
            let xj = x[j];
            let (_, v) = scan_then_refine(
                |t| {
                    z[j] = t;
                    -(inner(&z) - n * (t - xj) * (t - xj))
                },
                xj - r,
                xj + r,
                OUTER_1D,
                &[xj],
                1e-11 * (1.0 + r),
            );
            -v
        }
        _ => {
            // Sup over points of a coarse grid with coordinate refinement.
            let (j, k) = (support[0], support[1]);
            let (xj, xk) = (x[j], x[k]);
            let m = 15;
            let step = 2.0 * r / (m - 1) as f64;
            let mut obj = |z: &mut Vec<f64>, a: f64, b: f64| {
                z[j] = a;
                z[k] = b;
                -(inner(z) - n * ((a - xj).powi(2) + (b - xk).powi(2)))
            };
            let mut best = (xj, xk, obj(&mut z, xj, xk));
            for a in 0..m {
                for b in 0..m {
                    let (za, zb) = (xj - r + step * a as f64, xk - r + step * b as f64);
                    let v = obj(&mut z, za, zb);
                    if v < best.2 {
                        best = (za, zb, v);
                    }
                }
            }
            -coordinate_refine(&mut obj, &mut z, best, step)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clipped_abs() -> CylFunction {
        CylFunction::clipped_power(1.0, 1)
    }

    #[test]
    fn constant_is_fixed() {
        let c = CylFunction::constant(0.7);
        assert_eq!(moreau_envelope(&c, 4.0, &[0.3]).unwrap(), 0.7);
        assert_eq!(infsup_convolution(&c, 4.0, &[0.3]).unwrap(), 0.7);
    }

    #[test]
    fn moreau_of_absolute_value() {
        // inf_y |y| + 2n (x - y)^2 = |x| - 1/(8n) for |x| >= 1/(4n), 2n x^2 inside.
        let f = clipped_abs();
        for n in [4.0, 16.0, 64.0] {
            assert!(moreau_envelope(&f, n, &[0.0]).unwrap().abs() < 1e-12);
            let x = 0.5;
            let v = moreau_envelope(&f, n, &[x]).unwrap();
            assert!((v - (x - 1.0 / (8.0 * n))).abs() < 1e-9, "n = {n}: {v}");
            let x = 0.05 / n;
            let v = moreau_envelope(&f, n, &[x]).unwrap();
            assert!((v - 2.0 * n * x * x).abs() < 1e-9);
        }
    }

    #[test]
    fn envelope_below_base_and_sup_preserved() {
        let f = CylFunction::clipped_power(1.0 / 3.0, 1);
        for i in 0..50 {
            let x = -2.0 + 4.0 * i as f64 / 49.0;
            let v = moreau_envelope(&f, 16.0, &[x]).unwrap();
            assert!(v <= f.eval(&[x]) + 1e-15);
            assert!(v.abs() <= 1.0);
        }
    }

    #[test]
    fn two_dimensional_support() {
        // Separable sum of absolute values: the envelope separates too.
        let f = CylFunction::Sum {
            terms: vec![clipped_abs(), CylFunction::clipped_power(1.0, 2)],
        };
        let n = 8.0;
        let x = [0.4, -0.02];
        let v = moreau_envelope(&f, n, &x).unwrap();
        let e1 = 0.4 - 1.0 / (8.0 * n);
        let e2 = 2.0 * n * 0.02 * 0.02;
        assert!((v - (e1 + e2)).abs() < 1e-6, "{v} vs {}", e1 + e2);
    }

    #[test]
    fn semiconcave_lipschitz_function_is_nearly_fixed_by_infsup() {
        let f = CylFunction::tanh(1.0, 0.0, 1);
        for x in [-0.7, 0.0, 0.4] {
            let v = infsup_convolution(&f, 4096.0, &[x]).unwrap();
            assert!((v - f.eval(&[x])).abs() < 1e-4);
        }
    }

    #[test]
    fn terminal_config_round_trip() {
        let text = r#"{"family":"clipped-power","r":0.3333,"mode":1,"mollify":{"scheme":"inf","n":64}}"#;
        let t: Terminal = serde_json::from_str(text).unwrap();
        match &t {
            Terminal::Mollified(m) => {
                assert_eq!(m.n, 64.0);
                assert_eq!(m.scheme, Scheme::Inf);
            }
            _ => panic!("expected a mollified terminal"),
        }
        let back: Terminal = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        let plain: Terminal = serde_json::from_str(r#"{"family":"constant","c":2.0}"#).unwrap();
        assert_eq!(plain, Terminal::Plain(CylFunction::constant(2.0)));
        assert!(serde_json::from_str::<Terminal>(r#"{"family":"constant","c":2.0,"typo":1}"#).is_err());
        assert!(serde_json::from_str::<Terminal>(
            r#"{"family":"constant","c":2.0,"mollify":{"scheme":"inf","n":4,"x":1}}"#
        )
        .is_err());
    }

    #[test]
    fn mollified_function_interface() {
        let m = MollifiedFunction::new(CylFunction::clipped_power(0.5, 1), 16.0, Scheme::Inf).unwrap();
        assert_eq!(m.support(), vec![0]);
        assert!(m.lipschitz_bound().unwrap() > 0.0);
        let bad = CylFunction::QuadraticForm {
            modes: vec![1, 2, 3],
            coeffs: vec![1.0; 3],
            cap: 1.0,
        };
        assert!(MollifiedFunction::new(bad.clone(), 4.0, Scheme::Inf).is_err());
        let s = MollifiedFunction::new_sampled(bad, 4.0, Scheme::Inf).unwrap();
        assert!(s.sampled);
        assert!(MollifiedFunction::new(clipped_abs(), 0.5, Scheme::Inf).is_err());
    }
}
