//! Diagonal Ornstein-Uhlenbeck models.
//!
//! The drift operator `A` and the noise covariance `Q` share an eigenbasis, so
//! every kernel of the forward dynamics is a per-mode closed form: the
//! semigroup mean `x_k e^{-alpha_k t}`, the covariance
//! `q_k(t) = lambda_k (1 - e^{-2 alpha_k t}) / (2 alpha_k)` and the
//! `sqrt(Q)`-gradient kernel used for the Bismut-type derivative formula.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One eigenmode: `A e_k = -alpha e_k`, `Q e_k = lambda e_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub k: usize,
    pub alpha: f64,
    pub lambda: f64,
}

impl ModeSpec {
    /// Variance of the mode after time `t` started from a point.
    pub fn variance(&self, t: f64) -> f64 {
        mode_variance(self.alpha, self.lambda, t)
    }

    /// Stationary variance `lambda / (2 alpha)`.
    pub fn stationary_variance(&self) -> f64 {
        self.lambda / (2.0 * self.alpha)
    }

    pub fn is_noisy(&self) -> bool {
        self.lambda > 0.0
    }
}

/// `lambda (1 - e^{-2 alpha t}) / (2 alpha)`, computed without cancellation.
pub fn mode_variance(alpha: f64, lambda: f64, t: f64) -> f64 {
    lambda * (-(-2.0 * alpha * t).exp_m1()) / (2.0 * alpha)
}

/// `(1 - e^{-alpha t}) / alpha`, the response of a mode to a unit constant forcing.
pub fn mode_response(alpha: f64, t: f64) -> f64 {
    -(-alpha * t).exp_m1() / alpha
}

/// Noise rule of the heat preset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseRule {
    /// `lambda_k = sigma2` for every mode.
    White { sigma2: f64 },
    /// `lambda_k = alpha_k^beta`, i.e. `Q = (-A)^beta`.
    Power { beta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetTag {
    Heat,
    Power,
    Custom,
}

fn default_horizon() -> f64 {
    1.0
}

/// Model section of an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Heat {
        #[serde(rename = "L")]
        length: f64,
        #[serde(rename = "N")]
        n: usize,
        noise: NoiseRule,
        #[serde(rename = "T", default = "default_horizon")]
        horizon: f64,
    },
    Custom {
        modes: Vec<ModeSpec>,
        #[serde(rename = "T", default = "default_horizon")]
        horizon: f64,
    },
}

impl ModelConfig {
    pub fn build(&self) -> Result<SpectralModel> {
        match self {
            Self::Heat { length, n, noise, horizon } => {
                SpectralModel::heat_preset(*length, *n, *noise)?.with_horizon(*horizon)
            }
            Self::Custom { modes, horizon } => SpectralModel::custom(modes.clone(), *horizon),
        }
    }
}

/// A truncated diagonal OU model on a finite horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    modes: Vec<ModeSpec>,
    horizon: f64,
    preset: PresetTag,
    length: Option<f64>,
    beta: Option<f64>,
}

impl SpectralModel {
    /// Builds a model from explicit modes. Indices must be strictly increasing.
    pub fn custom(modes: Vec<ModeSpec>, horizon: f64) -> Result<Self> {
        let model = Self {
            modes,
            horizon,
            preset: PresetTag::Custom,
            length: None,
            beta: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// Dirichlet Laplacian on `(0, L)` truncated to `n` modes: `alpha_k = (k pi / L)^2`.
    pub fn heat_preset(length: f64, n: usize, noise: NoiseRule) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(invalid("L", "domain length must be positive"));
        }
        if n == 0 {
            return Err(invalid("N", "at least one mode is required"));
        }
        let (preset, beta) = match noise {
            NoiseRule::White { sigma2 } => {
                if !(sigma2 >= 0.0) || !sigma2.is_finite() {
                    return Err(invalid("sigma2", "noise intensity must be nonnegative"));
                }
                (PresetTag::Heat, None)
            }
            NoiseRule::Power { beta } => {
                if !beta.is_finite() {
                    return Err(invalid("beta", "exponent must be finite"));
                }
                (PresetTag::Power, Some(beta))
            }
        };
        let modes = (1..=n)
            .map(|k| {
                let alpha = (k as f64 * std::f64::consts::PI / length).powi(2);
                let lambda = match noise {
                    NoiseRule::White { sigma2 } => sigma2,
                    NoiseRule::Power { beta } => alpha.powf(beta),
                };
                ModeSpec { k, alpha, lambda }
            })
            .collect();
        let model = Self {
            modes,
            horizon: 1.0,
            preset,
            length: Some(length),
            beta,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        self.horizon = horizon;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(invalid("modes", "at least one mode is required"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(invalid("T", "horizon must be positive and finite"));
        }
        for (i, m) in self.modes.iter().enumerate() {
            if !(m.alpha > 0.0) || !m.alpha.is_finite() {
                return Err(invalid("alpha", format!("mode {} needs alpha > 0", m.k)));
            }
            if !(m.lambda >= 0.0) || !m.lambda.is_finite() {
                return Err(invalid("lambda", format!("mode {} needs lambda >= 0", m.k)));
            }
            if m.k == 0 {
                return Err(invalid("k", "mode indices start at 1"));
            }
            if i > 0 && self.modes[i - 1].k >= m.k {
                return Err(invalid("k", "mode indices must be strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn modes(&self) -> &[ModeSpec] {
        &self.modes
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn preset(&self) -> PresetTag {
        self.preset
    }

    pub fn length(&self) -> Option<f64> {
        self.length
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    /// Constants of `|e^{tA}| <= M e^{omega t}`; the spectrum is strictly dissipative.
    pub fn semigroup_bound(&self) -> (f64, f64) {
        (1.0, 0.0)
    }

    /// Truncated model keeping the first `n` modes.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.modes.len() {
            return Err(invalid("N", format!("cannot truncate to {n} modes")));
        }
        let mut m = self.clone();
        m.modes.truncate(n);
        Ok(m)
    }

    /// Heat-preset eigenfunction `sqrt(2/L) sin(k pi xi / L)`.
    pub fn eigenfunction(&self, k: usize, xi: f64) -> Result<f64> {
        let length = self
            .length
            .ok_or_else(|| Error::Unsupported("eigenfunctions exist only for the heat preset".into()))?;
        Ok((2.0 / length).sqrt() * (k as f64 * std::f64::consts::PI * xi / length).sin())
    }

    /// Reconstructs the field `sum_k x_k e_k(xi)` at a spatial point.
    pub fn reconstruct(&self, x: &[f64], xi: f64) -> Result<f64> {
        self.check_dim(x)?;
        let mut s = 0.0;
        for (m, &c) in self.modes.iter().zip(x) {
            s += c * self.eigenfunction(m.k, xi)?;
        }
        Ok(s)
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.modes.len() {
            return Err(Error::DimensionMismatch {
                expected: self.modes.len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Per-mode variances `q_k(t)` of the OU transition.
    pub fn ou_covariance(&self, t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return Err(Error::InvalidTime {
                t,
                reason: "covariance needs t >= 0".into(),
            });
        }
        Ok(self.modes.iter().map(|m| m.variance(t)).collect())
    }

    /// Stationary variances `lambda_k / (2 alpha_k)`.
    pub fn stationary_covariance(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.stationary_variance()).collect()
    }

    /// `e^{tA} x`.
    pub fn semigroup_mean(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return Err(Error::InvalidTime {
                t,
                reason: "semigroup needs t >= 0".into(),
            });
        }
        self.check_dim(x)?;
        Ok(self
            .modes
            .iter()
            .zip(x)
            .map(|(m, &v)| v * (-m.alpha * t).exp())
            .collect())
    }

    /// Operator norm of `Q_t^{-1/2} e^{tA} sqrt(Q)`, i.e. the sup over noisy modes
    /// of `sqrt(lambda_k) e^{-alpha_k t} / sqrt(q_k(t))`.
    pub fn smoothing_norm(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::InvalidTime {
                t,
                reason: "smoothing norm diverges at t = 0".into(),
            });
        }
        Ok(self
            .modes
            .iter()
            .filter(|m| m.is_noisy())
            .map(|m| {
                let s = m.alpha * t;
                (-s).exp() * (2.0 * m.alpha / (-(-2.0 * s).exp_m1())).sqrt()
            })
            .fold(0.0, f64::max))
    }

    /// `sup_t t^{1/2} |Q_t^{-1/2} e^{tA} sqrt(Q)|` over a log-spaced scan of `(0, T]`.
    pub fn measured_smoothing_constant(&self) -> f64 {
        let n = 400;
        let (lo, hi) = ((1e-10 * self.horizon).ln(), self.horizon.ln());
        (0..=n)
            .map(|i| {
                let t = (lo + (hi - lo) * i as f64 / n as f64).exp();
                t.sqrt() * self.smoothing_norm(t).unwrap_or(0.0)
            })
            .fold(0.0, f64::max)
    }

    /// Bismut-type weight `sum_k xi_k sqrt(lambda_k) e^{-alpha_k t} z_k / q_k(t)`.
    pub fn grad_kernel_weight(&self, t: f64, z: &[f64], xi: &[f64]) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::InvalidTime {
                t,
                reason: "gradient kernel is singular at t = 0".into(),
            });
        }
        self.check_dim(z)?;
        self.check_dim(xi)?;
        let mut w = 0.0;
        for ((m, &zk), &xk) in self.modes.iter().zip(z).zip(xi) {
            if m.is_noisy() && xk != 0.0 {
                w += xk * m.lambda.sqrt() * (-m.alpha * t).exp() * zk / m.variance(t);
            }
        }
        Ok(w)
    }

    /// `sum_k lambda_k (1 - e^{-2 alpha_k T}) / (2 alpha_k)`.
    pub fn trace_proxy(&self) -> f64 {
        self.modes.iter().map(|m| m.variance(self.horizon)).sum()
    }

    /// Indices (0-based) of the modes with `lambda_k > 0`.
    pub fn noisy_modes(&self) -> Vec<usize> {
        (0..self.modes.len())
            .filter(|&i| self.modes[i].is_noisy())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(alpha: f64, lambda: f64) -> SpectralModel {
        SpectralModel::custom(vec![ModeSpec { k: 1, alpha, lambda }], 1.0).unwrap()
    }

    #[test]
    fn heat_preset_spectrum() {
        let m = SpectralModel::heat_preset(1.0, 1, NoiseRule::White { sigma2: 1.0 }).unwrap();
        assert!((m.modes()[0].alpha - 9.869604401089358).abs() < 1e-12);
        assert_eq!(m.modes()[0].lambda, 1.0);

        let m = SpectralModel::heat_preset(1.0, 3, NoiseRule::Power { beta: -1.0 }).unwrap();
        for mode in m.modes() {
            let expected = 1.0 / (mode.k as f64 * std::f64::consts::PI).powi(2);
            assert!((mode.lambda - expected).abs() < 1e-15);
        }
        assert_eq!(m.preset(), PresetTag::Power);

        let m = SpectralModel::heat_preset(2.0, 2, NoiseRule::White { sigma2: 1.0 }).unwrap();
        assert!((m.modes()[1].alpha - std::f64::consts::PI.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn heat_preset_rejects_bad_inputs() {
        assert!(SpectralModel::heat_preset(0.0, 3, NoiseRule::White { sigma2: 1.0 }).is_err());
        assert!(SpectralModel::heat_preset(-1.0, 3, NoiseRule::White { sigma2: 1.0 }).is_err());
        assert!(SpectralModel::heat_preset(1.0, 0, NoiseRule::White { sigma2: 1.0 }).is_err());
    }

    #[test]
    fn custom_rejects_nondissipative_modes() {
        let bad = vec![ModeSpec { k: 1, alpha: 0.0, lambda: 1.0 }];
        assert!(SpectralModel::custom(bad, 1.0).is_err());
        let bad = vec![ModeSpec { k: 1, alpha: 1.0, lambda: -1.0 }];
        assert!(SpectralModel::custom(bad, 1.0).is_err());
    }

    #[test]
    fn covariance_limits() {
        let m = single(1.0, 1.0);
        assert!(m.ou_covariance(0.0).unwrap().iter().all(|&q| q == 0.0));
        assert!((m.ou_covariance(40.0).unwrap()[0] - 0.5).abs() < 1e-15);
        assert!(m.ou_covariance(-1.0).is_err());
    }

    #[test]
    fn covariance_value_at_tenth() {
        // Adaptive quadrature of e^{-2 alpha s} over [0, 0.1] with alpha = pi^2.
        let m = single(std::f64::consts::PI.powi(2), 1.0);
        assert!((m.ou_covariance(0.1).unwrap()[0] - 0.043623271605605446).abs() < 1e-10);
    }

    #[test]
    fn mean_behaviour() {
        let m = single(1.0, 1.0);
        assert_eq!(m.semigroup_mean(0.0, &[3.0]).unwrap(), vec![3.0]);
        assert!((m.semigroup_mean(2f64.ln(), &[2.0]).unwrap()[0] - 1.0).abs() < 1e-15);
        assert!(m.semigroup_mean(50.0, &[1.0]).unwrap()[0] < 1e-20);
        assert!(m.semigroup_mean(1.0, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn smoothing_norm_single_mode() {
        let m = single(1.0, 1.0);
        let expected = (-0.5f64).exp() * (2.0 / (1.0 - (-1.0f64).exp())).sqrt();
        assert!((m.smoothing_norm(0.5).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 1.0788667265879752).abs() < 1e-12);
        assert!(m.smoothing_norm(0.0).is_err());
        assert!(m.smoothing_norm(10.0).unwrap() < 1.0);
    }

    #[test]
    fn degenerate_modes_are_skipped() {
        let modes = vec![
            ModeSpec { k: 1, alpha: 1.0, lambda: 0.0 },
            ModeSpec { k: 2, alpha: 2.0, lambda: 1.0 },
        ];
        let m = SpectralModel::custom(modes, 1.0).unwrap();
        let w = m.grad_kernel_weight(0.5, &[7.0, 0.3], &[1.0, 0.0]).unwrap();
        assert_eq!(w, 0.0);
        assert_eq!(m.noisy_modes(), vec![1]);
    }

    #[test]
    fn grad_kernel_weight_algebra() {
        let m = single(1.3, 0.7);
        let t = 0.4;
        let q = m.ou_covariance(t).unwrap()[0];
        let w = 0.9;
        let got = m.grad_kernel_weight(t, &[q * w], &[1.0]).unwrap();
        let expected = 0.7f64.sqrt() * (-1.3f64 * t).exp() * w;
        assert!((got - expected).abs() < 1e-14);
        assert_eq!(m.grad_kernel_weight(t, &[0.2], &[0.0]).unwrap(), 0.0);
        assert!(m.grad_kernel_weight(0.0, &[0.2], &[1.0]).is_err());
    }

    #[test]
    fn eigenfunction_orthonormal() {
        let m = SpectralModel::heat_preset(2.0, 3, NoiseRule::White { sigma2: 1.0 }).unwrap();
        let n = 20000;
        let h = 2.0 / n as f64;
        for a in 1..=3 {
            for b in 1..=3 {
                let s: f64 = (0..n)
                    .map(|i| {
                        let xi = (i as f64 + 0.5) * h;
                        m.eigenfunction(a, xi).unwrap() * m.eigenfunction(b, xi).unwrap() * h
                    })
                    .sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((s - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn smoothing_constant_is_one_for_heat() {
        let m = SpectralModel::heat_preset(1.0, 64, NoiseRule::White { sigma2: 1.0 }).unwrap();
        let c = m.measured_smoothing_constant();
        assert!(c <= 1.0 && c > 0.999);
    }

    #[test]
    fn model_config_parses_the_documented_form() {
        let json = r#"{"preset":"heat","L":1.0,"N":64,"noise":{"rule":"white","sigma2":1.0},"T":1.0}"#;
        let cfg: ModelConfig = serde_json::from_str(json).unwrap();
        let m = cfg.build().unwrap();
        assert_eq!(m.dim(), 64);
        let back: ModelConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"preset":"heat","L":1.0,"N":4,"noise":{"rule":"white","sigma2":1.0},"Tt":1}"#).is_err());
    }

}
