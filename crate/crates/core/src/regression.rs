//! Least-squares conditional expectations on path ensembles.
//!
//! Features are orthonormal Hermite polynomials of coordinates standardised by
//! the empirical mean and standard deviation of the ensemble at the current
//! time. Coordinates with (numerically) zero spread are dropped, so at the
//! starting point only the constant survives. Gram matrices are accumulated in
//! fixed-size chunks and summed in chunk order, so results do not depend on the
//! number of threads.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::HermiteBasis;

const CHUNK: usize = 2048;
/// Largest accepted condition number of the regularised Gram matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Standardised Hermite features over a subset of coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub active: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub degree: usize,
    #[serde(skip)]
    basis: Option<HermiteBasis>,
}

impl FeatureMap {
    /// Standardisation fitted on `n` states; `candidates` are the coordinates
    /// allowed to enter.
    pub fn fit<'a>(n: usize, state: impl Fn(usize) -> &'a [f64], candidates: &[usize], degree: usize) -> Self {
        let mut active = Vec::new();
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for &k in candidates {
            let mu = (0..n).map(|p| state(p)[k]).sum::<f64>() / n as f64;
            let var = (0..n).map(|p| (state(p)[k] - mu).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + mu.abs()) {
                active.push(k);
                mean.push(mu);
                std.push(sd);
            }
        }
        let basis = Some(HermiteBasis::new(active.len(), degree));
        Self {
            active,
            mean,
            std,
            degree,
            basis,
        }
    }

    fn basis(&self) -> HermiteBasis {
        self.basis
            .clone()
            .unwrap_or_else(|| HermiteBasis::new(self.active.len(), self.degree))
    }

    /// Rebuilds the cached basis after deserialisation.
    pub fn ready(mut self) -> Self {
        self.basis = Some(HermiteBasis::new(self.active.len(), self.degree));
        self
    }

    pub fn len(&self) -> usize {
        match &self.basis {
            Some(b) => b.len(),
            None => self.basis().len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Standardised coordinates of `x`.
    pub fn standardise(&self, x: &[f64]) -> Vec<f64> {
        self.active
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&k, (m, s))| (x[k] - m) / s)
            .collect()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let u = self.standardise(x);
        match &self.basis {
            Some(b) => b.eval_into(&u, out),
            None => self.basis().eval_into(&u, out),
        }
    }

    /// Features at standardised coordinates.
    pub fn eval_standardised(&self, u: &[f64], out: &mut [f64]) {
        match &self.basis {
            Some(b) => b.eval_into(u, out),
            None => self.basis().eval_into(u, out),
        }
    }

    /// `sum_j c_j feature_j(x)`.
    pub fn predict(&self, coeffs: &[f64], x: &[f64]) -> f64 {
        let mut f = vec![0.0; self.len()];
        self.eval_into(x, &mut f);
        f.iter().zip(coeffs).map(|(a, b)| a * b).sum()
    }
}

/// A factorised least-squares problem for one feature matrix.
pub struct Regression {
    pub map: FeatureMap,
    n: usize,
    nb: usize,
    feats: Vec<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    pub ridge: f64,
    pub condition: f64,
    /// Set when the ridge had to be enlarged.
    pub flagged: bool,
}

/// Coefficients, fitted values and the RMS residual of one target.
pub struct Fit {
    pub coeffs: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residual: f64,
}

impl Regression {
    /// Builds features for `n` states and factorises
    /// `F^T F + ridge I'` (the constant feature is not penalised).
    pub fn new<'a>(map: FeatureMap, n: usize, state: impl Fn(usize) -> &'a [f64] + Sync, ridge_factor: f64) -> Self {
        let nb = map.len();
        let mut feats = vec![0.0; n * nb];
        feats.par_chunks_mut(nb).enumerate().for_each(|(p, row)| map.eval_into(state(p), row));
        let partial: Vec<Vec<f64>> = feats
            .par_chunks(CHUNK * nb)
            .map(|chunk| {
                let mut g = vec![0.0; nb * nb];
                for row in chunk.chunks(nb) {
                    for i in 0..nb {
                        let ri = row[i];
                        for j in i..nb {
                            g[i * nb + j] += ri * row[j];
                        }
                    }
                }
                g
            })
            .collect();
        let mut gram = DMatrix::<f64>::zeros(nb, nb);
        for g in &partial {
            for i in 0..nb {
                for j in i..nb {
                    gram[(i, j)] += g[i * nb + j];
                }
            }
        }
        for i in 0..nb {
            for j in 0..i {
                gram[(i, j)] = gram[(j, i)];
            }
        }
        let mut ridge = ridge_factor * n as f64;
        let mut flagged = false;
        let (chol, condition) = loop {
            let mut a = gram.clone();
            for i in 1..nb {
                a[(i, i)] += ridge;
            }
            let cond = condition_number(&a);
            if cond <= MAX_CONDITION || ridge > 1e6 * n as f64 {
                if let Some(c) = a.clone().cholesky() {
                    break (c, cond);
                }
            }
            flagged = true;
            ridge = if ridge > 0.0 { 2.0 * ridge } else { 1e-12 * n as f64 };
        };
        Self {
            map,
            n,
            nb,
            feats,
            chol,
            ridge,
            condition,
            flagged,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn features(&self, p: usize) -> &[f64] {
        &self.feats[p * self.nb..(p + 1) * self.nb]
    }

    /// Regresses `y` on the features.
    pub fn fit(&self, y: &[f64]) -> Fit {
        let nb = self.nb;
        if let Some(&y0) = y.first() {
            if y.iter().all(|&v| v == y0) {
                let mut coeffs = vec![0.0; nb];
                coeffs[0] = y0;
                return Fit {
                    coeffs,
                    fitted: vec![y0; y.len()],
                    residual: 0.0,
                };
            }
        }
        let partial: Vec<Vec<f64>> = self
            .feats
            .par_chunks(CHUNK * nb)
            .zip(y.par_chunks(CHUNK))
            .map(|(chunk, ys)| {
                let mut b = vec![0.0; nb];
                for (row, yv) in chunk.chunks(nb).zip(ys) {
                    for (bj, rj) in b.iter_mut().zip(row) {
                        *bj += rj * yv;
                    }
                }
                b
            })
            .collect();
        let mut rhs = DVector::<f64>::zeros(nb);
        for b in &partial {
            for j in 0..nb {
                rhs[j] += b[j];
            }
        }
        let sol = self.chol.solve(&rhs);
        let coeffs: Vec<f64> = sol.iter().copied().collect();
        let fitted: Vec<f64> = self
            .feats
            .par_chunks(nb)
            .map(|row| row.iter().zip(&coeffs).map(|(a, b)| a * b).sum())
            .collect();
        let ss: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum();
        Fit {
            coeffs,
            fitted,
            residual: (ss / y.len().max(1) as f64).sqrt(),
        }
    }
}

fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.nrows() <= 1 {
        return 1.0;
    }
    let eig = a.clone().symmetric_eigen();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cloud(n: usize) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        (0..n)
            .map(|_| vec![rng.random::<f64>() * 2.0 - 1.0, 3.0 + rng.random::<f64>(), 0.7])
            .collect()
    }

    #[test]
    fn recovers_polynomials_and_drops_constant_coordinates() {
        let xs = cloud(2000);
        let map = FeatureMap::fit(xs.len(), |p| &xs[p], &[0, 1, 2], 3);
        assert_eq!(map.active, vec![0, 1]);
        let reg = Regression::new(map, xs.len(), |p| &xs[p], 0.0);
        let y: Vec<f64> = xs.iter().map(|x| 1.0 + x[0] * x[1] - x[0].powi(3)).collect();
        let fit = reg.fit(&y);
        assert!(fit.residual < 1e-9);
        assert!((reg.map.predict(&fit.coeffs, &[0.2, 3.5, 0.0]) - (1.0 + 0.7 - 0.008)).abs() < 1e-8);
    }

    #[test]
    fn constant_targets_are_exact() {
        let xs = cloud(500);
        let map = FeatureMap::fit(xs.len(), |p| &xs[p], &[0, 1], 4);
        let reg = Regression::new(map, xs.len(), |p| &xs[p], 1e-8);
        let fit = reg.fit(&vec![0.3; 500]);
        assert!(fit.fitted.iter().all(|&v| v == 0.3));
        assert_eq!(fit.residual, 0.0);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let xs = cloud(9000);
        let y: Vec<f64> = xs.iter().map(|x| (3.0 * x[0]).sin() + x[1]).collect();
        let run = || {
            let map = FeatureMap::fit(xs.len(), |p| &xs[p], &[0, 1], 5);
            Regression::new(map, xs.len(), |p| &xs[p], 1e-8).fit(&y).coeffs
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(run);
        assert_eq!(one, four);
    }

    #[test]
    fn single_point_cloud_keeps_only_the_constant() {
        let xs = vec![vec![0.5, 0.5]; 10];
        let map = FeatureMap::fit(xs.len(), |p| &xs[p], &[0, 1], 4);
        assert_eq!(map.len(), 1);
        let reg = Regression::new(map, xs.len(), |p| &xs[p], 1e-8);
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let fit = reg.fit(&y);
        assert!((fit.coeffs[0] - 4.5).abs() < 1e-12);
    }
}
