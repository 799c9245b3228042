//! Tensor orthonormal Hermite polynomials of bounded total degree.
//!
//! In coordinates normalised by the stationary OU standard deviation these
//! polynomials diagonalise the transition semigroup (Mehler's formula):
//! `P_t [prod_k p_{n_k}(y_k)] = prod_k e^{-n_k alpha_k t} p_{n_k}(y_k)`.

use crate::quadrature::orthonormal_hermite;

#[derive(Clone, Debug, PartialEq)]
pub struct HermiteBasis {
    dim: usize,
    degree: usize,
    indices: Vec<Vec<usize>>,
}

impl HermiteBasis {
    /// All multi-indices over `dim` coordinates with total degree `<= degree`,
    /// in graded lexicographic order (the constant comes first).
    pub fn new(dim: usize, degree: usize) -> Self {
        let mut indices = Vec::new();
        for total in 0..=degree {
            let mut cur = vec![0usize; dim];
            push_compositions(total, 0, &mut cur, &mut indices);
        }
        if dim == 0 {
            indices = vec![vec![]];
        }
        Self {
            dim,
            degree,
            indices,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    /// Per-coordinate tables `p_0..p_d` at `y`.
    fn tables(&self, y: &[f64]) -> Vec<f64> {
        let w = self.degree + 1;
        let mut t = vec![0.0; self.dim * w];
        for k in 0..self.dim {
            orthonormal_hermite(self.degree, y[k], &mut t[k * w..(k + 1) * w]);
        }
        t
    }

    /// Basis values at `y`.
    pub fn eval_into(&self, y: &[f64], out: &mut [f64]) {
        let w = self.degree + 1;
        let t = self.tables(y);
        for (o, idx) in out.iter_mut().zip(&self.indices) {
            let mut v = 1.0;
            for (k, &n) in idx.iter().enumerate() {
                if n > 0 {
                    v *= t[k * w + n];
                }
            }
            *o = v;
        }
    }

    pub fn eval(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(y, &mut out);
        out
    }

    /// Values and all partial derivatives: `grads[k][j] = d/dy_k basis_j(y)`.
    pub fn eval_with_gradient(&self, y: &[f64], vals: &mut [f64], grads: &mut [Vec<f64>]) {
        let w = self.degree + 1;
        let t = self.tables(y);
        for (j, idx) in self.indices.iter().enumerate() {
            let mut v = 1.0;
            for (k, &n) in idx.iter().enumerate() {
                if n > 0 {
                    v *= t[k * w + n];
                }
            }
            vals[j] = v;
            for (k, g) in grads.iter_mut().enumerate() {
                let n = idx[k];
                if n == 0 {
                    g[j] = 0.0;
                    continue;
                }
                let mut d = (n as f64).sqrt() * t[k * w + n - 1];
                for (kk, &nn) in idx.iter().enumerate() {
                    if kk != k && nn > 0 {
                        d *= t[kk * w + nn];
                    }
                }
                g[j] = d;
            }
        }
    }

    /// Evaluates `sum_j c_j basis_j(y)`.
    pub fn combine(&self, coeffs: &[f64], y: &[f64]) -> f64 {
        let w = self.degree + 1;
        let t = self.tables(y);
        let mut s = 0.0;
        for (c, idx) in coeffs.iter().zip(&self.indices) {
            if *c == 0.0 {
                continue;
            }
            let mut v = *c;
            for (k, &n) in idx.iter().enumerate() {
                if n > 0 {
                    v *= t[k * w + n];
                }
            }
            s += v;
        }
        s
    }

    /// Evaluates the combination and its gradient in `y`.
    pub fn combine_with_gradient(&self, coeffs: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
        let w = self.degree + 1;
        let t = self.tables(y);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut s = 0.0;
        for (c, idx) in coeffs.iter().zip(&self.indices) {
            if *c == 0.0 {
                continue;
            }
            let mut v = *c;
            for (k, &n) in idx.iter().enumerate() {
                if n > 0 {
                    v *= t[k * w + n];
                }
            }
            s += v;
            for k in 0..self.dim {
                let n = idx[k];
                if n == 0 {
                    continue;
                }
                let mut d = c * (n as f64).sqrt() * t[k * w + n - 1];
                for (kk, &nn) in idx.iter().enumerate() {
                    if kk != k && nn > 0 {
                        d *= t[kk * w + nn];
                    }
                }
                grad[k] += d;
            }
        }
        s
    }

    /// Mehler eigenvalues `exp(-t sum_k n_k rate_k)` for each basis element.
    pub fn semigroup_factors(&self, rates: &[f64], t: f64) -> Vec<f64> {
        self.indices
            .iter()
            .map(|idx| {
                let r: f64 = idx.iter().zip(rates).map(|(&n, &a)| n as f64 * a).sum();
                (-r * t).exp()
            })
            .collect()
    }
}

fn push_compositions(remaining: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let dim = cur.len();
    if dim == 0 {
        return;
    }
    if k == dim - 1 {
        cur[k] = remaining;
        out.push(cur.clone());
        cur[k] = 0;
        return;
    }
    for n in (0..=remaining).rev() {
        cur[k] = n;
        push_compositions(remaining - n, k + 1, cur, out);
    }
    cur[k] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{for_each_tensor_index, GaussHermite};

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn counts_and_order() {
        for (m, d) in [(1, 6), (2, 4), (4, 4), (3, 0)] {
            let b = HermiteBasis::new(m, d);
            assert_eq!(b.len(), binom(m + d, d));
            assert!(b.indices()[0].iter().all(|&n| n == 0));
            let degs: Vec<usize> = b.indices().iter().map(|i| i.iter().sum()).collect();
            assert!(degs.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn orthonormal_under_tensor_rule() {
        let b = HermiteBasis::new(2, 4);
        let gh = GaussHermite::new(6);
        let n = b.len();
        let mut gram = vec![0.0; n * n];
        for_each_tensor_index(gh.len(), 2, |ix| {
            let y = [gh.nodes[ix[0]], gh.nodes[ix[1]]];
            let w = gh.weights[ix[0]] * gh.weights[ix[1]];
            let v = b.eval(&y);
            for i in 0..n {
                for j in 0..n {
                    gram[i * n + j] += w * v[i] * v[j];
                }
            }
        });
        for i in 0..n {
            for j in 0..n {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((gram[i * n + j] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let b = HermiteBasis::new(3, 4);
        let coeffs: Vec<f64> = (0..b.len()).map(|i| ((i * 7 % 11) as f64 - 5.0) / 7.0).collect();
        let y = [0.3, -1.1, 0.7];
        let mut g = vec![0.0; 3];
        let v = b.combine_with_gradient(&coeffs, &y, &mut g);
        assert!((v - b.combine(&coeffs, &y)).abs() < 1e-13);
        for k in 0..3 {
            let mut yp = y;
            let mut ym = y;
            yp[k] += 1e-6;
            ym[k] -= 1e-6;
            let fd = (b.combine(&coeffs, &yp) - b.combine(&coeffs, &ym)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-7);
        }
        let mut vals = vec![0.0; b.len()];
        let mut grads = vec![vec![0.0; b.len()]; 3];
        b.eval_with_gradient(&y, &mut vals, &mut grads);
        for k in 0..3 {
            let s: f64 = grads[k].iter().zip(&coeffs).map(|(a, c)| a * c).sum();
            assert!((s - g[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn mehler_identity() {
        // E[p_n(a y + sqrt(1 - a^2) xi)] = a^n p_n(y).
        let gh = GaussHermite::new(30);
        let b = HermiteBasis::new(1, 6);
        let a: f64 = 0.6;
        let s = (1.0 - a * a).sqrt();
        let y = 0.8;
        let mut acc = vec![0.0; b.len()];
        for (&xi, &w) in gh.nodes.iter().zip(&gh.weights) {
            let v = b.eval(&[a * y + s * xi]);
            for (o, vi) in acc.iter_mut().zip(v) {
                *o += w * vi;
            }
        }
        let direct = b.eval(&[y]);
        let factors = b.semigroup_factors(&[1.0], -a.ln());
        for j in 0..b.len() {
            assert!((acc[j] - factors[j] * direct[j]).abs() < 1e-12);
        }
    }
}
