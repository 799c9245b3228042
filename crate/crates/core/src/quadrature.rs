//! Gaussian quadrature rules and the orthonormal Hermite family.
//!
//! Hermite nodes come from the Golub-Welsch eigenproblem polished by Newton
//! steps; weights use the Christoffel function so that no factorials or large
//! Hermite values appear.

/// Gauss-Hermite rule for the standard normal law: `E[f(xi)] ~ sum w_i f(x_i)`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a quadrature rule needs at least one node");
        // Golub-Welsch: nodes are the eigenvalues of the Jacobi matrix of the
        // orthonormal recurrence, polished by Newton on p_n.
        let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let mut nodes: Vec<f64> = nalgebra::SymmetricEigen::new(jacobi)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        nodes.sort_by(f64::total_cmp);
        for x in nodes.iter_mut() {
            for _ in 0..8 {
                let (p, dp) = orthonormal_hermite_with_derivative(n, *x);
                let step = p / dp;
                *x -= step;
                if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                    break;
                }
            }
        }
        // Enforce exact symmetry.
        for i in 0..n / 2 {
            let a = 0.5 * (nodes[n - 1 - i] - nodes[i]);
            nodes[i] = -a;
            nodes[n - 1 - i] = a;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let mut weights: Vec<f64> = nodes.iter().map(|&x| christoffel_weight(n, x)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Values `p_0..p_deg` of the orthonormal Hermite polynomials `He_n / sqrt(n!)`.
pub fn orthonormal_hermite(deg: usize, x: f64, out: &mut [f64]) {
    debug_assert!(out.len() > deg);
    out[0] = 1.0;
    if deg == 0 {
        return;
    }
    out[1] = x;
    for n in 1..deg {
        let nf = n as f64;
        out[n + 1] = (x * out[n] - nf.sqrt() * out[n - 1]) / (nf + 1.0).sqrt();
    }
}

fn orthonormal_hermite_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut pm1 = 0.0;
    let mut p = 1.0;
    for k in 0..n {
        let kf = k as f64;
        let next = (x * p - kf.sqrt() * pm1) / (kf + 1.0).sqrt();
        pm1 = p;
        p = next;
    }
    // p = p_n, pm1 = p_{n-1}; p_n' = sqrt(n) p_{n-1}.
    (p, (n as f64).sqrt() * pm1)
}

fn christoffel_weight(n: usize, x: f64) -> f64 {
    let mut pm1 = 0.0;
    let mut p = 1.0;
    let mut s = 1.0;
    for k in 0..n - 1 {
        let kf = k as f64;
        let next = (x * p - kf.sqrt() * pm1) / (kf + 1.0).sqrt();
        pm1 = p;
        p = next;
        s += p * p;
    }
    1.0 / s
}

/// Smallest per-piece tolerance of the adaptive rule, relative to a panel's
/// share; keeps noisy integrands (nested rules) from refining without end.
const MIN_TOL_FRACTION: f64 = 1.0 / 4096.0;

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a quadrature rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let step = p / d;
                x -= step;
                if step.abs() <= 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            weights[i] = w;
            nodes[n - 1 - i] = x;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(c + r * x))
            .sum::<f64>()
            * r
    }

    /// Composite rule on `panels` equal pieces of `[a, b]`, each bisected until
    /// the rule on the piece and on its halves agree to the piece's share of `tol`.
    pub fn integrate_adaptive(&self, a: f64, b: f64, panels: usize, tol: f64, f: &dyn Fn(f64) -> f64) -> f64 {
        self.integrate_adaptive_split(a, b, &[], panels, tol, f)
    }

    /// As [`GaussLegendre::integrate_adaptive`], with extra panel edges at
    /// `breaks` (points outside `(a, b)` are ignored).
    pub fn integrate_adaptive_split(
        &self,
        a: f64,
        b: f64,
        breaks: &[f64],
        panels: usize,
        tol: f64,
        f: &dyn Fn(f64) -> f64,
    ) -> f64 {
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        let mut edges: Vec<f64> = (0..=panels).map(|i| a + h * i as f64).collect();
        edges.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        let share = tol / (edges.len() - 1) as f64;
        edges
            .windows(2)
            .map(|w| self.refine(w[0], w[1], self.integrate(w[0], w[1], f), share, share * MIN_TOL_FRACTION, f, 40))
            .sum()
    }

    #[allow(clippy::too_many_arguments)]
    fn refine(&self, a: f64, b: f64, whole: f64, tol: f64, min_tol: f64, f: &dyn Fn(f64) -> f64, depth: usize) -> f64 {
        let m = 0.5 * (a + b);
        let (left, right) = (self.integrate(a, m, f), self.integrate(m, b, f));
        let floor = (8.0 * f64::EPSILON * (left.abs() + right.abs())).max(min_tol);
        if depth == 0 || (left + right - whole).abs() <= tol.max(floor) {
            return left + right;
        }
        self.refine(a, m, left, 0.5 * tol, min_tol, f, depth - 1)
            + self.refine(m, b, right, 0.5 * tol, min_tol, f, depth - 1)
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Visits every point of the tensor grid `rule^dim`, passing node indices.
pub fn for_each_tensor_index(n: usize, dim: usize, mut f: impl FnMut(&[usize])) {
    if dim == 0 {
        f(&[]);
        return;
    }
    let mut idx = vec![0usize; dim];
    loop {
        f(&idx);
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == dim {
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_rule_resolves_kinks() {
        let gl = GaussLegendre::new(8);
        let v = gl.integrate_adaptive(-1.0, 2.0, 4, 1e-12, &|x: f64| x.abs());
        assert!((v - 2.5).abs() < 1e-11);
        let split = gl.integrate_adaptive_split(-1.0, 2.0, &[0.3], 1, 1e-12, &|x: f64| (x - 0.3).abs().sqrt());
        let exact = 2.0 / 3.0 * (1.3f64.powf(1.5) + 1.7f64.powf(1.5));
        assert!((split - exact).abs() < 1e-9);
    }

    #[test]
    fn hermite_moments() {
        for n in [1usize, 2, 5, 12, 33, 64] {
            let gh = GaussHermite::new(n);
            let total: f64 = gh.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-13, "n = {n}");
            // E[xi^{2k}] = (2k-1)!! exact up to degree 2n-1.
            let mut dfact = 1.0;
            for k in 1..n.min(10) {
                dfact *= (2 * k - 1) as f64;
                let m: f64 = gh
                    .nodes
                    .iter()
                    .zip(&gh.weights)
                    .map(|(&x, &w)| w * x.powi(2 * k as i32))
                    .sum();
                assert!((m / dfact - 1.0).abs() < 1e-10, "n = {n}, k = {k}, m = {m}");
            }
            for w in gh.nodes.windows(2) {
                assert!(w[0] < w[1]);
            }
        }
    }

    #[test]
    fn hermite_nodes_are_roots() {
        let gh = GaussHermite::new(20);
        let mut p = vec![0.0; 21];
        for &x in &gh.nodes {
            orthonormal_hermite(20, x, &mut p);
            assert!(p[20].abs() < 1e-10);
        }
    }

    #[test]
    fn orthonormality_under_gauss_hermite() {
        let gh = GaussHermite::new(16);
        let d = 10;
        let mut p = vec![0.0; d + 1];
        let mut gram = vec![vec![0.0; d + 1]; d + 1];
        for (&x, &w) in gh.nodes.iter().zip(&gh.weights) {
            orthonormal_hermite(d, x, &mut p);
            for a in 0..=d {
                for b in 0..=d {
                    gram[a][b] += w * p[a] * p[b];
                }
            }
        }
        for a in 0..=d {
            for b in 0..=d {
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a][b] - e).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let gl = GaussLegendre::new(16);
        let v = gl.integrate(0.0, 2.0, |x| x.powi(7));
        assert!((v - 2f64.powi(8) / 8.0).abs() < 1e-11);
        let v = gl.integrate(0.0, std::f64::consts::PI, f64::sin);
        assert!((v - 2.0).abs() < 1e-13);
        let total: f64 = gl.weights.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn tensor_index_visits_all() {
        let mut count = 0;
        for_each_tensor_index(3, 4, |_| count += 1);
        assert_eq!(count, 81);
        let mut once = 0;
        for_each_tensor_index(3, 0, |i| {
            assert!(i.is_empty());
            once += 1
        });
        assert_eq!(once, 1);
    }
}
