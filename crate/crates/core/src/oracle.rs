//! Independent numerical references used to validate the closed forms and
//! the solvers: adaptive Simpson quadrature and a one-mode Crank-Nicolson
//! solver for the quadratic Hamilton-Jacobi-Bellman equation.

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    // Stop once the refinement is below round-off of the panel sum.
    let floor = 8.0 * f64::EPSILON * (left.abs() + right.abs());
    if depth == 0 || delta.abs() <= (15.0 * tol).max(floor) {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Grid solution of `v_t + (lambda/2) v_xx - alpha x v_x - (lambda/4) v_x^2 = 0`.
#[derive(Clone, Debug)]
pub struct CrankNicolson1d {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl CrankNicolson1d {
    /// Solves backwards over a time-to-go `tau` from `v = phi` on
    /// `[-8 sigma, 8 sigma]`, `sigma^2 = lambda / (2 alpha)`, with linear
    /// extrapolation at both ends. The quadratic term is treated by inner
    /// fixed-point iterations inside each Crank-Nicolson step.
    pub fn solve(alpha: f64, lambda: f64, phi: &dyn Fn(f64) -> f64, tau: f64, nx: usize, nt: usize) -> Self {
        let sigma = (lambda / (2.0 * alpha)).sqrt();
        let half = 8.0 * sigma;
        let nx = nx.max(5);
        let dx = 2.0 * half / (nx - 1) as f64;
        let x: Vec<f64> = (0..nx).map(|i| -half + dx * i as f64).collect();
        let mut v: Vec<f64> = x.iter().map(|&xi| phi(xi)).collect();
        if tau <= 0.0 || nt == 0 {
            return Self { x, v };
        }
        let dt = tau / nt as f64;
        // L u_i = a_i u_{i-1} + b u_i + c_i u_{i+1}.
        let diff = 0.5 * lambda / (dx * dx);
        let a: Vec<f64> = x.iter().map(|&xi| diff + alpha * xi / (2.0 * dx)).collect();
        let c: Vec<f64> = x.iter().map(|&xi| diff - alpha * xi / (2.0 * dx)).collect();
        let b = -2.0 * diff;
        let nonlin = |u: &[f64], out: &mut [f64]| {
            for i in 1..nx - 1 {
                let ux = (u[i + 1] - u[i - 1]) / (2.0 * dx);
                out[i] = -0.25 * lambda * ux * ux;
            }
        };
        let n_in = nx - 2;
        let mut rhs = vec![0.0; n_in];
        let mut lo = vec![0.0; n_in];
        let mut di = vec![0.0; n_in];
        let mut up = vec![0.0; n_in];
        for j in 0..n_in {
            let i = j + 1;
            lo[j] = -0.5 * dt * a[i];
            di[j] = 1.0 - 0.5 * dt * b;
            up[j] = -0.5 * dt * c[i];
        }
        // Eliminate the extrapolated boundary values u_0 = 2u_1 - u_2 and
        // u_{n-1} = 2u_{n-2} - u_{n-3}.
        di[0] += 2.0 * lo[0];
        up[0] -= lo[0];
        let last = n_in - 1;
        di[last] += 2.0 * up[last];
        lo[last] -= up[last];
        let mut n_old = vec![0.0; nx];
        let mut n_new = vec![0.0; nx];
        let mut next = v.clone();
        for _ in 0..nt {
            nonlin(&v, &mut n_old);
            next.copy_from_slice(&v);
            for _ in 0..4 {
                nonlin(&next, &mut n_new);
                for j in 0..n_in {
                    let i = j + 1;
                    let lv = a[i] * v[i - 1] + b * v[i] + c[i] * v[i + 1];
                    rhs[j] = v[i] + 0.5 * dt * lv + 0.5 * dt * (n_old[i] + n_new[i]);
                }
                let sol = thomas(&lo, &di, &up, &rhs);
                next[1..nx - 1].copy_from_slice(&sol);
                next[0] = 2.0 * next[1] - next[2];
                next[nx - 1] = 2.0 * next[nx - 2] - next[nx - 3];
            }
            std::mem::swap(&mut v, &mut next);
        }
        Self { x, v }
    }

    /// Linear interpolation of the grid solution.
    pub fn value(&self, x: f64) -> f64 {
        let n = self.x.len();
        let dx = self.x[1] - self.x[0];
        let s = ((x - self.x[0]) / dx).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let th = s - i as f64;
        self.v[i] * (1.0 - th) + self.v[i + 1] * th
    }

    /// Central-difference derivative `v_x`, linearly interpolated.
    pub fn slope(&self, x: f64) -> f64 {
        let dx = self.x[1] - self.x[0];
        (self.value(x + dx) - self.value(x - dx)) / (2.0 * dx)
    }
}

/// Tridiagonal solve (Thomas algorithm).
fn thomas(lo: &[f64], di: &[f64], up: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = di.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = up[0] / di[0];
    d[0] = rhs[0] / di[0];
    for i in 1..n {
        let m = di[i] - lo[i] * c[i - 1];
        c[i] = if i + 1 < n { up[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lo[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}
