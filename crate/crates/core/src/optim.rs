//! One-dimensional minimisation and root bracketing helpers.

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for a minimum of `f` on `[a, b]`. Returns `(x, f(x))`,
/// comparing the interior result with both end points so boundary minima of
/// monotone profiles are found exactly.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, xtol: f64) -> (f64, f64) {
    let (fa, fb) = (f(a), f(b));
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..300 {
        if hi - lo <= xtol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if fa <= best.1 {
        best = (a, fa);
    }
    if fb < best.1 {
        best = (b, fb);
    }
    best
}

/// Bisection for a sign change of `f` on `[a, b]` (requires `f(a) <= 0 <= f(b)`
/// or the reverse).
pub fn bisect(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, xtol: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..400 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= xtol {
            return m;
        }
        let fm = f(m);
        if (fm <= 0.0) == (fa <= 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Minimises a one-dimensional function by a uniform scan followed by a
/// golden-section refinement around the best scan point and around each hint.
pub fn scan_then_refine(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    points: usize,
    hints: &[f64],
    xtol: f64,
) -> (f64, f64) {
    let n = points.max(3);
    let dx = (b - a) / (n - 1) as f64;
    let mut best = (a, f(a));
    for i in 1..n {
        let x = a + dx * i as f64;
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    let mut candidates = vec![best.0];
    candidates.extend(hints.iter().copied().filter(|h| *h >= a && *h <= b));
    let mut out = best;
    for c in candidates {
        let lo = (c - dx).max(a);
        let hi = (c + dx).min(b);
        let r = golden_section(&mut f, lo, hi, xtol);
        if r.1 < out.1 {
            out = r;
        }
        let vc = f(c);
        if vc < out.1 {
            out = (c, vc);
        }
    }
    out
}
