//! Invariants of the building blocks, checked on random inputs.

use hjb_core::functions::{CylFunction, ScalarField};
use hjb_core::hamiltonian::{ConstraintSet, HamiltonianConfig, HamiltonianSpec};
use hjb_core::mollify::{infsup_convolution, moreau_envelope};
use hjb_core::picard::{apply_semigroup, SemigroupQuadrature};
use hjb_core::regression::{FeatureMap, Regression};
use hjb_core::spectral::{mode_variance, NoiseRule, SpectralModel};
use proptest::prelude::*;

fn spec(q: f64, constraint: ConstraintSet) -> HamiltonianSpec {
    let cfg = HamiltonianConfig {
        constraint,
        ..HamiltonianConfig::power(q)
    };
    HamiltonianSpec::new(cfg, 3).unwrap()
}

fn exponents() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.25), Just(1.5), Just(2.0)]
}

fn constraints() -> impl Strategy<Value = ConstraintSet> {
    prop_oneof![
        Just(ConstraintSet::Full),
        (0.2..3.0f64).prop_map(|radius| ConstraintSet::Ball { radius }),
        (0.2..3.0f64).prop_map(|bound| ConstraintSet::Box { bound }),
    ]
}

fn vec3(r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, 3)
}

fn catalog() -> impl Strategy<Value = CylFunction> {
    prop_oneof![
        (-2.0..2.0f64, -1.0..1.0f64, 1..=3usize).prop_map(|(a, b, m)| CylFunction::tanh(a, b, m)),
        (0.2..=1.0f64, 1..=3usize).prop_map(|(r, m)| CylFunction::clipped_power(r, m)),
        (0.1..2.0f64, 0.1..2.0f64, 0.1..1.5f64).prop_map(|(a, b, cap)| CylFunction::QuadraticForm {
            modes: vec![1, 2],
            coeffs: vec![a, b],
            cap,
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn legendre_inequality(q in exponents(), k in constraints(), z in vec3(4.0), u in vec3(3.0)) {
        let h = spec(q, k);
        prop_assume!(h.contains(&u, 0.0));
        prop_assert!(h.objective(&z, &u) - h.psi_eval(&z) >= -1e-9);
    }

    #[test]
    fn minimiser_attains_the_infimum(q in exponents(), k in constraints(), z in vec3(4.0)) {
        let h = spec(q, k);
        let a = h.argmin(&z);
        prop_assert!(h.contains(&a.u, 1e-9));
        let psi = h.psi_eval(&z);
        prop_assert!((h.objective(&z, &a.u) - psi).abs() <= 1e-8 * (1.0 + psi.abs()));
    }

    #[test]
    fn hamiltonian_is_concave(q in exponents(), k in constraints(), a in vec3(4.0), b in vec3(4.0)) {
        let h = spec(q, k);
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        prop_assert!(h.psi_eval(&mid) >= 0.5 * (h.psi_eval(&a) + h.psi_eval(&b)) - 1e-9);
    }

    #[test]
    fn hamiltonian_vanishes_at_zero_and_is_nonpositive(q in exponents(), k in constraints(), z in vec3(4.0)) {
        let h = spec(q, k);
        prop_assert!(h.psi_eval(&[0.0; 3]).abs() <= 1e-12);
        prop_assert!(h.psi_eval(&z) <= 1e-12);
    }

    #[test]
    fn catalog_bounds_hold(f in catalog(), x in vec3(3.0), y in vec3(3.0)) {
        prop_assert!(f.eval(&x).abs() <= f.sup_bound() + 1e-12);
        if let Some(l) = f.lipschitz_bound() {
            let d: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!((f.eval(&x) - f.eval(&y)).abs() <= l * d + 1e-12);
        }
    }

    #[test]
    fn moreau_envelope_is_monotone_in_the_index(f in catalog(), x in vec3(2.0)) {
        let a = moreau_envelope(&f, 4.0, &x).unwrap();
        let b = moreau_envelope(&f, 16.0, &x).unwrap();
        prop_assert!(a <= b + 1e-9);
        prop_assert!(b <= f.eval(&x) + 1e-9);
    }

    #[test]
    fn infsup_convolution_stays_in_the_range(r in 0.2..=1.0f64, x in vec3(2.0)) {
        let f = CylFunction::clipped_power(r, 1);
        let v = infsup_convolution(&f, 8.0, &x).unwrap();
        prop_assert!((-1e-9..=1.0 + 1e-9).contains(&v));
    }

    #[test]
    fn mode_variance_increases_to_the_stationary_value(alpha in 0.05..10.0f64, lambda in 0.0..5.0f64, s in 0.0..3.0f64, t in 0.0..3.0f64) {
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        let (a, b) = (mode_variance(alpha, lambda, lo), mode_variance(alpha, lambda, hi));
        prop_assert!(a <= b + 1e-15);
        prop_assert!(b <= lambda / (2.0 * alpha) * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn semigroup_is_a_sub_markov_average(f in catalog(), x in vec3(2.0), t in 0.0..1.0f64, c in -2.0..2.0f64) {
        let m = SpectralModel::heat_preset(3.0, 3, NoiseRule::White { sigma2: 1.0 }).unwrap();
        let quad = SemigroupQuadrature::default();
        let v = apply_semigroup(&m, t, &f, &x, &quad).unwrap();
        prop_assert!(v.abs() <= f.sup_bound() + 1e-9);
        let shifted = CylFunction::Sum { terms: vec![f.clone(), CylFunction::constant(c)] };
        let w = apply_semigroup(&m, t, &shifted, &x, &quad).unwrap();
        prop_assert!((w - v - c).abs() <= 1e-9);
    }

    #[test]
    fn least_squares_is_linear_in_the_target(a in -3.0..3.0f64, b in -3.0..3.0f64, seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)]).collect();
        let y1: Vec<f64> = xs.iter().map(|x| x[0].sin() + x[1]).collect();
        let y2: Vec<f64> = xs.iter().map(|x| (x[0] * x[1]).cos()).collect();
        let map = FeatureMap::fit(xs.len(), |p| &xs[p], &[0, 1], 3);
        let reg = Regression::new(map, xs.len(), |p| &xs[p], 1e-10);
        let combo: Vec<f64> = y1.iter().zip(&y2).map(|(p, q)| a * p + b * q).collect();
        let (f1, f2, fc) = (reg.fit(&y1), reg.fit(&y2), reg.fit(&combo));
        for i in 0..xs.len() {
            prop_assert!((fc.fitted[i] - a * f1.fitted[i] - b * f2.fitted[i]).abs() <= 1e-8);
        }
        let ones = vec![a; xs.len()];
        prop_assert!(reg.fit(&ones).fitted.iter().all(|v| (v - a).abs() <= 1e-8));
    }
}
