use hessbell::bellman::*;
use hessbell::matcore::*;
use hessbell::operators::*;
use hessbell::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cone_point(rng: &mut ChaCha8Rng, d: usize) -> SymMatrix {
    let b = random_symmetric(d, 1.0, rng).to_dense();
    SymMatrix::from_dense_sym(&(&b * b.transpose())).add_identity(0.05)
}

/// d/dt F(α + tI) at 0 by a five-point stencil scaled to the smallest eigenvalue.
fn identity_derivative(op: &HessianOperator, alpha: &SymMatrix) -> f64 {
    let s = 1e-3 * alpha.spectral().unwrap().eigenvalues[0];
    let f = |t: f64| op.evaluate(&alpha.add_identity(t)).unwrap();
    (-f(2.0 * s) + 8.0 * f(s) - 8.0 * f(-s) + f(-2.0 * s)) / (12.0 * s)
}

#[test]
fn identity_control_coefficients() {
    for d in 2..5 {
        let id = SymMatrix::identity(d).scale(1.0 / d as f64);
        let c = coefficients(&HessianOperator::det(d).normalized_root(), &id).unwrap();
        assert!(c.a.sub(&id).max_abs() < 1e-14);
        assert!((c.h - 1.0).abs() < 1e-12);
        for k in 1..=d {
            let op = HessianOperator::sigma(d, k).unwrap().normalized_root();
            let c = coefficients(&op, &id).unwrap();
            assert!(c.a.sub(&id).max_abs() < 1e-12);
            // tr ∇F(I) = F(I) = binom(d,k)^(1/k) by Euler's identity at I
            let oracle = (binom(d, k) as f64).powf(-1.0 / k as f64);
            assert!((c.h - oracle).abs() < 1e-12, "d={d} k={k}");
            let mf = maclaurin_factor(&HessianOperator::sigma(d, k).unwrap(), &id).unwrap();
            assert!((mf - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn h_inverts_identity_derivative_and_euler_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let ops = [
        HessianOperator::det(3).normalized_root(),
        HessianOperator::sigma(3, 2).unwrap().normalized_root(),
        HessianOperator::mu(3, 2).unwrap().normalized_root(),
        HessianOperator::sigma(3, 3).unwrap().quotient_operator(2).unwrap(),
    ];
    for op in &ops {
        for _ in 0..20 {
            let alpha = cone_point(&mut rng, 3);
            let c = coefficients(op, &alpha).unwrap();
            assert!((c.h * identity_derivative(op, &alpha) - 1.0).abs() < 1e-9);
            assert!((c.a.dot(&alpha) - c.h * op.evaluate(&alpha).unwrap()).abs() < 1e-8);
            assert!((c.a.trace() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn maclaurin_factor_matches_h_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for (d, k) in [(3, 2), (3, 3), (4, 2), (4, 3)] {
        let h = HessianOperator::sigma(d, k).unwrap();
        let hi = h.evaluate(&SymMatrix::identity(d)).unwrap();
        for _ in 0..20 {
            let alpha = cone_point(&mut rng, d);
            let mf = maclaurin_factor(&h, &alpha).unwrap();
            let c = coefficients(&h.normalized_root(), &alpha).unwrap();
            assert!((mf - c.h * hi.powf(1.0 / k as f64)).abs() < 1e-10);
            assert!(mf <= 1.0 + 1e-12);
        }
    }
    assert!(maclaurin_factor_of(&[1.0, -1.0]).is_err());
}

#[test]
fn residual_at_identity_is_attained_by_identity_control() {
    for d in [2, 3] {
        let op = HessianOperator::det(d).normalized_root();
        let spec = ControlGridSpec { n_rays: 12, n_levels: 6, n_orthogonal: 4, ..Default::default() };
        let set = control_grid(&op, &spec).unwrap();
        assert!(set.includes_identity);
        let gamma = SymMatrix::identity(d);
        let (r, idx) = set.residual_argmin(&gamma, 1.0);
        assert_eq!(idx, 0);
        assert!(r.abs() < 1e-14);
        for c in &set.coeffs {
            assert!(c.a.dot(&gamma) - c.h >= -1e-14);
        }
    }
}

#[test]
fn residual_converges_on_diag_4_1() {
    let op = HessianOperator::det(2).normalized_root();
    let gamma = SymMatrix::from_diag(&[4.0, 1.0]);
    let mut last = f64::INFINITY;
    for density in [10, 100, 1000, 10000] {
        let v = EquivalenceVerifier::new(&op, density).unwrap();
        let r = v.residual(&gamma, 2.0).unwrap();
        assert!(r >= -1e-12 && r <= last + 1e-15, "{density}: {r}");
        last = r;
    }
    assert!(last < 1e-5);
}

#[test]
fn residual_sign_follows_level() {
    let op = HessianOperator::sigma(3, 2).unwrap().normalized_root();
    let v = EquivalenceVerifier::new(&op, 2000).unwrap();
    let gamma = SymMatrix::from_diag(&[1.0, 2.0, 0.5]);
    let f = op.evaluate(&gamma).unwrap();
    assert!(v.residual(&gamma, 0.5 * f).unwrap() > 0.0);
    assert!(v.residual(&gamma, 1.5 * f).unwrap() < 0.0);
    let outside = SymMatrix::from_diag(&[-3.0, 0.1, 0.1]);
    assert!(v.residual(&outside, 0.0).unwrap() < 0.0);
}

#[test]
fn shift_oracle_matches_closed_form() {
    let op = HessianOperator::det(2).normalized_root();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        let g1: f64 = rng.random_range(-2.0..2.0);
        let g2: f64 = rng.random_range(-2.0..2.0);
        let c: f64 = rng.random_range(0.0..2.0);
        // (g1 + t)(g2 + t) = c² on the admissible branch
        let oracle = (-(g1 + g2) + ((g1 - g2).powi(2) + 4.0 * c * c).sqrt()) / 2.0;
        let t = shift_to_level(&op, &SymMatrix::from_diag(&[g1, g2]), c).unwrap();
        assert!((t - oracle).abs() < 1e-12, "{t} vs {oracle}");
    }
}

#[test]
fn verifier_trivial_cases() {
    for op in [HessianOperator::det(3).normalized_root(), HessianOperator::sigma(3, 2).unwrap().normalized_root()] {
        let fi = op.value_at_identity().unwrap();
        let r = verify_equivalence(&op, &SymMatrix::identity(3), fi, 1000, 1e-12).unwrap();
        assert!(r.pass && r.t1.abs() < 1e-12 && r.residual.abs() < 1e-12, "{r:?}");
        let r = verify_equivalence(&op, &SymMatrix::zeros(3), 0.0, 1000, 1e-5).unwrap();
        assert!(r.pass && r.t1.abs() < 1e-12, "{r:?}");
    }
    assert!(matches!(
        shift_to_level(&HessianOperator::det(2).normalized_root(), &SymMatrix::identity(2), f64::NAN),
        Err(Error::Bracket(_))
    ));
}

#[test]
fn verifier_random_sigma2() {
    let op = HessianOperator::sigma(3, 2).unwrap().normalized_root();
    let v = EquivalenceVerifier::new(&op, 10_000).unwrap();
    assert!(v.len() > 8000 && v.len() <= 10_001);
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..100 {
        let gamma = random_symmetric(3, 1.0, &mut rng);
        let c = rng.random_range(0.0..2.0);
        let r = v.verify(&gamma, c, 1e-3).unwrap();
        assert!(r.pass, "{r:?}");
    }
}

#[test]
fn control_grid_examples() {
    let op = HessianOperator::det(2).normalized_root();
    let only = control_grid(&op, &ControlGridSpec { n_rays: 0, ..Default::default() }).unwrap();
    assert_eq!(only.len(), 1);
    assert!(only.points[0].alpha.sub(&SymMatrix::identity(2).scale(0.5)).max_abs() < 1e-15);

    let spec = ControlGridSpec { n_rays: 2, n_levels: 10, n_orthogonal: 0, ..Default::default() };
    let set = control_grid(&op, &spec).unwrap();
    for p in &set.points {
        let l = &p.spectrum;
        assert!((l[0] + l[1] - 1.0).abs() < 1e-14);
        assert!(l[0] > 0.0 && l[1] > 0.0);
        assert!(op.in_cone(&p.alpha).unwrap().inside());
    }

    let empty = ControlGridSpec { n_rays: 0, include_identity: false, ..Default::default() };
    assert!(matches!(control_grid(&op, &empty), Err(Error::NoControls)));
}

#[test]
fn min_eigenvalue_grid_drops_identity() {
    let op = HessianOperator::det(3).min_eigenvalue_operator().unwrap();
    let set = control_grid(&op, &ControlGridSpec::default()).unwrap();
    assert!(!set.includes_identity);
    for c in &set.coeffs {
        assert!((c.a.trace() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn conjugation_closure_and_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for op in [
        HessianOperator::sigma(3, 2).unwrap().normalized_root(),
        HessianOperator::mu(3, 2).unwrap().normalized_root(),
        HessianOperator::sigma(4, 3).unwrap().normalized_root(),
    ] {
        let set = control_grid(&op, &ControlGridSpec::default()).unwrap();
        for (p, c) in set.points.iter().zip(&set.coeffs) {
            assert!((p.alpha.trace() - 1.0).abs() < 1e-12);
            let o = haar_orthogonal(op.dim, &mut rng);
            assert!(op.in_cone(&p.alpha.conjugate(&o)).unwrap().inside());
            // stored a agrees with a fresh gradient evaluation
            let fresh = coefficients(&op, &p.alpha).unwrap();
            assert!(fresh.a.sub(&c.a).max_abs() < 1e-9);
            assert!((fresh.h - c.h).abs() < 1e-9 * c.h);
            assert!(c.a.spectral().unwrap().eigenvalues[0] >= -1e-10);
        }
    }
}

#[test]
fn boundary_limit_of_gradient_pairing() {
    // γ on ∂Γ: tr(a(γ + εI) γ) → 0
    let cases = [
        (HessianOperator::det(3).normalized_root(), SymMatrix::from_diag(&[0.0, 1.0, 2.0])),
        (HessianOperator::sigma(3, 2).unwrap().normalized_root(), SymMatrix::from_diag(&[-1.0, 2.0, 2.0])),
        (HessianOperator::mu(3, 2).unwrap().normalized_root(), SymMatrix::from_diag(&[-1.0, 1.0, 3.0])),
    ];
    for (op, gamma) in cases {
        let mut last = f64::INFINITY;
        for eps in [1e-2, 1e-3, 1e-4] {
            let v = coefficients(&op, &gamma.add_identity(eps)).unwrap().a.dot(&gamma);
            assert!(v.abs() < last);
            last = v.abs();
        }
        assert!(last < 1e-3, "{:?}: {last}", op.kind);
    }
}

#[test]
fn complex_spectral_coefficients() {
    let g = HessianOperator::det(2).with_realm(Realm::Complex).normalized_root();
    let sc = spectral_coefficients(&g, &[0.5, 0.5]).unwrap();
    assert_eq!(sc.weights.len(), 4);
    assert!(sc.weights.iter().all(|w| (w - 0.25).abs() < 1e-15));
    assert!((sc.h - 1.0).abs() < 1e-12);
    let set = control_grid(&g, &ControlGridSpec { n_orthogonal: 3, ..Default::default() }).unwrap();
    assert_eq!(set.dim, 4);
    for (p, c) in set.points.iter().zip(&set.coeffs) {
        let fresh = coefficients(&g, &p.alpha).unwrap();
        assert!(fresh.a.sub(&c.a).max_abs() < 1e-9);
        assert!((p.alpha.trace() - 1.0).abs() < 1e-12);
    }
}

fn root_ops() -> Vec<HessianOperator> {
    vec![
        HessianOperator::det(3).normalized_root(),
        HessianOperator::sigma(3, 2).unwrap().normalized_root(),
        HessianOperator::mu(3, 2).unwrap().normalized_root(),
        HessianOperator::sigma(3, 3).unwrap().quotient_operator(1).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn coefficient_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha = cone_point(&mut rng, 3);
        let o = haar_orthogonal(3, &mut rng);
        let t = rng.random_range(0.1..10.0);
        for op in root_ops() {
            let c = coefficients(&op, &alpha).unwrap();
            prop_assert!(c.h > 0.0);
            prop_assert!((c.a.trace() - 1.0).abs() <= 1e-12);
            prop_assert!(c.a.spectral().unwrap().eigenvalues[0] >= -1e-10);
            let rot = coefficients(&op, &alpha.conjugate(&o)).unwrap();
            prop_assert!(rot.a.sub(&c.a.conjugate(&o)).max_abs() <= 1e-9);
            prop_assert!((rot.h - c.h).abs() <= 1e-9 * c.h);
            let sc = coefficients(&op, &alpha.scale(t)).unwrap();
            prop_assert!(sc.a.sub(&c.a).max_abs() <= 1e-10);
            prop_assert!((sc.h - c.h).abs() <= 1e-10 * c.h);
        }
    }

    #[test]
    fn residual_monotone_in_c_and_concave_in_gamma(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = HessianOperator::sigma(3, 2).unwrap().normalized_root();
        let set = control_grid(&op, &ControlGridSpec { n_orthogonal: 3, ..Default::default() }).unwrap();
        let g1 = random_symmetric(3, 1.0, &mut rng);
        let g2 = random_symmetric(3, 1.0, &mut rng);
        let c = rng.random_range(0.0..2.0);
        prop_assert!(bellman_residual(&set, &g1, c + 0.1) < bellman_residual(&set, &g1, c));
        let mid = bellman_residual(&set, &g1.add(&g2).scale(0.5), c);
        prop_assert!(mid >= 0.5 * (bellman_residual(&set, &g1, c) + bellman_residual(&set, &g2, c)) - 1e-12);
    }

    #[test]
    fn maclaurin_bound(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (d, k) in [(3, 2), (4, 3), (5, 2)] {
            let h = HessianOperator::sigma(d, k).unwrap();
            let lam: Vec<f64> = (0..d).map(|_| rng.random_range(-0.3..1.0)).collect();
            if h.in_cone_spectrum(&lam).unwrap().inside() {
                let mf = maclaurin_factor(&h, &SymMatrix::from_diag(&lam)).unwrap();
                prop_assert!(mf <= 1.0 + 1e-12);
            }
        }
    }
}
