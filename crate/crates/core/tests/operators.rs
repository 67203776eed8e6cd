use hessbell::matcore::*;
use hessbell::operators::*;
use hessbell::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn diag(v: &[f64]) -> SymMatrix {
    SymMatrix::from_diag(v)
}

/// Elementary symmetric polynomial by brute force over subsets.
fn esym(lam: &[f64], k: usize) -> f64 {
    let d = lam.len();
    let mut s = 0.0;
    for mask in 0u32..(1 << d) {
        if mask.count_ones() as usize == k {
            s += (0..d).filter(|i| mask & (1 << i) != 0).map(|i| lam[i]).product::<f64>();
        }
    }
    s
}

/// Product of all k-subset sums by brute force.
fn mu_brute(lam: &[f64], k: usize) -> f64 {
    let d = lam.len();
    let mut p = 1.0;
    for mask in 0u32..(1 << d) {
        if mask.count_ones() as usize == k {
            p *= (0..d).filter(|i| mask & (1 << i) != 0).map(|i| lam[i]).sum::<f64>();
        }
    }
    p
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

#[test]
fn evaluate_examples() {
    assert!((HessianOperator::det(3).evaluate(&diag(&[1.0, 2.0, 3.0])).unwrap() - 6.0).abs() < 1e-12);
    let s2 = HessianOperator::sigma(3, 2).unwrap();
    assert!((s2.evaluate(&SymMatrix::identity(3)).unwrap() - 3.0).abs() < 1e-12);
    let m2 = HessianOperator::mu(3, 2).unwrap();
    let oracle = mu_brute(&[1.0, 2.0, 3.0], 2);
    assert_eq!(oracle, 60.0);
    assert!((m2.evaluate(&diag(&[1.0, 2.0, 3.0])).unwrap() - oracle).abs() < 1e-10);
}

#[test]
fn garding_examples() {
    let det = HessianOperator::det(3);
    let g = det.garding_eigenvalues(&diag(&[1.0, 2.0, 3.0])).unwrap().values;
    assert_eq!(g, vec![1.0, 2.0, 3.0]);
    let generic = det.garding_eigenvalues_generic(&diag(&[1.0, 2.0, 3.0])).unwrap().values;
    for (a, b) in generic.iter().zip([1.0, 2.0, 3.0]) {
        assert!((a - b).abs() < 1e-10);
    }

    let s2 = HessianOperator::sigma(3, 2).unwrap();
    let z = s2.garding_eigenvalues(&SymMatrix::zeros(3)).unwrap().values;
    assert!(z.iter().all(|v| v.abs() < 1e-12), "{z:?}");
    // 3t^2 + 12t + 11 = 0 by the quadratic formula
    let disc: f64 = 12.0 * 12.0 - 4.0 * 3.0 * 11.0;
    let oracle = [(12.0 - disc.sqrt()) / 6.0, (12.0 + disc.sqrt()) / 6.0];
    let g = s2.garding_eigenvalues(&diag(&[1.0, 2.0, 3.0])).unwrap().values;
    for (a, b) in g.iter().zip(oracle) {
        assert!((a - b).abs() < 1e-10, "{g:?}");
    }
    assert!((g[0] - 1.42265).abs() < 1e-5 && (g[1] - 2.57735).abs() < 1e-5);
}

#[test]
fn garding_product_invariant_and_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ops = [
        HessianOperator::det(4),
        HessianOperator::sigma(4, 2).unwrap(),
        HessianOperator::sigma(4, 3).unwrap(),
        HessianOperator::mu(4, 2).unwrap(),
        HessianOperator::sigma(4, 3).unwrap().derivative_operator(1).unwrap(),
    ];
    for op in &ops {
        let hi = op.evaluate(&SymMatrix::identity(4)).unwrap();
        let gi = op.garding_eigenvalues(&SymMatrix::identity(4)).unwrap().values;
        assert!(gi.iter().all(|v| (v - 1.0).abs() < 1e-9), "{op:?} {gi:?}");
        for _ in 0..20 {
            let m = random_symmetric(4, 1.0, &mut rng).add_identity(1.0);
            let g = op.garding_eigenvalues(&m).unwrap().values;
            assert_eq!(g.len(), op.degree());
            let prod: f64 = g.iter().product();
            let h = op.evaluate(&m).unwrap();
            assert!(rel(h, hi * prod) <= 1e-8 * (1.0 + h.abs()), "{op:?}: {h} vs {}", hi * prod);
        }
    }
}

#[test]
fn mu_garding_eigenvalues_are_subset_means() {
    let g = HessianOperator::mu(3, 2).unwrap().garding_eigenvalues_generic(&diag(&[1.0, 2.0, 6.0])).unwrap();
    let oracle = [1.5, 3.5, 4.0];
    for (a, b) in g.values.iter().zip(oracle) {
        assert!((a - b).abs() < 1e-9, "{:?}", g.values);
    }
}

#[test]
fn cone_examples() {
    let s = HessianOperator::det(3).in_cone(&diag(&[1.0, 1.0, -1.0])).unwrap();
    assert_eq!(s.class, ConeClass::Outside);
    assert!((s.margin + 1.0).abs() < 1e-12);
    // p(t) = 3t^2 + 6t: roots 0 and -2
    let s = HessianOperator::sigma(3, 2).unwrap().in_cone(&diag(&[-1.0, 2.0, 2.0])).unwrap();
    assert_eq!(s.class, ConeClass::Boundary);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ops = [
        HessianOperator::det(3),
        HessianOperator::sigma(3, 1).unwrap(),
        HessianOperator::sigma(3, 2).unwrap(),
        HessianOperator::mu(3, 1).unwrap(),
        HessianOperator::mu(3, 2).unwrap(),
    ];
    for _ in 0..20 {
        let b = random_symmetric(3, 1.0, &mut rng).to_dense();
        let psd = SymMatrix::from_dense_sym(&(&b * b.transpose())).add_identity(1e-3);
        for op in &ops {
            assert!(op.in_cone(&psd).unwrap().inside(), "{op:?}");
        }
    }
}

#[test]
fn gradient_examples() {
    for d in 2..5 {
        let f = HessianOperator::det(d).normalized_root();
        let g = f.gradient(&SymMatrix::identity(d)).unwrap();
        assert!(g.sub(&SymMatrix::identity(d).scale(1.0 / d as f64)).max_abs() < 1e-12);
        for k in 1..=d {
            let s = HessianOperator::sigma(d, k).unwrap();
            let g = s.gradient(&SymMatrix::identity(d)).unwrap();
            let c = binom(d - 1, k - 1) as f64;
            assert!(g.sub(&SymMatrix::identity(d).scale(c)).max_abs() < 1e-10);
            assert!((g.trace() - (k * binom(d, k)) as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn gradient_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ops = [
        HessianOperator::det(3).normalized_root(),
        HessianOperator::sigma(3, 2).unwrap().normalized_root(),
        HessianOperator::mu(3, 2).unwrap().normalized_root(),
        HessianOperator::sigma(3, 3).unwrap().quotient_operator(1).unwrap(),
    ];
    for op in &ops {
        for _ in 0..20 {
            let b = random_symmetric(3, 1.0, &mut rng).to_dense();
            let a = SymMatrix::from_dense_sym(&(&b * b.transpose())).add_identity(0.1);
            let o = haar_orthogonal(3, &mut rng);
            let lhs = op.gradient(&a.conjugate(&o)).unwrap();
            let rhs = op.gradient(&a).unwrap().conjugate(&o);
            assert!(lhs.sub(&rhs).max_abs() <= 1e-9, "{op:?}");
        }
    }
}

#[test]
fn derivative_of_sigma_is_scaled_lower_sigma() {
    // d^k/dt^k sigma_m(lam + t) = k! C(d-m+k, k) sigma_{m-k}(lam)
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = 4;
    for m in 2..=d {
        for k in 1..m {
            let h = HessianOperator::sigma(d, m).unwrap().derivative_operator(k).unwrap();
            assert_eq!(h.degree(), m - k);
            for _ in 0..5 {
                let lam: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..2.0)).collect();
                let c = (1..=k).product::<usize>() as f64 * binom(d - m + k, k) as f64;
                let oracle = c * esym(&lam, m - k);
                let v = h.evaluate(&diag(&lam)).unwrap();
                assert!(rel(v, oracle) < 1e-10, "m={m} k={k}: {v} vs {oracle}");
            }
        }
    }
    // d = 2: d/dt det(M + tI) at 0 is the trace
    let tr = HessianOperator::det(2).derivative_operator(1).unwrap();
    let m = SymMatrix::from_fn(2, |i, j| [[1.5, 0.3], [0.3, -0.4]][i][j]);
    assert!((tr.evaluate(&m).unwrap() - m.trace()).abs() < 1e-12);
    assert_eq!(HessianOperator::det(3).derivative_operator(0).unwrap(), HessianOperator::det(3));
    assert!(matches!(HessianOperator::det(3).derivative_operator(3), Err(Error::Degree { .. })));
}

#[test]
fn quotient_matches_direct_ratio_and_logdiff() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = HessianOperator::sigma(4, 3).unwrap();
    let hp = h.derivative_operator(1).unwrap();
    let q1 = h.quotient_operator(1).unwrap();
    let q2 = h.quotient_operator(2).unwrap();
    let hpp = h.derivative_operator(2).unwrap();
    let i4 = SymMatrix::identity(4);
    assert!(rel(q1.evaluate(&i4).unwrap(), h.evaluate(&i4).unwrap() / hp.evaluate(&i4).unwrap()) < 1e-12);
    for _ in 0..30 {
        let b = random_symmetric(4, 1.0, &mut rng).to_dense();
        let m = SymMatrix::from_dense_sym(&(&b * b.transpose())).add_identity(0.05);
        let lam = h.garding_eigenvalues(&m).unwrap().values;
        let oracle = h.evaluate(&m).unwrap() * lam.iter().map(|l| 1.0 / l).sum::<f64>();
        assert!(rel(hp.evaluate(&m).unwrap(), oracle) < 1e-8);
        let direct = (h.evaluate(&m).unwrap() / hpp.evaluate(&m).unwrap()).sqrt();
        assert!(rel(q2.evaluate(&m).unwrap(), direct) < 1e-12);
    }
    assert!(matches!(h.quotient_operator(3), Err(Error::Degree { .. })));
}

#[test]
fn min_eigenvalue_examples() {
    let me = HessianOperator::det(3).min_eigenvalue_operator().unwrap();
    assert!((me.evaluate(&diag(&[5.0, 2.0, 7.0])).unwrap() - 2.0).abs() < 1e-12);
    let mu = HessianOperator::mu(3, 2).unwrap().min_eigenvalue_operator().unwrap();
    assert!((mu.evaluate(&diag(&[1.0, 2.0, 6.0])).unwrap() - 1.5).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let s = HessianOperator::sigma(3, 2).unwrap().min_eigenvalue_operator().unwrap();
    for _ in 0..20 {
        let m = cone_point(&mut rng, 3);
        for op in [&me, &mu, &s] {
            let a = op.evaluate(&m).unwrap();
            let b = op.evaluate(&m.add_identity(3.0)).unwrap();
            assert!((b - a - 3.0).abs() < 1e-9);
            let g = op.gradient(&m).unwrap();
            assert!((g.trace() - 1.0).abs() < 1e-8);
        }
    }
    assert!(matches!(me.gradient(&SymMatrix::identity(3)), Err(Error::NonDifferentiable { .. })));
}

#[test]
fn geometric_mean_examples() {
    let r = HessianOperator::det(3).normalized_root();
    assert_eq!(HessianOperator::geometric_mean_operator(&[r.clone()]).unwrap(), r);
    let gm = HessianOperator::geometric_mean_operator(&[r.clone(), r.clone()]).unwrap();
    let m = diag(&[1.0, 2.0, 5.0]);
    assert!(rel(gm.evaluate(&m).unwrap(), r.evaluate(&m).unwrap()) < 1e-14);
    let a = HessianOperator::mu(3, 1).unwrap().normalized_root();
    let b = HessianOperator::mu(3, 2).unwrap().normalized_root();
    let g2 = HessianOperator::geometric_mean_operator(&[a, b]).unwrap();
    let lam = [0.5, 1.5, 2.0];
    let oracle = (mu_brute(&lam, 1).powf(1.0 / 3.0) * mu_brute(&lam, 2).powf(1.0 / 3.0)).sqrt();
    assert!(rel(g2.evaluate(&diag(&lam)).unwrap(), oracle) < 1e-12);
    assert!(HessianOperator::geometric_mean_operator(&[]).is_err());
}

#[test]
fn degeneracy_witnesses() {
    for d in 2..5 {
        for k in 2..=d {
            // d-k+1 zero eigenvalues
            let lam: Vec<f64> = (0..d).map(|i| if i < d - k + 1 { 0.0 } else { 1.0 }).collect();
            let s = HessianOperator::sigma(d, k).unwrap().in_cone(&diag(&lam)).unwrap();
            assert_eq!(s.class, ConeClass::Boundary, "sigma_{k} d={d}");
        }
        for k in 1..d {
            let lam: Vec<f64> = (0..d).map(|i| if i < k { 0.0 } else { 1.0 }).collect();
            let s = HessianOperator::mu(d, k).unwrap().in_cone(&diag(&lam)).unwrap();
            assert_eq!(s.class, ConeClass::Boundary, "mu_{k} d={d}");
        }
    }
}

#[test]
fn root_kind_rejects_points_outside_the_cone() {
    let f = HessianOperator::det(2).normalized_root();
    // det = 1 > 0 but both eigenvalues negative
    match f.evaluate(&diag(&[-1.0, -1.0])) {
        Err(Error::ConeViolation { min_eigenvalue }) => assert!((min_eigenvalue + 1.0).abs() < 1e-12),
        other => panic!("{other:?}"),
    }
    assert_eq!(f.evaluate(&diag(&[0.0, 3.0])).unwrap(), 0.0);
}

#[test]
fn specs_round_trip_through_toml() {
    let text = r#"
kind = "quotient"
k = 1
[base]
kind = "sigma"
k = 3
d = 4
"#;
    let spec: OperatorSpec = toml::from_str(text).unwrap();
    let op = spec.build(Realm::Real).unwrap();
    assert_eq!(op, HessianOperator::sigma(4, 3).unwrap().quotient_operator(1).unwrap());
    let s: OperatorSpec = serde_json::from_str(r#"{"kind":"sigma","k":2,"d":3,"root_normalized":true}"#).unwrap();
    assert_eq!(s.build(Realm::Real).unwrap(), HessianOperator::sigma(3, 2).unwrap().normalized_root());
    let back = serde_json::to_string(&s).unwrap();
    assert_eq!(back, r#"{"kind":"sigma","k":2,"d":3,"root_normalized":true}"#);
}

#[test]
fn complex_realm_through_phi() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let g = HessianOperator::det(2).with_realm(Realm::Complex).normalized_root();
    for _ in 0..20 {
        let b = random_hermitian(2, 0.3, &mut rng).add_identity(1.0);
        let direct = g.evaluate_herm(&b).unwrap();
        let lifted = g.evaluate(&phi_embed(&b)).unwrap();
        assert!((direct - lifted).abs() < 1e-10);
    }
    assert!(matches!(
        HessianOperator::det(2).evaluate_herm(&HermMatrix::identity(2)),
        Err(Error::RealmMismatch(_))
    ));
}

fn one_homogeneous_ops(d: usize) -> Vec<HessianOperator> {
    vec![
        HessianOperator::det(d).normalized_root(),
        HessianOperator::sigma(d, 2).unwrap().normalized_root(),
        HessianOperator::mu(d, 2).unwrap().normalized_root(),
        HessianOperator::sigma(d, d).unwrap().quotient_operator(1).unwrap(),
        HessianOperator::sigma(d, d).unwrap().quotient_operator(2).unwrap(),
        HessianOperator::det(d).min_eigenvalue_operator().unwrap(),
        HessianOperator::geometric_mean_operator(&[
            HessianOperator::mu(d, 1).unwrap().normalized_root(),
            HessianOperator::mu(d, 2).unwrap().normalized_root(),
        ])
        .unwrap(),
    ]
}

fn cone_point(rng: &mut ChaCha8Rng, d: usize) -> SymMatrix {
    let b = random_symmetric(d, 1.0, rng).to_dense();
    SymMatrix::from_dense_sym(&(&b * b.transpose())).add_identity(0.05)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn homogeneity_and_invariance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let m = cone_point(&mut rng, d);
        let o = haar_orthogonal(d, &mut rng);
        for op in one_homogeneous_ops(d) {
            let f = op.evaluate(&m).unwrap();
            for t in [0.5, 2.0, 10.0] {
                prop_assert!(rel(op.evaluate(&m.scale(t)).unwrap(), t * f) <= 1e-10);
            }
            prop_assert!(rel(op.evaluate(&m.conjugate(&o)).unwrap(), f) <= 1e-9);
        }
    }

    #[test]
    fn concavity_and_superlinearity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let a = cone_point(&mut rng, d);
        let b = cone_point(&mut rng, d);
        for op in one_homogeneous_ops(d) {
            let fa = op.evaluate(&a).unwrap();
            let fb = op.evaluate(&b).unwrap();
            let mid = op.evaluate(&a.add(&b).scale(0.5)).unwrap();
            prop_assert!(mid >= 0.5 * (fa + fb) - 1e-10, "{:?}", op.kind);
            prop_assert!(op.evaluate(&a.add(&b)).unwrap() >= fa + fb - 1e-10);
        }
    }

    #[test]
    fn eigenvalue_monotonicity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let m = random_symmetric(d, 1.0, &mut rng);
        let s = cone_point(&mut rng, d);
        for op in [HessianOperator::det(d), HessianOperator::sigma(d, 2).unwrap(), HessianOperator::mu(d, 2).unwrap()] {
            let l0 = op.garding_eigenvalues(&m).unwrap().values;
            let l1 = op.garding_eigenvalues(&m.add(&s)).unwrap().values;
            for (a, b) in l0.iter().zip(&l1) {
                prop_assert!(a < b);
            }
        }
    }

    #[test]
    fn cone_nesting(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 4;
        let m = random_symmetric(d, 1.0, &mut rng).add_identity(rng.random_range(-0.5..2.0));
        for k in 2..=d {
            if HessianOperator::sigma(d, k).unwrap().in_cone(&m).unwrap().inside() {
                prop_assert!(HessianOperator::sigma(d, k - 1).unwrap().in_cone(&m).unwrap().inside());
            }
        }
        for k in 1..d {
            if HessianOperator::mu(d, k).unwrap().in_cone(&m).unwrap().inside() {
                prop_assert!(HessianOperator::mu(d, k + 1).unwrap().in_cone(&m).unwrap().inside());
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let m = cone_point(&mut rng, d);
        let step = 1e-5;
        for op in one_homogeneous_ops(d) {
            let g = match op.gradient(&m) { Ok(g) => g, Err(Error::NonDifferentiable { .. }) => continue, Err(e) => panic!("{e}") };
            let scale = g.max_abs().max(1e-12);
            for i in 0..d {
                for j in i..d {
                    let mut e = SymMatrix::zeros(d);
                    e.set(i, j, 1.0);
                    let fp = op.evaluate(&m.add(&e.scale(step))).unwrap();
                    let fm = op.evaluate(&m.sub(&e.scale(step))).unwrap();
                    let fd = (fp - fm) / (2.0 * step);
                    let an = if i == j { g.get(i, i) } else { 2.0 * g.get(i, j) };
                    prop_assert!((fd - an).abs() / scale <= 1e-5, "{:?} ({i},{j}) {fd} vs {an}", op.kind);
                }
            }
        }
    }
}
