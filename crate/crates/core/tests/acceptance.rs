//! Acceptance suite. Runs the eleven criteria in order, prints one verdict
//! line per criterion and a summary. A FAIL on a criterion listed in
//! `KNOWN_RED` is printed as such but does not fail the process; any other
//! FAIL exits non-zero.

use hessbell::bellman::*;
use hessbell::complexlift::*;
use hessbell::geometry::*;
use hessbell::matcore::*;
use hessbell::operators::*;
use hessbell::solver::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

/// Criteria whose measured behaviour contradicts the stated threshold.
const KNOWN_RED: &[usize] = &[6];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Sup-bound probe of one grid run.
struct Run {
    label: String,
    converged: bool,
    bound0: ProbeReport,
}

struct Solved {
    problem: DirichletProblem,
    grid: Grid,
    controls: ControlSet,
    solution: GridSolution,
    second: f64,
}

#[derive(Default)]
struct Ctx {
    runs: Vec<Run>,
    quadratic: Option<Solved>,
}

fn root_det(d: usize) -> HessianOperator {
    HessianOperator::det(d).normalized_root()
}

fn disk() -> DomainGeometry {
    DomainGeometry::ball(vec![0.0, 0.0], 1.0).unwrap()
}

fn identity_only(op: &HessianOperator) -> ControlSet {
    let n = working_dim(op);
    ControlSet::from_spectra(op, vec![DMatrix::identity(n, n)], &[], true, DEFAULT_MARGIN).unwrap()
}

fn solve(ctx: &mut Ctx, label: String, problem: &DirichletProblem, h: f64, controls: ControlSet) -> Solved {
    let grid = build_grid(&problem.dom, h).unwrap();
    let solution = policy_iteration(problem, &grid, &controls, &SolverSpec::default()).unwrap();
    let cert = build_barrier(&problem.dom, &controls, &BarrierSpec::default()).unwrap();
    let bound0 = regularity_probe(problem, &grid, &solution, &cert, ProbeMode::Bound0).unwrap();
    let second = regularity_probe(problem, &grid, &solution, &cert, ProbeMode::Second).unwrap().value;
    ctx.runs.push(Run { label, converged: solution.converged, bound0 });
    Solved { problem: problem.clone(), grid, controls, solution, second }
}

/// Spectrum uniform in a box, kept when λ − margin is still in the cone,
/// rotated by a Haar frame.
fn cone_sample(op: &HessianOperator, margin: f64, rng: &mut ChaCha8Rng) -> SymMatrix {
    loop {
        let lam: Vec<f64> = (0..op.dim).map(|_| rng.random_range(-0.5..1.5)).collect();
        let shifted: Vec<f64> = lam.iter().map(|l| l - margin).collect();
        if op.in_cone_spectrum(&shifted).unwrap().inside() {
            let q = haar_orthogonal(op.dim, rng);
            return SymMatrix::from_diag(&lam).conjugate(&q);
        }
    }
}

fn equivalence() -> Verdict {
    let ops = [
        ("det^(1/2) d=2", root_det(2)),
        ("det^(1/3) d=3", root_det(3)),
        ("sigma2^(1/2) d=3", HessianOperator::sigma(3, 2).unwrap().normalized_root()),
        ("mu2^(1/3) d=3", HessianOperator::mu(3, 2).unwrap().normalized_root()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, op) in &ops {
        let v = EquivalenceVerifier::new(op, 10_000).unwrap();
        let (mut failed, mut worst) = (0, 0.0f64);
        for _ in 0..500 {
            let gamma = random_symmetric(op.dim, 1.0, &mut rng);
            let c = rng.random_range(0.0..2.0);
            let r = v.verify(&gamma, c, 2e-3).unwrap();
            worst = worst.max((r.residual + r.t1).abs());
            failed += usize::from(!r.pass);
        }
        pass &= failed == 0;
        parts.push(format!("{name} {} controls, {failed}/500 fail, max|r+t1| {worst:.2e}", v.len()));
    }
    verdict(pass, format!("equivalence to 2e-3: {}", parts.join("; ")))
}

fn coefficient_identities() -> Verdict {
    let ops = [
        root_det(2),
        root_det(3),
        root_det(4),
        HessianOperator::sigma(3, 2).unwrap().normalized_root(),
        HessianOperator::sigma(4, 2).unwrap().normalized_root(),
        HessianOperator::sigma(4, 3).unwrap().normalized_root(),
        HessianOperator::mu(3, 2).unwrap().normalized_root(),
        HessianOperator::mu(4, 2).unwrap().normalized_root(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let margin = 0.01;
    let step = 1e-4;
    let (mut trace, mut psd, mut euler, mut grad, mut equi) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut nonpositive_h = 0;
    let samples = 10_000;
    for op in &ops {
        for _ in 0..samples {
            let alpha = cone_sample(op, margin, &mut rng);
            let c = coefficients(op, &alpha).unwrap();
            nonpositive_h += usize::from(!(c.h > 0.0));
            trace = trace.max((c.a.trace() - 1.0).abs());
            psd = psd.max(-c.a.spectral().unwrap().eigenvalues[0]);
            let f = op.evaluate(&alpha).unwrap();
            euler = euler.max((c.a.dot(&alpha) - c.h * f).abs() / (1.0 + f.abs()));

            let e = random_symmetric(op.dim, 1.0, &mut rng);
            let e = e.scale(1.0 / e.max_abs());
            let at = |t: f64| op.evaluate(&alpha.add(&e.scale(t))).unwrap();
            let fd = (-at(2.0 * step) + 8.0 * at(step) - 8.0 * at(-step) + at(-2.0 * step)) / (12.0 * step);
            let exact = op.gradient(&alpha).unwrap().dot(&e);
            grad = grad.max((fd - exact).abs() / (1.0 + exact.abs()));

            let o = haar_orthogonal(op.dim, &mut rng);
            let rot = coefficients(op, &alpha.conjugate(&o)).unwrap();
            equi = equi.max(rot.a.sub(&c.a.conjugate(&o)).max_abs()).max((rot.h - c.h).abs() / c.h);
        }
    }
    let pass = nonpositive_h == 0 && trace <= 1e-12 && psd <= 1e-12 && euler <= 1e-9 && grad <= 1e-6 && equi <= 1e-9;
    verdict(
        pass,
        format!(
            "{} operators x {samples} cone samples: h<=0 {nonpositive_h}, |tr a - 1| {trace:.1e}, \
             min eig(a) {:.1e}, Euler {euler:.1e}, gradient vs differences {grad:.1e}, equivariance {equi:.1e}",
            ops.len(),
            -psd
        ),
    )
}

fn maclaurin() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let families: Vec<(usize, usize)> = (2..=5).flat_map(|d| (2..=d).map(move |k| (d, k))).collect();
    let ops: Vec<HessianOperator> = families.iter().map(|&(d, k)| HessianOperator::sigma(d, k).unwrap()).collect();
    let n = 100_000;
    let mut worst = 0.0f64;
    for i in 0..n {
        let op = &ops[i % ops.len()];
        let alpha = cone_sample(op, 1e-3, &mut rng);
        worst = worst.max(maclaurin_factor(op, &alpha).unwrap());
    }
    verdict(
        worst <= 1.0 + 1e-12,
        format!("max Maclaurin factor {worst:.15} over {n} samples of sigma_k, d=2..5"),
    )
}

fn quadratic_exactness(ctx: &mut Ctx) -> Verdict {
    let op = root_det(2);
    let problem = DirichletProblem::new(op.clone(), disk(), Expr::constant(1.0), quadratic(&SymMatrix::identity(2)))
        .unwrap();
    let controls = control_grid(&op, &ControlGridSpec::default()).unwrap();
    let s = solve(ctx, "quadratic h=1/32".into(), &problem, 1.0 / 32.0, controls);
    let err = max_error(&s.grid, &s.solution, &problem.phi);
    // lattice points across the bounding box [−1, 1]²
    let per_axis: Vec<usize> =
        problem.dom.lower.iter().zip(&problem.dom.upper).map(|(l, u)| ((u - l) / s.grid.h).round() as usize + 1).collect();
    let pass = s.solution.converged && err <= 1e-8 && per_axis == [65, 65];
    let detail = format!(
        "det^(1/2), f=1, u=|x|^2/2 on the {}x{} lattice ({} interior nodes): max error {err:.2e}, {} iterations",
        per_axis[0],
        per_axis[1],
        s.grid.len(),
        s.solution.iterations
    );
    ctx.quadratic = Some(s);
    verdict(pass, detail)
}

struct Step {
    h: f64,
    error: f64,
    n2: f64,
    converged: bool,
}

fn ladder(ctx: &mut Ctx, name: &str, phi: &Expr) -> Vec<Step> {
    let op = root_det(2);
    let problem = DirichletProblem::new(op.clone(), disk(), Expr::constant(0.0), phi.clone()).unwrap();
    [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0]
        .into_iter()
        .map(|h| {
            let controls = control_grid(&op, &control_spec_for_h(&ControlGridSpec::default(), h)).unwrap();
            let s = solve(ctx, format!("{name} h=1/{}", (1.0 / h).round()), &problem, h, controls);
            Step { h, error: max_error(&s.grid, &s.solution, phi), n2: s.second, converged: s.solution.converged }
        })
        .collect()
}

fn ratios(steps: &[Step]) -> Vec<f64> {
    steps.windows(2).map(|w| w[1].n2 / w[0].n2).collect()
}

fn describe(steps: &[Step]) -> String {
    steps
        .iter()
        .map(|s| format!("h=1/{} err {:.3e} N2 {:.4}", (1.0 / s.h).round(), s.error, s.n2))
        .collect::<Vec<_>>()
        .join(", ")
}

fn squared_plus(i: usize) -> Expr {
    let mut p = vec![0, 0];
    p[i] = 2;
    Expr::Polynomial { terms: vec![Term { coeff: 1.0, powers: p }, Term { coeff: -0.5, powers: vec![0, 0] }] }
}

fn c11_example(ctx: &mut Ctx) -> Verdict {
    let exact = Expr::AbsPower {
        base: Box::new(Expr::Max { args: vec![squared_plus(0), squared_plus(1), Expr::constant(0.0)] }),
        exponent: 2.0,
    };
    let steps = ladder(ctx, "C11 example", &exact);
    let r = ratios(&steps);
    let monotone = steps.windows(2).all(|w| w[1].error < w[0].error);
    let pass = steps.iter().all(|s| s.converged)
        && monotone
        && steps.last().unwrap().error <= 0.02
        && r.iter().all(|&q| q <= 1.5);
    verdict(pass, format!("{}; N2 ratios {:.3?}; errors decreasing {monotone}", describe(&steps), r))
}

fn rough_example(ctx: &mut Ctx) -> Verdict {
    let eps = 0.25;
    let phi = Expr::AbsPower { base: Box::new(Expr::coordinate(2, 0)), exponent: 2.0 - eps };
    let steps = ladder(ctx, "rough example", &phi);
    let r = ratios(&steps);
    let pass = steps.iter().all(|s| s.converged) && r.iter().all(|&q| q >= 1.5);
    verdict(
        pass,
        format!(
            "eps={eps}: {}; N2 ratios {:.3?} (h^-eps growth gives {:.3})",
            describe(&steps),
            r,
            2f64.powf(eps)
        ),
    )
}

fn bound0(ctx: &Ctx) -> Verdict {
    let converged: Vec<&Run> = ctx.runs.iter().filter(|r| r.converged).collect();
    let failing: Vec<&str> =
        converged.iter().filter(|r| r.bound0.pass != Some(true)).map(|r| r.label.as_str()).collect();
    let slack = converged.iter().map(|r| r.bound0.value).fold(f64::INFINITY, f64::min);
    verdict(
        !converged.is_empty() && failing.is_empty(),
        format!(
            "sup bound on {} of {} runs converged; smallest slack {slack:.3e}; failing {failing:?}",
            converged.len(),
            ctx.runs.len()
        ),
    )
}

fn mc_poisson(ctx: &mut Ctx) -> Verdict {
    let op = root_det(2);
    let problem = DirichletProblem::new(op.clone(), disk(), Expr::constant(1.0), Expr::constant(0.0)).unwrap();
    let s = solve(ctx, "poisson h=1/32".into(), &problem, 1.0 / 32.0, identity_only(&op));
    let centre = [0.0, 0.0];
    let uh = s.solution.value_at(&problem, &s.grid, &centre).unwrap();
    let id = identity_control(&s.controls).unwrap();
    let est = mc_value(
        &problem,
        &centre,
        &McPolicy::Constant(id),
        &McSpec { n_paths: 100_000, dt: 1e-4, seed: 8, ..Default::default() },
    )
    .unwrap();
    let poisson_ok = (est.mean - uh).abs() <= 3.0 * est.std_error + 0.01;

    let harmonic = DirichletProblem::new(op, disk(), Expr::constant(0.0), Expr::coordinate(2, 0)).unwrap();
    let mut worst_z = 0.0f64;
    for i in 0..10 {
        let r = 0.85 * (i as f64 + 0.5) / 10.0;
        let t = 2.399_963 * i as f64;
        let x = [r * t.cos(), r * t.sin()];
        let e = mc_value(
            &harmonic,
            &x,
            &McPolicy::Constant(id),
            &McSpec { n_paths: 10_000, dt: 1e-4, seed: 80 + i as u64, ..Default::default() },
        )
        .unwrap();
        worst_z = worst_z.max((e.mean - x[0]).abs() / e.std_error);
    }
    verdict(
        poisson_ok && worst_z <= 3.0,
        format!(
            "centre: MC {:.5} +- {:.5} vs grid {uh:.5} ({} paths, dt 1e-4); harmonic x1 at 10 points: worst |mean - x1| = {worst_z:.2} std errors",
            est.mean, est.std_error, est.n_paths
        ),
    )
}

fn mc_upper_bound(ctx: &Ctx) -> Verdict {
    let s = ctx.quadratic.as_ref().expect("criterion 4 solution");
    let n = s.controls.len();
    let picks: Vec<usize> = (0..5).map(|i| i * n / 5).collect();
    let points = [[0.0, 0.0], [0.3, 0.2], [-0.5, 0.1], [0.2, -0.6], [-0.3, -0.4]];
    let mut worst = f64::INFINITY;
    let mut seed = 90;
    for &k in &picks {
        for x in &points {
            let uh = s.solution.value_at(&s.problem, &s.grid, x).unwrap();
            let e = mc_value(
                &s.problem,
                x,
                &McPolicy::Constant(&s.controls.coeffs[k]),
                &McSpec { n_paths: 4000, dt: 1e-4, seed, ..Default::default() },
            )
            .unwrap();
            seed += 1;
            worst = worst.min(e.mean + 3.0 * e.std_error - (uh - 0.01));
        }
    }
    verdict(
        worst >= 0.0,
        format!("controls {picks:?} of {n} at 5 points, 4000 paths each: min of mean + 3se - (u_h - 0.01) = {worst:.4}"),
    )
}

fn complex_lift(ctx: &mut Ctx) -> Verdict {
    let op = HessianOperator::det(2).with_realm(Realm::Complex).normalized_root();
    let ball = DomainGeometry::new(ShapeSpec::Ball { center: vec![0.0; 4], radius: 1.0 }, Realm::Complex).unwrap();
    let exact = Expr::squared_norm(4, 1.0);
    let p = ComplexProblem::new(op.clone(), ball, Expr::constant(1.0), exact.clone()).unwrap();
    let lifted = lift(&p).unwrap();
    let controls = complex_controls(&op, &ControlGridSpec { n_orthogonal: 2, ..Default::default() }).unwrap();
    let s = solve(ctx, "complex |z|^2 h=1/8".into(), &lifted.problem, 0.125, controls);
    let err = max_error(&s.grid, &s.solution, &exact);
    let cres = complex_residuals(&lifted, &s.grid, &s.solution, &s.controls, &p.f);
    let cworst = cres.iter().fold(0.0f64, |m, r| m.max(r.1.abs()));

    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let b = random_hermitian(2, 0.5, &mut rng);
        let beta = b.add_identity(0.2 - b.spectral().unwrap().eigenvalues[0]);
        let cc = complex_coefficients(&op, &beta).unwrap();
        let real = coefficients(&op, &phi_embed(&beta)).unwrap();
        let a = Wirtinger::diffusion_from_trace_one(&real.a);
        worst = worst.max(Wirtinger::diffusion(&cc.b).sub(&a).max_abs()).max((real.h - cc.l).abs());
    }
    verdict(
        s.solution.converged && err <= 1e-6 && cres.len() > 0 && cworst <= 1e-6 && worst <= 1e-9,
        format!(
            "unit ball of C^2, {} nodes: max error {err:.2e}, complex residual {cworst:.2e} at {} nodes; \
             Phi(b)/4 vs a over 1000 samples {worst:.2e}",
            s.grid.len(),
            cres.len()
        ),
    )
}

/// (|x|²)² − 2(x₁² − Σ_{i>1} x_i²) − 0.4641, star-shaped from 0.
fn peanut(d: usize) -> DomainGeometry {
    let mut terms = Vec::new();
    for i in 0..d {
        for j in 0..d {
            let mut p = vec![0; d];
            p[i] += 2;
            p[j] += 2;
            terms.push(Term { coeff: 1.0, powers: p });
        }
        let mut p = vec![0; d];
        p[i] = 2;
        terms.push(Term { coeff: if i == 0 { -2.0 } else { 2.0 }, powers: p });
    }
    terms.push(Term { coeff: -0.4641, powers: vec![0; d] });
    DomainGeometry::polynomial(vec![0.0; d], terms).unwrap()
}

fn geometry() -> Verdict {
    let mut sphere = 0.0f64;
    for d in 2..=4 {
        for r in [0.7, 2.0] {
            let dom = DomainGeometry::ball(vec![0.3; d], r).unwrap();
            for x in dom.boundary_samples(256, 11).unwrap() {
                let s = second_fundamental_form(&dom, &x).unwrap();
                sphere = sphere.max(s.ii.sub(&SymMatrix::identity(d - 1).scale(1.0 / r)).max_abs());
            }
        }
    }

    let mut agreement = Vec::new();
    let mut agree_all = true;
    for d in [3, 4] {
        let axes: Vec<f64> = [1.0, 0.6, 0.4, 0.8][..d].to_vec();
        let shapes = [("ellipsoid", DomainGeometry::ellipsoid(vec![0.0; d], axes).unwrap()), ("peanut", peanut(d))];
        for k in [2, 3] {
            let op = HessianOperator::sigma(d, k).unwrap().normalized_root();
            for (name, dom) in &shapes {
                let rep = check_strict_gamma_convexity(dom, &op, 2048, 1_048_576.0, 12).unwrap();
                agree_all &= rep.shortcut_agrees() == Some(true);
                agreement.push(format!("{name} d={d} k={k} {}/{}", rep.shortcut_agreement.unwrap_or(0), rep.samples));
            }
        }
    }

    let op = root_det(2);
    let controls = control_grid(&op, &ControlGridSpec::default()).unwrap();
    let mut barrier = Vec::new();
    let mut barrier_ok = true;
    for (name, dom) in [("ball", disk()), ("ellipsoid", DomainGeometry::ellipsoid(vec![0.0; 2], vec![1.0, 0.6]).unwrap())] {
        let cert = build_barrier(&dom, &controls, &BarrierSpec::default()).unwrap();
        // −1 up to the rounding of −C·m
        barrier_ok &= cert.worst_residual <= -1.0 + 1e-12;
        barrier.push(format!("{name} C={} worst {:.6}", cert.c, cert.worst_residual));
    }

    let superellipse = DomainGeometry::polynomial(
        vec![0.0, 0.0],
        vec![
            Term { coeff: 1.0, powers: vec![4, 0] },
            Term { coeff: 1.0, powers: vec![0, 4] },
            Term { coeff: -1.0, powers: vec![0, 0] },
        ],
    )
    .unwrap();
    let box_rep = check_strict_gamma_convexity(&superellipse, &op, 2048, 1_048_576.0, 0).unwrap();

    verdict(
        sphere <= 1e-10 && agree_all && barrier_ok && !box_rep.pass,
        format!(
            "sphere II - I/R {sphere:.1e}; shortcut agreement {}; barriers {}; superellipse det-convex {} ({} failing samples)",
            agreement.join(", "),
            barrier.join(", "),
            box_rep.pass,
            box_rep.failures
        ),
    )
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Verdict, results: &mut Vec<(usize, bool)>) {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    let tag = match (v.pass, KNOWN_RED.contains(&id)) {
        (true, _) => "PASS",
        (false, true) => "FAIL (known red)",
        (false, false) => "FAIL",
    };
    println!("criterion {id:>2} {tag} [{name}, {:.1}s] {}", start.elapsed().as_secs_f64(), v.detail);
    results.push((id, v.pass));
}

fn main() {
    println!("hessbell acceptance suite");
    let mut ctx = Ctx::default();
    let mut results = Vec::new();
    run(1, "Bellman equivalence", equivalence, &mut results);
    run(2, "coefficient identities", coefficient_identities, &mut results);
    run(3, "Maclaurin factor", maclaurin, &mut results);
    run(4, "quadratic exactness", || quadratic_exactness(&mut ctx), &mut results);
    run(5, "C^{1,1} example ladder", || c11_example(&mut ctx), &mut results);
    run(6, "rough boundary data ladder", || rough_example(&mut ctx), &mut results);
    run(8, "Monte Carlo consistency", || mc_poisson(&mut ctx), &mut results);
    run(9, "constant-control upper bound", || mc_upper_bound(&ctx), &mut results);
    run(10, "complex lift", || complex_lift(&mut ctx), &mut results);
    run(11, "boundary geometry", geometry, &mut results);
    run(7, "sup bound on converged runs", || bound0(&ctx), &mut results);

    results.sort();
    let passed = results.iter().filter(|r| r.1).count();
    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    let unexpected: Vec<usize> = failed.iter().copied().filter(|id| !KNOWN_RED.contains(id)).collect();
    println!("acceptance: {passed} PASS, {} FAIL {failed:?}; unexpected failures {unexpected:?}", failed.len());
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
