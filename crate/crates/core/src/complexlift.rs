//! Complex Hessian equations G(u_{z z̄}) = f on a domain in C^d, realified on
//! R^{2d} so the real solver handles them.
//!
//! Coordinates: x = (Re z, Im z). Complex operators already evaluate real
//! 2d x 2d arguments through the averaging projection, so the lifted problem
//! keeps the complex operator and only rescales the source.

use crate::bellman::{control_grid, ControlGridSpec, ControlSet};
use crate::geometry::DomainGeometry;
use crate::matcore::{haar_unitary, phi_embed, phi_project, random_hermitian, HermMatrix, SymMatrix, C64};
use crate::operators::{real_roots, restriction_coefficients, HessianOperator, Realm};
use crate::solver::{DirichletProblem, Expr, Grid, GridSolution};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Constant bookkeeping between a complex equation and its realification.
///
/// With x = Φz and u_xx the real Hessian:
/// * u_{z z̄} = Ψ(u_xx)/2, Ψ the averaging left inverse of Φ;
/// * tr[Φ(b) u_xx] = 4 tr[b u_{z z̄}];
/// * the complex diffusion with generator tr[b u_{z z̄}] realifies to
///   dx = √(2a) dw with a = Φ(b)/4 (trace 1/2);
/// * the solver's trace-one diffusion is 2a = Φ(b)/2, so the source doubles.
pub struct Wirtinger;

impl Wirtinger {
    /// Factor on f in the realified, trace-one Bellman equation.
    pub const SOURCE_FACTOR: f64 = 2.0;

    /// Realified diffusion matrix Φ(b)/4.
    pub fn diffusion(b: &HermMatrix) -> SymMatrix {
        phi_embed(b).scale(0.25)
    }

    /// Realified diffusion recovered from a trace-one real control matrix.
    pub fn diffusion_from_trace_one(a: &SymMatrix) -> SymMatrix {
        a.scale(0.5)
    }

    /// b from the solver's trace-one matrix Φ(b)/2.
    pub fn b_from_trace_one(a: &SymMatrix) -> HermMatrix {
        phi_project(a).scale(2.0)
    }

    /// u_{z z̄} from the real Hessian.
    pub fn complex_hessian(u_xx: &SymMatrix) -> HermMatrix {
        phi_project(u_xx).scale(0.5)
    }

    /// Realified source for a complex source value.
    pub fn real_source(f: f64) -> f64 {
        Self::SOURCE_FACTOR * f
    }
}

/// G(u_{z z̄}) = f in D ⊂ C^d, u = φ on ∂D. f and φ take realified points.
#[derive(Clone, Debug)]
pub struct ComplexProblem {
    pub operator: HessianOperator,
    pub dom: DomainGeometry,
    pub f: Expr,
    pub phi: Expr,
}

/// Samples used by the unitary-invariance check.
const INVARIANCE_SAMPLES: usize = 32;

impl ComplexProblem {
    pub fn new(operator: HessianOperator, dom: DomainGeometry, f: Expr, phi: Expr) -> Result<Self> {
        if operator.realm != Realm::Complex {
            return Err(Error::RealmMismatch("complex problem needs a complex operator".into()));
        }
        if dom.realm != Realm::Complex {
            return Err(Error::RealmMismatch("complex problem needs a domain in C^d".into()));
        }
        if dom.dim() != 2 * operator.dim {
            return Err(Error::Invalid(format!(
                "operator on C^{} but domain has real dimension {}",
                operator.dim,
                dom.dim()
            )));
        }
        let worst = unitary_invariance_defect(&operator, INVARIANCE_SAMPLES, 0)?;
        if worst > 1e-8 {
            return Err(Error::Invalid(format!("operator is not unitarily invariant (defect {worst:.2e})")));
        }
        // f ≥ 0 and φ finiteness are checked when the problem is lifted
        let p = ComplexProblem { operator, dom, f, phi };
        lift(&p)?;
        Ok(p)
    }
}

/// The realified problem: same operator acting on 2d x 2d Hessians, source
/// scaled by the Wirtinger factor.
#[derive(Clone, Debug)]
pub struct RealizedProblem {
    pub problem: DirichletProblem,
    /// Complex dimension d.
    pub complex_dim: usize,
}

pub fn lift(p: &ComplexProblem) -> Result<RealizedProblem> {
    if p.operator.realm != Realm::Complex || p.dom.realm != Realm::Complex {
        return Err(Error::RealmMismatch("lift needs a complex operator and domain".into()));
    }
    let f = Expr::Scale { factor: Wirtinger::SOURCE_FACTOR, arg: Box::new(p.f.clone()) };
    let problem = DirichletProblem::new(p.operator.clone(), p.dom.clone(), f, p.phi.clone())?;
    Ok(RealizedProblem { problem, complex_dim: p.operator.dim })
}

/// Controls generated on the Hermitian slice in unitary frames, then embedded.
pub fn complex_controls(op: &HessianOperator, spec: &ControlGridSpec) -> Result<ControlSet> {
    if op.realm != Realm::Complex {
        return Err(Error::RealmMismatch("complex controls need a complex operator".into()));
    }
    control_grid(op, spec)
}

/// Coefficients of the complex Bellman form at a control β.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexCoefficients {
    pub b: HermMatrix,
    pub l: f64,
}

/// b = ∇G/tr ∇G and l = 1/tr ∇G at β.
pub fn complex_coefficients(op: &HessianOperator, beta: &HermMatrix) -> Result<ComplexCoefficients> {
    if op.realm != Realm::Complex {
        return Err(Error::RealmMismatch("complex coefficients need a complex operator".into()));
    }
    let g = op.gradient_herm(beta)?;
    let tr = g.trace();
    if !(tr > 1e-12) {
        return Err(Error::DegenerateControl { trace: tr });
    }
    Ok(ComplexCoefficients { b: g.scale(1.0 / tr), l: 1.0 / tr })
}

/// inf over the control set of tr[b v_{z z̄}] − l f, with b read back from the
/// embedded trace-one matrices.
pub fn complex_bellman_residual(controls: &ControlSet, v_zz: &HermMatrix, f: f64) -> f64 {
    controls
        .coeffs
        .iter()
        .map(|c| Wirtinger::b_from_trace_one(&c.a).dot(v_zz) - c.h * f)
        .fold(f64::INFINITY, f64::min)
}

/// Largest |G(UβU*) − G(β)| over sampled β in the cone and Haar unitaries U.
pub fn unitary_invariance_defect(op: &HessianOperator, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let beta = random_hermitian(op.dim, 0.3, &mut rng).add_identity(2.0);
        let u = haar_unitary(op.dim, &mut rng);
        let g0 = op.evaluate_herm(&beta)?;
        let g1 = op.evaluate_herm(&beta.conjugate(&u))?;
        worst = worst.max((g1 - g0).abs() / (1.0 + g0.abs()));
    }
    Ok(worst)
}

/// Roots of t ↦ G_m²(β + tI) read as Gårding eigenvalues of the lifted
/// polynomial on R^{2d}, ascending. Each eigenvalue of G_m appears twice.
pub fn lifted_garding_eigenvalues(op: &HessianOperator, beta: &HermMatrix) -> Result<Vec<f64>> {
    let kind = op
        .base_polynomial()
        .ok_or_else(|| Error::Invalid("lifted eigenvalues need a polynomial base".into()))?;
    let lam = beta.spectral()?.eigenvalues;
    let (c, s) = restriction_coefficients(&kind, &lam)?;
    let mut sq = vec![0.0; 2 * c.len() - 1];
    for (i, a) in c.iter().enumerate() {
        for (j, b) in c.iter().enumerate() {
            sq[i + j] += a * b;
        }
    }
    let mut ev: Vec<f64> = real_roots(&sq)?.iter().map(|t| -s * t).collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

/// Realified point to complex coordinates.
pub fn to_complex(x: &[f64]) -> Vec<C64> {
    crate::matcore::phi_inverse_vec(x)
}

/// Complex Bellman residual at interior nodes whose full centred stencil
/// (axis and diagonal neighbours) lies in the grid interior. Returns
/// (node, residual) pairs.
pub fn complex_residuals(
    lifted: &RealizedProblem,
    grid: &Grid,
    solution: &GridSolution,
    controls: &ControlSet,
    f: &Expr,
) -> Vec<(usize, f64)> {
    let n = grid.dim;
    let h2 = grid.h * grid.h;
    let full = grid.full_values(&lifted.problem.phi, &solution.values);
    let mut out = Vec::new();
    'nodes: for node in 0..grid.len() {
        let flat = grid.interior[node] as i64;
        let at = |steps: &[(usize, i64)]| -> Option<f64> {
            let mut idx = flat;
            for &(axis, k) in steps {
                let coord = (flat / grid.strides[axis] as i64) % grid.counts[axis] as i64 + k;
                if coord < 0 || coord >= grid.counts[axis] as i64 {
                    return None;
                }
                idx += k * grid.strides[axis] as i64;
            }
            let idx = idx as usize;
            (grid.index_of[idx] != usize::MAX).then(|| full[idx])
        };
        let u0 = full[flat as usize];
        let mut hess = SymMatrix::zeros(n);
        for i in 0..n {
            let (Some(p), Some(m)) = (at(&[(i, 1)]), at(&[(i, -1)])) else { continue 'nodes };
            hess.set(i, i, (p - 2.0 * u0 + m) / h2);
            for j in i + 1..n {
                let vals = [at(&[(i, 1), (j, 1)]), at(&[(i, 1), (j, -1)]), at(&[(i, -1), (j, 1)]), at(&[(i, -1), (j, -1)])];
                let [Some(pp), Some(pm), Some(mp), Some(mm)] = vals else { continue 'nodes };
                hess.set(i, j, (pp - pm - mp + mm) / (4.0 * h2));
            }
        }
        let x = grid.position(node);
        let v_zz = Wirtinger::complex_hessian(&hess);
        out.push((node, complex_bellman_residual(controls, &v_zz, f.eval(&x))));
    }
    out
}
