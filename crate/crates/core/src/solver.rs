//! Dirichlet problems in Bellman form on Cartesian grids: a monotone
//! spectral finite-difference scheme, Howard policy iteration, a Monte Carlo
//! estimator of the value function and regularity probes.

use crate::bellman::{ControlCoefficients, ControlGridSpec, ControlSet};
use crate::geometry::{BarrierCertificate, DomainGeometry, Term, BOUNDARY_RHO_TOL};
use crate::matcore::{psd_sqrt, SymMatrix};
use crate::operators::HessianOperator;
use crate::{Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const NONE: usize = usize::MAX;

/// Closed-form scalar fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Expr {
    Constant { value: f64 },
    /// Σ coeff·∏ x_i^powers_i
    Polynomial { terms: Vec<Term> },
    /// Σ_k coeffs[k]·|x − center|^k
    Radial { center: Vec<f64>, coeffs: Vec<f64> },
    Max { args: Vec<Expr> },
    Sum { args: Vec<Expr> },
    Scale { factor: f64, arg: Box<Expr> },
    /// |base|^exponent
    AbsPower { base: Box<Expr>, exponent: f64 },
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Constant { value }
    }

    /// x_i
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut powers = vec![0; dim];
        powers[i] = 1;
        Expr::Polynomial { terms: vec![Term { coeff: 1.0, powers }] }
    }

    /// s·|x|²
    pub fn squared_norm(dim: usize, s: f64) -> Self {
        Expr::Polynomial {
            terms: (0..dim)
                .map(|i| {
                    let mut powers = vec![0; dim];
                    powers[i] = 2;
                    Term { coeff: s, powers }
                })
                .collect(),
        }
    }

    /// b + Σ g_i x_i
    pub fn affine(b: f64, g: &[f64]) -> Self {
        let dim = g.len();
        let mut terms = vec![Term { coeff: b, powers: vec![0; dim] }];
        for (i, &gi) in g.iter().enumerate() {
            let mut powers = vec![0; dim];
            powers[i] = 1;
            terms.push(Term { coeff: gi, powers });
        }
        Expr::Polynomial { terms }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Constant { value } => *value,
            Expr::Polynomial { terms } => terms
                .iter()
                .map(|t| t.coeff * t.powers.iter().zip(x).map(|(&p, &v)| v.powi(p as i32)).product::<f64>())
                .sum(),
            Expr::Radial { center, coeffs } => {
                let r = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c)
            }
            Expr::Max { args } => args.iter().map(|e| e.eval(x)).fold(f64::NEG_INFINITY, f64::max),
            Expr::Sum { args } => args.iter().map(|e| e.eval(x)).sum(),
            Expr::Scale { factor, arg } => factor * arg.eval(x),
            Expr::AbsPower { base, exponent } => base.eval(x).abs().powf(*exponent),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Expr::Constant { value } if !value.is_finite() => Err(Error::Invalid("non-finite constant".into())),
            Expr::Constant { .. } => Ok(()),
            Expr::Polynomial { terms } => {
                if terms.iter().any(|t| t.powers.len() != dim) {
                    Err(Error::Invalid(format!("polynomial term needs {dim} powers")))
                } else {
                    Ok(())
                }
            }
            Expr::Radial { center, .. } if center.len() != dim => {
                Err(Error::Invalid(format!("radial centre needs {dim} coordinates")))
            }
            Expr::Radial { .. } => Ok(()),
            Expr::Max { args } | Expr::Sum { args } => {
                if args.is_empty() {
                    return Err(Error::Invalid("empty argument list".into()));
                }
                args.iter().try_for_each(|a| a.validate(dim))
            }
            Expr::Scale { arg, .. } => arg.validate(dim),
            Expr::AbsPower { base, exponent } => {
                if !(*exponent > 0.0) {
                    return Err(Error::Invalid("exponent must be positive".into()));
                }
                base.validate(dim)
            }
        }
    }
}

/// F(u_xx) = f in D, u = φ on ∂D, with F 1-homogeneous.
#[derive(Clone, Debug)]
pub struct DirichletProblem {
    pub operator: HessianOperator,
    pub dom: DomainGeometry,
    pub f: Expr,
    pub phi: Expr,
    /// Recorded, not checked.
    pub quasi_convexity_k: Option<f64>,
}

impl DirichletProblem {
    pub fn new(operator: HessianOperator, dom: DomainGeometry, f: Expr, phi: Expr) -> Result<Self> {
        let n = dom.dim();
        if crate::bellman::working_dim(&operator) != n {
            return Err(Error::Invalid(format!(
                "operator acts on {}-dimensional Hessians, domain has dimension {n}",
                crate::bellman::working_dim(&operator)
            )));
        }
        if operator.realm != dom.realm {
            return Err(Error::RealmMismatch("operator and domain realms differ".into()));
        }
        f.validate(n)?;
        phi.validate(n)?;
        for x in dom.interior_samples(12) {
            let v = f.eval(&x);
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Invalid(format!("f = {v} at {x:?}; need finite f >= 0")));
            }
        }
        for x in dom.boundary_samples(256, 0)? {
            if !phi.eval(&x).is_finite() {
                return Err(Error::Invalid(format!("phi not finite at {x:?}")));
            }
        }
        Ok(DirichletProblem { operator, dom, f, phi, quasi_convexity_k: None })
    }
}

/// Cartesian grid through the domain centre.
#[derive(Clone, Debug)]
pub struct Grid {
    pub h: f64,
    pub dim: usize,
    pub origin: Vec<f64>,
    /// Node k along axis i sits at centre_i + (offset_i + k)·h.
    pub offset: Vec<i64>,
    pub centre: Vec<f64>,
    pub counts: Vec<usize>,
    pub strides: Vec<usize>,
    /// Flat index of every interior node.
    pub interior: Vec<usize>,
    /// Interior index per flat node, or usize::MAX.
    pub index_of: Vec<usize>,
    /// (δ₊, δ₋) per interior node and axis, clipped at ∂D.
    pub axis_arms: Vec<[f64; 2]>,
    /// Nominal arm length for directions that are not grid axes.
    pub off_axis_arm: f64,
    pub dom: DomainGeometry,
}

/// Distance from x along ±e to the boundary if shorter than `len`,
/// together with the hit point.
fn clip_arm(dom: &DomainGeometry, x: &[f64], e: &[f64], len: f64) -> (f64, Option<Vec<f64>>) {
    let at = |s: f64| -> Vec<f64> { x.iter().zip(e).map(|(a, b)| a + s * b).collect() };
    if dom.rho(&at(len)) < 0.0 {
        return (len, None);
    }
    let (mut lo, mut hi) = (0.0, len);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dom.rho(&at(mid)) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if dom.rho(&at(hi)).abs() <= BOUNDARY_RHO_TOL && hi - lo < 1e-6 * len {
            break;
        }
    }
    let (pl, ph) = (at(lo), at(hi));
    if dom.rho(&pl).abs() < dom.rho(&ph).abs() && lo > 0.0 {
        (lo, Some(pl))
    } else {
        (hi, Some(ph))
    }
}

pub fn build_grid(dom: &DomainGeometry, h: f64) -> Result<Grid> {
    if !(h > 0.0) {
        return Err(Error::Invalid("grid spacing must be positive".into()));
    }
    let d = dom.dim();
    let widths: Vec<f64> = dom.lower.iter().zip(&dom.upper).map(|(l, u)| u - l).collect();
    if dom.diameter() / h < 8.0 {
        return Err(Error::Resolution(format!("fewer than 8 nodes across the diameter at h = {h}")));
    }
    if let Some(w) = widths.iter().find(|&&w| w < 3.0 * h) {
        return Err(Error::Resolution(format!("domain width {w} is below 3h")));
    }
    let c = dom.center();
    let mut origin = vec![0.0; d];
    let mut offset = vec![0i64; d];
    let mut counts = vec![0; d];
    for i in 0..d {
        let kmin = ((dom.lower[i] - c[i]) / h).floor() - 1.0;
        let kmax = ((dom.upper[i] - c[i]) / h).ceil() + 1.0;
        origin[i] = c[i] + kmin * h;
        offset[i] = kmin as i64;
        counts[i] = (kmax - kmin) as usize + 1;
    }
    let mut strides = vec![1; d];
    for i in 1..d {
        strides[i] = strides[i - 1] * counts[i - 1];
    }
    let total = strides[d - 1] * counts[d - 1];
    let mut index_of = vec![NONE; total];
    let mut interior = Vec::new();
    let coords = |flat: usize| -> Vec<f64> {
        (0..d).map(|i| c[i] + (offset[i] + ((flat / strides[i]) % counts[i]) as i64) as f64 * h).collect()
    };
    for flat in 0..total {
        if dom.contains(&coords(flat)) {
            index_of[flat] = interior.len();
            interior.push(flat);
        }
    }
    let mut axis_arms = Vec::with_capacity(interior.len() * d);
    for &flat in &interior {
        let x = coords(flat);
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            let dp = clip_arm(dom, &x, &e, h).0;
            e[i] = -1.0;
            let dm = clip_arm(dom, &x, &e, h).0;
            axis_arms.push([dp, dm]);
        }
    }
    let half = widths.iter().cloned().fold(f64::INFINITY, f64::min) / 2.0;
    let off_axis_arm = (h * half).sqrt().max(h);
    let centre = c.to_vec();
    Ok(Grid { h, dim: d, origin, offset, centre, counts, strides, interior, index_of, axis_arms, off_axis_arm, dom: dom.clone() })
}

impl Grid {
    pub fn len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    pub fn total_nodes(&self) -> usize {
        self.index_of.len()
    }

    pub fn flat_coords(&self, flat: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|i| self.centre[i] + (self.offset[i] + ((flat / self.strides[i]) % self.counts[i]) as i64) as f64 * self.h)
            .collect()
    }

    /// Coordinates of interior node `node`.
    pub fn position(&self, node: usize) -> Vec<f64> {
        self.flat_coords(self.interior[node])
    }

    /// Full-grid values: interior entries from `u`, others from φ.
    pub fn full_values(&self, phi: &Expr, u: &[f64]) -> Vec<f64> {
        (0..self.total_nodes())
            .map(|flat| match self.index_of[flat] {
                NONE => phi.eval(&self.flat_coords(flat)),
                k => u[k],
            })
            .collect()
    }

    /// Multilinear interpolation weights (flat index, weight) at y.
    fn weights(&self, y: &[f64], out: &mut Vec<(usize, f64)>) -> Option<()> {
        out.clear();
        let d = self.dim;
        let mut base = 0;
        let mut frac = [0.0f64; 16];
        let mut active = [0usize; 16];
        let mut na = 0;
        for i in 0..d {
            let t = (y[i] - self.origin[i]) / self.h;
            let mut k = t.floor();
            let mut fr = t - k;
            if fr > 1.0 - 1e-10 {
                k += 1.0;
                fr = 0.0;
            } else if fr < 1e-10 {
                fr = 0.0;
            }
            if k < 0.0 || (k as usize) >= self.counts[i] || (fr > 0.0 && k as usize + 1 >= self.counts[i]) {
                return None;
            }
            base += k as usize * self.strides[i];
            if fr > 0.0 {
                frac[na] = fr;
                active[na] = i;
                na += 1;
            }
        }
        for mask in 0..(1usize << na) {
            let mut w = 1.0;
            let mut idx = base;
            for b in 0..na {
                if mask & (1 << b) != 0 {
                    w *= frac[b];
                    idx += self.strides[active[b]];
                } else {
                    w *= 1.0 - frac[b];
                }
            }
            if w != 0.0 {
                out.push((idx, w));
            }
        }
        Some(())
    }

    /// Multilinear interpolation of full-grid values at y.
    pub fn interpolate(&self, full: &[f64], y: &[f64]) -> Option<f64> {
        let mut w = Vec::with_capacity(1 << self.dim);
        self.weights(y, &mut w)?;
        Some(w.iter().map(|&(i, wt)| wt * full[i]).sum())
    }
}

/// One arm pair of a second difference: lengths and boundary values
/// (NaN where the endpoint is interpolated).
#[derive(Clone, Copy, Debug)]
struct Arm {
    dp: f64,
    dm: f64,
    vp: f64,
    vm: f64,
}

fn is_axis(e: &[f64]) -> bool {
    e.iter().any(|v| v.abs() > 1.0 - 1e-12)
}

fn make_arm(grid: &Grid, phi: &Expr, x: &[f64], e: &[f64]) -> Arm {
    let len = if is_axis(e) { grid.h } else { grid.off_axis_arm };
    let (dp, hp) = clip_arm(&grid.dom, x, e, len);
    let neg: Vec<f64> = e.iter().map(|v| -v).collect();
    let (dm, hm) = clip_arm(&grid.dom, x, &neg, len);
    Arm {
        dp,
        dm,
        vp: hp.map(|p| phi.eval(&p)).unwrap_or(f64::NAN),
        vm: hm.map(|p| phi.eval(&p)).unwrap_or(f64::NAN),
    }
}

/// Unequal-arm second difference of full-grid values at interior node
/// `node` along unit vector e.
fn second_difference(grid: &Grid, full: &[f64], node: usize, x: &[f64], e: &[f64], arm: &Arm) -> Result<f64> {
    let u0 = full[grid.interior[node]];
    let end = |s: f64, v: f64| -> Result<f64> {
        if !v.is_nan() {
            return Ok(v);
        }
        let y: Vec<f64> = x.iter().zip(e).map(|(a, b)| a + s * b).collect();
        grid.interpolate(full, &y).ok_or(Error::StencilEscape { node })
    };
    let up = end(arm.dp, arm.vp)?;
    let um = end(-arm.dm, arm.vm)?;
    Ok(2.0 / (arm.dp + arm.dm) * ((up - u0) / arm.dp + (um - u0) / arm.dm))
}

/// tr(a u_xx) − h·f at one interior node, with u_xx replaced by second
/// differences along the eigenvectors of a.
pub fn discretize_control(
    problem: &DirichletProblem,
    grid: &Grid,
    u: &[f64],
    node: usize,
    coeff: &ControlCoefficients,
    f_val: f64,
) -> Result<f64> {
    let full = grid.full_values(&problem.phi, u);
    let x = grid.position(node);
    let sd = coeff.a.spectral()?;
    let n = grid.dim;
    let mut total = -coeff.h * f_val;
    for k in 0..n {
        let w = sd.eigenvalues[k];
        if w.abs() < 1e-15 {
            continue;
        }
        let e: Vec<f64> = sd.frame.column(k).iter().cloned().collect();
        let arm = make_arm(grid, &problem.phi, &x, &e);
        total += w * second_difference(grid, &full, node, &x, &e, &arm)?;
    }
    Ok(total)
}

/// Linear solver for the policy-frozen system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolve {
    /// Sparse LU with one refinement step.
    Direct,
    /// Successive over-relaxation sweeps.
    Sor,
}

/// Tolerances and iteration limits for policy iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub tol: f64,
    pub max_outer: usize,
    pub inner: InnerSolve,
    pub max_inner_sweeps: usize,
    /// Over-relaxation factor; None picks one from h.
    pub omega: Option<f64>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec { tol: 1e-9, max_outer: 200, inner: InnerSolve::Direct, max_inner_sweeps: 2_000_000, omega: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GridSolution {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    pub residual_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual_history: Vec<f64>,
    pub inner_sweeps: usize,
}

impl GridSolution {
    /// Whether the outer residual never increased.
    pub fn residual_monotone(&self) -> bool {
        self.residual_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-14)
    }

    /// Multilinear interpolation of the solution, φ outside.
    pub fn value_at(&self, problem: &DirichletProblem, grid: &Grid, x: &[f64]) -> Option<f64> {
        grid.interpolate(&grid.full_values(&problem.phi, &self.values), x)
    }
}

/// Cached stencil geometry for one grid and control set.
struct Scheme<'a> {
    problem: &'a DirichletProblem,
    grid: &'a Grid,
    controls: &'a ControlSet,
    /// Frame columns, frame-major.
    dirs: Vec<Vec<f64>>,
    /// Node-major arms, one per direction.
    arms: Vec<Arm>,
    f_vals: Vec<f64>,
    positions: Vec<Vec<f64>>,
    /// Per-node row scale min(1, (shortest arm / h)²).
    scale: Vec<f64>,
}

struct Rows {
    diag: Vec<f64>,
    start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    rhs: Vec<f64>,
}

impl<'a> Scheme<'a> {
    fn new(problem: &'a DirichletProblem, grid: &'a Grid, controls: &'a ControlSet) -> Result<Self> {
        if controls.dim != grid.dim {
            return Err(Error::Invalid("control and grid dimensions differ".into()));
        }
        let n = grid.dim;
        let dirs: Vec<Vec<f64>> =
            controls.frames.iter().flat_map(|q| (0..n).map(move |k| q.column(k).iter().cloned().collect())).collect();
        let positions: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.position(i)).collect();
        let arms: Vec<Arm> = positions
            .par_iter()
            .flat_map_iter(|x| dirs.iter().map(move |e| make_arm(grid, &problem.phi, x, e)))
            .collect();
        let f_vals = positions.iter().map(|x| problem.f.eval(x)).collect();
        let nd = dirs.len();
        let scale = (0..grid.len())
            .map(|i| {
                let short = arms[i * nd..(i + 1) * nd].iter().map(|a| a.dp.min(a.dm)).fold(grid.h, f64::min);
                (short / grid.h).powi(2)
            })
            .collect();
        Ok(Scheme { problem, grid, controls, dirs, arms, f_vals, positions, scale })
    }

    fn nd(&self) -> usize {
        self.dirs.len()
    }

    /// Second differences along every stencil direction at every node.
    fn all_differences(&self, full: &[f64]) -> Result<Vec<Vec<f64>>> {
        (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let x = &self.positions[i];
                (0..self.nd())
                    .map(|s| second_difference(self.grid, full, i, x, &self.dirs[s], &self.arms[i * self.nd() + s]))
                    .collect()
            })
            .collect()
    }

    fn control_residual(&self, diffs: &[f64], node: usize, c: usize) -> f64 {
        let n = self.grid.dim;
        let f = self.controls.points[c].frame;
        let sc = &self.controls.spectral[c];
        let mut v = -sc.h * self.f_vals[node];
        for k in 0..n {
            v += sc.weights[k] * diffs[f * n + k];
        }
        v
    }

    /// (min residual, argmin, residual of the current control) per node.
    fn improve(&self, full: &[f64], policy: &[usize]) -> Result<Vec<(f64, usize, f64)>> {
        let diffs = self.all_differences(full)?;
        Ok(diffs
            .par_iter()
            .enumerate()
            .map(|(i, dv)| {
                let mut best = (f64::INFINITY, 0);
                for c in 0..self.controls.len() {
                    let v = self.control_residual(dv, i, c);
                    if v < best.0 {
                        best = (v, c);
                    }
                }
                let s = self.scale[i];
                (s * best.0, best.1, s * self.control_residual(dv, i, policy[i]))
            })
            .collect())
    }

    /// Linear system of the frozen policy: Σ_j A_ij u_j = rhs_i.
    fn assemble(&self, policy: &[usize]) -> Result<Rows> {
        let grid = self.grid;
        let n = grid.dim;
        let nd = self.nd();
        let m = grid.len();
        let mut rows = Rows {
            diag: vec![0.0; m],
            start: Vec::with_capacity(m + 1),
            cols: Vec::new(),
            vals: Vec::new(),
            rhs: vec![0.0; m],
        };
        let mut wbuf = Vec::new();
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for i in 0..m {
            rows.start.push(rows.cols.len());
            let c = policy[i];
            let f = self.controls.points[c].frame;
            let sc = &self.controls.spectral[c];
            let x = &self.positions[i];
            let mut diag = 0.0;
            let mut rhs = sc.h * self.f_vals[i];
            entries.clear();
            for k in 0..n {
                let w = sc.weights[k];
                if w == 0.0 {
                    continue;
                }
                let s = f * n + k;
                let arm = &self.arms[i * nd + s];
                let e = &self.dirs[s];
                let sum = arm.dp + arm.dm;
                diag -= w * 2.0 / (arm.dp * arm.dm);
                for (len, val, coef) in
                    [(arm.dp, arm.vp, 2.0 / (arm.dp * sum)), (-arm.dm, arm.vm, 2.0 / (arm.dm * sum))]
                {
                    let cw = w * coef;
                    if !val.is_nan() {
                        rhs -= cw * val;
                        continue;
                    }
                    let y: Vec<f64> = x.iter().zip(e).map(|(a, b)| a + len * b).collect();
                    grid.weights(&y, &mut wbuf).ok_or(Error::StencilEscape { node: i })?;
                    for &(flat, wt) in &wbuf {
                        match grid.index_of[flat] {
                            NONE => rhs -= cw * wt * self.problem.phi.eval(&grid.flat_coords(flat)),
                            j if j == i => diag += cw * wt,
                            j => entries.push((j, cw * wt)),
                        }
                    }
                }
            }
            entries.sort_by_key(|e| e.0);
            let sc = self.scale[i];
            diag *= sc;
            rhs *= sc;
            let mut last = NONE;
            for &(j, v) in &entries {
                let v = v * sc;
                if j == last {
                    *rows.vals.last_mut().unwrap() += v;
                } else {
                    rows.cols.push(j);
                    rows.vals.push(v);
                    last = j;
                }
            }
            rows.diag[i] = diag;
            rows.rhs[i] = rhs;
        }
        rows.start.push(rows.cols.len());
        Ok(rows)
    }
}

impl Rows {
    fn run(&self, u: &mut [f64], spec: &SolverSpec, omega: f64) -> Result<usize> {
        match spec.inner {
            InnerSolve::Direct => self.solve_direct(u, spec.tol / 10.0),
            InnerSolve::Sor => self.solve(u, omega, spec.tol / 10.0, spec.max_inner_sweeps),
        }
    }

    fn residual_vec(&self, u: &[f64]) -> Vec<f64> {
        (0..u.len())
            .map(|i| {
                let mut s = self.rhs[i] - self.diag[i] * u[i];
                for p in self.start[i]..self.start[i + 1] {
                    s -= self.vals[p] * u[self.cols[p]];
                }
                s
            })
            .collect()
    }

    /// Sparse LU, then correction steps while the residual exceeds tol.
    /// Returns the number of factor solves.
    fn solve_direct(&self, u: &mut [f64], tol: f64) -> Result<usize> {
        use faer::prelude::Solve;
        use faer::sparse::{SparseColMat, Triplet};
        let n = u.len();
        let mut trip = Vec::with_capacity(n + self.vals.len());
        for i in 0..n {
            trip.push(Triplet::new(i, i, self.diag[i]));
            for p in self.start[i]..self.start[i + 1] {
                trip.push(Triplet::new(i, self.cols[p], self.vals[p]));
            }
        }
        let fail = |r: f64| Error::LinearSolve { sweeps: 0, residual: r };
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip).map_err(|_| fail(f64::NAN))?;
        let lu = a.sp_lu().map_err(|_| fail(f64::NAN))?;
        let mut solves = 0;
        for _ in 0..4 {
            let r = self.residual_vec(u);
            let rmax = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if rmax <= tol {
                return Ok(solves);
            }
            if !rmax.is_finite() {
                return Err(fail(rmax));
            }
            let mut rhs = faer::Col::<f64>::from_fn(n, |i| r[i]);
            lu.solve_in_place(rhs.as_mut());
            for i in 0..n {
                u[i] += rhs[i];
            }
            solves += 1;
        }
        let rmax = self.residual(u);
        if rmax <= tol {
            Ok(solves)
        } else {
            Err(fail(rmax))
        }
    }

    fn residual(&self, u: &[f64]) -> f64 {
        (0..u.len())
            .map(|i| {
                let mut s = self.diag[i] * u[i] - self.rhs[i];
                for p in self.start[i]..self.start[i + 1] {
                    s += self.vals[p] * u[self.cols[p]];
                }
                s.abs()
            })
            .fold(0.0, f64::max)
    }

    /// Successive over-relaxation; ω drifts towards 1 whenever a check
    /// window ends with a larger residual.
    fn solve(&self, u: &mut [f64], omega: f64, tol: f64, max_sweeps: usize) -> Result<usize> {
        const CHECK: usize = 20;
        let mut omega = omega;
        let mut last = self.residual(u);
        if last <= tol {
            return Ok(0);
        }
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            for _ in 0..CHECK {
                for i in 0..u.len() {
                    let mut s = self.rhs[i];
                    for p in self.start[i]..self.start[i + 1] {
                        s -= self.vals[p] * u[self.cols[p]];
                    }
                    let gs = s / self.diag[i];
                    u[i] += omega * (gs - u[i]);
                }
            }
            sweeps += CHECK;
            let r = self.residual(u);
            if !r.is_finite() {
                return Err(Error::LinearSolve { sweeps, residual: r });
            }
            if r <= tol {
                return Ok(sweeps);
            }
            if r > last {
                omega = 1.0 + 0.5 * (omega - 1.0);
            }
            last = r;
        }
        Err(Error::LinearSolve { sweeps, residual: last })
    }
}

/// Howard policy iteration from the first control (the identity when
/// present), with warm-started inner solves to tol/10.
pub fn policy_iteration(
    problem: &DirichletProblem,
    grid: &Grid,
    controls: &ControlSet,
    spec: &SolverSpec,
) -> Result<GridSolution> {
    if controls.is_empty() {
        return Err(Error::NoControls);
    }
    if grid.is_empty() {
        return Err(Error::Resolution("grid has no interior nodes".into()));
    }
    let scheme = Scheme::new(problem, grid, controls)?;
    let width = grid.dom.lower.iter().zip(&grid.dom.upper).map(|(l, u)| u - l).fold(0.0, f64::max);
    let omega = spec.omega.unwrap_or_else(|| 2.0 / (1.0 + (std::f64::consts::PI * grid.h / width).sin()));
    let mut u: Vec<f64> = scheme.positions.iter().map(|x| problem.phi.eval(x)).collect();
    let mut policy = vec![0usize; grid.len()];
    let mut inner = scheme.assemble(&policy)?.run(&mut u, spec, omega)?;
    let mut imp = scheme.improve(&grid.full_values(&problem.phi, &u), &policy)?;
    let mut residual = imp.iter().map(|t| t.0.abs()).fold(0.0, f64::max);
    let mut history = vec![residual];
    let mut iterations = 1;
    while residual > spec.tol && iterations < spec.max_outer {
        let mut changed = false;
        for (i, &(best, arg, cur)) in imp.iter().enumerate() {
            // smaller gains leave |residual| below tol anyway
            if arg != policy[i] && best < cur - 0.25 * spec.tol {
                policy[i] = arg;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        iterations += 1;
        inner += scheme.assemble(&policy)?.run(&mut u, spec, omega)?;
        imp = scheme.improve(&grid.full_values(&problem.phi, &u), &policy)?;
        residual = imp.iter().map(|t| t.0.abs()).fold(0.0, f64::max);
        history.push(residual);
    }
    let converged = residual <= spec.tol;
    Ok(GridSolution {
        values: u,
        policy,
        residual_inf_norm: residual,
        iterations,
        converged,
        residual_history: history,
        inner_sweeps: inner,
    })
}

/// Discrete Bellman residual of arbitrary interior values.
pub fn bellman_residuals(
    problem: &DirichletProblem,
    grid: &Grid,
    controls: &ControlSet,
    u: &[f64],
) -> Result<Vec<(f64, usize)>> {
    let scheme = Scheme::new(problem, grid, controls)?;
    let full = grid.full_values(&problem.phi, u);
    let zero = vec![0; grid.len()];
    Ok(scheme.improve(&full, &zero)?.into_iter().map(|(r, a, _)| (r, a)).collect())
}

/// Monte Carlo parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSpec {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub max_steps: usize,
}

impl Default for McSpec {
    fn default() -> Self {
        McSpec { n_paths: 10_000, dt: 1e-4, seed: 0, max_steps: 10_000_000 }
    }
}

/// Control choice along simulated paths.
pub enum McPolicy<'a> {
    Constant(&'a ControlCoefficients),
    Grid { solution: &'a GridSolution, grid: &'a Grid, controls: &'a ControlSet },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub policy: String,
    /// Paths stopped at max_steps; excluded from the mean.
    pub censored: usize,
}

/// Σ of a slice by recursive halving.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Square roots of 2a for each control, with its h.
struct Diffusions {
    roots: Vec<DMatrix<f64>>,
    h: Vec<f64>,
}

fn grid_policy_at(grid: &Grid, sol: &GridSolution, x: &[f64]) -> usize {
    let d = grid.dim;
    let k: Vec<i64> = (0..d).map(|i| ((x[i] - grid.origin[i]) / grid.h).round() as i64).collect();
    let mut best = (f64::INFINITY, 0usize);
    for off in 0..3usize.pow(d as u32) {
        let mut rem = off;
        let mut flat = 0usize;
        let mut dist = 0.0;
        let mut ok = true;
        for i in 0..d {
            let ki = k[i] + (rem % 3) as i64 - 1;
            rem /= 3;
            if ki < 0 || ki as usize >= grid.counts[i] {
                ok = false;
                break;
            }
            flat += ki as usize * grid.strides[i];
            dist += (grid.origin[i] + ki as f64 * grid.h - x[i]).powi(2);
        }
        if ok && grid.index_of[flat] != NONE && dist < best.0 {
            best = (dist, sol.policy[grid.index_of[flat]]);
        }
    }
    best.1
}

/// Euler–Maruyama estimate of E[φ(x_τ) − ∫₀^τ h f dt] from x.
pub fn mc_value(problem: &DirichletProblem, x: &[f64], policy: &McPolicy, spec: &McSpec) -> Result<McEstimate> {
    let dom = &problem.dom;
    if !dom.contains(x) {
        return Err(Error::Invalid("MC start point must lie inside the domain".into()));
    }
    if !(spec.dt > 0.0) {
        return Err(Error::Invalid("dt must be positive".into()));
    }
    if spec.n_paths < 100 {
        return Err(Error::Invalid("n_paths must be at least 100".into()));
    }
    let d = dom.dim();
    let diff = match policy {
        McPolicy::Constant(c) => Diffusions { roots: vec![psd_sqrt(&c.a.scale(2.0))?.to_dense()], h: vec![c.h] },
        McPolicy::Grid { controls, .. } => {
            let mut roots = Vec::with_capacity(controls.len());
            for (p, sc) in controls.points.iter().zip(&controls.spectral) {
                let q = &controls.frames[p.frame];
                let s = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    d,
                    sc.weights.iter().map(|w| (2.0 * w.max(0.0)).sqrt()),
                ));
                roots.push(q * s * q.transpose());
            }
            Diffusions { roots, h: controls.spectral.iter().map(|s| s.h).collect() }
        }
    };
    let choose = |y: &[f64]| -> usize {
        match policy {
            McPolicy::Constant(_) => 0,
            McPolicy::Grid { solution, grid, .. } => grid_policy_at(grid, solution, y),
        }
    };
    let sdt = spec.dt.sqrt();
    let paths: Vec<Option<f64>> = (0..spec.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(p as u64);
            let mut y = x.to_vec();
            let mut next = vec![0.0; d];
            let mut xi = vec![0.0; d];
            let mut cost = 0.0;
            for _ in 0..spec.max_steps {
                let c = choose(&y);
                let m = &diff.roots[c];
                for v in xi.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                for i in 0..d {
                    let mut s = 0.0;
                    for j in 0..d {
                        s += m[(i, j)] * xi[j];
                    }
                    next[i] = y[i] + sdt * s;
                }
                let run = diff.h[c] * problem.f.eval(&y);
                if dom.rho(&next) >= 0.0 {
                    let (mut lo, mut hi) = (0.0, 1.0);
                    let seg = |s: f64| -> Vec<f64> { y.iter().zip(&next).map(|(a, b)| a + s * (b - a)).collect() };
                    for _ in 0..100 {
                        let mid = 0.5 * (lo + hi);
                        if dom.rho(&seg(mid)) < 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                        if dom.rho(&seg(hi)).abs() <= BOUNDARY_RHO_TOL {
                            break;
                        }
                    }
                    cost += run * spec.dt * hi;
                    return Some(problem.phi.eval(&seg(hi)) - cost);
                }
                cost += run * spec.dt;
                std::mem::swap(&mut y, &mut next);
            }
            None
        })
        .collect();
    let vals: Vec<f64> = paths.iter().flatten().cloned().collect();
    let censored = spec.n_paths - vals.len();
    if vals.len() < 2 {
        return Err(Error::Invalid("all Monte Carlo paths were censored".into()));
    }
    let n = vals.len() as f64;
    let mean = pairwise_sum(&vals) / n;
    let dev: Vec<f64> = vals.iter().map(|v| (v - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    let desc = match policy {
        McPolicy::Constant(_) => "constant".to_string(),
        McPolicy::Grid { grid, .. } => format!("grid(h={})", grid.h),
    };
    Ok(McEstimate { mean, std_error: (var / n).sqrt(), n_paths: spec.n_paths, dt: spec.dt, policy: desc, censored })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    Bound0,
    Gradient,
    Second,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub mode: ProbeMode,
    /// bound0: smallest slack; gradient/second: the fitted constant.
    pub value: f64,
    /// bound0 only.
    pub pass: Option<bool>,
    pub worst_node: usize,
}

/// Axis arm end values (U₊, U₋) and lengths at a node.
fn axis_ends(problem: &DirichletProblem, grid: &Grid, full: &[f64], node: usize, i: usize) -> (f64, f64, f64, f64) {
    let [dp, dm] = grid.axis_arms[node * grid.dim + i];
    let flat = grid.interior[node];
    let x = grid.position(node);
    let val = |s: f64, len: f64, step: isize| -> f64 {
        if len < grid.h {
            let mut y = x.clone();
            y[i] += s * len;
            problem.phi.eval(&y)
        } else {
            full[(flat as isize + step * grid.strides[i] as isize) as usize]
        }
    };
    (val(1.0, dp, 1), val(-1.0, dm, -1), dp, dm)
}

/// Pointwise checks of the sup bound and fitted first/second derivative
/// constants weighted by the barrier ψ.
pub fn regularity_probe(
    problem: &DirichletProblem,
    grid: &Grid,
    solution: &GridSolution,
    cert: &BarrierCertificate,
    mode: ProbeMode,
) -> Result<ProbeReport> {
    let full = grid.full_values(&problem.phi, &solution.values);
    let dom = &problem.dom;
    let mut worst = (match mode {
        ProbeMode::Bound0 => f64::INFINITY,
        _ => 0.0,
    }, 0usize);
    match mode {
        ProbeMode::Bound0 => {
            let phi0 =
                dom.boundary_samples(1024, 0)?.iter().map(|x| problem.phi.eval(x).abs()).fold(0.0, f64::max);
            let f0 = (0..grid.len()).map(|i| problem.f.eval(&grid.position(i)).abs()).fold(0.0, f64::max);
            let fi = problem.operator.value_at_identity()?;
            for (i, u) in solution.values.iter().enumerate() {
                let x = grid.position(i);
                let slack = phi0 + f0 / fi * cert.psi(dom, &x) + 10.0 * grid.h - u.abs();
                if slack < worst.0 {
                    worst = (slack, i);
                }
            }
            Ok(ProbeReport { mode, value: worst.0, pass: Some(worst.0 >= 0.0), worst_node: worst.1 })
        }
        ProbeMode::Gradient | ProbeMode::Second => {
            for node in 0..grid.len() {
                let x = grid.position(node);
                let psi = cert.psi(dom, &x);
                let g = cert.psi_grad(dom, &x);
                let u0 = solution.values[node];
                for i in 0..grid.dim {
                    let (up, um, dp, dm) = axis_ends(problem, grid, &full, node, i);
                    let v = if mode == ProbeMode::Gradient {
                        ((up - um) / (dp + dm)).abs() / (1.0 + g[i].abs() / psi.sqrt())
                    } else {
                        let d2 = 2.0 / (dp + dm) * ((up - u0) / dp + (um - u0) / dm);
                        if d2 >= 0.0 {
                            d2 / (1.0 + g[i] * g[i] / psi)
                        } else {
                            -d2 * psi
                        }
                    };
                    if v > worst.0 {
                        worst = (v, node);
                    }
                }
            }
            Ok(ProbeReport { mode, value: worst.0, pass: None, worst_node: worst.1 })
        }
    }
}

/// Max-norm error against a closed-form solution.
pub fn max_error(grid: &Grid, solution: &GridSolution, exact: &Expr) -> f64 {
    solution.values.iter().enumerate().map(|(i, u)| (u - exact.eval(&grid.position(i))).abs()).fold(0.0, f64::max)
}

/// Sampled midpoint test of K-quasi-convexity of f: the largest violation of
/// f(m) ≤ (f(x) + f(y))/2 + K|x − y|²/8 over random pairs. Reported, not
/// enforced.
pub fn quasi_convexity_violation(problem: &DirichletProblem, k: f64, samples: usize, seed: u64) -> f64 {
    let pts = problem.dom.interior_samples(8);
    if pts.len() < 2 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let a = &pts[rng.random_range(0..pts.len())];
        let b = &pts[rng.random_range(0..pts.len())];
        let m: Vec<f64> = a.iter().zip(b).map(|(p, q)| 0.5 * (p + q)).collect();
        if !problem.dom.contains(&m) {
            continue;
        }
        let dist2: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
        let v = problem.f.eval(&m) - 0.5 * (problem.f.eval(a) + problem.f.eval(b)) - k * dist2 / 8.0;
        worst = worst.max(v);
    }
    worst
}

/// The constant control a = I/n with its h.
pub fn identity_control(controls: &ControlSet) -> Option<&ControlCoefficients> {
    if controls.includes_identity {
        controls.coeffs.first()
    } else {
        None
    }
}

/// Grid spacing at which a control spec is used as given.
pub const CONTROL_REFERENCE_H: f64 = 1.0 / 16.0;

/// Control spec refined with the grid: two more boundary levels per halving
/// of h below the reference spacing, two fewer per doubling above it.
pub fn control_spec_for_h(base: &ControlGridSpec, h: f64) -> ControlGridSpec {
    let halvings = (CONTROL_REFERENCE_H / h).log2().round() as i64;
    let levels = (base.boundary_levels as i64 + 2 * halvings).max(0) as usize;
    ControlGridSpec { boundary_levels: levels, ..base.clone() }
}

/// A quadratic xᵀQx/2 as an expression.
pub fn quadratic(q: &SymMatrix) -> Expr {
    let n = q.dim();
    let mut terms = Vec::new();
    for i in 0..n {
        for j in i..n {
            let mut powers = vec![0; n];
            powers[i] += 1;
            powers[j] += 1;
            let c = if i == j { 0.5 * q.get(i, i) } else { q.get(i, j) };
            if c != 0.0 {
                terms.push(Term { coeff: c, powers });
            }
        }
    }
    if terms.is_empty() {
        terms.push(Term { coeff: 0.0, powers: vec![0; n] });
    }
    Expr::Polynomial { terms }
}
