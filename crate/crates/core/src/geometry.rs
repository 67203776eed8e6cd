//! Domains given by a defining function ρ (ρ < 0 inside), their boundary
//! curvature forms, strict cone-convexity checks and barrier certificates.

use crate::bellman::ControlSet;
use crate::matcore::{phi_project, HermMatrix, SymMatrix, C64};
use crate::operators::{HessianOperator, Kind, Realm};
use crate::{Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Boundary points are located to |ρ| below this.
pub const BOUNDARY_RHO_TOL: f64 = 1e-10;
/// Smallest admissible |ρ_x| on the boundary.
pub const MIN_GRADIENT: f64 = 1e-6;
/// Largest C tried by the barrier search.
pub const BARRIER_C_MAX: f64 = 4_294_967_296.0;

/// One monomial c·∏ x_i^p_i.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// Built-in shapes; `center` must be an interior point from which the
/// domain is star-shaped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    /// ρ = (|x − c|² − R²)/2
    Ball { center: Vec<f64>, radius: f64 },
    /// ρ = (Σ (x_i − c_i)²/a_i² − 1)/2
    Ellipsoid { center: Vec<f64>, semi_axes: Vec<f64> },
    /// ρ = Σ coeff·∏ x_i^powers_i
    Polynomial { center: Vec<f64>, terms: Vec<Term> },
}

impl ShapeSpec {
    pub fn dim(&self) -> usize {
        match self {
            ShapeSpec::Ball { center, .. } | ShapeSpec::Ellipsoid { center, .. } | ShapeSpec::Polynomial { center, .. } => {
                center.len()
            }
        }
    }
}

/// A domain in R^n (or C^(n/2) for the complex realm) with its bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainGeometry {
    pub shape: ShapeSpec,
    pub realm: Realm,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn pow_u(x: f64, p: u32) -> f64 {
    x.powi(p as i32)
}

impl DomainGeometry {
    pub fn new(shape: ShapeSpec, realm: Realm) -> Result<Self> {
        let n = shape.dim();
        if n == 0 {
            return Err(Error::Invalid("domain dimension must be positive".into()));
        }
        if realm == Realm::Complex && n % 2 != 0 {
            return Err(Error::Invalid("a complex domain needs an even real dimension".into()));
        }
        match &shape {
            ShapeSpec::Ball { radius, .. } if !(*radius > 0.0) => {
                return Err(Error::Invalid("ball radius must be positive".into()))
            }
            ShapeSpec::Ellipsoid { semi_axes, .. } if semi_axes.len() != n || semi_axes.iter().any(|a| !(*a > 0.0)) => {
                return Err(Error::Invalid("ellipsoid needs one positive semi-axis per dimension".into()))
            }
            ShapeSpec::Polynomial { terms, .. } if terms.is_empty() || terms.iter().any(|t| t.powers.len() != n) => {
                return Err(Error::Invalid("polynomial terms need one power per dimension".into()))
            }
            _ => {}
        }
        let mut dom = DomainGeometry { shape, realm, lower: vec![0.0; n], upper: vec![0.0; n] };
        let c = dom.center().to_vec();
        if !(dom.rho(&c) < 0.0) {
            return Err(Error::Invalid("the centre must be an interior point (rho < 0)".into()));
        }
        match &dom.shape {
            ShapeSpec::Ball { center, radius } => {
                dom.lower = center.iter().map(|v| v - radius).collect();
                dom.upper = center.iter().map(|v| v + radius).collect();
            }
            ShapeSpec::Ellipsoid { center, semi_axes } => {
                dom.lower = center.iter().zip(semi_axes).map(|(v, a)| v - a).collect();
                dom.upper = center.iter().zip(semi_axes).map(|(v, a)| v + a).collect();
            }
            ShapeSpec::Polynomial { .. } => {
                // ray casting; the padding absorbs the gaps between rays
                let pts = dom.boundary_samples(4096, 0x0b0c)?;
                let mut lo = c.clone();
                let mut hi = c.clone();
                for p in &pts {
                    for i in 0..n {
                        lo[i] = lo[i].min(p[i]);
                        hi[i] = hi[i].max(p[i]);
                    }
                }
                for i in 0..n {
                    let pad = 0.05 * (hi[i] - lo[i]);
                    lo[i] -= pad;
                    hi[i] += pad;
                }
                dom.lower = lo;
                dom.upper = hi;
            }
        }
        Ok(dom)
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        Self::new(ShapeSpec::Ball { center, radius }, Realm::Real)
    }

    pub fn ellipsoid(center: Vec<f64>, semi_axes: Vec<f64>) -> Result<Self> {
        Self::new(ShapeSpec::Ellipsoid { center, semi_axes }, Realm::Real)
    }

    pub fn polynomial(center: Vec<f64>, terms: Vec<Term>) -> Result<Self> {
        Self::new(ShapeSpec::Polynomial { center, terms }, Realm::Real)
    }

    /// Real dimension.
    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn center(&self) -> &[f64] {
        match &self.shape {
            ShapeSpec::Ball { center, .. } | ShapeSpec::Ellipsoid { center, .. } | ShapeSpec::Polynomial { center, .. } => {
                center
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (u - l).powi(2)).sum::<f64>().sqrt()
    }

    pub fn rho(&self, x: &[f64]) -> f64 {
        match &self.shape {
            ShapeSpec::Ball { center, radius } => {
                0.5 * (x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>() - radius * radius)
            }
            ShapeSpec::Ellipsoid { center, semi_axes } => {
                0.5 * (x.iter().zip(center).zip(semi_axes).map(|((a, b), s)| ((a - b) / s).powi(2)).sum::<f64>() - 1.0)
            }
            ShapeSpec::Polynomial { terms, .. } => terms
                .iter()
                .map(|t| t.coeff * t.powers.iter().zip(x).map(|(&p, &v)| pow_u(v, p)).product::<f64>())
                .sum(),
        }
    }

    pub fn rho_grad(&self, x: &[f64]) -> Vec<f64> {
        match &self.shape {
            ShapeSpec::Ball { center, .. } => x.iter().zip(center).map(|(a, b)| a - b).collect(),
            ShapeSpec::Ellipsoid { center, semi_axes } => {
                x.iter().zip(center).zip(semi_axes).map(|((a, b), s)| (a - b) / (s * s)).collect()
            }
            ShapeSpec::Polynomial { terms, .. } => {
                let n = x.len();
                let mut g = vec![0.0; n];
                for t in terms {
                    for i in 0..n {
                        let p = t.powers[i];
                        if p == 0 {
                            continue;
                        }
                        let mut v = t.coeff * p as f64;
                        for (j, (&q, &xj)) in t.powers.iter().zip(x).enumerate() {
                            v *= pow_u(xj, if j == i { q - 1 } else { q });
                        }
                        g[i] += v;
                    }
                }
                g
            }
        }
    }

    pub fn rho_hess(&self, x: &[f64]) -> SymMatrix {
        let n = x.len();
        match &self.shape {
            ShapeSpec::Ball { .. } => SymMatrix::identity(n),
            ShapeSpec::Ellipsoid { semi_axes, .. } => {
                SymMatrix::from_diag(&semi_axes.iter().map(|s| 1.0 / (s * s)).collect::<Vec<_>>())
            }
            ShapeSpec::Polynomial { terms, .. } => {
                let mut h = SymMatrix::zeros(n);
                for t in terms {
                    for i in 0..n {
                        for j in i..n {
                            let mut p = t.powers.clone();
                            let mut c = t.coeff;
                            for &k in &[i, j] {
                                if p[k] == 0 {
                                    c = 0.0;
                                    break;
                                }
                                c *= p[k] as f64;
                                p[k] -= 1;
                            }
                            if c != 0.0 {
                                let v = c * p.iter().zip(x).map(|(&q, &xv)| pow_u(xv, q)).product::<f64>();
                                h.set(i, j, h.get(i, j) + v);
                            }
                        }
                    }
                }
                h
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.rho(x) < 0.0
    }

    /// The boundary point on the ray from the centre in direction u.
    pub fn boundary_point(&self, u: &[f64]) -> Result<Vec<f64>> {
        let c = self.center();
        let at = |r: f64| -> Vec<f64> { c.iter().zip(u).map(|(a, b)| a + r * b).collect() };
        let mut hi = 1.0;
        let mut guard = 0;
        while self.rho(&at(hi)) < 0.0 {
            hi *= 2.0;
            guard += 1;
            if guard > 60 {
                return Err(Error::Invalid("domain is unbounded along a sampled ray".into()));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.rho(&at(mid)) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (pl, ph) = (at(lo), at(hi));
        let p = if self.rho(&pl).abs() <= self.rho(&ph).abs() { pl } else { ph };
        if !(self.rho(&p).abs() <= BOUNDARY_RHO_TOL) {
            return Err(Error::NotOnBoundary { rho: self.rho(&p) });
        }
        Ok(p)
    }

    /// Boundary samples: the ±axis directions first, then seeded random
    /// directions.
    pub fn boundary_samples(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let d = self.dim();
        let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..d {
            for s in [1.0, -1.0] {
                if dirs.len() < n {
                    let mut e = vec![0.0; d];
                    e[i] = s;
                    dirs.push(e);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while dirs.len() < n {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                dirs.push(v.iter().map(|x| x / norm).collect());
            }
        }
        dirs.iter().map(|u| self.boundary_point(u)).collect()
    }

    /// Points of a uniform lattice in the bounding box that lie inside.
    pub fn interior_samples(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let n = per_axis.max(2);
        let total = n.pow(d as u32);
        let mut out = Vec::new();
        for idx in 0..total {
            let mut rem = idx;
            let x: Vec<f64> = (0..d)
                .map(|i| {
                    let k = rem % n;
                    rem /= n;
                    self.lower[i] + (self.upper[i] - self.lower[i]) * (k as f64 + 0.5) / n as f64
                })
                .collect();
            if self.contains(&x) {
                out.push(x);
            }
        }
        out
    }

    fn check_on_boundary(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.rho_grad(x);
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(gn >= MIN_GRADIENT) {
            return Err(Error::Invalid(format!("degenerate defining function: |rho_x| = {gn:e}")));
        }
        let r = self.rho(x);
        if r.abs() / gn > 1e-8 {
            return Err(Error::NotOnBoundary { rho: r });
        }
        Ok(g)
    }
}

/// Second fundamental form at a boundary point.
#[derive(Clone, Debug)]
pub struct SecondFundamentalForm {
    pub ii: SymMatrix,
    /// Orthonormal tangent basis as columns (n × (n−1)).
    pub tangent: DMatrix<f64>,
    /// Outward unit normal.
    pub normal: Vec<f64>,
}

impl SecondFundamentalForm {
    /// n nᵀ.
    pub fn projector(&self) -> SymMatrix {
        let n = &self.normal;
        SymMatrix::from_fn(n.len(), |i, j| n[i] * n[j])
    }

    /// T II Tᵀ + t n nᵀ in the ambient space.
    pub fn embed(&self, t: f64) -> SymMatrix {
        let d = self.normal.len();
        let t_ii = &self.tangent * self.ii.to_dense() * self.tangent.transpose();
        SymMatrix::from_fn(d, |i, j| 0.5 * (t_ii[(i, j)] + t_ii[(j, i)]) + t * self.normal[i] * self.normal[j])
    }
}

/// Orthonormal completion of a unit vector: d−1 real columns orthogonal to it.
fn orthonormal_complement(n: &[f64]) -> DMatrix<f64> {
    let d = n.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs()));
    let mut basis: Vec<Vec<f64>> = vec![n.to_vec()];
    for &i in order.iter().take(d - 1) {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        basis.push(v.iter().map(|x| x / norm).collect());
    }
    DMatrix::from_fn(d, d - 1, |i, j| basis[j + 1][i])
}

/// II = Tᵀ ρ_xx T / |ρ_x| in an orthonormal tangent frame.
pub fn second_fundamental_form(dom: &DomainGeometry, x: &[f64]) -> Result<SecondFundamentalForm> {
    let g = dom.check_on_boundary(x)?;
    let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let normal: Vec<f64> = g.iter().map(|v| v / gn).collect();
    let tangent = orthonormal_complement(&normal);
    let h = dom.rho_hess(x).to_dense();
    let ii = SymMatrix::from_dense_sym(&(tangent.transpose() * h * &tangent / gn));
    Ok(SecondFundamentalForm { ii, tangent, normal })
}

/// Levi form at a boundary point of a complex domain.
#[derive(Clone, Debug)]
pub struct LeviForm {
    pub levi: HermMatrix,
    /// Orthonormal basis of the complex tangent space as columns (d × (d−1)).
    pub tangent: DMatrix<C64>,
    /// Unit complex normal ρ_x + iρ_y, normalized.
    pub normal: Vec<C64>,
}

impl LeviForm {
    pub fn projector(&self) -> HermMatrix {
        let n = &self.normal;
        HermMatrix::from_fn(n.len(), |i, j| n[i] * n[j].conj())
    }

    /// T L T* + t ν ν* in C^d.
    pub fn embed(&self, t: f64) -> HermMatrix {
        let d = self.normal.len();
        let l = self.levi.to_dense();
        let m = &self.tangent * l * self.tangent.adjoint();
        HermMatrix::from_fn(d, |i, j| 0.5 * (m[(i, j)] + m[(j, i)].conj()) + self.normal[i] * self.normal[j].conj() * t)
    }
}

/// Levi form: the complex Hessian of ρ restricted to the complex tangent
/// space, scaled by 1/|ρ_x| (so the sphere of radius R gives I/R).
/// Coordinates are z = x + iy with x the first half of the real vector.
pub fn levi_form(dom: &DomainGeometry, x: &[f64]) -> Result<LeviForm> {
    if dom.realm != Realm::Complex {
        return Err(Error::RealmMismatch("Levi form needs a complex domain".into()));
    }
    let g = dom.check_on_boundary(x)?;
    let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d = dom.dim() / 2;
    let normal: Vec<C64> = (0..d).map(|i| C64::new(g[i], g[i + d]) / gn).collect();
    // the Hermitian matrix of w ↦ Hess ρ averaged over the complex structure
    let h = phi_project(&dom.rho_hess(x)).to_dense().map(|z| z.conj());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| normal[a].norm().total_cmp(&normal[b].norm()));
    let mut basis: Vec<Vec<C64>> = vec![normal.clone()];
    for &i in order.iter().take(d - 1) {
        let mut v = vec![C64::new(0.0, 0.0); d];
        v[i] = C64::new(1.0, 0.0);
        for b in &basis {
            let p: C64 = b.iter().zip(&v).map(|(bi, vi)| bi.conj() * vi).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= p * bi;
            }
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        basis.push(v.iter().map(|z| z / norm).collect());
    }
    let tangent = DMatrix::from_fn(d, d - 1, |i, j| basis[j + 1][i]);
    let l = tangent.adjoint() * h * &tangent / C64::new(gn, 0.0);
    Ok(LeviForm { levi: HermMatrix::from_dense_herm(&l), tangent, normal })
}

/// Closed-form boundary condition available for the operator's family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shortcut {
    /// Γ_σk: the form must lie in Γ_σ(k−1) of one dimension less.
    Sigma(usize),
    /// Γ_μk: the sum of the k smallest curvatures must be positive.
    Mu(usize),
}

pub fn shortcut_for(op: &HessianOperator) -> Option<Shortcut> {
    fn of(kind: &Kind, d: usize) -> Option<Shortcut> {
        match kind {
            Kind::Det => Some(Shortcut::Sigma(d)),
            Kind::Sigma(k) => Some(Shortcut::Sigma(*k)),
            Kind::Mu(k) => Some(Shortcut::Mu(*k)),
            Kind::NormalizedRoot { base, .. } => of(base, d),
            _ => None,
        }
    }
    of(&op.kind, op.dim)
}

/// (holds, reported value) of the closed-form condition on curvatures κ.
/// The value is σ_(k−1)(κ) or the sum of the k smallest κ.
pub fn shortcut_holds(s: Shortcut, kappa: &[f64]) -> Result<(bool, f64)> {
    let m = kappa.len();
    match s {
        Shortcut::Sigma(k) => {
            if k <= 1 {
                return Ok((true, 1.0));
            }
            let op = HessianOperator::sigma(m, k - 1)?;
            // σ_1 … σ_(k−1) positive, i.e. membership of Γ_(k−1)
            let st = op.in_cone_spectrum(kappa)?;
            Ok((st.inside(), op.evaluate_spectrum(kappa)?))
        }
        Shortcut::Mu(k) => {
            if k > m {
                return Ok((true, kappa.iter().sum()));
            }
            let op = HessianOperator::mu(m, k)?;
            let mut sorted = kappa.to_vec();
            sorted.sort_by(f64::total_cmp);
            let v: f64 = sorted[..k].iter().sum();
            Ok((op.in_cone_spectrum(kappa)?.inside(), v))
        }
    }
}

/// Per-sample outcome of the strict convexity check.
#[derive(Clone, Debug, Serialize)]
pub struct ConvexitySample {
    pub point: Vec<f64>,
    pub witness_t: Option<f64>,
    pub shortcut: Option<bool>,
    pub shortcut_value: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvexityReport {
    pub pass: bool,
    pub samples: usize,
    pub failures: usize,
    /// First failing sample, or the sample needing the largest t.
    pub worst_point: Vec<f64>,
    pub worst_t: Option<f64>,
    /// Samples where direct test and closed-form condition agree, if a
    /// closed form exists for the operator.
    pub shortcut_agreement: Option<usize>,
    pub details: Vec<ConvexitySample>,
}

impl ConvexityReport {
    pub fn shortcut_agrees(&self) -> Option<bool> {
        self.shortcut_agreement.map(|a| a == self.samples)
    }
}

/// Smallest t in the doubling sequence 1, 2, 4, … ≤ t_max with the
/// boundary form plus t times the normal projector inside the cone.
fn witness(t_max: f64, inside: impl Fn(f64) -> Result<bool>) -> Result<Option<f64>> {
    let mut t = 1.0;
    while t <= t_max {
        if inside(t)? {
            return Ok(Some(t));
        }
        t *= 2.0;
    }
    Ok(None)
}

/// Strict Γ-convexity (real) or Θ-pseudoconvexity (complex) on sampled
/// boundary points.
pub fn check_strict_gamma_convexity(
    dom: &DomainGeometry,
    op: &HessianOperator,
    n_samples: usize,
    t_max: f64,
    seed: u64,
) -> Result<ConvexityReport> {
    if op.realm != dom.realm {
        return Err(Error::RealmMismatch("operator and domain realms differ".into()));
    }
    let expect = match dom.realm {
        Realm::Real => dom.dim(),
        Realm::Complex => dom.dim() / 2,
    };
    if op.dim != expect {
        return Err(Error::Invalid(format!("operator dimension {} does not match domain dimension {expect}", op.dim)));
    }
    let shortcut = shortcut_for(op);
    let pts = dom.boundary_samples(n_samples, seed)?;
    let mut details = Vec::with_capacity(pts.len());
    for x in pts {
        let (wt, kappa) = match dom.realm {
            Realm::Real => {
                let sff = second_fundamental_form(dom, &x)?;
                let wt = witness(t_max, |t| Ok(op.in_cone(&sff.embed(t))?.inside()))?;
                (wt, sff.ii.spectral()?.eigenvalues)
            }
            Realm::Complex => {
                let lf = levi_form(dom, &x)?;
                let wt = witness(t_max, |t| Ok(op.in_cone_herm(&lf.embed(t))?.inside()))?;
                (wt, lf.levi.spectral()?.eigenvalues)
            }
        };
        let (sc, sv) = match shortcut {
            Some(s) => {
                let (b, v) = shortcut_holds(s, &kappa)?;
                (Some(b), Some(v))
            }
            None => (None, None),
        };
        details.push(ConvexitySample { point: x, witness_t: wt, shortcut: sc, shortcut_value: sv });
    }
    let failures = details.iter().filter(|s| s.witness_t.is_none()).count();
    let worst = details
        .iter()
        .find(|s| s.witness_t.is_none())
        .or_else(|| details.iter().max_by(|a, b| a.witness_t.partial_cmp(&b.witness_t).unwrap()))
        .expect("at least one sample");
    let shortcut_agreement =
        shortcut.map(|_| details.iter().filter(|s| s.shortcut == Some(s.witness_t.is_some())).count());
    Ok(ConvexityReport {
        pass: failures == 0,
        samples: details.len(),
        failures,
        worst_point: worst.point.clone(),
        worst_t: worst.witness_t,
        shortcut_agreement,
        details,
    })
}

/// A certified global barrier ψ = −Cρ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierCertificate {
    #[serde(rename = "C")]
    pub c: f64,
    pub epsilon: f64,
    pub worst_residual: f64,
    pub samples: usize,
}

impl BarrierCertificate {
    pub fn psi(&self, dom: &DomainGeometry, x: &[f64]) -> f64 {
        -self.c * dom.rho(x)
    }

    pub fn psi_grad(&self, dom: &DomainGeometry, x: &[f64]) -> Vec<f64> {
        dom.rho_grad(x).iter().map(|v| -self.c * v).collect()
    }
}

/// max over points of sup over controls of tr(a ψ_xx) for ψ = −Cρ.
pub fn barrier_residual(dom: &DomainGeometry, controls: &ControlSet, c: f64, points: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .map(|x| -c * controls.residual_argmin(&dom.rho_hess(x), 0.0).0)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Sampling used by the barrier search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierSpec {
    pub grid_per_axis: usize,
    pub boundary_samples: usize,
    pub seed: u64,
}

impl Default for BarrierSpec {
    fn default() -> Self {
        BarrierSpec { grid_per_axis: 16, boundary_samples: 2048, seed: 0 }
    }
}

/// Sample points a barrier search uses: interior lattice plus boundary.
pub fn barrier_points(dom: &DomainGeometry, spec: &BarrierSpec) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    Ok((dom.interior_samples(spec.grid_per_axis), dom.boundary_samples(spec.boundary_samples, spec.seed)?))
}

/// Double C from 1 until every sample has sup_a tr(a ψ_xx) ≤ −1 and the
/// boundary samples have |ψ_x| ≥ 1.
pub fn build_barrier(dom: &DomainGeometry, controls: &ControlSet, spec: &BarrierSpec) -> Result<BarrierCertificate> {
    if controls.dim != dom.dim() {
        return Err(Error::Invalid("control and domain dimensions differ".into()));
    }
    let (interior, boundary) = barrier_points(dom, spec)?;
    let mut all = interior.clone();
    all.extend(boundary.iter().cloned());
    // worst case of min_a tr(a ρ_xx)
    let m = all.iter().map(|x| controls.residual_argmin(&dom.rho_hess(x), 0.0).0).fold(f64::INFINITY, f64::min);
    let g = boundary
        .iter()
        .map(|x| dom.rho_grad(x).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min);
    // rounding slack on the two unit thresholds
    let one = 1.0 - 1e-9;
    let mut c: f64 = 1.0;
    while c * m < one || c * g < one {
        c *= 2.0;
        if c > BARRIER_C_MAX {
            return Err(Error::Certification(format!(
                "no barrier up to C = 2^32 (min tr(a rho_xx) = {m:e}, min |rho_x| = {g:e})"
            )));
        }
    }
    if interior.iter().any(|x| !(-c * dom.rho(x) > 0.0)) {
        return Err(Error::Certification("psi not positive inside".into()));
    }
    let diam = dom.diameter();
    Ok(BarrierCertificate { c, epsilon: 0.1 / (diam * diam), worst_residual: -c * m, samples: all.len() })
}
