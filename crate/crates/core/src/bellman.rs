//! Bellman form of a Hessian equation: control coefficients (a, h), finite
//! control sets and the brute-force equivalence verifier.
//!
//! Controls live on the trace-one slice of the cone. Every control shares its
//! eigenframe with its diffusion matrix a, so a control set is stored as a
//! list of frames plus, per control, the eigenvalues of a in its frame.

use crate::matcore::{haar_orthogonal, haar_unitary, phi_embed_general, phi_project, SymMatrix};
use crate::operators::{HessianOperator, Realm};
use crate::{Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Default distance a control keeps from the cone boundary.
pub const DEFAULT_MARGIN: f64 = 1e-6;
const DEGENERATE_TRACE: f64 = 1e-12;
/// Radial cap for trace-one slices that are unbounded (e.g. the half-space cone).
const RADIUS_CAP: f64 = 4.0;

/// Diffusion matrix and source weight of one control.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlCoefficients {
    pub a: SymMatrix,
    pub h: f64,
}

/// Coefficients in the control's eigenframe: a = Q diag(weights) Qᵀ.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralCoefficients {
    pub weights: Vec<f64>,
    pub h: f64,
}

/// One control on the trace-one slice, in the working (real) space.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPoint {
    pub alpha: SymMatrix,
    pub frame: usize,
    /// Eigenvalues of the control in the operator's own space.
    pub spectrum: Vec<f64>,
}

/// Real dimension the operator acts on.
pub fn working_dim(op: &HessianOperator) -> usize {
    match op.realm {
        Realm::Real => op.dim,
        Realm::Complex => 2 * op.dim,
    }
}

/// a = ∇F / tr ∇F and h = 1 / tr ∇F at α.
pub fn coefficients(op: &HessianOperator, alpha: &SymMatrix) -> Result<ControlCoefficients> {
    let g = op.gradient(alpha)?;
    let tr = g.trace();
    if !(tr > DEGENERATE_TRACE) {
        return Err(Error::DegenerateControl { trace: tr });
    }
    Ok(ControlCoefficients { a: g.scale(1.0 / tr), h: 1.0 / tr })
}

/// Coefficients for a control given by its spectrum in the operator's space.
/// For the complex realm the weights are those of the embedded real matrix.
pub fn spectral_coefficients(op: &HessianOperator, lam: &[f64]) -> Result<SpectralCoefficients> {
    let g = op.gradient_spectrum(lam)?;
    let tr: f64 = g.iter().sum();
    if !(tr > DEGENERATE_TRACE) {
        return Err(Error::DegenerateControl { trace: tr });
    }
    let weights = match op.realm {
        Realm::Real => g.iter().map(|v| v / tr).collect(),
        Realm::Complex => g.iter().chain(g.iter()).map(|v| v / (2.0 * tr)).collect(),
    };
    Ok(SpectralCoefficients { weights, h: 1.0 / tr })
}

/// m·[s_m^(1/m) / s_(m-1)^(1/(m-1))]^(m-1) in the Gårding eigenvalues of a
/// polynomial H at α. Equals h·H(I)^(1/m) for the root H^(1/m).
pub fn maclaurin_factor(h: &HessianOperator, alpha: &SymMatrix) -> Result<f64> {
    let lam = h.garding_eigenvalues(alpha)?.values;
    maclaurin_factor_of(&lam)
}

/// The Maclaurin factor of a positive vector.
pub fn maclaurin_factor_of(lam: &[f64]) -> Result<f64> {
    let m = lam.len();
    if lam.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::ConeViolation { min_eigenvalue: lam.iter().cloned().fold(f64::INFINITY, f64::min) });
    }
    if m == 1 {
        return Ok(1.0);
    }
    // s_m^((m-1)/m) / s_(m-1) = (prod λ)^((m-1)/m) / (prod λ · Σ 1/λ_i)
    let log_prod: f64 = lam.iter().map(|l| l.ln()).sum();
    let inv_sum: f64 = lam.iter().map(|l| 1.0 / l).sum();
    Ok(m as f64 * (-log_prod / m as f64).exp() / inv_sum)
}

/// A finite control set sharing eigenframes.
#[derive(Clone, Debug)]
pub struct ControlSet {
    /// Working dimension.
    pub dim: usize,
    /// Orthogonal frames in the working space; frame 0 is the identity.
    pub frames: Vec<DMatrix<f64>>,
    pub points: Vec<ControlPoint>,
    pub coeffs: Vec<ControlCoefficients>,
    pub spectral: Vec<SpectralCoefficients>,
    pub includes_identity: bool,
}

impl ControlSet {
    /// Assemble controls from spectra placed in every frame. Spectra outside
    /// the margin or at non-differentiable points are dropped.
    pub fn from_spectra(
        op: &HessianOperator,
        frames: Vec<DMatrix<f64>>,
        spectra: &[Vec<f64>],
        include_identity: bool,
        margin: f64,
    ) -> Result<Self> {
        let d = op.dim;
        let n = working_dim(op);
        if frames.is_empty() || frames.iter().any(|q| q.nrows() != n || q.ncols() != n) {
            return Err(Error::Invalid(format!("control frames must be {n}x{n}")));
        }
        let mut set = ControlSet {
            dim: n,
            frames,
            points: Vec::new(),
            coeffs: Vec::new(),
            spectral: Vec::new(),
            includes_identity: false,
        };
        if include_identity {
            let lam = vec![1.0 / d as f64; d];
            match spectral_coefficients(op, &lam) {
                Ok(sc) => {
                    set.push(op, 0, lam, sc);
                    set.includes_identity = true;
                }
                Err(Error::NonDifferentiable { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        let mut accepted = Vec::new();
        for lam in spectra {
            let st = op.in_cone_spectrum(lam)?;
            if !st.inside() || st.margin < margin {
                continue;
            }
            match spectral_coefficients(op, lam) {
                Ok(sc) => accepted.push((lam.clone(), sc)),
                Err(Error::NonDifferentiable { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        for f in 0..set.frames.len() {
            for (lam, sc) in &accepted {
                set.push(op, f, lam.clone(), sc.clone());
            }
        }
        if set.points.is_empty() {
            return Err(Error::NoControls);
        }
        Ok(set)
    }

    fn push(&mut self, op: &HessianOperator, frame: usize, lam: Vec<f64>, sc: SpectralCoefficients) {
        let q = &self.frames[frame];
        let real_spec: Vec<f64> = match op.realm {
            Realm::Real => lam.clone(),
            Realm::Complex => lam.iter().chain(lam.iter()).map(|v| v / 2.0).collect(),
        };
        let alpha = in_frame(q, &real_spec);
        let a = in_frame(q, &sc.weights);
        self.points.push(ControlPoint { alpha, frame, spectrum: lam });
        self.coeffs.push(ControlCoefficients { a, h: sc.h });
        self.spectral.push(sc);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// e_kᵀ γ e_k for the columns of every frame.
    pub fn frame_diagonals(&self, gamma: &SymMatrix) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .map(|q| (0..self.dim).map(|k| gamma.quad_form(q.column(k).as_slice())).collect())
            .collect()
    }

    /// (min over controls of tr(aγ) − h c, index of the first minimizer).
    pub fn residual_argmin(&self, gamma: &SymMatrix, c: f64) -> (f64, usize) {
        let diags = self.frame_diagonals(gamma);
        let mut best = (f64::INFINITY, 0);
        for (i, (p, sc)) in self.points.iter().zip(&self.spectral).enumerate() {
            let v = dot(&sc.weights, &diags[p.frame]) - sc.h * c;
            if v < best.0 {
                best = (v, i);
            }
        }
        best
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Q diag(v) Qᵀ.
fn in_frame(q: &DMatrix<f64>, v: &[f64]) -> SymMatrix {
    let n = v.len();
    SymMatrix::from_fn(n, |i, j| (0..n).map(|k| q[(i, k)] * v[k] * q[(j, k)]).sum())
}

/// inf over the control set of tr(a γ) − h c.
pub fn bellman_residual(controls: &ControlSet, gamma: &SymMatrix, c: f64) -> f64 {
    controls.residual_argmin(gamma, c).0
}

/// Parameters of the control lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlGridSpec {
    /// Ray directions in the trace-zero plane of eigenvalue space.
    pub n_rays: usize,
    /// Uniform radial levels per ray.
    pub n_levels: usize,
    /// Extra levels halving the gap to the cone boundary.
    pub boundary_levels: usize,
    /// Frames beyond the identity frame.
    pub n_orthogonal: usize,
    pub margin: f64,
    pub include_identity: bool,
    pub seed: u64,
}

impl Default for ControlGridSpec {
    fn default() -> Self {
        ControlGridSpec {
            n_rays: 12,
            n_levels: 8,
            boundary_levels: 8,
            n_orthogonal: 8,
            margin: DEFAULT_MARGIN,
            include_identity: true,
            seed: 0,
        }
    }
}

/// Orthonormal basis of the trace-zero plane in R^d; the first vector
/// points from the centre towards the vertex e_1.
fn trace_zero_basis(d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let c = 1.0 / d as f64;
    let mut cands: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 - c } else { -c }).collect()).collect();
    for v in cands.iter_mut() {
        for b in &basis {
            let p = dot(v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        let n = dot(v, v).sqrt();
        if n > 1e-10 && basis.len() < d - 1 {
            basis.push(v.iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Unit directions in the trace-zero plane.
fn ray_directions(op: &HessianOperator, n_rays: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let d = op.dim;
    if d < 2 || n_rays == 0 {
        return Ok(Vec::new());
    }
    let basis = trace_zero_basis(d);
    let combine = |coef: &[f64]| -> Vec<f64> {
        let mut v = vec![0.0; d];
        for (c, b) in coef.iter().zip(&basis) {
            for (x, y) in v.iter_mut().zip(b) {
                *x += c * y;
            }
        }
        v
    };
    Ok(match d {
        2 => vec![basis[0].clone(), basis[0].iter().map(|x| -x).collect()],
        3 => {
            // Corners of permutation-symmetric slices can only sit on the
            // mirror lines at multiples of 60 degrees. Rays cluster
            // quadratically towards the mirror lines that are corners.
            let sector = std::f64::consts::PI / 3.0;
            let polar = |t: f64| combine(&[t.cos(), t.sin()]);
            let corner = mirror_corners(op)?;
            let per = n_rays.div_ceil(6);
            (0..6 * per)
                .map(|j| {
                    let k = j / per;
                    let s = (j % per) as f64 / per as f64;
                    let g = match (corner[k % 2], corner[(k + 1) % 2]) {
                        (true, true) => s * s * (3.0 - 2.0 * s),
                        (true, false) => s * s * (2.0 - s),
                        (false, true) => 1.0 - (1.0 - s) * (1.0 - s) * (1.0 + s),
                        (false, false) => s,
                    };
                    polar(sector * (k as f64 + g))
                })
                .collect()
        }
        _ => {
            let c = 1.0 / d as f64;
            let mut out: Vec<Vec<f64>> = Vec::new();
            for i in 0..d {
                let v: Vec<f64> = (0..d).map(|j| if i == j { 1.0 - c } else { -c }).collect();
                let n = dot(&v, &v).sqrt();
                out.push(v.iter().map(|x| x / n).collect());
                out.push(v.iter().map(|x| -x / n).collect());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0d1e);
            while out.len() < n_rays {
                let coef: Vec<f64> = (0..d - 1).map(|_| rng.sample(StandardNormal)).collect();
                let v = combine(&coef);
                let n = dot(&v, &v).sqrt();
                if n > 1e-12 {
                    out.push(v.iter().map(|x| x / n).collect());
                }
            }
            out
        }
    })
}

/// Unit vector at angle θ in the trace-zero plane of R³, θ = 0 pointing at e_1.
fn planar_direction(theta: f64) -> Vec<f64> {
    let b = trace_zero_basis(3);
    (0..3).map(|i| theta.cos() * b[0][i] + theta.sin() * b[1][i]).collect()
}

/// Corner flags of a three-dimensional slice for the two classes of mirror
/// lines (angles 0 and 60 degrees modulo 120).
fn mirror_corners(op: &HessianOperator) -> Result<[bool; 2]> {
    let sector = std::f64::consts::PI / 3.0;
    Ok([is_corner(op, &planar_direction, 0.0)?, is_corner(op, &planar_direction, sector)?])
}

/// Whether the slice boundary has a kink in direction θ: the radius drops
/// linearly rather than quadratically in the angle.
fn is_corner(op: &HessianOperator, polar: &impl Fn(f64) -> Vec<f64>, theta: f64) -> Result<bool> {
    let r0 = boundary_radius(op, &polar(theta))?;
    if r0 >= RADIUS_CAP {
        return Ok(false);
    }
    let step = 1e-3;
    let d1 = r0 - boundary_radius(op, &polar(theta + step))?;
    let d2 = r0 - boundary_radius(op, &polar(theta + 2.0 * step))?;
    Ok(d1 > 1e-9 && d2 < 3.0 * d1)
}

/// Distance from the centre of the trace-one slice to the cone boundary
/// along u, capped for unbounded slices.
fn boundary_radius(op: &HessianOperator, u: &[f64]) -> Result<f64> {
    let d = u.len();
    let c = 1.0 / d as f64;
    let at = |r: f64| -> Vec<f64> { u.iter().map(|x| c + r * x).collect() };
    if op.in_cone_spectrum(&at(RADIUS_CAP))?.inside() {
        return Ok(RADIUS_CAP);
    }
    let (mut lo, mut hi) = (0.0, RADIUS_CAP);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if op.in_cone_spectrum(&at(mid))?.inside() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Radial fractions 1 − (1 − j/L)², spaced like the square root of the
/// distance to the boundary, then levels halving the last gap.
fn radial_fractions(n_levels: usize, boundary_levels: usize) -> Vec<f64> {
    let l = n_levels.max(1) as f64;
    let mut f: Vec<f64> = (1..n_levels).map(|j| 1.0 - (1.0 - j as f64 / l).powi(2)).collect();
    let mut gap = 1.0 / (l * l);
    for _ in 0..boundary_levels {
        gap *= 0.5;
        f.push(1.0 - gap);
    }
    f
}

/// Trace-one spectra on a polar lattice around the identity, filtered by the
/// cone margin. The identity itself is not included.
pub fn spectral_lattice(
    op: &HessianOperator,
    n_rays: usize,
    n_levels: usize,
    boundary_levels: usize,
    margin: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let d = op.dim;
    let c = 1.0 / d as f64;
    let mut out = Vec::new();
    let keep = |lam: &[f64]| -> Result<bool> {
        let st = op.in_cone_spectrum(lam)?;
        Ok(st.inside() && st.margin >= margin)
    };
    if d == 3 && n_rays > 0 {
        let corner = mirror_corners(op)?;
        if corner[0] != corner[1] {
            // Triangular slice: barycentric weights k_i² / Σ k_j² over a
            // simplex lattice grade quadratically towards faces and corners.
            let offset = if corner[0] { 0.0 } else { std::f64::consts::PI / 3.0 };
            let mut verts = Vec::new();
            for k in 0..3 {
                let u = planar_direction(offset + 2.0 * std::f64::consts::PI * k as f64 / 3.0);
                let r = boundary_radius(op, &u)?;
                verts.push(u.iter().map(|x| c + r * x).collect::<Vec<f64>>());
            }
            // face points also get fractional offsets 2^-j off the face
            let tail = 3usize;
            let target = (n_rays * (n_levels + boundary_levels)) as f64;
            let t3 = 3.0 * tail as f64;
            let n = ((t3 * t3 + 2.0 * target).sqrt() - t3).round().max(2.0) as usize;
            for i in 0..=n {
                for j in 0..=n - i {
                    let k = [i as f64, j as f64, (n - i - j) as f64];
                    let zeros: Vec<usize> = (0..3).filter(|&v| k[v] == 0.0).collect();
                    let mut variants = vec![k];
                    if zeros.len() == 1 {
                        for e in 1..=tail {
                            let mut kk = k;
                            kk[zeros[0]] = 0.5f64.powi(e as i32);
                            variants.push(kk);
                        }
                    }
                    for k in variants {
                        let norm: f64 = k.iter().map(|v| v * v).sum();
                        let lam: Vec<f64> =
                            (0..3).map(|q| (0..3).map(|v| k[v] * k[v] / norm * verts[v][q]).sum()).collect();
                        if keep(&lam)? {
                            out.push(lam);
                        }
                    }
                }
            }
            return Ok(out);
        }
    }
    let fr = radial_fractions(n_levels, boundary_levels);
    for u in ray_directions(op, n_rays, seed)? {
        let r = boundary_radius(op, &u)?;
        for f in &fr {
            let lam: Vec<f64> = u.iter().map(|x| c + f * r * x).collect();
            if keep(&lam)? {
                out.push(lam);
            }
        }
    }
    Ok(out)
}

/// Frames for a control grid: the identity plus `n` more. Planar real frames
/// are evenly spaced rotations; otherwise frames are Haar samples (unitary
/// ones embedded for the complex realm).
pub fn control_frames(op: &HessianOperator, n: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let d = op.dim;
    let w = working_dim(op);
    let mut frames = vec![DMatrix::identity(w, w)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match op.realm {
        Realm::Real if d == 2 => {
            let step = std::f64::consts::FRAC_PI_2 / (n + 1) as f64;
            for j in 1..=n {
                let (s, c) = (j as f64 * step).sin_cos();
                frames.push(DMatrix::from_row_slice(2, 2, &[c, -s, s, c]));
            }
        }
        Realm::Real => {
            for _ in 0..n {
                frames.push(haar_orthogonal(d, &mut rng));
            }
        }
        Realm::Complex => {
            for _ in 0..n {
                frames.push(phi_embed_general(&haar_unitary(d, &mut rng)));
            }
        }
    }
    frames
}

/// Control set from a lattice spec.
pub fn control_grid(op: &HessianOperator, spec: &ControlGridSpec) -> Result<ControlSet> {
    if !(spec.margin >= 0.0) {
        return Err(Error::Invalid("control margin must be non-negative".into()));
    }
    let spectra = spectral_lattice(op, spec.n_rays, spec.n_levels, spec.boundary_levels, spec.margin, spec.seed)?;
    let frames = control_frames(op, spec.n_orthogonal, spec.seed);
    ControlSet::from_spectra(op, frames, &spectra, spec.include_identity, spec.margin)
}

/// Outcome of one equivalence check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub residual: f64,
    pub t1: f64,
    pub pass: bool,
}

/// The shift t₁ with F(γ + t₁ I) = c, by bisection along the identity.
pub fn shift_to_level(op: &HessianOperator, gamma: &SymMatrix, c: f64) -> Result<f64> {
    let lam = operator_spectrum(op, gamma)?;
    shift_to_level_spectrum(op, &lam, c)
}

fn operator_spectrum(op: &HessianOperator, gamma: &SymMatrix) -> Result<Vec<f64>> {
    if gamma.dim() != working_dim(op) {
        return Err(Error::Invalid(format!("expected dimension {}, got {}", working_dim(op), gamma.dim())));
    }
    Ok(match op.realm {
        Realm::Real => gamma.spectral()?.eigenvalues,
        Realm::Complex => phi_project(gamma).spectral()?.eigenvalues,
    })
}

fn shift_to_level_spectrum(op: &HessianOperator, lam: &[f64], c: f64) -> Result<f64> {
    if !(c >= 0.0) || !c.is_finite() || lam.iter().any(|v| !v.is_finite()) {
        return Err(Error::Bracket(format!("no shift reaches level {c}")));
    }
    let shifted = |t: f64| -> Vec<f64> { lam.iter().map(|l| l + t).collect() };
    let span = lam.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1.0;
    // entry into the closed cone
    let (mut lo, mut hi) = (-span, span);
    if op.in_cone_spectrum(&shifted(lo))?.margin >= 0.0 || op.in_cone_spectrum(&shifted(hi))?.margin < 0.0 {
        return Err(Error::Bracket("identity shifts do not cross the cone boundary".into()));
    }
    while hi - lo > 1e-15 * span {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if op.in_cone_spectrum(&shifted(mid))?.margin >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let t0 = hi;
    if c == 0.0 {
        return Ok(t0);
    }
    let value = |t: f64| -> Result<f64> {
        match op.evaluate_spectrum(&shifted(t)) {
            Ok(v) => Ok(v),
            Err(Error::ConeViolation { .. }) => Ok(0.0),
            Err(e) => Err(e),
        }
    };
    // superlinearity gives F(γ + tI) ≥ (t − t0) F(I)
    let fi = op.value_at_identity()?;
    let mut hi = t0 + c / fi + 1e-12 * span;
    let mut guard = 0;
    while value(hi)? < c {
        hi = t0 + 2.0 * (hi - t0);
        guard += 1;
        if guard > 200 {
            return Err(Error::Bracket(format!("level {c} not reached")));
        }
    }
    let mut lo = t0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if value(mid)? < c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Lattice parameters giving roughly `density` controls for dimension d.
fn lattice_for_density(d: usize, density: usize) -> (usize, usize, usize) {
    let boundary = 12;
    match d {
        0 | 1 => (0, 1, 0),
        2 => (2, (density / 2).saturating_sub(boundary).max(1), boundary),
        _ => {
            let rays = ((density as f64).sqrt() / 6.0).ceil() as usize * 6;
            (rays, (density / rays).saturating_sub(boundary).max(1), boundary)
        }
    }
}

/// Precomputed spectral controls for repeated equivalence checks. Controls
/// are placed in the eigenframe of each tested γ: for an invariant F the
/// infimum of tr(aγ) over a control orbit is attained in γ's own frame.
#[derive(Clone, Debug)]
pub struct EquivalenceVerifier {
    pub op: HessianOperator,
    pub controls: Vec<SpectralCoefficients>,
}

impl EquivalenceVerifier {
    pub fn new(op: &HessianOperator, density: usize) -> Result<Self> {
        let (rays, levels, boundary) = lattice_for_density(op.dim, density);
        let mut spectra = spectral_lattice(op, rays, levels, boundary, DEFAULT_MARGIN, 0)?;
        spectra.push(vec![1.0 / op.dim as f64; op.dim]);
        let mut controls = Vec::with_capacity(spectra.len());
        for lam in &spectra {
            match spectral_coefficients(op, lam) {
                Ok(sc) => controls.push(sc),
                Err(Error::NonDifferentiable { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        if controls.is_empty() {
            return Err(Error::NoControls);
        }
        Ok(EquivalenceVerifier { op: op.clone(), controls })
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// Residual over the controls in γ's eigenframe.
    pub fn residual(&self, gamma: &SymMatrix, c: f64) -> Result<f64> {
        let lam = operator_spectrum(&self.op, gamma)?;
        Ok(self.residual_spectrum(&lam, c))
    }

    fn residual_spectrum(&self, lam: &[f64], c: f64) -> f64 {
        let diag: Vec<f64> = match self.op.realm {
            Realm::Real => lam.to_vec(),
            Realm::Complex => lam.iter().chain(lam.iter()).cloned().collect(),
        };
        self.controls.iter().map(|sc| dot(&sc.weights, &diag) - sc.h * c).fold(f64::INFINITY, f64::min)
    }

    pub fn verify(&self, gamma: &SymMatrix, c: f64, tol: f64) -> Result<EquivalenceReport> {
        let lam = operator_spectrum(&self.op, gamma)?;
        let t1 = shift_to_level_spectrum(&self.op, &lam, c)?;
        let residual = self.residual_spectrum(&lam, c);
        Ok(EquivalenceReport { residual, t1, pass: (residual + t1).abs() <= tol })
    }
}

/// One-shot equivalence check with about `density` controls.
pub fn verify_equivalence(
    op: &HessianOperator,
    gamma: &SymMatrix,
    c: f64,
    density: usize,
    tol: f64,
) -> Result<EquivalenceReport> {
    EquivalenceVerifier::new(op, density)?.verify(gamma, c, tol)
}

