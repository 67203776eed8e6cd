//! Hessian operators: hyperbolic polynomials in the eigenvalues, their Gårding
//! eigenvalues and cones, and the 1-homogeneous concave combinators built on
//! top of them.
//!
//! Every built-in operator depends on its argument only through the spectrum,
//! so evaluation and differentiation work on eigenvalue vectors. Gradients are
//! carried by a truncated Taylor "jet" in the shift variable t of H(λ + t·1),
//! which gives derivative polynomials and their gradients in one pass.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{phi_embed, phi_project, HermMatrix, SymMatrix};

/// Largest admissible k·binom(d, k) for the subset-product operator.
pub const MU_SUBSET_LIMIT: usize = 10_000;
/// Scale-aware zero test for the smallest Gårding eigenvalue.
pub const BOUNDARY_TOL: f64 = 1e-9;
/// Minimal eigenvalue gap under which λ_min is declared non-differentiable.
pub const MIN_EIG_GAP: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Realm {
    #[default]
    Real,
    Complex,
}

/// Structural description of an operator.
#[derive(Clone, Debug, PartialEq)]
pub enum Kind {
    Det,
    Sigma(usize),
    Mu(usize),
    /// j-th derivative in the identity direction.
    Derivative { base: Box<Kind>, order: usize },
    /// (H / H^(k))^(1/k).
    Quotient { base: Box<Kind>, order: usize },
    /// Smallest Gårding eigenvalue of the base polynomial.
    MinEigenvalue { base: Box<Kind> },
    /// (F_1 ⋯ F_n)^(1/n) of 1-homogeneous components.
    GeometricMean(Vec<Kind>),
    /// H^(1/m) for an m-homogeneous polynomial H.
    NormalizedRoot { base: Box<Kind>, m: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConeClass {
    Inside,
    Boundary,
    Outside,
}

/// Cone classification with the classifying minimum as a signed margin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeStatus {
    pub class: ConeClass,
    pub margin: f64,
}

impl ConeStatus {
    pub fn inside(&self) -> bool {
        self.class == ConeClass::Inside
    }
    pub fn in_closure(&self) -> bool {
        self.class != ConeClass::Outside
    }
}

/// Ascending Gårding eigenvalues.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperbolicEigenvalues {
    pub values: Vec<f64>,
}

/// A Hessian operator of fixed dimension and realm.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianOperator {
    pub dim: usize,
    pub kind: Kind,
    pub realm: Realm,
}

pub fn binom(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r as usize
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

// ---------------------------------------------------------------------------
// Truncated Taylor jets in t with optional gradients in λ.

#[derive(Clone, Debug)]
struct Jet {
    d: usize,
    c: Vec<f64>,
    g: Option<Vec<f64>>,
}

impl Jet {
    fn constant(v: f64, order: usize, d: usize, grad: bool) -> Jet {
        let mut c = vec![0.0; order + 1];
        c[0] = v;
        Jet { d, c, g: grad.then(|| vec![0.0; (order + 1) * d]) }
    }

    /// λ_i + w·t.
    fn var(lam: &[f64], i: usize, w: f64, order: usize, grad: bool) -> Jet {
        let d = lam.len();
        let mut j = Jet::constant(lam[i], order, d, grad);
        if order >= 1 {
            j.c[1] = w;
        }
        if let Some(g) = j.g.as_mut() {
            g[i] = 1.0;
        }
        j
    }

    fn order(&self) -> usize {
        self.c.len() - 1
    }

    fn add_assign(&mut self, o: &Jet) {
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a += b;
        }
        if let (Some(g), Some(h)) = (self.g.as_mut(), o.g.as_ref()) {
            for (a, b) in g.iter_mut().zip(h) {
                *a += b;
            }
        }
    }

    fn mul(&self, o: &Jet) -> Jet {
        let n = self.order();
        let d = self.d;
        let mut c = vec![0.0; n + 1];
        for a in 0..=n {
            if self.c[a] == 0.0 {
                continue;
            }
            for b in 0..=n - a {
                c[a + b] += self.c[a] * o.c[b];
            }
        }
        let g = match (&self.g, &o.g) {
            (Some(g1), Some(g2)) => {
                let mut g = vec![0.0; (n + 1) * d];
                for a in 0..=n {
                    for b in 0..=n - a {
                        let (ca, cb) = (self.c[a], o.c[b]);
                        let row = (a + b) * d;
                        for i in 0..d {
                            g[row + i] += g1[a * d + i] * cb + ca * g2[b * d + i];
                        }
                    }
                }
                Some(g)
            }
            _ => None,
        };
        Jet { d, c, g }
    }

    fn grad_row(&self, n: usize) -> Vec<f64> {
        let g = self.g.as_ref().expect("jet without gradient");
        g[n * self.d..(n + 1) * self.d].to_vec()
    }
}

fn combinations(d: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k == 0 || k > d {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == d - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

impl Kind {
    pub fn is_polynomial(&self) -> bool {
        matches!(self, Kind::Det | Kind::Sigma(_) | Kind::Mu(_) | Kind::Derivative { .. })
    }

    /// Homogeneity degree in dimension d (1 for the superlinear kinds).
    pub fn degree(&self, d: usize) -> usize {
        match self {
            Kind::Det => d,
            Kind::Sigma(k) => *k,
            Kind::Mu(k) => binom(d, *k),
            Kind::Derivative { base, order } => base.degree(d) - order,
            _ => 1,
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            Kind::Det => Ok(()),
            Kind::Sigma(k) => {
                if *k == 0 || *k > d {
                    return Err(Error::Invalid(format!("sigma order {k} outside 1..={d}")));
                }
                Ok(())
            }
            Kind::Mu(k) => {
                if *k == 0 || *k > d {
                    return Err(Error::Invalid(format!("mu order {k} outside 1..={d}")));
                }
                if k * binom(d, *k) > MU_SUBSET_LIMIT {
                    return Err(Error::Invalid(format!("mu_{k} in dimension {d} exceeds the subset limit")));
                }
                Ok(())
            }
            Kind::Derivative { base, order } => {
                base.validate(d)?;
                if !base.is_polynomial() {
                    return Err(Error::Invalid("derivative needs a polynomial base".into()));
                }
                let m = base.degree(d);
                if *order >= m {
                    return Err(Error::Degree { order: *order, degree: m });
                }
                Ok(())
            }
            Kind::Quotient { base, order } => {
                base.validate(d)?;
                if !base.is_polynomial() {
                    return Err(Error::Invalid("quotient needs a polynomial base".into()));
                }
                let m = base.degree(d);
                if *order == 0 || *order >= m {
                    return Err(Error::Degree { order: *order, degree: m });
                }
                Ok(())
            }
            Kind::MinEigenvalue { base } => {
                base.validate(d)?;
                if !base.is_polynomial() {
                    return Err(Error::Invalid("min_eigenvalue needs a polynomial base".into()));
                }
                Ok(())
            }
            Kind::GeometricMean(list) => {
                if list.is_empty() {
                    return Err(Error::Invalid("geometric mean of an empty list".into()));
                }
                for k in list {
                    k.validate(d)?;
                    if k.is_polynomial() && k.degree(d) != 1 {
                        return Err(Error::Invalid("geometric mean components must be 1-homogeneous".into()));
                    }
                }
                Ok(())
            }
            Kind::NormalizedRoot { base, m } => {
                base.validate(d)?;
                if !base.is_polynomial() || base.degree(d) != *m {
                    return Err(Error::Invalid("normalized root needs a polynomial base of matching degree".into()));
                }
                Ok(())
            }
        }
    }

    /// Taylor coefficients of t ↦ H(λ + t·1) up to `order`.
    fn series(&self, lam: &[f64], order: usize, grad: bool) -> Jet {
        let d = lam.len();
        match self {
            Kind::Det => {
                let mut acc = Jet::constant(1.0, order, d, grad);
                for i in 0..d {
                    acc = acc.mul(&Jet::var(lam, i, 1.0, order, grad));
                }
                acc
            }
            Kind::Sigma(k) => {
                let k = *k;
                let mut e: Vec<Jet> = (0..=k)
                    .map(|j| Jet::constant(if j == 0 { 1.0 } else { 0.0 }, order, d, grad))
                    .collect();
                for i in 0..d {
                    let x = Jet::var(lam, i, 1.0, order, grad);
                    for j in (1..=k.min(i + 1)).rev() {
                        let t = x.mul(&e[j - 1]);
                        e[j].add_assign(&t);
                    }
                }
                e.swap_remove(k)
            }
            Kind::Mu(k) => {
                let k = *k;
                let mut acc = Jet::constant(1.0, order, d, grad);
                combinations(d, k, |s| {
                    let mut f = Jet::constant(0.0, order, d, grad);
                    for &i in s {
                        f.add_assign(&Jet::var(lam, i, 1.0, order, grad));
                    }
                    acc = acc.mul(&f);
                });
                acc
            }
            Kind::Derivative { base, order: j } => {
                let j = *j;
                let full = base.series(lam, order + j, grad);
                let mut out = Jet::constant(0.0, order, d, grad);
                for n in 0..=order {
                    let w = factorial(n + j) / factorial(n);
                    out.c[n] = full.c[n + j] * w;
                    if let (Some(g), Some(fg)) = (out.g.as_mut(), full.g.as_ref()) {
                        for i in 0..d {
                            g[n * d + i] = fg[(n + j) * d + i] * w;
                        }
                    }
                }
                out
            }
            _ => unreachable!("series of a non-polynomial kind"),
        }
    }

    fn poly_value(&self, lam: &[f64]) -> f64 {
        self.series(lam, 0, false).c[0]
    }

    /// Gårding eigenvalues of a polynomial kind at spectrum λ.
    fn garding(&self, lam: &[f64]) -> Result<Vec<f64>> {
        let d = lam.len();
        match self {
            Kind::Det => {
                let mut v = lam.to_vec();
                v.sort_by(f64::total_cmp);
                Ok(v)
            }
            Kind::Mu(k) => {
                let mut v = Vec::with_capacity(binom(d, *k));
                combinations(d, *k, |s| v.push(s.iter().map(|&i| lam[i]).sum::<f64>() / *k as f64));
                v.sort_by(f64::total_cmp);
                Ok(v)
            }
            _ => garding_generic(self, lam),
        }
    }

    fn cone(&self, lam: &[f64], norm: f64) -> Result<ConeStatus> {
        match self {
            k if k.is_polynomial() => {
                let g = k.garding(lam)?;
                Ok(classify(g[0], norm))
            }
            Kind::Quotient { base, .. } | Kind::MinEigenvalue { base } | Kind::NormalizedRoot { base, .. } => {
                base.cone(lam, norm)
            }
            Kind::GeometricMean(list) => {
                let mut worst = ConeStatus { class: ConeClass::Inside, margin: f64::INFINITY };
                for k in list {
                    let s = k.cone(lam, norm)?;
                    if s.margin < worst.margin {
                        worst.margin = s.margin;
                    }
                    worst.class = match (worst.class, s.class) {
                        (ConeClass::Outside, _) | (_, ConeClass::Outside) => ConeClass::Outside,
                        (ConeClass::Boundary, _) | (_, ConeClass::Boundary) => ConeClass::Boundary,
                        _ => ConeClass::Inside,
                    };
                }
                Ok(worst)
            }
            _ => unreachable!(),
        }
    }

    fn eval(&self, lam: &[f64], norm: f64) -> Result<f64> {
        match self {
            k if k.is_polynomial() => Ok(k.poly_value(lam)),
            Kind::NormalizedRoot { base, m } => {
                let s = base.cone(lam, norm)?;
                match s.class {
                    ConeClass::Outside => Err(Error::ConeViolation { min_eigenvalue: s.margin }),
                    ConeClass::Boundary => Ok(0.0),
                    ConeClass::Inside => Ok(base.poly_value(lam).max(0.0).powf(1.0 / *m as f64)),
                }
            }
            Kind::Quotient { base, order } => {
                let s = base.cone(lam, norm)?;
                if s.class == ConeClass::Outside {
                    return Err(Error::ConeViolation { min_eigenvalue: s.margin });
                }
                let jet = base.series(lam, *order, false);
                let hk = jet.c[*order] * factorial(*order);
                if hk <= 0.0 {
                    return Err(Error::ConeViolation { min_eigenvalue: s.margin });
                }
                if s.class == ConeClass::Boundary {
                    return Ok(0.0);
                }
                Ok((jet.c[0].max(0.0) / hk).powf(1.0 / *order as f64))
            }
            Kind::MinEigenvalue { base } => {
                let g = base.garding(lam)?;
                let s = classify(g[0], norm);
                match s.class {
                    ConeClass::Outside => Err(Error::ConeViolation { min_eigenvalue: g[0] }),
                    ConeClass::Boundary => Ok(0.0),
                    ConeClass::Inside => Ok(g[0]),
                }
            }
            Kind::GeometricMean(list) => {
                let n = list.len() as f64;
                let mut prod = 1.0;
                for k in list {
                    prod *= k.eval(lam, norm)?;
                }
                Ok(prod.max(0.0).powf(1.0 / n))
            }
            _ => unreachable!(),
        }
    }

    /// ∂F/∂λ_i.
    fn grad(&self, lam: &[f64], norm: f64) -> Result<Vec<f64>> {
        let d = lam.len();
        match self {
            k if k.is_polynomial() => Ok(k.series(lam, 0, true).grad_row(0)),
            Kind::NormalizedRoot { base, m } => {
                require_inside(base, lam, norm)?;
                let jet = base.series(lam, 0, true);
                let h = jet.c[0];
                let m = *m as f64;
                let w = h.powf(1.0 / m - 1.0) / m;
                Ok(jet.grad_row(0).into_iter().map(|g| g * w).collect())
            }
            Kind::Quotient { base, order } => {
                require_inside(base, lam, norm)?;
                let k = *order;
                let jet = base.series(lam, k, true);
                let kf = factorial(k);
                let h = jet.c[0];
                let hk = jet.c[k] * kf;
                let gh = jet.grad_row(0);
                let ghk: Vec<f64> = jet.grad_row(k).into_iter().map(|v| v * kf).collect();
                let q = h / hk;
                let w = q.powf(1.0 / k as f64 - 1.0) / k as f64;
                Ok((0..d).map(|i| w * (gh[i] * hk - h * ghk[i]) / (hk * hk)).collect())
            }
            Kind::MinEigenvalue { base } => {
                let g = base.garding(lam)?;
                let s = classify(g[0], norm);
                if s.class != ConeClass::Inside {
                    return Err(Error::ConeViolation { min_eigenvalue: g[0] });
                }
                if g.len() > 1 && g[1] - g[0] < MIN_EIG_GAP {
                    return Err(Error::NonDifferentiable { gap: g[1] - g[0] });
                }
                let r = g[0];
                let shifted: Vec<f64> = lam.iter().map(|l| l - r).collect();
                let jet = base.series(&shifted, 1, true);
                let c1 = jet.c[1];
                Ok(jet.grad_row(0).into_iter().map(|v| v / c1).collect())
            }
            Kind::GeometricMean(list) => {
                let n = list.len() as f64;
                let f = self.eval(lam, norm)?;
                let mut out = vec![0.0; d];
                for k in list {
                    let fk = k.eval(lam, norm)?;
                    if fk <= 0.0 {
                        return Err(Error::ConeViolation { min_eigenvalue: fk });
                    }
                    for (o, g) in out.iter_mut().zip(k.grad(lam, norm)?) {
                        *o += f / n * g / fk;
                    }
                }
                Ok(out)
            }
            _ => unreachable!(),
        }
    }
}

fn classify(min_eig: f64, norm: f64) -> ConeStatus {
    let tol = BOUNDARY_TOL * (1.0 + norm);
    let class = if min_eig.abs() <= tol {
        ConeClass::Boundary
    } else if min_eig > 0.0 {
        ConeClass::Inside
    } else {
        ConeClass::Outside
    };
    ConeStatus { class, margin: min_eig }
}

fn require_inside(base: &Kind, lam: &[f64], norm: f64) -> Result<()> {
    let s = base.cone(lam, norm)?;
    if s.class != ConeClass::Inside {
        return Err(Error::ConeViolation { min_eigenvalue: s.margin });
    }
    Ok(())
}

fn spectrum_norm(lam: &[f64]) -> f64 {
    lam.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

// ---------------------------------------------------------------------------
// Univariate restriction and real roots.

/// Coefficients of τ ↦ H(λ + sτ·1), ascending, from values at m+1 Chebyshev
/// nodes and a Vandermonde solve. Returns (coefficients, s).
pub fn restriction_coefficients(kind: &Kind, lam: &[f64]) -> Result<(Vec<f64>, f64)> {
    let d = lam.len();
    let m = kind.degree(d);
    let s = 1.0 + spectrum_norm(lam);
    let n = m + 1;
    let nodes: Vec<f64> = (0..n)
        .map(|j| (std::f64::consts::PI * (2 * j + 1) as f64 / (2 * n) as f64).cos())
        .collect();
    let vals: Vec<f64> = nodes
        .iter()
        .map(|&tau| {
            let shifted: Vec<f64> = lam.iter().map(|l| l + s * tau).collect();
            kind.poly_value(&shifted)
        })
        .collect();
    let v = DMatrix::from_fn(n, n, |i, j| nodes[i].powi(j as i32));
    let rhs = nalgebra::DVector::from_vec(vals);
    let sol = v
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Hyperbolicity { detail: "singular Vandermonde system".into() })?;
    Ok((sol.iter().copied().collect(), s))
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

/// Rounding bound for Horner evaluation plus an absolute floor for the
/// noise the interpolated coefficients carry.
fn horner_err(c: &[f64], x: f64) -> f64 {
    let a = x.abs();
    let bound = c.iter().rev().fold(0.0, |acc, &v| acc * a + v.abs());
    let floor = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    16.0 * f64::EPSILON * (c.len() as f64) * (bound + floor)
}

/// All real roots of a real-rooted polynomial (ascending coefficients),
/// bracketed between consecutive roots of its derivative.
pub fn real_roots(c: &[f64]) -> Result<Vec<f64>> {
    let mut c = c.to_vec();
    while c.len() > 1 && c[c.len() - 1] == 0.0 {
        c.pop();
    }
    let m = c.len() - 1;
    if m == 0 {
        return Ok(vec![]);
    }
    if m == 1 {
        return Ok(vec![-c[0] / c[1]]);
    }
    let dc: Vec<f64> = (1..=m).map(|n| c[n] * n as f64).collect();
    let crit = real_roots(&dc)?;
    let lead = c[m];
    let b = 1.0 + c[..m].iter().fold(0.0_f64, |acc, v| acc.max((v / lead).abs()));
    let mut pts = Vec::with_capacity(m + 1);
    pts.push(-b);
    pts.extend(crit.iter().map(|x| x.clamp(-b, b)));
    pts.push(b);
    let mut roots = Vec::with_capacity(m);
    for w in pts.windows(2) {
        roots.push(root_in(&c, w[0], w[1])?);
    }
    roots.sort_by(f64::total_cmp);
    Ok(roots)
}

fn root_in(c: &[f64], lo: f64, hi: f64) -> Result<f64> {
    if hi <= lo {
        return Ok(lo);
    }
    let (pl, ph) = (horner(c, lo), horner(c, hi));
    let (el, eh) = (horner_err(c, lo), horner_err(c, hi));
    let lo_zero = pl.abs() <= el;
    let hi_zero = ph.abs() <= eh;
    if lo_zero || hi_zero {
        if lo_zero && hi_zero {
            return Ok(if pl.abs() / el.max(f64::MIN_POSITIVE) <= ph.abs() / eh.max(f64::MIN_POSITIVE) {
                lo
            } else {
                hi
            });
        }
        return Ok(if lo_zero { lo } else { hi });
    }
    if pl.signum() == ph.signum() {
        // tolerate coefficient noise a little beyond the rounding bound
        if pl.abs() <= 1e3 * el || ph.abs() <= 1e3 * eh {
            return Ok(if pl.abs() / el <= ph.abs() / eh { lo } else { hi });
        }
        return Err(Error::Hyperbolicity {
            detail: format!("no sign change on [{lo:e}, {hi:e}] (values {pl:e}, {ph:e})"),
        });
    }
    let (mut a, mut b, mut fa) = (lo, hi, pl);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = horner(c, mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

fn garding_generic(kind: &Kind, lam: &[f64]) -> Result<Vec<f64>> {
    let (c, s) = restriction_coefficients(kind, lam)?;
    let roots = real_roots(&c)?;
    let mut v: Vec<f64> = roots.into_iter().map(|r| -s * r).collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

// ---------------------------------------------------------------------------
// Public operator surface.

impl HessianOperator {
    pub fn new(dim: usize, kind: Kind, realm: Realm) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        kind.validate(dim)?;
        Ok(HessianOperator { dim, kind, realm })
    }

    pub fn det(dim: usize) -> Self {
        Self::new(dim, Kind::Det, Realm::Real).expect("det is always valid")
    }

    pub fn sigma(dim: usize, k: usize) -> Result<Self> {
        Self::new(dim, Kind::Sigma(k), Realm::Real)
    }

    pub fn mu(dim: usize, k: usize) -> Result<Self> {
        Self::new(dim, Kind::Mu(k), Realm::Real)
    }

    pub fn with_realm(mut self, realm: Realm) -> Self {
        self.realm = realm;
        self
    }

    pub fn is_polynomial(&self) -> bool {
        self.kind.is_polynomial()
    }

    pub fn degree(&self) -> usize {
        self.kind.degree(self.dim)
    }

    /// H^(1/m) for polynomial kinds, unchanged otherwise.
    pub fn normalized_root(&self) -> Self {
        if self.is_polynomial() {
            let m = self.degree();
            HessianOperator {
                dim: self.dim,
                kind: Kind::NormalizedRoot { base: Box::new(self.kind.clone()), m },
                realm: self.realm,
            }
        } else {
            self.clone()
        }
    }

    /// The base polynomial of a root, quotient or min-eigenvalue kind.
    pub fn base_polynomial(&self) -> Option<Kind> {
        match &self.kind {
            k if k.is_polynomial() => Some(k.clone()),
            Kind::NormalizedRoot { base, .. } | Kind::Quotient { base, .. } | Kind::MinEigenvalue { base } => {
                Some((**base).clone())
            }
            _ => None,
        }
    }

    /// Spectrum of the argument, with the complex realm accepting either a
    /// d x d Hermitian matrix or (through the averaging inverse of Φ) a
    /// 2d x 2d real symmetric matrix.
    fn spectrum_sym(&self, m: &SymMatrix) -> Result<(Vec<f64>, f64)> {
        match self.realm {
            Realm::Real => {
                if m.dim() != self.dim {
                    return Err(Error::Invalid(format!("expected dimension {}, got {}", self.dim, m.dim())));
                }
                let sd = m.spectral()?;
                Ok((sd.eigenvalues, m.max_abs()))
            }
            Realm::Complex => {
                if m.dim() != 2 * self.dim {
                    return Err(Error::RealmMismatch(format!(
                        "complex operator of dimension {} applied to a real {}x{} matrix",
                        self.dim,
                        m.dim(),
                        m.dim()
                    )));
                }
                let b = phi_project(m);
                let sd = b.spectral()?;
                Ok((sd.eigenvalues, b.max_abs()))
            }
        }
    }

    fn spectrum_herm(&self, b: &HermMatrix) -> Result<(Vec<f64>, f64)> {
        if self.realm != Realm::Complex {
            return Err(Error::RealmMismatch("real operator applied to a Hermitian matrix".into()));
        }
        if b.dim() != self.dim {
            return Err(Error::Invalid(format!("expected dimension {}, got {}", self.dim, b.dim())));
        }
        Ok((b.spectral()?.eigenvalues, b.max_abs()))
    }

    /// F(M). Polynomials accept any M; the other kinds need M in the closed cone.
    pub fn evaluate(&self, m: &SymMatrix) -> Result<f64> {
        let (lam, norm) = self.spectrum_sym(m)?;
        self.kind.eval(&lam, norm)
    }

    pub fn evaluate_herm(&self, b: &HermMatrix) -> Result<f64> {
        let (lam, norm) = self.spectrum_herm(b)?;
        self.kind.eval(&lam, norm)
    }

    /// F on a spectrum directly.
    pub fn evaluate_spectrum(&self, lam: &[f64]) -> Result<f64> {
        self.kind.eval(lam, spectrum_norm(lam))
    }

    pub fn garding_eigenvalues(&self, m: &SymMatrix) -> Result<HyperbolicEigenvalues> {
        if !self.is_polynomial() {
            return Err(Error::Invalid("Garding eigenvalues need a polynomial kind".into()));
        }
        let (lam, _) = self.spectrum_sym(m)?;
        Ok(HyperbolicEigenvalues { values: self.kind.garding(&lam)? })
    }

    pub fn garding_eigenvalues_herm(&self, b: &HermMatrix) -> Result<HyperbolicEigenvalues> {
        if !self.is_polynomial() {
            return Err(Error::Invalid("Garding eigenvalues need a polynomial kind".into()));
        }
        let (lam, _) = self.spectrum_herm(b)?;
        Ok(HyperbolicEigenvalues { values: self.kind.garding(&lam)? })
    }

    /// Gårding eigenvalues through the generic Vandermonde and root route,
    /// bypassing closed forms.
    pub fn garding_eigenvalues_generic(&self, m: &SymMatrix) -> Result<HyperbolicEigenvalues> {
        if !self.is_polynomial() {
            return Err(Error::Invalid("Garding eigenvalues need a polynomial kind".into()));
        }
        let (lam, _) = self.spectrum_sym(m)?;
        Ok(HyperbolicEigenvalues { values: garding_generic(&self.kind, &lam)? })
    }

    pub fn in_cone(&self, m: &SymMatrix) -> Result<ConeStatus> {
        let (lam, norm) = self.spectrum_sym(m)?;
        self.kind.cone(&lam, norm)
    }

    pub fn in_cone_herm(&self, b: &HermMatrix) -> Result<ConeStatus> {
        let (lam, norm) = self.spectrum_herm(b)?;
        self.kind.cone(&lam, norm)
    }

    pub fn in_cone_spectrum(&self, lam: &[f64]) -> Result<ConeStatus> {
        self.kind.cone(lam, spectrum_norm(lam))
    }

    /// Partial derivatives of F with respect to the eigenvalues.
    pub fn gradient_spectrum(&self, lam: &[f64]) -> Result<Vec<f64>> {
        self.kind.grad(lam, spectrum_norm(lam))
    }

    /// Symmetric gradient T_ij = ∂F/∂γ_ij (Frobenius pairing). For the complex
    /// realm on a 2d x 2d argument this is Φ(∇G)/2.
    pub fn gradient(&self, alpha: &SymMatrix) -> Result<SymMatrix> {
        match self.realm {
            Realm::Real => {
                if alpha.dim() != self.dim {
                    return Err(Error::Invalid(format!("expected dimension {}, got {}", self.dim, alpha.dim())));
                }
                let sd = alpha.spectral()?;
                let g = self.kind.grad(&sd.eigenvalues, alpha.max_abs())?;
                Ok(sd.reconstruct_values(&g))
            }
            Realm::Complex => {
                let (_, _) = self.spectrum_sym(alpha)?;
                let b = phi_project(alpha);
                Ok(phi_embed(&self.gradient_herm(&b)?).scale(0.5))
            }
        }
    }

    /// Hermitian gradient of a complex operator.
    pub fn gradient_herm(&self, b: &HermMatrix) -> Result<HermMatrix> {
        let (_, norm) = self.spectrum_herm(b)?;
        let sd = b.spectral()?;
        let g = self.kind.grad(&sd.eigenvalues, norm)?;
        Ok(sd.reconstruct_values(&g))
    }

    /// j-th derivative operator in the identity direction.
    pub fn derivative_operator(&self, order: usize) -> Result<Self> {
        if !self.is_polynomial() {
            return Err(Error::Invalid("derivative needs a polynomial kind".into()));
        }
        if order == 0 {
            return Ok(self.clone());
        }
        Self::new(self.dim, Kind::Derivative { base: Box::new(self.kind.clone()), order }, self.realm)
    }

    /// (H / H^(k))^(1/k).
    pub fn quotient_operator(&self, order: usize) -> Result<Self> {
        if !self.is_polynomial() {
            return Err(Error::Invalid("quotient needs a polynomial kind".into()));
        }
        Self::new(self.dim, Kind::Quotient { base: Box::new(self.kind.clone()), order }, self.realm)
    }

    pub fn min_eigenvalue_operator(&self) -> Result<Self> {
        if !self.is_polynomial() {
            return Err(Error::Invalid("min_eigenvalue needs a polynomial kind".into()));
        }
        Self::new(self.dim, Kind::MinEigenvalue { base: Box::new(self.kind.clone()) }, self.realm)
    }

    /// Geometric mean of 1-homogeneous operators; a single component is
    /// returned unchanged.
    pub fn geometric_mean_operator(list: &[HessianOperator]) -> Result<Self> {
        let first = list.first().ok_or_else(|| Error::Invalid("geometric mean of an empty list".into()))?;
        if list.iter().any(|o| o.dim != first.dim || o.realm != first.realm) {
            return Err(Error::Invalid("geometric mean components differ in dimension or realm".into()));
        }
        if list.len() == 1 {
            return Ok(first.clone());
        }
        Self::new(first.dim, Kind::GeometricMean(list.iter().map(|o| o.kind.clone()).collect()), first.realm)
    }

    /// F evaluated at the identity of the operator's own space.
    pub fn value_at_identity(&self) -> Result<f64> {
        self.evaluate_spectrum(&vec![1.0; self.dim])
    }
}

// ---------------------------------------------------------------------------
// Config descriptors.

fn is_false(b: &bool) -> bool {
    !*b
}

/// Tagged operator record as it appears in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Det {
        d: usize,
        #[serde(default, skip_serializing_if = "is_false")]
        root_normalized: bool,
    },
    Sigma {
        k: usize,
        d: usize,
        #[serde(default, skip_serializing_if = "is_false")]
        root_normalized: bool,
    },
    Mu {
        k: usize,
        d: usize,
        #[serde(default, skip_serializing_if = "is_false")]
        root_normalized: bool,
    },
    Derivative {
        base: Box<OperatorSpec>,
        order: usize,
        #[serde(default, skip_serializing_if = "is_false")]
        root_normalized: bool,
    },
    Quotient {
        base: Box<OperatorSpec>,
        k: usize,
    },
    MinEigenvalue {
        base: Box<OperatorSpec>,
    },
    GeometricMean {
        components: Vec<OperatorSpec>,
    },
}

impl OperatorSpec {
    pub fn build(&self, realm: Realm) -> Result<HessianOperator> {
        let wrap = |op: HessianOperator, root: bool| if root { op.normalized_root() } else { op };
        match self {
            OperatorSpec::Det { d, root_normalized } => {
                Ok(wrap(HessianOperator::new(*d, Kind::Det, realm)?, *root_normalized))
            }
            OperatorSpec::Sigma { k, d, root_normalized } => {
                Ok(wrap(HessianOperator::new(*d, Kind::Sigma(*k), realm)?, *root_normalized))
            }
            OperatorSpec::Mu { k, d, root_normalized } => {
                Ok(wrap(HessianOperator::new(*d, Kind::Mu(*k), realm)?, *root_normalized))
            }
            OperatorSpec::Derivative { base, order, root_normalized } => {
                Ok(wrap(base.build(realm)?.derivative_operator(*order)?, *root_normalized))
            }
            OperatorSpec::Quotient { base, k } => base.build(realm)?.quotient_operator(*k),
            OperatorSpec::MinEigenvalue { base } => base.build(realm)?.min_eigenvalue_operator(),
            OperatorSpec::GeometricMean { components } => {
                let ops = components.iter().map(|c| c.build(realm)).collect::<Result<Vec<_>>>()?;
                HessianOperator::geometric_mean_operator(&ops)
            }
        }
    }
}
