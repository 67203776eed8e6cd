//! Small dense symmetric and Hermitian matrices.
//!
//! Storage keeps one triangle, so symmetry can never drift. Spectra come from
//! cyclic Jacobi sweeps, which are exact on diagonal input (the frame stays the
//! identity) and plenty fast at the sizes used here.

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

const JACOBI_MAX_SWEEPS: usize = 100;
/// Eigenvalues above this (negative) level are treated as zero by `psd_sqrt`.
pub const PSD_CLAMP: f64 = -1e-10;

#[inline]
fn tri_index(d: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * (2 * d - i + 1) / 2 + (j - i)
}

/// Real symmetric d x d matrix, upper triangle stored row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        SymMatrix { dim, data: vec![0.0; dim * (dim + 1) / 2] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Reads the upper triangle of a square dense matrix.
    pub fn from_upper(dense: &DMatrix<f64>) -> Self {
        assert_eq!(dense.nrows(), dense.ncols());
        Self::from_fn(dense.nrows(), |i, j| dense[(i, j)])
    }

    /// Symmetric part (A + Aᵀ)/2 of a square dense matrix.
    pub fn from_dense_sym(dense: &DMatrix<f64>) -> Self {
        assert_eq!(dense.nrows(), dense.ncols());
        Self::from_fn(dense.nrows(), |i, j| 0.5 * (dense[(i, j)] + dense[(j, i)]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[tri_index(self.dim, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = tri_index(self.dim, i, j);
        self.data[k] = v;
    }

    /// Upper-triangle entries, row by row.
    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn from_packed(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * (dim + 1) / 2);
        SymMatrix { dim, data }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMatrix { dim: self.dim, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn add_identity(&self, t: f64) -> Self {
        let mut m = self.clone();
        for i in 0..self.dim {
            m.set(i, i, m.get(i, i) + t);
        }
        m
    }

    /// Frobenius pairing tr(AB).
    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        let mut s = 0.0;
        for i in 0..self.dim {
            s += self.get(i, i) * other.get(i, i);
            for j in i + 1..self.dim {
                s += 2.0 * self.get(i, j) * other.get(i, j);
            }
        }
        s
    }

    /// O M Oᵀ for a square (usually orthogonal) O.
    pub fn conjugate(&self, o: &DMatrix<f64>) -> Self {
        let m = self.to_dense();
        Self::from_dense_sym(&(o * m * o.transpose()))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.get(i, j) * v[j]).sum()).collect()
    }

    pub fn quad_form(&self, v: &[f64]) -> f64 {
        self.mul_vec(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    pub fn spectral(&self) -> Result<SpectralDecomposition> {
        spectral(self)
    }
}

/// Hermitian d x d matrix, real and imaginary upper triangles stored apart.
#[derive(Clone, Debug, PartialEq)]
pub struct HermMatrix {
    dim: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl HermMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        let n = dim * (dim + 1) / 2;
        HermMatrix { dim, re: vec![0.0; n], im: vec![0.0; n] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_real_diag(&vec![1.0; dim])
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, C64::new(v, 0.0));
        }
        m
    }

    /// Builds from the real part `re` (symmetric) and imaginary part given by
    /// its upper triangle; the diagonal of the imaginary part is dropped.
    pub fn from_parts(re: &SymMatrix, im_upper: impl Fn(usize, usize) -> f64) -> Self {
        let d = re.dim();
        let mut m = Self::zeros(d);
        for i in 0..d {
            for j in i..d {
                let iv = if i == j { 0.0 } else { im_upper(i, j) };
                m.set(i, j, C64::new(re.get(i, j), iv));
            }
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let mut v = f(i, j);
                if i == j {
                    v.im = 0.0;
                }
                m.set(i, j, v);
            }
        }
        m
    }

    /// Hermitian part (A + A*)/2 of a square complex matrix.
    pub fn from_dense_herm(dense: &DMatrix<C64>) -> Self {
        Self::from_fn(dense.nrows(), |i, j| (dense[(i, j)] + dense[(j, i)].conj()) * 0.5)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        let k = tri_index(self.dim, i, j);
        if i <= j {
            C64::new(self.re[k], self.im[k])
        } else {
            C64::new(self.re[k], -self.im[k])
        }
    }

    /// Sets entry (i, j) and implicitly (j, i) = conj.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        let k = tri_index(self.dim, i, j);
        self.re[k] = v.re;
        self.im[k] = if i == j {
            0.0
        } else if i < j {
            v.im
        } else {
            -v.im
        };
    }

    /// Real part as a symmetric matrix.
    pub fn real_part(&self) -> SymMatrix {
        SymMatrix::from_packed(self.dim, self.re.clone())
    }

    /// Imaginary part, an antisymmetric dense matrix.
    pub fn imag_part(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j).im)
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i).re).sum()
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0_f64;
        for i in 0..self.dim {
            for j in i..self.dim {
                m = m.max(self.get(i, j).norm());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        HermMatrix {
            dim: self.dim,
            re: self.re.iter().map(|v| v * s).collect(),
            im: self.im.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        HermMatrix {
            dim: self.dim,
            re: self.re.iter().zip(&other.re).map(|(a, b)| a + b).collect(),
            im: self.im.iter().zip(&other.im).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn add_identity(&self, t: f64) -> Self {
        let mut m = self.clone();
        for i in 0..self.dim {
            m.set(i, i, m.get(i, i) + t);
        }
        m
    }

    /// Real pairing Re tr(AB).
    pub fn dot(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += (self.get(i, j) * other.get(j, i)).re;
            }
        }
        s
    }

    /// U M U* for a square (usually unitary) U.
    pub fn conjugate(&self, u: &DMatrix<C64>) -> Self {
        let m = self.to_dense();
        Self::from_dense_herm(&(u * m * u.adjoint()))
    }

    pub fn spectral(&self) -> Result<HermSpectralDecomposition> {
        spectral_herm(self)
    }
}

/// Ascending eigenvalues with an orthogonal frame of column eigenvectors.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub frame: DMatrix<f64>,
}

impl SpectralDecomposition {
    /// Q diag(g(λ)) Qᵀ.
    pub fn reconstruct_with(&self, g: impl Fn(f64) -> f64) -> SymMatrix {
        let vals: Vec<f64> = self.eigenvalues.iter().map(|&l| g(l)).collect();
        self.reconstruct_values(&vals)
    }

    /// Q diag(vals) Qᵀ.
    pub fn reconstruct_values(&self, vals: &[f64]) -> SymMatrix {
        let q = &self.frame;
        let d = q.nrows();
        SymMatrix::from_fn(d, |i, j| (0..d).map(|k| q[(i, k)] * vals[k] * q[(j, k)]).sum())
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_values(&self.eigenvalues)
    }
}

/// Ascending eigenvalues with a unitary frame.
#[derive(Clone, Debug)]
pub struct HermSpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub frame: DMatrix<C64>,
}

impl HermSpectralDecomposition {
    pub fn reconstruct_values(&self, vals: &[f64]) -> HermMatrix {
        let u = &self.frame;
        let d = u.nrows();
        HermMatrix::from_fn(d, |i, j| {
            (0..d).map(|k| u[(i, k)] * vals[k] * u[(j, k)].conj()).sum()
        })
    }

    pub fn reconstruct(&self) -> HermMatrix {
        self.reconstruct_values(&self.eigenvalues)
    }
}

fn sort_spectrum<T: Clone + nalgebra::Scalar>(vals: Vec<f64>, frame: DMatrix<T>) -> (Vec<f64>, DMatrix<T>) {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let sorted: Vec<f64> = idx.iter().map(|&k| vals[k]).collect();
    let n = frame.nrows();
    let f = DMatrix::from_fn(n, idx.len(), |i, j| frame[(i, idx[j])].clone());
    (sorted, f)
}

/// Cyclic Jacobi eigen-decomposition of a real symmetric matrix.
pub fn spectral(m: &SymMatrix) -> Result<SpectralDecomposition> {
    if !m.is_finite() {
        return Err(Error::Invalid(format!("non-finite matrix {:?}", m.packed())));
    }
    let d = m.dim();
    let mut a = m.to_dense();
    let mut v = DMatrix::<f64>::identity(d, d);
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..d {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NonConvergence { sweeps: JACOBI_MAX_SWEEPS, matrix: format!("{:?}", m.packed()) });
    }
    let vals: Vec<f64> = (0..d).map(|i| a[(i, i)]).collect();
    let (eigenvalues, frame) = sort_spectrum(vals, v);
    Ok(SpectralDecomposition { eigenvalues, frame })
}

/// Complex cyclic Jacobi: each pivot is made real by a phase, then rotated.
pub fn spectral_herm(m: &HermMatrix) -> Result<HermSpectralDecomposition> {
    if !m.is_finite() {
        return Err(Error::Invalid("non-finite Hermitian matrix".into()));
    }
    let d = m.dim();
    let mut a = m.to_dense();
    let mut v = DMatrix::<C64>::identity(d, d);
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r <= 1e-300 {
                    continue;
                }
                let phase = apq / r;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (aqq - app) / (2.0 * r);
                let t = if tau == 0.0 { 1.0 } else { tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt()) };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // W = diag(1, conj(phase)) * [[c, s], [-s, c]]
                let w00 = C64::new(c, 0.0);
                let w01 = C64::new(s, 0.0);
                let w10 = -phase.conj() * s;
                let w11 = phase.conj() * c;
                for k in 0..d {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * w00 + akq * w10;
                    a[(k, q)] = akp * w01 + akq * w11;
                }
                for k in 0..d {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = w00.conj() * apk + w10.conj() * aqk;
                    a[(q, k)] = w01.conj() * apk + w11.conj() * aqk;
                }
                a[(p, q)] = C64::new(0.0, 0.0);
                a[(q, p)] = C64::new(0.0, 0.0);
                a[(p, p)].im = 0.0;
                a[(q, q)].im = 0.0;
                for k in 0..d {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * w00 + vkq * w10;
                    v[(k, q)] = vkp * w01 + vkq * w11;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NonConvergence { sweeps: JACOBI_MAX_SWEEPS, matrix: format!("{:?}", m.to_dense()) });
    }
    let vals: Vec<f64> = (0..d).map(|i| a[(i, i)].re).collect();
    let (eigenvalues, frame) = sort_spectrum(vals, v);
    Ok(HermSpectralDecomposition { eigenvalues, frame })
}

/// Symmetric PSD square root; eigenvalues in [-1e-10, 0) are clamped to zero.
pub fn psd_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let sd = spectral(m)?;
    let lo = sd.eigenvalues[0];
    if lo < PSD_CLAMP {
        return Err(Error::NotPsd { min_eigenvalue: lo });
    }
    Ok(sd.reconstruct_with(|l| l.max(0.0).sqrt()))
}

/// Φβ = [[Re β, Im β], [-Im β, Re β]].
pub fn phi_embed(beta: &HermMatrix) -> SymMatrix {
    let d = beta.dim();
    SymMatrix::from_fn(2 * d, |i, j| {
        // i <= j here
        match (i < d, j < d) {
            (true, true) => beta.get(i, j).re,
            (false, false) => beta.get(i - d, j - d).re,
            (true, false) => beta.get(i, j - d).im,
            (false, true) => unreachable!(),
        }
    })
}

/// Φ applied to an arbitrary complex square matrix.
pub fn phi_embed_general(m: &DMatrix<C64>) -> DMatrix<f64> {
    let d = m.nrows();
    DMatrix::from_fn(2 * d, 2 * d, |i, j| {
        let (bi, ri) = (i / d, i % d);
        let (bj, rj) = (j / d, j % d);
        let z = m[(ri, rj)];
        match (bi, bj) {
            (0, 0) | (1, 1) => z.re,
            (0, 1) => z.im,
            _ => -z.im,
        }
    })
}

/// Φz = (Re z, Im z).
pub fn phi_embed_vec(z: &[C64]) -> Vec<f64> {
    z.iter().map(|c| c.re).chain(z.iter().map(|c| c.im)).collect()
}

pub fn phi_inverse_vec(x: &[f64]) -> Vec<C64> {
    let d = x.len() / 2;
    (0..d).map(|i| C64::new(x[i], x[d + i])).collect()
}

/// Left inverse of Φ that averages: for α = [[A, B], [Bᵀ, C]] returns
/// (A + C)/2 + i (B - Bᵀ)/2. It is the identity on the image of Φ, and for a
/// real Hessian it returns twice the complex Hessian u_{z z̄}.
pub fn phi_project(alpha: &SymMatrix) -> HermMatrix {
    let n = alpha.dim();
    assert!(n % 2 == 0, "phi_project needs even dimension");
    let d = n / 2;
    HermMatrix::from_fn(d, |i, j| {
        let re = 0.5 * (alpha.get(i, j) + alpha.get(d + i, d + j));
        let im = 0.5 * (alpha.get(i, d + j) - alpha.get(j, d + i));
        C64::new(re, im)
    })
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix, signs fixed).
pub fn haar_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Haar-distributed unitary matrix.
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<C64> {
    let g = DMatrix::from_fn(d, d, |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        let rjj = r[(j, j)];
        let n = rjj.norm();
        if n > 0.0 {
            let ph = rjj / n;
            for i in 0..d {
                q[(i, j)] *= ph;
            }
        }
    }
    q
}

/// Symmetric matrix with independent N(0, s²) entries on and above the diagonal.
pub fn random_symmetric<R: Rng + ?Sized>(d: usize, s: f64, rng: &mut R) -> SymMatrix {
    SymMatrix::from_fn(d, |_, _| s * rng.sample::<f64, _>(StandardNormal))
}

/// Hermitian matrix with Gaussian entries.
pub fn random_hermitian<R: Rng + ?Sized>(d: usize, s: f64, rng: &mut R) -> HermMatrix {
    HermMatrix::from_fn(d, |_, _| {
        C64::new(s * rng.sample::<f64, _>(StandardNormal), s * rng.sample::<f64, _>(StandardNormal))
    })
}

/// Max-norm distance between two dense real matrices.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}
