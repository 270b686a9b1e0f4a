use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Hermitian tolerance used at construction, relative to the largest entry
/// (absolute for matrices whose entries are all below one).
pub const HERMITIAN_TOL: f64 = 1e-12;

/// A dense complex square matrix equal to its conjugate transpose.
///
/// The constructor checks the invariant and then symmetrizes exactly, so
/// every value of this type is Hermitian to the last bit.
#[derive(Clone, PartialEq)]
pub struct HermitianMatrix {
    m: DMatrix<Complex64>,
}

impl HermitianMatrix {
    pub fn new(m: DMatrix<Complex64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Shape(format!(
                "hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.iter().fold(1.0f64, |acc, z| acc.max(z.norm()));
        let n = m.nrows();
        for i in 0..n {
            for j in i..n {
                let gap = (m[(i, j)] - m[(j, i)].conj()).norm();
                if gap > HERMITIAN_TOL * scale {
                    return Err(Error::Contract(format!(
                        "matrix is not hermitian: |M[{i},{j}] - conj(M[{j},{i}])| = {gap:.3e}"
                    )));
                }
            }
        }
        Ok(Self::hermitian_part(&m))
    }

    /// `(M + Mᴴ)/2`, exactly Hermitian for any square `m`.
    pub fn hermitian_part(m: &DMatrix<Complex64>) -> Self {
        let n = m.nrows();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = Complex64::new(m[(i, i)].re, 0.0);
            for j in (i + 1)..n {
                let z = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                out[(i, j)] = z;
                out[(j, i)] = z.conj();
            }
        }
        Self { m: out }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            m: DMatrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: DMatrix::identity(n, n),
        }
    }

    /// Real diagonal matrix.
    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = Complex64::new(x, 0.0);
        }
        Self { m }
    }

    /// `v vᴴ`.
    pub fn outer(v: &DVector<Complex64>) -> Self {
        Self::hermitian_part(&(v * v.adjoint()))
    }

    /// `eᵢ eᵢᵀ` in dimension `n`.
    pub fn unit(n: usize, i: usize) -> Self {
        let mut m = DMatrix::zeros(n, n);
        m[(i, i)] = Complex64::new(1.0, 0.0);
        Self { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.m[(i, j)]
    }

    /// Real part of diagonal entry `i`.
    pub fn diag(&self, i: usize) -> f64 {
        self.m[(i, i)].re
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.diag(i)).collect()
    }

    /// Overwrite a diagonal entry (keeps the matrix Hermitian).
    pub fn set_diag(&mut self, i: usize, x: f64) {
        self.m[(i, i)] = Complex64::new(x, 0.0);
    }

    /// `Tr(A B)`, which is real for Hermitian `A`, `B`.
    pub fn trace_product(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.m
            .iter()
            .zip(other.m.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.trace_product(self).sqrt()
    }

    /// Largest `|M_ij − M_ji*|`; zero by construction, kept for diagnostics.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.m[(i, j)] - self.m[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            m: &self.m * Complex64::new(s, 0.0),
        }
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        Self {
            m: &self.m + &other.m * Complex64::new(s, 0.0),
        }
    }

    /// In-place `self += s·other`.
    pub fn add_scaled(&mut self, s: f64, other: &Self) {
        let c = Complex64::new(s, 0.0);
        for (a, b) in self.m.iter_mut().zip(other.m.iter()) {
            *a += c * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.m
            .iter()
            .zip(other.m.iter())
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl fmt::Debug for HermitianMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HermitianMatrix {}", self.m)
    }
}

impl Add for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: Self) -> HermitianMatrix {
        HermitianMatrix {
            m: &self.m + &rhs.m,
        }
    }
}

impl Sub for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn sub(self, rhs: Self) -> HermitianMatrix {
        HermitianMatrix {
            m: &self.m - &rhs.m,
        }
    }
}

impl Mul<f64> for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn mul(self, rhs: f64) -> HermitianMatrix {
        self.scale(rhs)
    }
}

/// Eigen-decomposition `M = U diag(w) Uᴴ` with eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<Complex64>,
}

impl SpectralDecomposition {
    /// `U diag(f(w)) Uᴴ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> HermitianMatrix {
        let n = self.eigenvalues.len();
        let mut scaled = self.eigenvectors.clone();
        for (j, &w) in self.eigenvalues.iter().enumerate() {
            let fw = Complex64::new(f(w), 0.0);
            for i in 0..n {
                scaled[(i, j)] *= fw;
            }
        }
        HermitianMatrix::hermitian_part(&(scaled * self.eigenvectors.adjoint()))
    }

    pub fn reconstruct(&self) -> HermitianMatrix {
        self.reconstruct_with(|w| w)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty spectrum")
    }
}

const EIGH_EPS: f64 = f64::EPSILON;
const EIGH_MAX_SWEEPS: usize = 10_000;

pub fn eigh(m: &HermitianMatrix) -> Result<SpectralDecomposition> {
    let n = m.dim();
    if n == 0 {
        return Ok(SpectralDecomposition {
            eigenvalues: Vec::new(),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    if !m.is_finite() {
        return Err(Error::Numerical {
            context: "eigh input contains non-finite entries".into(),
            dump: format!("{}", m.m),
        });
    }
    let eig = SymmetricEigen::try_new(m.m.clone(), EIGH_EPS, EIGH_MAX_SWEEPS).ok_or_else(|| {
        Error::Numerical {
            context: "hermitian eigensolver did not converge".into(),
            dump: format!("{}", m.m),
        }
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Frobenius-nearest positive semidefinite matrix: clamp negative eigenvalues.
pub fn project_psd(m: &HermitianMatrix) -> Result<HermitianMatrix> {
    Ok(eigh(m)?.reconstruct_with(|w| w.max(0.0)))
}
