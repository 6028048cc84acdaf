//! Dense complex linear algebra: a small row-major matrix type, a cyclic
//! Jacobi Hermitian eigensolver, Cholesky-based subspace projectors and traces.
//!
//! Everything here is sized for arrays of at most a few dozen elements, so
//! the routines favour accuracy and determinism over asymptotic speed.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use thiserror::Error;

/// Relative tolerance used by the Hermitian/idempotence precondition checks.
pub const STRUCTURE_TOL: f64 = 1e-9;

/// Cholesky pivots below this fraction of the largest Gram diagonal are
/// treated as rank deficiency.
pub const GRAM_PIVOT_FLOOR: f64 = 1e-10;

/// Negative eigenvalues with magnitude under this fraction of λmax are noise.
pub const NEGATIVE_EIG_TOL: f64 = 1e-12;

/// Floor (relative to λmax) that tiny or slightly negative eigenvalues are
/// clamped to, keeping logarithms finite.
pub const EIG_CLAMP_FLOOR: f64 = 1e-18;

const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not Hermitian (max asymmetry {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },
    #[error("matrix is not an idempotent Hermitian projector (residual {residual:e})")]
    NotProjector { residual: f64 },
    #[error("Gram matrix is singular (pivot {pivot:e} at column {column})")]
    SingularGram { column: usize, pivot: f64 },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("Jacobi iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
}

/// Dense complex matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Builds a matrix from row-major entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension {
                expected: format!("{} entries", rows * cols),
                got: format!("{} entries", data.len()),
            });
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from real row-major entries.
    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self, LinalgError> {
        Self::from_vec(
            rows,
            cols,
            data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        )
    }

    /// Builds a matrix whose columns are the given vectors, each of length `rows`.
    pub fn from_columns(rows: usize, columns: &[&[Complex64]]) -> Result<Self, LinalgError> {
        let mut m = Self::zeros(rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(LinalgError::Dimension {
                    expected: format!("column of length {rows}"),
                    got: format!("column of length {}", col.len()),
                });
            }
            for (i, &z) in col.iter().enumerate() {
                m[(i, j)] = z;
            }
        }
        Ok(m)
    }

    /// Rank-one outer product `x x†`.
    pub fn outer(x: &[Complex64]) -> Self {
        let n = x.len();
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = x[i] * x[j].conj();
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * c).collect(),
        }
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }

    /// Largest entry magnitude of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).norm()))
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Checked product.
    pub fn matmul(&self, rhs: &Self) -> Result<Self, LinalgError> {
        if self.cols != rhs.rows {
            return Err(LinalgError::Dimension {
                expected: format!("{} rows on the right", self.cols),
                got: format!("{} rows", rhs.rows),
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let rrow = rhs.row(k);
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Maximum entrywise deviation from Hermitian symmetry.
    pub fn hermitian_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Whether the matrix is square and Hermitian within `rel_tol` of its
    /// largest entry.
    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        self.is_square() && self.hermitian_residual() <= rel_tol * self.max_abs().max(1.0)
    }

    /// Replaces the matrix by `(X + X†)/2`, making it exactly Hermitian.
    pub fn symmetrize(&mut self) {
        assert!(self.is_square());
        let n = self.rows;
        for i in 0..n {
            let d = self[(i, i)].re;
            self[(i, i)] = Complex64::new(d, 0.0);
            for j in (i + 1)..n {
                let avg = (self[(i, j)] + self[(j, i)].conj()) * 0.5;
                self[(i, j)] = avg;
                self[(j, i)] = avg.conj();
            }
        }
    }

    /// Hermitian quadratic form `x† X x` (real part).
    pub fn quadratic_form(&self, x: &[Complex64]) -> f64 {
        let y = self.mul_vec(x);
        x.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs).expect("matrix product dimension mismatch")
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for z in self.row(i) {
                write!(f, "{:+.6}{:+.6}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Ordered eigenvalues (descending) with optional column-orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenSpectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Option<CMatrix>,
}

impl EigenSpectrum {
    pub fn largest(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    /// Rebuilds `V Λ V†`; `None` when no eigenvectors were kept.
    pub fn reconstruct(&self) -> Option<CMatrix> {
        let v = self.eigenvectors.as_ref()?;
        let n = v.rows();
        let mut out = CMatrix::zeros(n, n);
        for (k, &lambda) in self.eigenvalues.iter().enumerate() {
            for i in 0..n {
                let vik = v[(i, k)] * lambda;
                for j in 0..n {
                    out[(i, j)] += vik * v[(j, k)].conj();
                }
            }
        }
        Some(out)
    }
}

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi rotations.
///
/// Eigenvalues come back in descending order. Values below
/// `EIG_CLAMP_FLOOR * λmax` that are within the negative-noise tolerance are
/// clamped up to that floor, so downstream logarithms stay finite.
pub fn hermitian_eigendecompose(r: &CMatrix) -> Result<EigenSpectrum, LinalgError> {
    eigendecompose_impl(r, true)
}

/// As [`hermitian_eigendecompose`], without accumulating eigenvectors.
pub fn hermitian_eigenvalues(r: &CMatrix) -> Result<EigenSpectrum, LinalgError> {
    eigendecompose_impl(r, false)
}

fn eigendecompose_impl(r: &CMatrix, want_vectors: bool) -> Result<EigenSpectrum, LinalgError> {
    if !r.is_square() {
        return Err(LinalgError::NotSquare {
            rows: r.rows(),
            cols: r.cols(),
        });
    }
    let asym = r.hermitian_residual();
    if asym > STRUCTURE_TOL * r.max_abs().max(f64::MIN_POSITIVE) {
        return Err(LinalgError::NotHermitian { asymmetry: asym });
    }
    let n = r.rows();
    let mut a = r.clone();
    a.symmetrize();
    let mut v = want_vectors.then(|| CMatrix::identity(n));

    let scale = a
        .as_slice()
        .iter()
        .map(|z| z.norm_sqr())
        .sum::<f64>()
        .sqrt();
    let mut converged = n < 2 || scale == 0.0;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(LinalgError::NoConvergence(sweeps));
        }
        sweeps += 1;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                rotate(&mut a, v.as_mut(), p, q);
            }
        }
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        converged = off <= f64::EPSILON * 1e-2 * scale;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].re.total_cmp(&a[(i, i)].re));
    let mut eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)].re).collect();

    let lambda_max = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let floor = EIG_CLAMP_FLOOR * lambda_max;
    for lambda in eigenvalues.iter_mut() {
        if *lambda < floor && *lambda > -NEGATIVE_EIG_TOL * lambda_max {
            *lambda = floor;
        }
    }

    let eigenvectors = v.map(|v| {
        let mut sorted = CMatrix::zeros(n, n);
        for (k, &src) in order.iter().enumerate() {
            for i in 0..n {
                sorted[(i, k)] = v[(i, src)];
            }
        }
        sorted
    });
    Ok(EigenSpectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// One two-sided Jacobi rotation annihilating `a[p][q]`.
///
/// The rotation is `W = U J` where `U` removes the phase of `a[p][q]` and `J`
/// is the classic real symmetric Jacobi rotation; `a <- W† a W`, `v <- v W`.
fn rotate(a: &mut CMatrix, v: Option<&mut CMatrix>, p: usize, q: usize) {
    let apq = a[(p, q)];
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    if r <= f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
        a[(p, q)] = Complex64::new(0.0, 0.0);
        a[(q, p)] = Complex64::new(0.0, 0.0);
        return;
    }
    let phase = apq / r; // e^{iφ}
    let tau = (aqq - app) / (2.0 * r);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let e = phase.conj(); // e^{-iφ}
    let w_pp = Complex64::new(c, 0.0);
    let w_pq = Complex64::new(s, 0.0);
    let w_qp = e * -s;
    let w_qq = e * c;

    let n = a.rows();
    // columns: a <- a W
    for i in 0..n {
        let aip = a[(i, p)];
        let aiq = a[(i, q)];
        a[(i, p)] = aip * w_pp + aiq * w_qp;
        a[(i, q)] = aip * w_pq + aiq * w_qq;
    }
    // rows: a <- W† a
    for j in 0..n {
        let apj = a[(p, j)];
        let aqj = a[(q, j)];
        a[(p, j)] = w_pp.conj() * apj + w_qp.conj() * aqj;
        a[(q, j)] = w_pq.conj() * apj + w_qq.conj() * aqj;
    }
    a[(p, q)] = Complex64::new(0.0, 0.0);
    a[(q, p)] = Complex64::new(0.0, 0.0);
    a[(p, p)] = Complex64::new(app - t * r, 0.0);
    a[(q, q)] = Complex64::new(aqq + t * r, 0.0);

    if let Some(v) = v {
        for i in 0..n {
            let vip = v[(i, p)];
            let viq = v[(i, q)];
            v[(i, p)] = vip * w_pp + viq * w_qp;
            v[(i, q)] = vip * w_pq + viq * w_qq;
        }
    }
}

/// Lower-triangular Cholesky factor of a Hermitian positive-definite matrix.
///
/// Fails when a pivot falls below `GRAM_PIVOT_FLOOR` times the largest diagonal.
pub fn cholesky(g: &CMatrix) -> Result<CMatrix, LinalgError> {
    if !g.is_square() {
        return Err(LinalgError::NotSquare {
            rows: g.rows(),
            cols: g.cols(),
        });
    }
    let n = g.rows();
    let max_diag = (0..n).fold(0.0_f64, |acc, i| acc.max(g[(i, i)].re));
    let floor = GRAM_PIVOT_FLOOR * max_diag;
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = g[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > floor) {
            return Err(LinalgError::SingularGram {
                column: j,
                pivot: d,
            });
        }
        let ljj = d.sqrt();
        l[(j, j)] = Complex64::new(ljj, 0.0);
        for i in (j + 1)..n {
            let mut s = g[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Orthogonal projector `A (A†A)⁻¹ A†` onto the column space of `A`.
///
/// An `M×0` input yields the `M×M` zero matrix.
pub fn projector(a: &CMatrix) -> Result<CMatrix, LinalgError> {
    let m = a.rows();
    let k = a.cols();
    if k > m {
        return Err(LinalgError::Dimension {
            expected: format!("at most {m} columns"),
            got: format!("{k} columns"),
        });
    }
    if k == 0 {
        return Ok(CMatrix::zeros(m, m));
    }
    let ah = a.adjoint();
    let gram = &ah * a;
    let l = cholesky(&gram)?;
    // X = L⁻¹ A† by forward substitution, then P = X† X.
    let mut x = ah;
    for col in 0..m {
        for i in 0..k {
            let mut s = x[(i, col)];
            for j in 0..i {
                s -= l[(i, j)] * x[(j, col)];
            }
            x[(i, col)] = s / l[(i, i)].re;
        }
    }
    let mut p = &x.adjoint() * &x;
    p.symmetrize();
    Ok(p)
}

/// `I − P` for a Hermitian idempotent `P`.
pub fn orthogonal_complement(p: &CMatrix) -> Result<CMatrix, LinalgError> {
    check_projector(p)?;
    Ok(&CMatrix::identity(p.rows()) - p)
}

/// Verifies `P` is Hermitian and idempotent within [`STRUCTURE_TOL`].
pub fn check_projector(p: &CMatrix) -> Result<(), LinalgError> {
    if !p.is_square() {
        return Err(LinalgError::NotSquare {
            rows: p.rows(),
            cols: p.cols(),
        });
    }
    let asym = p.hermitian_residual();
    let idem = (p * p).max_abs_diff(p);
    let residual = asym.max(idem);
    if residual > STRUCTURE_TOL {
        return Err(LinalgError::NotProjector { residual });
    }
    Ok(())
}

/// Sum of the real parts of the diagonal.
pub fn trace_real(x: &CMatrix) -> Result<f64, LinalgError> {
    if !x.is_square() {
        return Err(LinalgError::NotSquare {
            rows: x.rows(),
            cols: x.cols(),
        });
    }
    Ok((0..x.rows()).map(|i| x[(i, i)].re).sum())
}

/// `Tr[X Y]` without forming the product.
pub fn trace_of_product(x: &CMatrix, y: &CMatrix) -> Result<f64, LinalgError> {
    if !x.is_square() || x.rows() != y.rows() || y.cols() != x.cols() {
        return Err(LinalgError::Dimension {
            expected: format!("{}x{}", x.rows(), x.rows()),
            got: format!("{}x{}", y.rows(), y.cols()),
        });
    }
    let n = x.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..n {
            acc += (x[(i, k)] * y[(k, i)]).re;
        }
    }
    Ok(acc)
}
