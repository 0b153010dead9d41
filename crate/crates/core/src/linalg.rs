//! Dense and diagonal linear algebra used throughout the crate.
//!
//! Every operator is either a diagonal vector or a dense square matrix.
//! Diagonal operators stay diagonal under products, sums and inverses, which
//! keeps large spectral models at O(d) cost. Dense operators are limited to
//! [`Tolerances::dense_cap`] rows.

use std::ops::{Add, Mul, Sub};
use std::sync::RwLock;

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical thresholds shared by all modules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Largest dense dimension accepted.
    pub dense_cap: usize,
    /// Relative asymmetry above which a matrix is rejected as non-symmetric.
    pub symmetry_reject: f64,
    /// Relative asymmetry tolerated for `G·Σ` and `M` in the symmetric paths.
    pub splitting_symmetry: f64,
    /// Relative Frobenius step at which the Lyapunov recurrence stops.
    pub lyapunov_rel: f64,
    pub lyapunov_max_iter: usize,
    /// Spectral radii at or above `1 - unit_radius_margin` are rejected.
    pub unit_radius_margin: f64,
    pub power_tol: f64,
    pub power_max_iter: usize,
    /// Relative commutator norm tolerated when checking `[M, A] = 0`.
    pub commute: f64,
    /// `|sin(L θ)|` below this marks a resonant HMC mode.
    pub resonance: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            dense_cap: 4096,
            symmetry_reject: 1e-8,
            splitting_symmetry: 1e-10,
            lyapunov_rel: 1e-14,
            lyapunov_max_iter: 1_000_000,
            unit_radius_margin: 1e-12,
            power_tol: 1e-10,
            power_max_iter: 100_000,
            commute: 1e-8,
            resonance: 1e-10,
        }
    }
}

static TOLERANCES: RwLock<Tolerances> = RwLock::new(Tolerances {
    dense_cap: 4096,
    symmetry_reject: 1e-8,
    splitting_symmetry: 1e-10,
    lyapunov_rel: 1e-14,
    lyapunov_max_iter: 1_000_000,
    unit_radius_margin: 1e-12,
    power_tol: 1e-10,
    power_max_iter: 100_000,
    commute: 1e-8,
    resonance: 1e-10,
});

/// Current process-wide tolerances.
pub fn tolerances() -> Tolerances {
    *TOLERANCES.read().expect("tolerance lock poisoned")
}

/// Replace the process-wide tolerances.
pub fn set_tolerances(t: Tolerances) {
    *TOLERANCES.write().expect("tolerance lock poisoned") = t;
}

/// A square operator, diagonal or dense.
#[derive(Debug, Clone, PartialEq)]
pub enum Matrix {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl Matrix {
    pub fn identity(d: usize) -> Self {
        Matrix::Diagonal(DVector::from_element(d, 1.0))
    }

    pub fn zeros(d: usize) -> Self {
        Matrix::Diagonal(DVector::zeros(d))
    }

    pub fn from_diagonal(v: DVector<f64>) -> Self {
        Matrix::Diagonal(v)
    }

    pub fn from_dense(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let cap = tolerances().dense_cap;
        if m.nrows() > cap {
            return Err(Error::DenseTooLarge { dim: m.nrows(), cap });
        }
        Ok(Matrix::Dense(m))
    }

    /// Build from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
        Self::from_dense(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        match self {
            Matrix::Diagonal(v) => v.len(),
            Matrix::Dense(m) => m.nrows(),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, Matrix::Diagonal(_))
    }

    pub fn diagonal_entries(&self) -> Option<&DVector<f64>> {
        match self {
            Matrix::Diagonal(v) => Some(v),
            Matrix::Dense(_) => None,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Matrix::Diagonal(v) => DMatrix::from_diagonal(v),
            Matrix::Dense(m) => m.clone(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Matrix::Diagonal(v) => {
                if i == j {
                    v[i]
                } else {
                    0.0
                }
            }
            Matrix::Dense(m) => m[(i, j)],
        }
    }

    pub fn transpose(&self) -> Matrix {
        match self {
            Matrix::Diagonal(v) => Matrix::Diagonal(v.clone()),
            Matrix::Dense(m) => Matrix::Dense(m.transpose()),
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Matrix::Diagonal(v) => v.component_mul(x),
            Matrix::Dense(m) => m * x,
        }
    }

    pub fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Matrix::Diagonal(v) => v.component_mul(x),
            Matrix::Dense(m) => m.tr_mul(x),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        match self {
            Matrix::Diagonal(v) => Matrix::Diagonal(v * s),
            Matrix::Dense(m) => Matrix::Dense(m * s),
        }
    }

    /// `self + alpha·I`.
    pub fn shift(&self, alpha: f64) -> Matrix {
        match self {
            Matrix::Diagonal(v) => Matrix::Diagonal(v.add_scalar(alpha)),
            Matrix::Dense(m) => {
                let mut out = m.clone();
                for i in 0..out.nrows() {
                    out[(i, i)] += alpha;
                }
                Matrix::Dense(out)
            }
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        match (self, other) {
            (Matrix::Diagonal(a), Matrix::Diagonal(b)) => Matrix::Diagonal(a.component_mul(b)),
            (Matrix::Diagonal(a), Matrix::Dense(b)) => {
                let mut out = b.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= a[i];
                }
                Matrix::Dense(out)
            }
            (Matrix::Dense(a), Matrix::Diagonal(b)) => {
                let mut out = a.clone();
                for (j, mut col) in out.column_iter_mut().enumerate() {
                    col *= b[j];
                }
                Matrix::Dense(out)
            }
            (Matrix::Dense(a), Matrix::Dense(b)) => Matrix::Dense(a * b),
        }
    }

    fn combine(&self, other: &Matrix, sign: f64) -> Matrix {
        match (self, other) {
            (Matrix::Diagonal(a), Matrix::Diagonal(b)) => Matrix::Diagonal(a + b * sign),
            _ => Matrix::Dense(self.to_dense() + other.to_dense() * sign),
        }
    }

    /// Inverse via LU (elementwise for diagonal operators).
    pub fn inverse(&self) -> Result<Matrix> {
        match self {
            Matrix::Diagonal(v) => {
                if let Some(i) = v.iter().position(|&x| x == 0.0 || !x.is_finite()) {
                    return Err(Error::Singular(format!("zero diagonal entry at {i}")));
                }
                Ok(Matrix::Diagonal(v.map(|x| 1.0 / x)))
            }
            Matrix::Dense(m) => m
                .clone()
                .try_inverse()
                .map(Matrix::Dense)
                .ok_or_else(|| Error::Singular("LU factorization failed".into())),
        }
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), rhs.len())?;
        match self {
            Matrix::Diagonal(v) => {
                if let Some(i) = v.iter().position(|&x| x == 0.0) {
                    return Err(Error::Singular(format!("zero diagonal entry at {i}")));
                }
                Ok(rhs.component_div(v))
            }
            Matrix::Dense(m) => m
                .clone()
                .lu()
                .solve(rhs)
                .ok_or_else(|| Error::Singular("LU solve failed".into())),
        }
    }

    /// Integer power by repeated squaring.
    pub fn pow(&self, k: usize) -> Matrix {
        let mut result = Matrix::identity(self.dim());
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                result = result.matmul(&base);
            }
            k >>= 1;
            if k > 0 {
                base = base.matmul(&base);
            }
        }
        result
    }

    pub fn frobenius_norm(&self) -> f64 {
        match self {
            Matrix::Diagonal(v) => v.norm(),
            Matrix::Dense(m) => m.norm(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            Matrix::Diagonal(v) => v.amax(),
            Matrix::Dense(m) => m.amax(),
        }
    }

    /// Largest entrywise difference.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        match (self, other) {
            (Matrix::Diagonal(a), Matrix::Diagonal(b)) => (a - b).amax(),
            _ => (self.to_dense() - other.to_dense()).amax(),
        }
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        match self {
            Matrix::Diagonal(_) => 0.0,
            Matrix::Dense(m) => (m - m.transpose()).amax(),
        }
    }

    /// `(X + Xᵀ)/2`.
    pub fn symmetrized(&self) -> Matrix {
        match self {
            Matrix::Diagonal(v) => Matrix::Diagonal(v.clone()),
            Matrix::Dense(m) => Matrix::Dense((m + m.transpose()) * 0.5),
        }
    }

    /// Relative Frobenius norm of `self·other − other·self`.
    pub fn commutator_norm(&self, other: &Matrix) -> f64 {
        if self.is_diagonal() && other.is_diagonal() {
            return 0.0;
        }
        let c = self.matmul(other) - other.matmul(self);
        let scale = self.frobenius_norm() * other.frobenius_norm();
        if scale == 0.0 {
            0.0
        } else {
            c.frobenius_norm() / scale
        }
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        self.combine(rhs, 1.0)
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        self.combine(rhs, -1.0)
    }
}

impl Sub for Matrix {
    type Output = Matrix;
    fn sub(self, rhs: Matrix) -> Matrix {
        self.combine(&rhs, -1.0)
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

impl Mul<&DVector<f64>> for &Matrix {
    type Output = DVector<f64>;
    fn mul(self, rhs: &DVector<f64>) -> DVector<f64> {
        self.apply(rhs)
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

/// A validated symmetric operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricOperator(Matrix);

impl SymmetricOperator {
    /// Symmetrizes `m`; rejects it when the correction exceeds the
    /// configured relative threshold.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.dim() == 0 {
            return Err(Error::InvalidParameter("operator dimension must be positive".into()));
        }
        if let Matrix::Dense(d) = &m {
            let cap = tolerances().dense_cap;
            if d.nrows() > cap {
                return Err(Error::DenseTooLarge { dim: d.nrows(), cap });
            }
            if d.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter("non-finite entry".into()));
            }
        }
        let asym = m.asymmetry();
        let scale = m.max_abs().max(1.0);
        if asym > tolerances().symmetry_reject * scale {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(SymmetricOperator(m.symmetrized()))
    }

    pub fn identity(d: usize) -> Self {
        SymmetricOperator(Matrix::identity(d))
    }

    pub fn diagonal(values: DVector<f64>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite diagonal entry".into()));
        }
        Self::new(Matrix::Diagonal(values))
    }

    pub fn dense(m: DMatrix<f64>) -> Result<Self> {
        Self::new(Matrix::from_dense(m)?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn is_diagonal(&self) -> bool {
        self.0.is_diagonal()
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.0.apply(x)
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        match &self.0 {
            Matrix::Diagonal(v) => v.iter().zip(x.iter()).map(|(a, xi)| a * xi * xi).sum(),
            Matrix::Dense(m) => x.dot(&(m * x)),
        }
    }

    pub fn trace(&self) -> f64 {
        match &self.0 {
            Matrix::Diagonal(v) => v.sum(),
            Matrix::Dense(m) => m.trace(),
        }
    }
}

/// Cholesky factor `L` with `L Lᵀ = A` (a square-root vector for diagonal `A`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpdFactorization {
    lower: Matrix,
}

/// Factorize a symmetric positive definite operator.
pub fn spd_factorize(op: &SymmetricOperator) -> Result<SpdFactorization> {
    let d = op.dim();
    match op.matrix() {
        Matrix::Diagonal(v) => {
            let max_diag = v.amax();
            let threshold = d as f64 * f64::EPSILON * max_diag;
            if let Some((index, &pivot)) = v
                .iter()
                .enumerate()
                .find(|(_, &p)| p <= threshold || !p.is_finite())
            {
                return Err(Error::NotPositiveDefinite { index, pivot });
            }
            Ok(SpdFactorization {
                lower: Matrix::Diagonal(v.map(f64::sqrt)),
            })
        }
        Matrix::Dense(a) => {
            let max_diag = a.diagonal().amax();
            let threshold = d as f64 * f64::EPSILON * max_diag;
            let mut l = DMatrix::<f64>::zeros(d, d);
            for j in 0..d {
                let mut s = a[(j, j)];
                for k in 0..j {
                    s -= l[(j, k)] * l[(j, k)];
                }
                if s <= threshold || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { index: j, pivot: s });
                }
                let ljj = s.sqrt();
                l[(j, j)] = ljj;
                for i in (j + 1)..d {
                    let mut s = a[(i, j)];
                    for k in 0..j {
                        s -= l[(i, k)] * l[(j, k)];
                    }
                    l[(i, j)] = s / ljj;
                }
            }
            Ok(SpdFactorization {
                lower: Matrix::Dense(l),
            })
        }
    }
}

impl SpdFactorization {
    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    /// `L ξ`: maps standard normals to `N(0, A)`.
    pub fn mul_lower(&self, xi: &DVector<f64>) -> DVector<f64> {
        self.lower.apply(xi)
    }

    /// `L⁻¹ r`.
    pub fn solve_lower(&self, r: &DVector<f64>) -> DVector<f64> {
        match &self.lower {
            Matrix::Diagonal(s) => r.component_div(s),
            Matrix::Dense(l) => l
                .solve_lower_triangular(r)
                .expect("Cholesky factor has a positive diagonal"),
        }
    }

    /// `L⁻ᵀ ξ`: maps standard normals to `N(0, A⁻¹)`.
    pub fn solve_lower_transpose(&self, xi: &DVector<f64>) -> DVector<f64> {
        match &self.lower {
            Matrix::Diagonal(s) => xi.component_div(s),
            Matrix::Dense(l) => l
                .tr_solve_lower_triangular(xi)
                .expect("Cholesky factor has a positive diagonal"),
        }
    }

    /// `A⁻¹ r`.
    pub fn solve(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), r.len())?;
        Ok(self.solve_lower_transpose(&self.solve_lower(r)))
    }

    /// `A⁻¹` as an explicit operator.
    pub fn inverse(&self) -> Matrix {
        match &self.lower {
            Matrix::Diagonal(s) => Matrix::Diagonal(s.map(|x| 1.0 / (x * x))),
            Matrix::Dense(_) => {
                let d = self.dim();
                let mut out = DMatrix::zeros(d, d);
                for j in 0..d {
                    let mut e = DVector::zeros(d);
                    e[j] = 1.0;
                    out.set_column(j, &self.solve_lower_transpose(&self.solve_lower(&e)));
                }
                Matrix::Dense((&out + out.transpose()) * 0.5)
            }
        }
    }

    pub fn reconstruct(&self) -> Matrix {
        self.lower.matmul(&self.lower.transpose())
    }

    pub fn log_det(&self) -> f64 {
        match &self.lower {
            Matrix::Diagonal(s) => 2.0 * s.iter().map(|x| x.ln()).sum::<f64>(),
            Matrix::Dense(l) => 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>(),
        }
    }
}

/// Solve with either a raw operator or a factorization.
pub enum SolveWith<'a> {
    Operator(&'a SymmetricOperator),
    Factor(&'a SpdFactorization),
}

pub fn solve(op: SolveWith<'_>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    match op {
        SolveWith::Operator(a) => a.matrix().solve(rhs),
        SolveWith::Factor(f) => f.solve(rhs),
    }
}

/// Orthogonal eigenbasis: a permutation of coordinate axes for diagonal
/// operators, a dense orthogonal matrix otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum Eigenbasis {
    Permutation(Vec<usize>),
    Dense(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: Eigenbasis,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, k: usize) -> DVector<f64> {
        match &self.eigenvectors {
            Eigenbasis::Permutation(p) => {
                let mut e = DVector::zeros(p.len());
                e[p[k]] = 1.0;
                e
            }
            Eigenbasis::Dense(q) => q.column(k).into_owned(),
        }
    }

    pub fn eigenvector_matrix(&self) -> DMatrix<f64> {
        match &self.eigenvectors {
            Eigenbasis::Permutation(p) => {
                let d = p.len();
                let mut q = DMatrix::zeros(d, d);
                for (k, &i) in p.iter().enumerate() {
                    q[(i, k)] = 1.0;
                }
                q
            }
            Eigenbasis::Dense(q) => q.clone(),
        }
    }

    /// `Q f(Λ) Qᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        match &self.eigenvectors {
            Eigenbasis::Permutation(p) => {
                let mut v = DVector::zeros(p.len());
                for (k, &i) in p.iter().enumerate() {
                    v[i] = f(self.eigenvalues[k]);
                }
                Matrix::Diagonal(v)
            }
            Eigenbasis::Dense(q) => {
                let fl = DVector::from_iterator(self.dim(), self.eigenvalues.iter().map(|&x| f(x)));
                let scaled = Matrix::Dense(q.clone()).matmul(&Matrix::Diagonal(fl));
                Matrix::Dense(scaled.to_dense() * q.transpose()).symmetrized()
            }
        }
    }

    pub fn reconstruct(&self) -> Matrix {
        self.map(|x| x)
    }

    /// Components `Qᵀ v`.
    pub fn coordinates(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.eigenvectors {
            Eigenbasis::Permutation(p) => DVector::from_iterator(p.len(), p.iter().map(|&i| v[i])),
            Eigenbasis::Dense(q) => q.tr_mul(v),
        }
    }
}

/// Eigen-decomposition of a symmetric operator, eigenvalues ascending.
pub fn spectral_decompose(op: &SymmetricOperator) -> Result<SpectralDecomposition> {
    match op.matrix() {
        Matrix::Diagonal(v) => {
            let mut perm: Vec<usize> = (0..v.len()).collect();
            perm.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
            let eigenvalues = DVector::from_iterator(v.len(), perm.iter().map(|&i| v[i]));
            Ok(SpectralDecomposition {
                eigenvalues,
                eigenvectors: Eigenbasis::Permutation(perm),
            })
        }
        Matrix::Dense(m) => {
            let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 100_000).ok_or_else(|| {
                Error::ConvergenceFailure("symmetric eigen-solver hit its iteration cap".into())
            })?;
            let d = m.nrows();
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let eigenvalues = DVector::from_iterator(d, order.iter().map(|&k| eig.eigenvalues[k]));
            let mut q = DMatrix::zeros(d, d);
            for (dst, &src) in order.iter().enumerate() {
                q.set_column(dst, &eig.eigenvectors.column(src));
            }
            Ok(SpectralDecomposition {
                eigenvalues,
                eigenvectors: Eigenbasis::Dense(q),
            })
        }
    }
}

/// Largest eigenvalue modulus of a general square operator.
///
/// Dense operators use a real Schur decomposition; if that fails to converge
/// the radius is estimated from `‖G^(2^k)‖^(1/2^k)` by repeated squaring.
pub fn spectral_radius(g: &Matrix) -> Result<f64> {
    match g {
        Matrix::Diagonal(v) => Ok(if v.is_empty() { 0.0 } else { v.amax() }),
        Matrix::Dense(m) => {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter("non-finite entry".into()));
            }
            if let Some(schur) = Schur::try_new(m.clone(), f64::EPSILON, 100_000) {
                let eig = schur.complex_eigenvalues();
                return Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max));
            }
            gelfand_radius(m)
        }
    }
}

fn gelfand_radius(m: &DMatrix<f64>) -> Result<f64> {
    let t = tolerances();
    let norm = m.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let mut p = m / norm;
    let mut log_norm = norm.ln();
    let mut power = 1.0_f64;
    let mut estimate = norm;
    for _ in 0..t.power_max_iter.min(1000) {
        p = &p * &p;
        power *= 2.0;
        let n = p.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        p /= n;
        log_norm = 2.0 * log_norm + n.ln();
        let next = (log_norm / power).exp();
        if (next - estimate).abs() <= t.power_tol * next.max(1e-300) {
            return Ok(next);
        }
        estimate = next;
        if power > 1e300 {
            break;
        }
    }
    Err(Error::ConvergenceFailure("spectral radius estimate did not settle".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_spd(d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &x * x.transpose() + DMatrix::identity(d, d) * (d as f64) * 0.1
    }

    fn random_symmetric(d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        (&x + x.transpose()) * 0.5
    }

    fn det_cofactor(m: &DMatrix<f64>) -> f64 {
        let d = m.nrows();
        if d == 1 {
            return m[(0, 0)];
        }
        (0..d)
            .map(|j| {
                let minor = m.clone().remove_row(0).remove_column(j);
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[(0, j)] * det_cofactor(&minor)
            })
            .sum()
    }

    #[test]
    fn factorize_identity_and_diagonal() {
        let f = spd_factorize(&SymmetricOperator::new(Matrix::Dense(DMatrix::identity(3, 3))).unwrap())
            .unwrap();
        assert_eq!(f.lower().to_dense(), DMatrix::identity(3, 3));
        let f = spd_factorize(&SymmetricOperator::diagonal(DVector::from_vec(vec![4.0, 9.0])).unwrap())
            .unwrap();
        assert_eq!(f.lower().diagonal_entries().unwrap().as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn factorize_random_spd_reconstructs() {
        let a = random_spd(5, 11);
        let op = SymmetricOperator::dense(a.clone()).unwrap();
        let f = spd_factorize(&op).unwrap();
        let rec = f.reconstruct().to_dense();
        assert!((&rec - &a).norm() / a.norm() <= 1e-10);
        for i in 0..5 {
            for j in 0..5 {
                assert_relative_eq!(rec[(i, j)], a[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn factorize_rejects_indefinite() {
        let op = SymmetricOperator::dense(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        assert!(matches!(spd_factorize(&op), Err(Error::NotPositiveDefinite { index: 1, .. })));
        let op = SymmetricOperator::diagonal(DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!(matches!(spd_factorize(&op), Err(Error::NotPositiveDefinite { index: 1, .. })));
    }

    #[test]
    fn rejects_asymmetric_and_symmetrizes_small_noise() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(SymmetricOperator::dense(m), Err(Error::NotSymmetric { .. })));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5 + 1e-11, 1.0]);
        let op = SymmetricOperator::dense(m).unwrap();
        assert_eq!(op.matrix().asymmetry(), 0.0);
    }

    #[test]
    fn dense_cap_enforced() {
        let m = DMatrix::<f64>::identity(4097, 4097);
        assert!(matches!(Matrix::from_dense(m), Err(Error::DenseTooLarge { .. })));
    }

    #[test]
    fn spectral_of_diagonal_is_sorted_permutation() {
        let op = SymmetricOperator::diagonal(DVector::from_vec(vec![3.0, 1.0, 2.0])).unwrap();
        let s = spectral_decompose(&op).unwrap();
        assert_eq!(s.eigenvalues.as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.eigenvector(0).as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(s.eigenvector(2).as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn spectral_classic_pair() {
        let op = SymmetricOperator::dense(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let s = spectral_decompose(&op).unwrap();
        assert_relative_eq!(s.eigenvalues[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(s.eigenvalues[1], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn spectral_random_residuals_trace_and_det() {
        for (d, seed) in [(8, 3), (5, 4), (3, 5)] {
            let a = random_symmetric(d, seed);
            let op = SymmetricOperator::dense(a.clone()).unwrap();
            let s = spectral_decompose(&op).unwrap();
            for k in 0..d {
                let q = s.eigenvector(k);
                let r = &a * &q - &q * s.eigenvalues[k];
                assert!(r.norm() <= 1e-9, "residual {}", r.norm());
            }
            let q = s.eigenvector_matrix();
            assert!((q.transpose() * &q - DMatrix::identity(d, d)).amax() <= 1e-10);
            let rec = s.reconstruct().to_dense();
            assert!((&rec - &a).norm() / a.norm() <= 1e-9);
            let tr: f64 = s.eigenvalues.sum();
            assert!((tr - a.trace()).abs() <= 1e-10 * a.trace().abs().max(1.0));
            let prod: f64 = s.eigenvalues.iter().product();
            let det = det_cofactor(&a);
            assert!((prod - det).abs() <= 1e-9 * det.abs().max(1e-3));
            assert_eq!(prod.signum(), det.signum());
        }
    }

    #[test]
    fn solve_cases() {
        let id = SymmetricOperator::identity(2);
        let x = solve(SolveWith::Operator(&id), &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0]);
        let diag = SymmetricOperator::diagonal(DVector::from_vec(vec![2.0, 4.0])).unwrap();
        let x = solve(SolveWith::Operator(&diag), &DVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0]);

        let a = random_spd(6, 17);
        let op = SymmetricOperator::dense(a.clone()).unwrap();
        let rhs = DVector::from_fn(6, |i, _| (i as f64) - 2.5);
        let f = spd_factorize(&op).unwrap();
        let x1 = solve(SolveWith::Factor(&f), &rhs).unwrap();
        let x2 = solve(SolveWith::Operator(&op), &rhs).unwrap();
        let res = (&a * &x1 - &rhs).norm();
        assert!(res <= 1e-9 * (a.norm() * x1.norm() + rhs.norm()));
        assert!((&x1 - &x2).amax() <= 1e-9);
    }

    #[test]
    fn solve_singular() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(m.solve(&DVector::from_vec(vec![1.0, 1.0])), Err(Error::Singular(_))));
        assert!(Matrix::Diagonal(DVector::from_vec(vec![1.0, 0.0])).inverse().is_err());
    }

    #[test]
    fn spectral_radius_cases() {
        let g = Matrix::Diagonal(DVector::from_vec(vec![0.5, -0.9]));
        assert_relative_eq!(spectral_radius(&g).unwrap(), 0.9);
        assert_eq!(spectral_radius(&Matrix::Dense(DMatrix::zeros(3, 3))).unwrap(), 0.0);
        let a = Matrix::Diagonal(DVector::from_vec(vec![1.0, 4.0]));
        let mala = a.scale(-0.25).shift(1.0);
        assert_relative_eq!(spectral_radius(&mala).unwrap(), 0.75);
        // rotation-scaling: complex pair of modulus 0.8
        let r = Matrix::from_rows(&[vec![0.0, -0.8], vec![0.8, 0.0]]).unwrap();
        assert_relative_eq!(spectral_radius(&r).unwrap(), 0.8, epsilon = 1e-12);
        assert_relative_eq!(gelfand_radius(&r.to_dense()).unwrap(), 0.8, epsilon = 1e-8);
    }

    #[test]
    fn spectral_radius_matches_power_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..20 {
            let scale = if trial % 2 == 0 { 0.25 } else { 0.6 };
            let g = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-scale..scale));
            let rho = spectral_radius(&Matrix::Dense(g.clone())).unwrap();
            if (rho - 1.0).abs() < 0.05 {
                continue;
            }
            let decayed = Matrix::Dense(g).pow(200).frobenius_norm() < 1e-6;
            assert_eq!(rho < 1.0, decayed, "rho = {rho}");
        }
    }

    #[test]
    fn pow_matches_repeated_product() {
        let g = Matrix::Dense(random_symmetric(3, 8));
        let mut p = Matrix::identity(3);
        for _ in 0..7 {
            p = p.matmul(&g);
        }
        assert!(g.pow(7).max_abs_diff(&p) < 1e-10);
    }
}
