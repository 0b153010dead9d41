//! AR(1) processes `y = Gx + g + ν`, `ν ~ N(0, Σ)`, and the equivalent
//! matrix splittings `My = Nx + β + ν`, `ν ~ N(0, Mᵀ + N)`, `𝒜 = M − N`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{
    check_dim, spd_factorize, spectral_radius, tolerances, Matrix, SpdFactorization,
    SymmetricOperator,
};
use crate::rng::RandomStream;

/// Sampling-ready AR(1) proposal `y = Gx + g + ν`, `ν ~ N(0, Σ)`.
#[derive(Debug, Clone)]
pub struct Ar1Proposal {
    iteration: Matrix,
    offset: DVector<f64>,
    noise: SymmetricOperator,
    noise_factor: SpdFactorization,
}

impl Ar1Proposal {
    pub fn new(iteration: Matrix, offset: DVector<f64>, noise: SymmetricOperator) -> Result<Self> {
        let d = iteration.dim();
        check_dim(d, offset.len())?;
        check_dim(d, noise.dim())?;
        let noise_factor = spd_factorize(&noise)?;
        Ok(Self {
            iteration,
            offset,
            noise,
            noise_factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    /// `G`.
    pub fn iteration(&self) -> &Matrix {
        &self.iteration
    }

    /// `g`.
    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    /// `Σ`.
    pub fn noise_covariance(&self) -> &SymmetricOperator {
        &self.noise
    }

    pub fn noise_factor(&self) -> &SpdFactorization {
        &self.noise_factor
    }

    /// `Gx + g`.
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        self.iteration.apply(x) + &self.offset
    }

    /// `Gx + g + Lξ` with `L Lᵀ = Σ`.
    pub fn propose_with(&self, x: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.noise_factor.mul_lower(xi)
    }

    pub fn propose(&self, x: &DVector<f64>, rng: &mut RandomStream) -> DVector<f64> {
        let xi = rng.normal_vector(self.dim());
        self.propose_with(x, &xi)
    }

    /// `log q(x, y)` up to the normalizing constant.
    pub fn log_transition(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let r = y - self.drift(x);
        -0.5 * self.noise_factor.solve_lower(&r).norm_squared()
    }
}

/// Matrix splitting `𝒜 = M − N` with shift `β`.
#[derive(Debug, Clone)]
pub struct MatrixSplitting {
    m: Matrix,
    n: Matrix,
    beta: DVector<f64>,
    precision: SymmetricOperator,
    spectral_radius: f64,
    convergent: bool,
    symmetric: bool,
}

impl MatrixSplitting {
    /// Builds the splitting, deriving `𝒜 = M − N` and the convergence flag
    /// `ρ(M⁻¹N) < 1`.
    pub fn new(m: Matrix, n: Matrix, beta: DVector<f64>) -> Result<Self> {
        let d = m.dim();
        check_dim(d, n.dim())?;
        check_dim(d, beta.len())?;
        let precision = SymmetricOperator::new(&m - &n)?;
        let g = m.inverse()?.matmul(&n);
        let rho = spectral_radius(&g)?;
        let tol = tolerances();
        let convergent = rho < 1.0 - tol.unit_radius_margin;
        let symmetric = m.asymmetry() <= tol.splitting_symmetry * m.max_abs().max(1.0)
            && n.asymmetry() <= tol.splitting_symmetry * n.max_abs().max(1.0);
        Ok(Self {
            m,
            n,
            beta,
            precision,
            spectral_radius: rho,
            convergent,
            symmetric,
        })
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn m(&self) -> &Matrix {
        &self.m
    }

    pub fn n(&self) -> &Matrix {
        &self.n
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    /// `𝒜 = M − N`.
    pub fn precision(&self) -> &SymmetricOperator {
        &self.precision
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    pub fn is_convergent(&self) -> bool {
        self.convergent
    }

    /// `M` (and so `N`) symmetric.
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn ensure_convergent(&self) -> Result<()> {
        if self.convergent {
            Ok(())
        } else {
            Err(Error::NotConvergent {
                spectral_radius: self.spectral_radius,
            })
        }
    }

    /// `G = M⁻¹N`.
    pub fn iteration_matrix(&self) -> Result<Matrix> {
        Ok(self.m.inverse()?.matmul(&self.n))
    }

    /// `Mᵀ + N`, the covariance of `ν` in `My = Nx + β + ν`.
    pub fn noise_covariance(&self) -> Result<SymmetricOperator> {
        SymmetricOperator::new(&self.m.transpose() + &self.n)
    }

    pub fn noise_factor(&self) -> Result<SpdFactorization> {
        spd_factorize(&self.noise_covariance()?)
    }

    /// One unadjusted step `y = M⁻¹(Nx + β + ν)` with `ν = Lξ`.
    pub fn step_with(&self, x: &DVector<f64>, xi: &DVector<f64>, factor: &SpdFactorization) -> Result<DVector<f64>> {
        let rhs = self.n.apply(x) + &self.beta + factor.mul_lower(xi);
        self.m.solve(&rhs)
    }
}

/// `N(𝒜⁻¹β, 𝒜⁻¹)`, the equilibrium of the unadjusted chain.
#[derive(Debug, Clone)]
pub struct ProposalTarget {
    pub mean: DVector<f64>,
    pub precision: SymmetricOperator,
}

pub fn proposal_target(s: &MatrixSplitting) -> Result<ProposalTarget> {
    s.ensure_convergent()?;
    let factor = spd_factorize(s.precision())?;
    let mean = factor.solve(s.beta())?;
    Ok(ProposalTarget {
        mean,
        precision: s.precision().clone(),
    })
}

fn check_convergent(g: &Matrix) -> Result<f64> {
    let rho = spectral_radius(g)?;
    if rho >= 1.0 - tolerances().unit_radius_margin {
        return Err(Error::NotConvergent { spectral_radius: rho });
    }
    Ok(rho)
}

/// `Σₗ Gˡ Σ (Gᵀ)ˡ`, summed as the fixed point of `C ← Σ + G C Gᵀ`.
pub fn lyapunov_series(g: &Matrix, sigma: &SymmetricOperator) -> Result<Matrix> {
    check_dim(g.dim(), sigma.dim())?;
    check_convergent(g)?;
    let tol = tolerances();
    let gt = g.transpose();
    let mut c = sigma.matrix().clone();
    for _ in 0..tol.lyapunov_max_iter {
        let next = sigma.matrix() + &g.matmul(&c).matmul(&gt);
        let step = (&next - &c).frobenius_norm();
        let done = step <= tol.lyapunov_rel * c.frobenius_norm();
        c = next;
        if done {
            return Ok(c.symmetrized());
        }
    }
    Err(Error::ConvergenceFailure(format!(
        "Lyapunov recurrence did not settle in {} iterations",
        tol.lyapunov_max_iter
    )))
}

/// General AR(1) → splitting: `𝒜 = (Σₗ GˡΣ(Gᵀ)ˡ)⁻¹`, `M = 𝒜(I−G)⁻¹`,
/// `N = MG`, `β = Mg`.
pub fn ar1_to_splitting(p: &Ar1Proposal) -> Result<MatrixSplitting> {
    let series = SymmetricOperator::new(lyapunov_series(p.iteration(), p.noise_covariance())?)?;
    let precision = spd_factorize(&series)?.inverse();
    let d = p.dim();
    let one_minus_g = &Matrix::identity(d) - p.iteration();
    let m = precision.matmul(&one_minus_g.inverse()?);
    let n = m.matmul(p.iteration());
    let beta = m.apply(p.offset());
    MatrixSplitting::new(m, n, beta)
}

/// Symmetric path, valid when `GΣ` is symmetric: `M = Σ⁻¹(I+G)`,
/// `𝒜 = Σ⁻¹(I−G²)`, `N = MG`, `β = Mg`.
pub fn symmetric_ar1_to_splitting(p: &Ar1Proposal) -> Result<MatrixSplitting> {
    check_convergent(p.iteration())?;
    let g_sigma = p.iteration().matmul(p.noise_covariance().matrix());
    let asym = g_sigma.asymmetry();
    if asym > tolerances().splitting_symmetry * g_sigma.max_abs().max(1.0) {
        return Err(Error::NotSymmetrizable { asymmetry: asym });
    }
    let sigma_inv = p.noise_factor().inverse();
    let m = sigma_inv.matmul(&p.iteration().shift(1.0)).symmetrized();
    let n = m.matmul(p.iteration()).symmetrized();
    let beta = m.apply(p.offset());
    MatrixSplitting::new(m, n, beta)
}

/// Splitting → AR(1): `G = M⁻¹N`, `g = M⁻¹β`, `Σ = M⁻¹(Mᵀ+N)M⁻ᵀ`.
pub fn splitting_to_ar1(s: &MatrixSplitting) -> Result<Ar1Proposal> {
    let m_inv = s.m().inverse()?;
    let g = m_inv.matmul(s.n());
    let offset = m_inv.apply(s.beta());
    let noise_cov = &s.m().transpose() + s.n();
    let sigma = m_inv.matmul(&noise_cov).matmul(&m_inv.transpose()).symmetrized();
    Ar1Proposal::new(g, offset, SymmetricOperator::new(sigma)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> Matrix {
        Matrix::Diagonal(DVector::from_vec(vec![v]))
    }

    fn random_ar1(d: usize, radius: f64, seed: u64) -> Ar1Proposal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let rho = spectral_radius(&Matrix::Dense(raw.clone())).unwrap();
        let g = raw * (radius / rho);
        let x = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let sigma = &x * x.transpose() + DMatrix::identity(d, d);
        let offset = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        Ar1Proposal::new(Matrix::Dense(g), offset, SymmetricOperator::dense(sigma).unwrap()).unwrap()
    }

    #[test]
    fn iid_proposal_splitting() {
        let c = SymmetricOperator::dense(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let m = DVector::from_vec(vec![1.0, -2.0]);
        let p = Ar1Proposal::new(Matrix::Dense(DMatrix::zeros(2, 2)), m.clone(), c.clone()).unwrap();
        let s = ar1_to_splitting(&p).unwrap();
        let c_inv = spd_factorize(&c).unwrap().inverse();
        assert!(s.precision().matrix().max_abs_diff(&c_inv) < 1e-12);
        assert!(s.m().max_abs_diff(&c_inv) < 1e-12);
        assert!(s.n().max_abs() < 1e-14);
        assert!((s.beta() - c_inv.apply(&m)).amax() < 1e-12);
    }

    #[test]
    fn scalar_closed_form() {
        let p = Ar1Proposal::new(
            scalar(0.5),
            DVector::zeros(1),
            SymmetricOperator::diagonal(DVector::from_vec(vec![0.75])).unwrap(),
        )
        .unwrap();
        let s = ar1_to_splitting(&p).unwrap();
        assert_relative_eq!(s.precision().matrix().get(0, 0), 1.0, epsilon = 1e-13);
        assert_relative_eq!(s.m().get(0, 0), 2.0, epsilon = 1e-13);
        assert_relative_eq!(s.n().get(0, 0), 1.0, epsilon = 1e-13);
        assert_eq!(s.beta()[0], 0.0);
        assert_relative_eq!(s.noise_covariance().unwrap().matrix().get(0, 0), 3.0, epsilon = 1e-13);
        let back = splitting_to_ar1(&s).unwrap();
        assert_relative_eq!(back.noise_covariance().matrix().get(0, 0), 0.75, epsilon = 1e-13);

        let s = MatrixSplitting::new(scalar(2.0), scalar(1.0), DVector::zeros(1)).unwrap();
        let p = splitting_to_ar1(&s).unwrap();
        assert_relative_eq!(p.iteration().get(0, 0), 0.5);
        assert_relative_eq!(p.noise_covariance().matrix().get(0, 0), 0.75);
    }

    #[test]
    fn general_conversion_against_truncated_series() {
        let p = random_ar1(3, 0.8, 42);
        let g = p.iteration().to_dense();
        let sigma = p.noise_covariance().matrix().to_dense();
        // ‖G‖^{2L} < 1e-16 in the spectral norm
        let gnorm = g.clone().svd(false, false).singular_values.max();
        let mut terms = if gnorm < 1.0 {
            ((1e-16f64).ln() / (2.0 * gnorm.ln())).ceil() as usize
        } else {
            0
        };
        terms = terms.max(400);
        let mut series = DMatrix::zeros(3, 3);
        let mut gl = DMatrix::identity(3, 3);
        for _ in 0..=terms {
            series += &gl * &sigma * gl.transpose();
            gl = &g * gl;
        }
        let precision = series.clone().try_inverse().unwrap();
        let s = ar1_to_splitting(&p).unwrap();
        let rel = (s.precision().matrix().to_dense() - &precision).norm() / precision.norm();
        assert!(rel < 1e-10, "rel {rel}");
        let id = DMatrix::<f64>::identity(3, 3);
        let m = s.m().to_dense();
        let n = s.n().to_dense();
        let m_inv = m.clone().try_inverse().unwrap();
        // 𝒜 = M − N, G = M⁻¹N, g = M⁻¹β, Σ = M⁻¹(Mᵀ+N)M⁻ᵀ
        assert!((&m - &n - &precision).amax() < 1e-9);
        assert!((&m_inv * &n - &g).amax() < 1e-10);
        assert!((&m_inv * s.beta() - p.offset()).amax() < 1e-10);
        assert!((&m_inv * (m.transpose() + &n) * m_inv.transpose() - &sigma).amax() < 1e-9);
        let _ = id;
    }

    #[test]
    fn rejects_non_convergent() {
        let p = Ar1Proposal::new(
            scalar(1.0),
            DVector::zeros(1),
            SymmetricOperator::identity(1),
        )
        .unwrap();
        assert!(matches!(ar1_to_splitting(&p), Err(Error::NotConvergent { .. })));
        assert!(matches!(symmetric_ar1_to_splitting(&p), Err(Error::NotConvergent { .. })));
    }

    #[test]
    fn symmetric_path_mala_shape() {
        // A = 1, h = 1: G = 1/2, Σ = 1
        let p = Ar1Proposal::new(scalar(0.5), DVector::zeros(1), SymmetricOperator::identity(1)).unwrap();
        let s = symmetric_ar1_to_splitting(&p).unwrap();
        assert_relative_eq!(s.m().get(0, 0), 1.5);
        assert_relative_eq!(s.n().get(0, 0), 0.75);
        assert_relative_eq!(s.precision().matrix().get(0, 0), 0.75);
        // (2/h)(I − (h/4)A) = 1.5, (I − (h/4)A)A = 0.75
        assert!(s.is_symmetric());
    }

    #[test]
    fn symmetric_path_zero_iteration() {
        let sigma = SymmetricOperator::diagonal(DVector::from_vec(vec![2.0, 0.5])).unwrap();
        let p = Ar1Proposal::new(Matrix::zeros(2), DVector::zeros(2), sigma).unwrap();
        let s = symmetric_ar1_to_splitting(&p).unwrap();
        let m = s.m().diagonal_entries().unwrap();
        assert_relative_eq!(m[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(m[1], 2.0, epsilon = 1e-14);
        assert!(s.m().max_abs_diff(s.precision().matrix()) < 1e-14);
    }

    #[test]
    fn symmetric_matches_general_for_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 6;
        let g = DVector::from_fn(d, |_, _| rng.random_range(-0.95..0.95));
        let sig = DVector::from_fn(d, |_, _| rng.random_range(0.2..3.0));
        let off = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let p = Ar1Proposal::new(Matrix::Diagonal(g), off, SymmetricOperator::diagonal(sig).unwrap()).unwrap();
        let a = symmetric_ar1_to_splitting(&p).unwrap();
        let b = ar1_to_splitting(&p).unwrap();
        assert!(a.m().max_abs_diff(b.m()) < 1e-12 * a.m().max_abs().max(1.0) * 10.0);
        assert!(a.n().max_abs_diff(b.n()) < 1e-11);
        assert!((a.beta() - b.beta()).amax() < 1e-11);
    }

    #[test]
    fn rejects_unsymmetrizable() {
        let g = Matrix::from_rows(&[vec![0.2, 0.3], vec![0.0, 0.1]]).unwrap();
        let p = Ar1Proposal::new(g, DVector::zeros(2), SymmetricOperator::identity(2)).unwrap();
        assert!(matches!(symmetric_ar1_to_splitting(&p), Err(Error::NotSymmetrizable { .. })));
    }

    #[test]
    fn trivial_splitting_to_ar1() {
        let a = SymmetricOperator::dense(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let s = MatrixSplitting::new(a.matrix().clone(), Matrix::Dense(DMatrix::zeros(2, 2)), DVector::zeros(2))
            .unwrap();
        let p = splitting_to_ar1(&s).unwrap();
        assert!(p.iteration().max_abs() < 1e-15);
        let a_inv = spd_factorize(&a).unwrap().inverse();
        assert!(p.noise_covariance().matrix().max_abs_diff(&a_inv) < 1e-12);
        let t = proposal_target(&s).unwrap();
        assert_eq!(t.mean.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn random_splitting_round_trip() {
        for seed in 0..5 {
            let p = random_ar1(4, 0.7, 100 + seed);
            let s = ar1_to_splitting(&p).unwrap();
            let q = splitting_to_ar1(&s).unwrap();
            let s2 = ar1_to_splitting(&q).unwrap();
            assert!(s.m().max_abs_diff(s2.m()) < 1e-9 * s.m().max_abs().max(1.0));
            assert!(s.n().max_abs_diff(s2.n()) < 1e-9 * s.n().max_abs().max(1.0));
            assert!((s.beta() - s2.beta()).amax() < 1e-9 * s.beta().amax().max(1.0));
        }
    }

    #[test]
    fn unadjusted_chain_reaches_proposal_target() {
        let p = random_ar1(3, 0.5, 7);
        let s = ar1_to_splitting(&p).unwrap();
        let t = proposal_target(&s).unwrap();
        let cov = spd_factorize(&t.precision).unwrap().inverse().to_dense();
        let factor = s.noise_factor().unwrap();
        let mut rng = RandomStream::new(5, 0);
        let mut x = t.mean.clone();
        let n = 100_000;
        let mut sum = DVector::zeros(3);
        let mut outer = DMatrix::zeros(3, 3);
        for _ in 0..n {
            let xi = rng.normal_vector(3);
            x = s.step_with(&x, &xi, &factor).unwrap();
            sum += &x;
            outer += &x * x.transpose();
        }
        let mean = &sum / n as f64;
        let emp_cov = &outer / n as f64 - &mean * mean.transpose();
        assert!((&mean - &t.mean).norm() <= 0.05 * t.mean.norm().max(cov.diagonal().map(f64::sqrt).norm()));
        assert!((&emp_cov - &cov).norm() <= 0.05 * cov.norm());
    }
}
