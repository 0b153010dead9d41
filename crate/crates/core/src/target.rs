//! Gaussian targets `N(A⁻¹b, A⁻¹)` in precision form, plus the generic
//! log-density contract used by the density-ratio acceptance path.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, spd_factorize, Matrix, SpdFactorization, SymmetricOperator};
use crate::rng::RandomStream;

/// Unnormalized log-density of a target distribution.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &DVector<f64>) -> Result<f64>;

    fn has_gradient(&self) -> bool {
        false
    }

    fn gradient(&self, _x: &DVector<f64>) -> Option<Result<DVector<f64>>> {
        None
    }
}

/// Wraps a closure as a [`LogDensity`]; non-finite values become
/// [`Error::EvaluationFailure`].
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F> FnDensity<F>
where
    F: Fn(&DVector<f64>) -> f64 + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> LogDensity for FnDensity<F>
where
    F: Fn(&DVector<f64>) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let v = (self.f)(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::EvaluationFailure(format!("log-density returned {v}")))
        }
    }
}

/// Gaussian target with precision `A` and shift `b`; mean `m = A⁻¹b`.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    precision: SymmetricOperator,
    shift: DVector<f64>,
    mean: DVector<f64>,
    factor: SpdFactorization,
}

impl GaussianTarget {
    pub fn new(precision: SymmetricOperator, shift: DVector<f64>) -> Result<Self> {
        check_dim(precision.dim(), shift.len())?;
        let factor = spd_factorize(&precision)?;
        let mean = factor.solve(&shift)?;
        let residual = (precision.apply(&mean) - &shift).norm();
        let scale = precision.matrix().frobenius_norm() * mean.norm() + shift.norm();
        if residual > 1e-9 * scale.max(1e-300) {
            return Err(Error::Singular(format!("A·m = b residual {residual:.3e}")));
        }
        Ok(Self {
            precision,
            shift,
            mean,
            factor,
        })
    }

    /// Diagonal precision with the given eigenvalues and shift.
    pub fn diagonal(eigenvalues: Vec<f64>, shift: Option<Vec<f64>>) -> Result<Self> {
        let d = eigenvalues.len();
        let shift = shift.map(DVector::from_vec).unwrap_or_else(|| DVector::zeros(d));
        Self::new(SymmetricOperator::diagonal(DVector::from_vec(eigenvalues))?, shift)
    }

    /// Converts covariance-form input `N(mean, cov)` to precision form.
    pub fn from_covariance(cov: &SymmetricOperator, mean: DVector<f64>) -> Result<Self> {
        check_dim(cov.dim(), mean.len())?;
        let precision = SymmetricOperator::new(spd_factorize(cov)?.inverse())?;
        let shift = precision.apply(&mean);
        Self::new(precision, shift)
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn precision(&self) -> &SymmetricOperator {
        &self.precision
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn factor(&self) -> &SpdFactorization {
        &self.factor
    }

    /// `A⁻¹`.
    pub fn covariance(&self) -> Matrix {
        self.factor.inverse()
    }

    /// `−½ xᵀAx + bᵀx`.
    pub fn log_density_unnorm(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(-0.5 * self.precision.quadratic_form(x) + self.shift.dot(x))
    }

    /// `b − Ax`.
    pub fn grad_log_density(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(&self.shift - self.precision.apply(x))
    }

    /// `m + L⁻ᵀ ξ` for given standard normals `ξ`.
    pub fn sample_from_normals(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.mean + self.factor.solve_lower_transpose(xi)
    }

    /// Exact draw from the target.
    pub fn exact_sample(&self, rng: &mut RandomStream) -> DVector<f64> {
        let xi = rng.normal_vector(self.dim());
        self.sample_from_normals(&xi)
    }
}

impl LogDensity for GaussianTarget {
    fn dim(&self) -> usize {
        GaussianTarget::dim(self)
    }

    fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        self.log_density_unnorm(x)
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, x: &DVector<f64>) -> Option<Result<DVector<f64>>> {
        Some(self.grad_log_density(x))
    }
}

/// Eigenvalue specification for diagonal operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EigenvalueSpec {
    /// `λᵢ = i^κ` for `i = 1..d`; the operator entries are `λᵢ²`.
    Power { kappa: f64, d: usize },
    /// Operator entries given directly.
    Explicit { values: Vec<f64> },
}

impl EigenvalueSpec {
    pub fn dim(&self) -> usize {
        match self {
            EigenvalueSpec::Power { d, .. } => *d,
            EigenvalueSpec::Explicit { values } => values.len(),
        }
    }

    /// Operator diagonal entries.
    pub fn entries(&self) -> Vec<f64> {
        match self {
            EigenvalueSpec::Power { kappa, d } => {
                (1..=*d).map(|i| (i as f64).powf(2.0 * kappa)).collect()
            }
            EigenvalueSpec::Explicit { values } => values.clone(),
        }
    }
}

/// `"zero"` or an explicit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShiftSpec {
    Named(String),
    Values(Vec<f64>),
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec::Named("zero".into())
    }
}

impl ShiftSpec {
    fn build(&self, d: usize) -> Result<DVector<f64>> {
        match self {
            ShiftSpec::Named(s) if s == "zero" => Ok(DVector::zeros(d)),
            ShiftSpec::Named(s) => Err(Error::Config(format!("unknown shift \"{s}\" (expected \"zero\")"))),
            ShiftSpec::Values(v) => {
                check_dim(d, v.len())?;
                Ok(DVector::from_vec(v.clone()))
            }
        }
    }
}

/// JSON target description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Diagonal {
        eigenvalues: EigenvalueSpec,
        #[serde(default)]
        b: ShiftSpec,
    },
    Dense {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(default)]
        b: ShiftSpec,
    },
}

impl TargetSpec {
    pub fn dim(&self) -> usize {
        match self {
            TargetSpec::Diagonal { eigenvalues, .. } => eigenvalues.dim(),
            TargetSpec::Dense { a, .. } => a.len(),
        }
    }

    /// `κ` of a power spectrum, if any.
    pub fn kappa(&self) -> Option<f64> {
        match self {
            TargetSpec::Diagonal {
                eigenvalues: EigenvalueSpec::Power { kappa, .. },
                ..
            } => Some(*kappa),
            _ => None,
        }
    }

    /// Same spectrum family at a different dimension (power spectra only).
    pub fn with_dim(&self, d: usize) -> Result<Self> {
        match self {
            TargetSpec::Diagonal {
                eigenvalues: EigenvalueSpec::Power { kappa, .. },
                b: ShiftSpec::Named(n),
            } => Ok(TargetSpec::Diagonal {
                eigenvalues: EigenvalueSpec::Power { kappa: *kappa, d },
                b: ShiftSpec::Named(n.clone()),
            }),
            _ => Err(Error::Config(
                "dimension sweeps need a power-spectrum diagonal target with a named shift".into(),
            )),
        }
    }

    pub fn operator(&self) -> Result<SymmetricOperator> {
        match self {
            TargetSpec::Diagonal { eigenvalues, .. } => {
                SymmetricOperator::diagonal(DVector::from_vec(eigenvalues.entries()))
            }
            TargetSpec::Dense { a, .. } => SymmetricOperator::new(Matrix::from_rows(a)?),
        }
    }

    pub fn build(&self) -> Result<GaussianTarget> {
        let op = self.operator()?;
        let b = match self {
            TargetSpec::Diagonal { b, .. } | TargetSpec::Dense { b, .. } => b.build(op.dim())?,
        };
        GaussianTarget::new(op, b)
    }
}

/// Dense matrix from nested rows (helper for specs and tests).
pub fn dense_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    Ok(Matrix::from_rows(rows)?.to_dense())
}
