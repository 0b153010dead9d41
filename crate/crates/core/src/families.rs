//! Named proposal families: MALA and ULA, the θ-discretised preconditioned
//! Langevin family, and leapfrog HMC.
//!
//! Every constructor returns both the sampling form ([`Ar1Proposal`]) and the
//! splitting form ([`MatrixSplitting`]). Diagonal targets with diagonal
//! preconditioners stay diagonal throughout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, spectral_decompose, tolerances, Matrix, SymmetricOperator};
use crate::sampler::{run_unadjusted, ChainConfig, ChainResult};
use crate::splitting::{Ar1Proposal, MatrixSplitting};
use crate::rng::RandomStream;
use crate::target::GaussianTarget;

/// A proposal in both AR(1) and splitting form.
#[derive(Debug, Clone)]
pub struct SplitProposal {
    pub ar1: Ar1Proposal,
    pub splitting: MatrixSplitting,
}

impl SplitProposal {
    pub fn dim(&self) -> usize {
        self.ar1.dim()
    }
}

/// Step `h`, implicitness `θ ∈ [0, 1]` and preconditioner `V` (identity if `None`).
#[derive(Debug, Clone)]
pub struct LangevinConfig {
    pub h: f64,
    pub theta: f64,
    pub preconditioner: Option<SymmetricOperator>,
}

impl LangevinConfig {
    pub fn new(h: f64, theta: f64) -> Result<Self> {
        let cfg = Self {
            h,
            theta,
            preconditioner: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_preconditioner(mut self, v: SymmetricOperator) -> Self {
        self.preconditioner = Some(v);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidParameter(format!("step h = {} must be positive", self.h)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidParameter(format!("theta = {} outside [0, 1]", self.theta)));
        }
        Ok(())
    }
}

/// Leapfrog step `h`, number of steps `L` and preconditioner `V`; momenta
/// are drawn from `N(0, V⁻¹)`.
#[derive(Debug, Clone)]
pub struct HmcConfig {
    pub h: f64,
    pub steps: usize,
    pub preconditioner: Option<SymmetricOperator>,
}

impl HmcConfig {
    pub fn new(h: f64, steps: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("step h = {h} must be positive")));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("L must be at least 1".into()));
        }
        Ok(Self {
            h,
            steps,
            preconditioner: None,
        })
    }

    pub fn with_preconditioner(mut self, v: SymmetricOperator) -> Self {
        self.preconditioner = Some(v);
        self
    }

    /// `T′ = L·h`.
    pub fn integration_time(&self) -> f64 {
        self.steps as f64 * self.h
    }

    /// Requires `h²·λ_max(VA) < 4`.
    pub fn check_stability(&self, target: &GaussianTarget) -> Result<()> {
        let lambdas = preconditioned_eigenvalues(target.precision(), self.preconditioner.as_ref())?;
        let max = lambdas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let h2 = self.h * self.h * max;
        if h2 >= 4.0 {
            return Err(Error::Unstable { h2_lambda_max: h2 });
        }
        Ok(())
    }
}

/// Eigenvalues of `VA` (equivalently of `V^½AV^½`), ascending for dense
/// operators and in coordinate order for diagonal ones.
pub fn preconditioned_eigenvalues(a: &SymmetricOperator, v: Option<&SymmetricOperator>) -> Result<Vec<f64>> {
    match (a.matrix(), v.map(|v| v.matrix())) {
        (Matrix::Diagonal(a), None) => Ok(a.iter().copied().collect()),
        (Matrix::Diagonal(a), Some(Matrix::Diagonal(v))) => {
            check_dim(a.len(), v.len())?;
            Ok(a.iter().zip(v.iter()).map(|(x, y)| x * y).collect())
        }
        _ => {
            let (b, _, _) = transformed_precision(a, v)?;
            Ok(spectral_decompose(&b)?.eigenvalues.iter().copied().collect())
        }
    }
}

/// `(B, V^½, V^{-½})` with `B = V^½AV^½`.
fn transformed_precision(
    a: &SymmetricOperator,
    v: Option<&SymmetricOperator>,
) -> Result<(SymmetricOperator, Matrix, Matrix)> {
    let d = a.dim();
    let (root, inv_root) = match v {
        None => (Matrix::identity(d), Matrix::identity(d)),
        Some(v) => {
            check_dim(d, v.dim())?;
            let spec = spectral_decompose(v)?;
            if let Some(k) = spec.eigenvalues.iter().position(|&l| l <= 0.0) {
                return Err(Error::NotPositiveDefinite {
                    index: k,
                    pivot: spec.eigenvalues[k],
                });
            }
            (spec.map(f64::sqrt), spec.map(|l| 1.0 / l.sqrt()))
        }
    };
    let b = SymmetricOperator::new(root.matmul(a.matrix()).matmul(&root).symmetrized())?;
    Ok((b, root, inv_root))
}

fn preconditioner_matrix(v: Option<&SymmetricOperator>, d: usize) -> Matrix {
    v.map(|v| v.matrix().clone()).unwrap_or_else(|| Matrix::identity(d))
}

/// MALA: `G = I − (h/2)A`, `g = (h/2)b`, `Σ = hI`, with splitting
/// `M = (2/h)(I − (h/4)A)`, `N = M(I − (h/2)A)`, `β = (I − (h/4)A)b`.
///
/// The splitting is convergent iff `h·λ_max(A) < 4`; see [`mala_convergent`].
pub fn mala(target: &GaussianTarget, h: f64) -> Result<SplitProposal> {
    LangevinConfig::new(h, 0.0)?;
    let d = target.dim();
    let a = target.precision().matrix();
    let g = a.scale(-0.5 * h).shift(1.0);
    let offset = target.shift() * (0.5 * h);
    let ar1 = Ar1Proposal::new(g.clone(), offset, SymmetricOperator::diagonal(DVector::from_element(d, h))?)?;
    let quarter = a.scale(-0.25 * h).shift(1.0);
    let m = quarter.scale(2.0 / h);
    let n = m.matmul(&g).symmetrized();
    let beta = quarter.apply(target.shift());
    let splitting = MatrixSplitting::new(m, n, beta)?;
    Ok(SplitProposal { ar1, splitting })
}

/// [`mala`], failing with `StepTooLarge` unless `h·λ_max(A) < 4`.
pub fn mala_convergent(target: &GaussianTarget, h: f64) -> Result<SplitProposal> {
    let p = mala(target, h)?;
    if !p.splitting.is_convergent() {
        let lmax = preconditioned_eigenvalues(target.precision(), None)?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::StepTooLarge { h_lambda_max: h * lmax });
    }
    Ok(p)
}

/// Unadjusted Langevin: the MALA AR(1) chain without accept/reject. Its
/// equilibrium is `N(A⁻¹b, 𝒜⁻¹)` with `𝒜 = (I − (h/4)A)A`.
pub fn ula_chain(
    target: &GaussianTarget,
    h: f64,
    cfg: &ChainConfig,
    rng: &mut RandomStream,
) -> Result<ChainResult> {
    let p = mala_convergent(target, h)?;
    run_unadjusted(target, &p, cfg, rng)
}

/// θ-discretised preconditioned Langevin proposal.
///
/// With `P = (I + (θh/2)VA)⁻¹`: `G = P(I − ((1−θ)h/2)VA)`, `g = (h/2)PVb`,
/// `Σ = P(hV)Pᵀ`. The split form uses `B = V^½AV^½` and
/// `W = I + (θ−½)(h/2)B`, so that `𝒜 = A + (θ−½)(h/2)AVA`.
pub fn theta_langevin(target: &GaussianTarget, cfg: &LangevinConfig) -> Result<SplitProposal> {
    cfg.validate()?;
    let (h, theta) = (cfg.h, cfg.theta);
    let d = target.dim();
    let a = target.precision();
    let v = preconditioner_matrix(cfg.preconditioner.as_ref(), d);
    let b = target.shift();

    let va = v.matmul(a.matrix());
    let p = va.scale(0.5 * theta * h).shift(1.0).inverse()?;
    let g = p.matmul(&va.scale(-0.5 * (1.0 - theta) * h).shift(1.0));
    let offset = p.apply(&v.apply(b)) * (0.5 * h);
    let sigma = p.matmul(&v.scale(h)).matmul(&p.transpose()).symmetrized();
    let ar1 = Ar1Proposal::new(g, offset, SymmetricOperator::new(sigma)?)?;

    let (bop, _, inv_root) = transformed_precision(a, cfg.preconditioner.as_ref())?;
    let bm = bop.matrix();
    let k = (theta - 0.5) * 0.5 * h;
    let w = bm.scale(k).shift(1.0);
    let left = inv_root.matmul(&w).scale(2.0 / h);
    let m = left.matmul(&bm.scale(0.5 * theta * h).shift(1.0)).matmul(&inv_root).symmetrized();
    let n = left
        .matmul(&bm.scale(-0.5 * (1.0 - theta) * h).shift(1.0))
        .matmul(&inv_root)
        .symmetrized();
    let w_tilde = a.matrix().matmul(&v).scale(k).shift(1.0);
    let beta = w_tilde.apply(b);
    let splitting = MatrixSplitting::new(m, n, beta)?;
    Ok(SplitProposal { ar1, splitting })
}

/// A 2×2 block operator on `(q, p)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    pub b11: Matrix,
    pub b12: Matrix,
    pub b21: Matrix,
    pub b22: Matrix,
}

impl BlockMatrix {
    pub fn identity(d: usize) -> Self {
        Self {
            b11: Matrix::identity(d),
            b12: Matrix::zeros(d),
            b21: Matrix::zeros(d),
            b22: Matrix::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.b11.dim()
    }

    pub fn matmul(&self, o: &BlockMatrix) -> BlockMatrix {
        BlockMatrix {
            b11: &self.b11.matmul(&o.b11) + &self.b12.matmul(&o.b21),
            b12: &self.b11.matmul(&o.b12) + &self.b12.matmul(&o.b22),
            b21: &self.b21.matmul(&o.b11) + &self.b22.matmul(&o.b21),
            b22: &self.b21.matmul(&o.b12) + &self.b22.matmul(&o.b22),
        }
    }

    pub fn pow(&self, k: usize) -> BlockMatrix {
        let mut out = BlockMatrix::identity(self.dim());
        for _ in 0..k {
            out = self.matmul(&out);
        }
        out
    }

    pub fn apply(&self, q: &DVector<f64>, p: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            self.b11.apply(q) + self.b12.apply(p),
            self.b21.apply(q) + self.b22.apply(p),
        )
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(2 * d, 2 * d);
        out.view_mut((0, 0), (d, d)).copy_from(&self.b11.to_dense());
        out.view_mut((0, d), (d, d)).copy_from(&self.b12.to_dense());
        out.view_mut((d, 0), (d, d)).copy_from(&self.b21.to_dense());
        out.view_mut((d, d), (d, d)).copy_from(&self.b22.to_dense());
        out
    }
}

/// Leapfrog transfer matrices: one step maps `z ↦ Kz + J(0, (h/2)b)`.
#[derive(Debug, Clone)]
pub struct HmcTransfer {
    pub k: BlockMatrix,
    pub j: BlockMatrix,
    /// `θᵢ = −arccos(1 − h²λᵢ²/2)` for the eigenvalues `λᵢ²` of `VA`.
    pub angles: Vec<f64>,
    pub steps: usize,
    pub h: f64,
}

impl HmcTransfer {
    pub fn k_power(&self) -> BlockMatrix {
        self.k.pow(self.steps)
    }

    /// `Σ_{l<L} Kˡ J c` with `c = (0, (h/2)b)`, by the recursion `v ← Kv + Jc`.
    pub fn accumulated_offset(&self, b: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let d = b.len();
        let c = b * (0.5 * self.h);
        let (jc1, jc2) = self.j.apply(&DVector::zeros(d), &c);
        let (mut v1, mut v2) = (DVector::zeros(d), DVector::zeros(d));
        for _ in 0..self.steps {
            let (n1, n2) = self.k.apply(&v1, &v2);
            v1 = n1 + &jc1;
            v2 = n2 + &jc2;
        }
        (v1, v2)
    }
}

fn hmc_angles(h: f64, lambdas: &[f64]) -> Result<Vec<f64>> {
    let max = lambdas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if h * h * max >= 4.0 {
        return Err(Error::Unstable {
            h2_lambda_max: h * h * max,
        });
    }
    Ok(lambdas.iter().map(|&l| -(1.0 - 0.5 * h * h * l).acos()).collect())
}

/// Builds `K` and `J` for the leapfrog integrator of
/// `H(q, p) = ½qᵀAq − bᵀq + ½pᵀVp`.
pub fn hmc_transfer(target: &GaussianTarget, cfg: &HmcConfig) -> Result<HmcTransfer> {
    let lambdas = preconditioned_eigenvalues(target.precision(), cfg.preconditioner.as_ref())?;
    let angles = hmc_angles(cfg.h, &lambdas)?;
    let h = cfg.h;
    let d = target.dim();
    let a = target.precision().matrix();
    let v = preconditioner_matrix(cfg.preconditioner.as_ref(), d);
    let va = v.matmul(a);
    let av = a.matmul(&v);
    let ava = av.matmul(a);
    let k = BlockMatrix {
        b11: va.scale(-0.5 * h * h).shift(1.0),
        b12: v.scale(h),
        b21: &a.scale(-h) + &ava.scale(0.25 * h * h * h),
        b22: av.scale(-0.5 * h * h).shift(1.0),
    };
    let j = BlockMatrix {
        b11: Matrix::identity(d).scale(2.0),
        b12: v.scale(h),
        b21: a.scale(-0.5 * h),
        b22: av.scale(-0.5 * h * h).shift(2.0),
    };
    Ok(HmcTransfer {
        k,
        j,
        angles,
        steps: cfg.steps,
        h,
    })
}

/// `Gᵢ = cos(Lθᵢ)` for each eigenvalue `λᵢ²` of `VA`.
pub fn hmc_mode_eigenvalues(cfg: &HmcConfig, lambdas: &[f64]) -> Result<Vec<f64>> {
    let angles = hmc_angles(cfg.h, lambdas)?;
    Ok(angles.iter().map(|t| (cfg.steps as f64 * t).cos()).collect())
}

/// HMC proposal: `G = (Kᴸ)₁₁`, `g` the position block of the accumulated
/// offset, `Σ = (Kᴸ)₁₂V⁻¹(Kᴸ)₁₂ᵀ`; splitting `M = Σ⁻¹(I + G)`, `N = MG`.
pub fn hmc_proposal(target: &GaussianTarget, cfg: &HmcConfig) -> Result<SplitProposal> {
    let transfer = hmc_transfer(target, cfg)?;
    let l = cfg.steps as f64;
    let min_sin = transfer
        .angles
        .iter()
        .map(|t| (l * t).sin().abs())
        .fold(f64::INFINITY, f64::min);
    if min_sin < tolerances().resonance {
        return Err(Error::Singular(format!(
            "resonant mode: |sin(Lθ)| = {min_sin:.3e}"
        )));
    }
    if min_sin < 1e-4 {
        log::warn!("near-resonant HMC mode, |sin(Lθ)| = {min_sin:.3e}; Σ is ill-conditioned");
    }
    let d = target.dim();
    let kl = transfer.k_power();
    let (offset, _) = transfer.accumulated_offset(target.shift());
    let v_inv = preconditioner_matrix(cfg.preconditioner.as_ref(), d).inverse()?;
    let sigma = kl.b12.matmul(&v_inv).matmul(&kl.b12.transpose()).symmetrized();
    let g = kl.b11;
    let ar1 = Ar1Proposal::new(g.clone(), offset, SymmetricOperator::new(sigma)?)?;
    let sigma_inv = ar1.noise_factor().inverse();
    let m = sigma_inv.matmul(&g.shift(1.0)).symmetrized();
    let n = m.matmul(&g).symmetrized();
    let beta = m.apply(ar1.offset());
    let splitting = MatrixSplitting::new(m, n, beta)?;
    Ok(SplitProposal { ar1, splitting })
}

/// `L` explicit leapfrog steps from `(q, p)`.
pub fn leapfrog(
    target: &GaussianTarget,
    cfg: &HmcConfig,
    q: &DVector<f64>,
    p: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let h = cfg.h;
    let v = preconditioner_matrix(cfg.preconditioner.as_ref(), target.dim());
    let force = |q: &DVector<f64>| target.shift() - target.precision().apply(q);
    let (mut q, mut p) = (q.clone(), p.clone());
    for _ in 0..cfg.steps {
        p += force(&q) * (0.5 * h);
        q += v.apply(&p) * h;
        p += force(&q) * (0.5 * h);
    }
    (q, p)
}

/// `½qᵀAq − bᵀq + ½pᵀVp`.
pub fn hamiltonian(target: &GaussianTarget, cfg: &HmcConfig, q: &DVector<f64>, p: &DVector<f64>) -> f64 {
    let v = preconditioner_matrix(cfg.preconditioner.as_ref(), target.dim());
    0.5 * target.precision().quadratic_form(q) - target.shift().dot(q) + 0.5 * p.dot(&v.apply(p))
}

/// Proposal settings as they appear in experiment configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Mala,
    ThetaLangevin,
    Hmc,
    Ula,
}
