//! Closed-form predictions for MH with splitting proposals whose `M`, `N`
//! are functions of the target precision.
//!
//! Everything is evaluated per eigenmode of `A` and summed at finite `d`;
//! the `d → ∞` limits are reported separately by [`asymptotic_limits`].

use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::families::HmcConfig;
use crate::linalg::{spd_factorize, spectral_decompose, tolerances, Matrix, SymmetricOperator};
use crate::splitting::MatrixSplitting;
use crate::target::GaussianTarget;

/// Above this dimension the JSON report omits per-mode terms.
pub const REPORT_PER_MODE_MAX_DIM: usize = 64;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `log Φ(x)`, accurate far into the lower tail.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > -5.0 {
        return normal_cdf(x).ln();
    }
    // Φ(x) = φ(x) / (|x| + 1/(|x| + 2/(|x| + 3/(…)))), evaluated bottom-up
    let z = -x;
    let mut cf = z;
    for k in (1..=60).rev() {
        cf = z + k as f64 / cf;
    }
    -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln() - cf.ln()
}

/// Inverse standard normal CDF by bisection on [`normal_cdf`].
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level {p} outside (0, 1)");
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `E[1 ∧ e^X]` for `X ~ N(μ, σ²)`:
/// `Φ(μ/σ) + e^{μ+σ²/2} Φ(−σ − μ/σ)`, the second term formed in log space.
pub fn expected_alpha_gaussian(mu: f64, sigma: f64) -> f64 {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    if sigma < 1e-12 {
        return mu.exp().min(1.0);
    }
    let first = normal_cdf(mu / sigma);
    let log_second = mu + 0.5 * sigma * sigma + log_normal_cdf(-sigma - mu / sigma);
    (first + log_second.exp()).clamp(0.0, 1.0)
}

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Scalars describing one eigenmode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeParams {
    /// `λᵢ²`, eigenvalue of `A`.
    pub lambda2: f64,
    /// `λ̃ᵢ²`, eigenvalue of `𝒜`.
    pub lambda2_tilde: f64,
    /// `Gᵢ`, eigenvalue of `M⁻¹N`.
    pub g: f64,
    /// `mᵢ`, component of `A⁻¹b`.
    pub mean: f64,
    /// `m̃ᵢ`, component of `𝒜⁻¹β`.
    pub mean_tilde: f64,
}

impl ModeParams {
    /// `g̃ = 1 − G`.
    pub fn g_tilde(&self) -> f64 {
        1.0 - self.g
    }

    /// `g = 1 − G²`.
    pub fn g_sq(&self) -> f64 {
        1.0 - self.g * self.g
    }

    pub fn r(&self) -> f64 {
        (self.lambda2 - self.lambda2_tilde) / self.lambda2
    }

    pub fn r_tilde(&self) -> f64 {
        (self.lambda2 - self.lambda2_tilde) / self.lambda2_tilde
    }

    pub fn r_hat(&self) -> f64 {
        self.mean - self.mean_tilde
    }
}

/// Per-mode model of a splitting that is simultaneously diagonalisable with `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSplittingModel {
    modes: Vec<ModeParams>,
}

impl SpectralSplittingModel {
    pub fn new(modes: Vec<ModeParams>) -> Result<Self> {
        for (i, m) in modes.iter().enumerate() {
            if !(m.lambda2 > 0.0) {
                return Err(Error::InvalidParameter(format!("mode {i}: λ² = {} must be positive", m.lambda2)));
            }
            if !(m.lambda2_tilde > 0.0) {
                return Err(Error::NegativeRadicand { mode: i });
            }
        }
        Ok(Self { modes })
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[ModeParams] {
        &self.modes
    }

    pub fn mode(&self, i: usize) -> &ModeParams {
        &self.modes[i]
    }
}

/// Builds the model from a dense or diagonal target and splitting.
///
/// Diagonal inputs keep coordinate order; otherwise modes are in ascending
/// order of `λᵢ²`. A shared eigenbasis is found by decomposing a generic
/// combination of `A`, `M` and `N`, which also separates degenerate
/// eigenspaces of `A`.
pub fn model_from_dense(target: &GaussianTarget, s: &MatrixSplitting) -> Result<SpectralSplittingModel> {
    let a = target.precision().matrix();
    let tol = tolerances().commute;
    let commutator = a.commutator_norm(s.m()).max(a.commutator_norm(s.n()));
    if commutator > tol {
        return Err(Error::NotSimultaneouslyDiagonalizable { commutator });
    }
    if !s.is_symmetric() {
        return Err(Error::NotSymmetricSplitting);
    }
    let mean = target.mean();
    let mean_tilde = spd_factorize(s.precision())?.solve(s.beta())?;

    if let (Matrix::Diagonal(av), Matrix::Diagonal(mv), Matrix::Diagonal(nv)) = (a, s.m(), s.n()) {
        let modes = (0..av.len())
            .map(|i| ModeParams {
                lambda2: av[i],
                lambda2_tilde: mv[i] - nv[i],
                g: nv[i] / mv[i],
                mean: mean[i],
                mean_tilde: mean_tilde[i],
            })
            .collect();
        return SpectralSplittingModel::new(modes);
    }

    let scale = |m: &Matrix| m.frobenius_norm().max(f64::MIN_POSITIVE);
    let an = scale(a);
    let mix = a.to_dense()
        + s.m().to_dense() * (std::f64::consts::FRAC_1_PI * an / scale(s.m()))
        + s.n().to_dense() * (std::f64::consts::E.recip() * 0.5 * an / scale(s.n()));
    let spec = spectral_decompose(&SymmetricOperator::dense(mix)?)?;
    let q = spec.eigenvector_matrix();
    let proj = |m: &Matrix| q.transpose() * m.to_dense() * &q;
    let (qa, qm, qn) = (proj(a), proj(s.m()), proj(s.n()));
    let offdiag = |x: &nalgebra::DMatrix<f64>| {
        let mut y = x.clone();
        y.fill_diagonal(0.0);
        y.amax() / x.amax().max(f64::MIN_POSITIVE)
    };
    let leak = offdiag(&qa).max(offdiag(&qm)).max(offdiag(&qn));
    if leak > tol.max(1e-8) * 10.0 {
        return Err(Error::NotSimultaneouslyDiagonalizable { commutator: leak });
    }
    let cm = q.tr_mul(mean);
    let cmt = q.tr_mul(&mean_tilde);
    let mut modes: Vec<ModeParams> = (0..q.ncols())
        .map(|i| ModeParams {
            lambda2: qa[(i, i)],
            lambda2_tilde: qm[(i, i)] - qn[(i, i)],
            g: qn[(i, i)] / qm[(i, i)],
            mean: cm[i],
            mean_tilde: cmt[i],
        })
        .collect();
    modes.sort_by(|x, y| x.lambda2.total_cmp(&y.lambda2));
    SpectralSplittingModel::new(modes)
}

/// Scalar per-mode families (all have `r̂ᵢ = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilyModel {
    Mala { h: f64 },
    ThetaLangevin { theta: f64, h: f64 },
    Hmc { h: f64, steps: usize },
}

/// Model from eigenvalues `λᵢ²` of `V^½AV^½` and target means `mᵢ`
/// (zero if `None`); the proposal-target mean equals the target mean.
pub fn model_from_family(lambdas: &[f64], means: Option<&[f64]>, family: FamilyModel) -> Result<SpectralSplittingModel> {
    if let Some(m) = means {
        crate::linalg::check_dim(lambdas.len(), m.len())?;
    }
    let mean_of = |i: usize| means.map_or(0.0, |m| m[i]);
    let mut modes = Vec::with_capacity(lambdas.len());
    match family {
        FamilyModel::Mala { h } => return model_from_family(lambdas, means, FamilyModel::ThetaLangevin { theta: 0.0, h }),
        FamilyModel::ThetaLangevin { theta, h } => {
            if !(h > 0.0) || !(0.0..=1.0).contains(&theta) {
                return Err(Error::InvalidParameter(format!("theta = {theta}, h = {h}")));
            }
            let rho = 0.5 * (theta - 0.5);
            for (i, &l2) in lambdas.iter().enumerate() {
                let t = h * l2;
                let scale = 1.0 + rho * t;
                if scale <= 0.0 {
                    return Err(Error::StepTooLarge { h_lambda_max: t });
                }
                modes.push(ModeParams {
                    lambda2: l2,
                    lambda2_tilde: scale * l2,
                    g: 1.0 - 0.5 * t / (1.0 + 0.5 * theta * t),
                    mean: mean_of(i),
                    mean_tilde: mean_of(i),
                });
            }
        }
        FamilyModel::Hmc { h, steps } => {
            let cfg = HmcConfig::new(h, steps)?;
            let g = crate::families::hmc_mode_eigenvalues(&cfg, lambdas)?;
            for (i, &l2) in lambdas.iter().enumerate() {
                let t = h * h * l2;
                modes.push(ModeParams {
                    lambda2: l2,
                    lambda2_tilde: l2 * (1.0 - 0.25 * t),
                    g: g[i],
                    mean: mean_of(i),
                    mean_tilde: mean_of(i),
                });
            }
        }
    }
    SpectralSplittingModel::new(modes)
}

/// `(T₀ᵢ, …, T₅ᵢ)`.
pub fn t_terms(model: &SpectralSplittingModel, i: usize) -> Result<[f64; 6]> {
    mode_terms(model.mode(i), i)
}

fn mode_terms(m: &ModeParams, i: usize) -> Result<[f64; 6]> {
    let (g, gt) = (m.g_sq(), m.g_tilde());
    let (r, rt, rh) = (m.r(), m.r_tilde(), m.r_hat());
    if g < 0.0 || 1.0 + rt < 0.0 {
        return Err(Error::NegativeRadicand { mode: i });
    }
    let lambda = m.lambda2.sqrt();
    let root = g.sqrt() * (1.0 + rt).sqrt();
    Ok([
        rh * rh * m.lambda2 * (0.5 * r * g - gt),
        rh * lambda * (r * g - gt),
        rh * lambda * root * (1.0 - r * m.g),
        0.5 * r * g,
        -0.5 * r * g * (1.0 + rt),
        -r * m.g * root,
    ])
}

/// `(μᵢ, σᵢ²)` from the six terms.
pub fn mode_moments(t: &[f64; 6]) -> (f64, f64) {
    (
        t[0] + t[3] + t[4],
        t[1] * t[1] + t[2] * t[2] + 2.0 * t[3] * t[3] + 2.0 * t[4] * t[4] + t[5] * t[5],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcceptancePrediction {
    pub mu: f64,
    pub sigma2: f64,
    pub acceptance: f64,
    /// `Σ|T_j|^{2+δ} / (ΣT_j²)^{1+δ/2}` for `j = 1..5`.
    pub lyapunov: [f64; 5],
    pub delta: f64,
    #[serde(skip)]
    pub terms: Vec<[f64; 6]>,
}

impl AcceptancePrediction {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// JSON report; per-mode terms only for `d ≤ 64`.
    pub fn report(&self) -> Value {
        let mut v = json!({
            "mu": self.mu,
            "sigma2": self.sigma2,
            "acceptance": self.acceptance,
            "lyapunov": self.lyapunov,
            "delta": self.delta,
        });
        if self.terms.len() <= REPORT_PER_MODE_MAX_DIM {
            v["per_mode"] = self
                .terms
                .iter()
                .enumerate()
                .map(|(i, t)| json!({ "i": i, "T": t }))
                .collect();
        }
        v
    }
}

/// Finite-d acceptance prediction with Lyapunov ratios at exponent `δ`.
pub fn predict_acceptance(model: &SpectralSplittingModel, delta: f64) -> Result<AcceptancePrediction> {
    let mut terms = Vec::with_capacity(model.dim());
    let (mut mu, mut sigma2) = (KahanSum::default(), KahanSum::default());
    let mut pow = [KahanSum::default(); 5];
    let mut sq = [KahanSum::default(); 5];
    for (i, m) in model.modes().iter().enumerate() {
        let t = mode_terms(m, i)?;
        let (mi, si) = mode_moments(&t);
        mu.add(mi);
        sigma2.add(si);
        for j in 0..5 {
            let v = t[j + 1].abs();
            pow[j].add(v.powf(2.0 + delta));
            sq[j].add(v * v);
        }
        terms.push(t);
    }
    let mut lyapunov = [0.0; 5];
    for j in 0..5 {
        let den = sq[j].value().powf(1.0 + 0.5 * delta);
        lyapunov[j] = if den > 0.0 { pow[j].value() / den } else { 0.0 };
    }
    let sigma2 = sigma2.value().max(0.0);
    let mu = mu.value();
    if lyapunov.iter().any(|&r| r > 0.5) {
        log::debug!("large Lyapunov ratio {lyapunov:?}; the Gaussian approximation of Z is doubtful");
    }
    Ok(AcceptancePrediction {
        mu,
        sigma2,
        acceptance: expected_alpha_gaussian(mu, sigma2.sqrt()),
        lyapunov,
        delta,
        terms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpPrediction {
    pub mode: usize,
    pub u1: f64,
    pub u2: f64,
    /// Bound on `|U₃|`.
    pub u3_bound: f64,
    pub mu_minus: f64,
    pub sigma2_minus: f64,
}

impl JumpPrediction {
    /// `U₁U₂`.
    pub fn esjd(&self) -> f64 {
        self.u1 * self.u2
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.esjd() - self.u3_bound, self.esjd() + self.u3_bound)
    }
}

/// Expected squared jump along mode `i` with exact leave-one-out sums.
pub fn predict_jump(model: &SpectralSplittingModel, i: usize) -> Result<JumpPrediction> {
    if model.dim() < 2 {
        return Err(Error::InvalidParameter("jump prediction needs d ≥ 2".into()));
    }
    if i >= model.dim() {
        return Err(Error::InvalidParameter(format!("mode {i} out of range")));
    }
    let (mut mu, mut s2) = (KahanSum::default(), KahanSum::default());
    let mut own = (0.0, 0.0);
    for (j, m) in model.modes().iter().enumerate() {
        let (mj, sj) = mode_moments(&mode_terms(m, j)?);
        if j == i {
            own = (mj, sj);
        } else {
            mu.add(mj);
            s2.add(sj);
        }
    }
    let m = model.mode(i);
    let (g, gt, rh) = (m.g_sq(), m.g_tilde(), m.r_hat());
    let (l2, lt2) = (m.lambda2, m.lambda2_tilde);
    let u1 = gt * gt * rh * rh + gt * gt / l2 + g / lt2;
    let sigma2_minus = s2.value().max(0.0);
    let u2 = expected_alpha_gaussian(mu.value(), sigma2_minus.sqrt());
    let (gt2, gt4, rh2) = (gt * gt, gt.powi(4), rh * rh);
    let fourth = gt4 * rh2 * rh2
        + 3.0 * gt4 / (l2 * l2)
        + 3.0 * g * g / (lt2 * lt2)
        + 6.0 * gt4 * rh2 / l2
        + 6.0 * gt2 * g * rh2 / lt2
        + 6.0 * gt2 * g / (l2 * lt2);
    let u3_bound = (own.1 + own.0 * own.0).sqrt() * fourth.sqrt();
    Ok(JumpPrediction {
        mode: i,
        u1,
        u2,
        u3_bound,
        mu_minus: mu.value(),
        sigma2_minus,
    })
}

/// `(1/d^{1+6κ}) Σ λᵢ⁶` from the eigenvalues `λᵢ²`.
pub fn tau(lambdas: &[f64], kappa: f64) -> f64 {
    let mut s = KahanSum::default();
    for &l2 in lambdas {
        s.add(l2 * l2 * l2);
    }
    s.value() / (lambdas.len() as f64).powf(1.0 + 6.0 * kappa)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LimitFamily {
    Mala,
    ThetaLangevin { theta: f64 },
    Hmc,
}

/// `d → ∞` limits under the optimal step-size scalings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticLimits {
    pub family: LimitFamily,
    pub l: f64,
    pub kappa: f64,
    pub tau: f64,
    /// Step-size exponent: `h = l²d^{−r}` (Langevin) or `h = l·d^{−r}` (HMC).
    pub r: f64,
    pub acceptance: f64,
}

impl AsymptoticLimits {
    /// Step size at dimension `d`.
    pub fn step(&self, d: usize) -> f64 {
        let scale = (d as f64).powf(-self.r);
        match self.family {
            LimitFamily::Hmc => self.l * scale,
            _ => self.l * self.l * scale,
        }
    }

    /// Limit of the squared jump along a mode. Langevin families give
    /// `h × acceptance`; HMC gives `4(1 − cos(λT′))/λ² · Φ(·)` and needs the
    /// integration time `T′ = Lh`.
    pub fn jump(&self, d: usize, lambda2: f64, t_prime: Option<f64>) -> f64 {
        match self.family {
            LimitFamily::Hmc => {
                let t = t_prime.expect("HMC jump limit needs T′");
                let lambda = lambda2.sqrt();
                4.0 * (1.0 - (lambda * t).cos()) / lambda2 * (0.5 * self.acceptance)
            }
            _ => self.step(d) * self.acceptance,
        }
    }
}

pub fn asymptotic_limits(family: LimitFamily, l: f64, kappa: f64, tau: f64) -> AsymptoticLimits {
    let (r, acceptance) = match family {
        LimitFamily::Mala => (1.0 / 3.0 + 2.0 * kappa, 2.0 * normal_cdf(-l.powi(3) * tau.sqrt() / 8.0)),
        LimitFamily::ThetaLangevin { theta } => (
            1.0 / 3.0 + 2.0 * kappa,
            2.0 * normal_cdf(-l.powi(3) * (theta - 0.5).abs() * tau.sqrt() / 4.0),
        ),
        LimitFamily::Hmc => (
            0.25 + kappa,
            2.0 * normal_cdf(-l * l / (8.0 * 2f64.sqrt() * (1.0 + 4.0 * kappa).sqrt())),
        ),
    };
    AsymptoticLimits {
        family,
        l,
        kappa,
        tau,
        r,
        acceptance,
    }
}

/// The `l` at which the HMC acceptance limit equals `acceptance`.
pub fn hmc_l_for_acceptance(acceptance: f64, kappa: f64) -> f64 {
    let z = -normal_quantile(0.5 * acceptance);
    (z * 8.0 * 2f64.sqrt() * (1.0 + 4.0 * kappa).sqrt()).sqrt()
}

/// HMC acceptance limit for `κ = 0` at a fixed integration time `T′`:
/// `2Φ(−l²|sin T′|/8)`.
///
/// With all `λᵢ = 1` every mode shares the phase `T′`, so `sin²(T′)` does
/// not average to ½ and [`asymptotic_limits`] is reached only when
/// `sin²(T′) = ½`.
pub fn hmc_fixed_phase_acceptance(l: f64, t_prime: f64) -> f64 {
    2.0 * normal_cdf(-l * l * t_prime.sin().abs() / 8.0)
}

/// Precision eigenvalues `λᵢ² = i^{2κ}`, `i = 1..d`.
pub fn power_eigenvalues(d: usize, kappa: f64) -> Vec<f64> {
    (1..=d).map(|i| (i as f64).powf(2.0 * kappa)).collect()
}

/// Unit eigenvectors of `A` in ascending eigenvalue order, matching the mode
/// order of [`model_from_dense`] for dense targets without degeneracies.
pub fn eigen_directions(target: &GaussianTarget) -> Result<Vec<DVector<f64>>> {
    let spec = spectral_decompose(target.precision())?;
    Ok((0..spec.dim()).map(|k| spec.eigenvector(k)).collect())
}
