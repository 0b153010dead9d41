//! Empirical estimators compared against the spectral predictions.

use std::io::Write;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sampler::{ChainResult, MomentAccumulator};
use crate::target::GaussianTarget;

/// Shortest trace accepted by [`iact`].
pub const IACT_MIN_LEN: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EsjdEstimate {
    pub label: String,
    pub esjd: f64,
    /// `sd/√n` of the squared jumps; autocorrelation is ignored.
    pub se: f64,
    pub n: usize,
}

/// Mean squared jump of `wᵀx` over retained steps (rejections count as 0).
pub fn esjd(result: &ChainResult, label: &str) -> Result<EsjdEstimate> {
    let s = result.direction(label)?;
    let se = if s.jumps.n >= 2 { s.jumps.standard_error() } else { 0.0 };
    Ok(EsjdEstimate {
        label: label.to_string(),
        esjd: s.esjd(),
        se,
        n: s.n_jumps(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lag1Estimate {
    pub label: String,
    /// `γ₁/γ₀` from the streamed products.
    pub direct: f64,
    /// `1 − ESJD/(2 Var)`.
    pub identity: f64,
    /// `√((1 − ρ²)/n)`.
    pub se: f64,
    pub agree: bool,
}

/// Lag-1 autocorrelation along a registered direction, computed directly
/// and through the jump-size identity.
pub fn lag1_correlation(result: &ChainResult, label: &str) -> Result<Lag1Estimate> {
    let s = result.direction(label)?;
    let n = s.n_jumps();
    if n < 2 {
        return Err(Error::TraceTooShort { len: n, min: 2 });
    }
    let var = s.variance();
    if !(var > 0.0) {
        // an all-rejected chain never moves
        return Ok(Lag1Estimate {
            label: label.into(),
            direct: 1.0,
            identity: 1.0,
            se: 0.0,
            agree: true,
        });
    }
    let direct = s.lag1_direct();
    let identity = 1.0 - s.esjd() / (2.0 * var);
    let se = ((1.0 - direct * direct).max(0.0) / n as f64).sqrt();
    let agree = (direct - identity).abs() <= 3.0 * se.max(1.0 / n as f64);
    if !agree {
        log::warn!("lag-1 estimators disagree on {label}: direct {direct}, identity {identity}");
    }
    Ok(Lag1Estimate {
        label: label.into(),
        direct,
        identity,
        se,
        agree,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IactEstimate {
    pub label: String,
    /// Raw estimate; it can dip slightly below 1 for near-independent draws.
    pub iact: f64,
    pub lag1: f64,
    /// Largest autocovariance lag included in the sum.
    pub truncation_lag: usize,
}

/// Autocovariances `γ_k = (1/n) Σ (x_t − x̄)(x_{t+k} − x̄)` for all `k < n`.
pub fn autocovariance(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = xs
        .iter()
        .map(|x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf.iter().take(n).map(|z| z.re / (size as f64 * n as f64)).collect()
}

/// Integrated autocorrelation time with Geyer's initial positive sequence:
/// `τ = −1 + 2 Σ_m Γ_m / γ₀`, `Γ_m = γ_{2m} + γ_{2m+1}`, summed while positive.
pub fn iact(trace: &[f64]) -> Result<IactEstimate> {
    if trace.len() < IACT_MIN_LEN {
        return Err(Error::TraceTooShort {
            len: trace.len(),
            min: IACT_MIN_LEN,
        });
    }
    let gamma = autocovariance(trace);
    let g0 = gamma[0];
    let scale = trace.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    if !(g0 > 1e-28 * scale * scale) {
        return Err(Error::DegenerateVariance);
    }
    let mut sum = 0.0;
    let mut lag = 0;
    let mut m = 0;
    while 2 * m + 1 < gamma.len() {
        let pair = gamma[2 * m] + gamma[2 * m + 1];
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag = 2 * m + 1;
        m += 1;
    }
    Ok(IactEstimate {
        label: String::new(),
        iact: -1.0 + 2.0 * sum / g0,
        lag1: gamma[1] / g0,
        truncation_lag: lag,
    })
}

/// [`iact`] on the stored projection trace of a direction.
pub fn iact_of(result: &ChainResult, label: &str) -> Result<IactEstimate> {
    let s = result.direction(label)?;
    let trace = s
        .projections
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter(format!("no stored projections for {label}")))?;
    let mut est = iact(trace)?;
    est.label = label.to_string();
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub n: usize,
    /// `(x̄ᵢ − mᵢ)/√(s²ᵢ/n)`, ignoring autocorrelation.
    pub mean_z: Vec<f64>,
    /// `|x̄ᵢ − mᵢ|/√((A⁻¹)ᵢᵢ)`.
    pub mean_error: Vec<f64>,
    /// `s²ᵢ / (A⁻¹)ᵢᵢ`.
    pub variance_ratio: Vec<f64>,
    /// `‖Ĉ − A⁻¹‖_F / ‖A⁻¹‖_F` when full moments were kept.
    pub covariance_rel_error: Option<f64>,
}

impl MomentReport {
    /// Every mean error, variance ratio and covariance error within `rel_tol`.
    pub fn matches(&self, rel_tol: f64) -> bool {
        self.mean_error.iter().all(|e| *e <= rel_tol)
            && self.variance_ratio.iter().all(|r| (r - 1.0).abs() <= rel_tol)
            && self.covariance_rel_error.is_none_or(|e| e <= rel_tol)
    }

    pub fn max_abs_z(&self) -> f64 {
        self.mean_z.iter().fold(0.0, |m, z| m.max(z.abs()))
    }
}

/// Compares the accumulated moments with `N(A⁻¹b, A⁻¹)`.
pub fn target_moment_check(result: &ChainResult, target: &GaussianTarget) -> Result<MomentReport> {
    let mom = &result.moments;
    let (mean, var) = match (mom.mean(), mom.variances()) {
        (Some(m), Some(v)) => (m, v),
        _ => return Err(Error::InvalidParameter("moments were not accumulated".into())),
    };
    let n = mom.count();
    let cov = target.covariance();
    let diag: Vec<f64> = match &cov {
        Matrix::Diagonal(v) => v.iter().copied().collect(),
        Matrix::Dense(c) => c.diagonal().iter().copied().collect(),
    };
    let truth = target.mean();
    let mean_z = (0..truth.len())
        .map(|i| (mean[i] - truth[i]) / (var[i] / n as f64).sqrt())
        .collect();
    let mean_error = (0..truth.len()).map(|i| (mean[i] - truth[i]).abs() / diag[i].sqrt()).collect();
    let variance_ratio = (0..truth.len()).map(|i| var[i] / diag[i]).collect();
    let covariance_rel_error = match mom {
        MomentAccumulator::Full { .. } => mom.covariance().map(|c| {
            let t = cov.to_dense();
            (c - &t).norm() / t.norm()
        }),
        _ => None,
    };
    Ok(MomentReport {
        n,
        mean_z,
        mean_error,
        variance_ratio,
        covariance_rel_error,
    })
}

/// One row of the `direction,esjd,se,lag1,iact` summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionSummary {
    pub direction: String,
    pub esjd: f64,
    pub se: f64,
    pub lag1: f64,
    pub iact: f64,
}

pub fn summarize(result: &ChainResult) -> Result<Vec<DirectionSummary>> {
    result
        .directions
        .iter()
        .map(|s| {
            let e = esjd(result, s.label())?;
            let lag1 = lag1_correlation(result, s.label()).map(|l| l.direct).unwrap_or(f64::NAN);
            let iact = iact_of(result, s.label()).map(|i| i.iact).unwrap_or(f64::NAN);
            Ok(DirectionSummary {
                direction: s.label().to_string(),
                esjd: e.esjd,
                se: e.se,
                lag1,
                iact,
            })
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[DirectionSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["direction", "esjd", "se", "lag1", "iact"])?;
    for r in rows {
        w.write_record([
            r.direction.clone(),
            format!("{:e}", r.esjd),
            format!("{:e}", r.se),
            format!("{:e}", r.lag1),
            format!("{:e}", r.iact),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    crate::linalg::check_dim(xs.len(), ys.len())?;
    if xs.len() < 2 {
        return Err(Error::TraceTooShort { len: xs.len(), min: 2 });
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{mala, theta_langevin, LangevinConfig, SplitProposal};
    use crate::linalg::SymmetricOperator;
    use crate::rng::RandomStream;
    use crate::sampler::{run_chain, ChainConfig, Direction};
    use crate::splitting::{symmetric_ar1_to_splitting, Ar1Proposal};

    /// Independence proposal from the target itself: every move accepted.
    fn exact_proposal(t: &GaussianTarget) -> SplitProposal {
        let cov = SymmetricOperator::new(t.covariance()).unwrap();
        let ar1 = Ar1Proposal::new(Matrix::zeros(t.dim()), t.mean().clone(), cov).unwrap();
        let splitting = symmetric_ar1_to_splitting(&ar1).unwrap();
        SplitProposal { ar1, splitting }
    }

    #[test]
    fn autocovariance_matches_direct_sum() {
        let mut rng = RandomStream::new(1, 0);
        let xs: Vec<f64> = (0..257).map(|_| rng.standard_normal()).collect();
        let g = autocovariance(&xs);
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        for k in [0, 1, 5, 100, 256] {
            let direct: f64 = (0..xs.len() - k).map(|t| (xs[t] - m) * (xs[t + k] - m)).sum::<f64>() / xs.len() as f64;
            assert!((g[k] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn iact_iid_is_one() {
        let mut rng = RandomStream::new(2, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.standard_normal()).collect();
        let e = iact(&xs).unwrap();
        assert!(e.iact > 0.8 && e.iact < 1.2, "{}", e.iact);
        assert!(e.lag1.abs() < 0.02);
    }

    #[test]
    fn iact_ar1_closed_form() {
        let rho: f64 = 0.9;
        let mut rng = RandomStream::new(3, 0);
        let mut x = 0.0;
        let sd = (1.0 - rho * rho).sqrt();
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| {
                x = rho * x + sd * rng.standard_normal();
                x
            })
            .collect();
        let e = iact(&xs).unwrap();
        let truth = (1.0 + rho) / (1.0 - rho);
        assert!((e.iact - truth).abs() < 0.2 * truth, "{}", e.iact);
        assert!((e.lag1 - rho).abs() < 0.01);
    }

    #[test]
    fn iact_errors_and_repetition() {
        assert!(matches!(iact(&[1.0; 50]), Err(Error::TraceTooShort { .. })));
        assert!(matches!(iact(&[3.0; 500]), Err(Error::DegenerateVariance)));
        let mut rng = RandomStream::new(4, 0);
        let xs: Vec<f64> = (0..5000).map(|_| rng.standard_normal()).collect();
        let doubled: Vec<f64> = xs.iter().flat_map(|&x| [x, x]).collect();
        assert!(iact(&doubled).unwrap().iact > iact(&xs).unwrap().iact);
    }

    #[test]
    fn all_rejected_chain() {
        // a huge MALA step against a stiff target: nothing is accepted after the start
        let t = GaussianTarget::diagonal(vec![1e6, 1e6], None).unwrap();
        let p = mala(&t, 1.0).unwrap();
        let cfg = ChainConfig::new(300).directions(vec![Direction::coordinate(0)]);
        let r = run_chain(&t, &p, &cfg, &mut RandomStream::new(5, 0)).unwrap();
        assert_eq!(r.accept_count, 0);
        assert_eq!(esjd(&r, "x0").unwrap().esjd, 0.0);
        assert_eq!(lag1_correlation(&r, "x0").unwrap().direct, 1.0);
        assert!(matches!(esjd(&r, "nope"), Err(Error::UnknownDirection(_))));
    }

    #[test]
    fn independent_exact_chain() {
        let t = GaussianTarget::diagonal(vec![1.0, 4.0], Some(vec![0.5, -1.0])).unwrap();
        let p = exact_proposal(&t);
        let cfg = ChainConfig::new(100_000).directions(vec![Direction::coordinate(0), Direction::coordinate(1)]);
        let r = run_chain(&t, &p, &cfg, &mut RandomStream::new(6, 0)).unwrap();
        assert_eq!(r.accept_count, 100_000);
        let l = lag1_correlation(&r, "x1").unwrap();
        assert!(l.direct.abs() < 4.0 * l.se && l.agree);
        let i = iact_of(&r, "x0").unwrap();
        assert!((i.iact - 1.0).abs() < 0.2);
        let rep = target_moment_check(&r, &t).unwrap();
        assert!(rep.max_abs_z() < 4.0, "{:?}", rep.mean_z);
        assert!(rep.matches(0.02));
    }

    #[test]
    fn crank_nicolson_scalar_esjd_is_closed_form() {
        let t = GaussianTarget::diagonal(vec![2.0], Some(vec![1.0])).unwrap();
        let p = theta_langevin(&t, &LangevinConfig::new(1.0, 0.5).unwrap()).unwrap();
        let g = p.ar1.iteration().get(0, 0);
        let expected = (1.0 - g).powi(2) / 2.0 + (1.0 - g * g) / 2.0;
        let cfg = ChainConfig::new(200_000).directions(vec![Direction::coordinate(0)]);
        let r = run_chain(&t, &p, &cfg, &mut RandomStream::new(7, 0)).unwrap();
        let e = esjd(&r, "x0").unwrap();
        assert!((e.esjd - expected).abs() < 3.0 * e.se, "{} vs {expected} (se {})", e.esjd, e.se);
    }

    #[test]
    fn ula_flagged_mala_matches() {
        let t = GaussianTarget::diagonal(vec![2.0], None).unwrap();
        let cfg = ChainConfig::new(400_000);
        let ula = crate::families::ula_chain(&t, 1.0, &cfg, &mut RandomStream::new(8, 0)).unwrap();
        let rep = target_moment_check(&ula, &t).unwrap();
        assert!(!rep.matches(0.05));
        assert!((rep.variance_ratio[0] * 0.5 - 1.0).abs() < 0.05, "{}", rep.variance_ratio[0]);
        let p = mala(&t, 1.0).unwrap();
        let r = run_chain(&t, &p, &cfg, &mut RandomStream::new(8, 1)).unwrap();
        assert!(target_moment_check(&r, &t).unwrap().matches(0.05));
    }

    #[test]
    fn log_log_slope_of_power_law() {
        let xs = [125.0, 1000.0, 8000.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-1.0 / 3.0)).collect();
        assert!((log_log_slope(&xs, &ys).unwrap() + 1.0 / 3.0).abs() < 1e-12);
        assert!(log_log_slope(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn summary_csv_header() {
        let t = GaussianTarget::diagonal(vec![1.0, 1.0], None).unwrap();
        let p = mala(&t, 0.5).unwrap();
        let cfg = ChainConfig::new(500).directions(vec![Direction::coordinate(1)]);
        let r = run_chain(&t, &p, &cfg, &mut RandomStream::new(9, 0)).unwrap();
        let rows = summarize(&r).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&rows, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("direction,esjd,se,lag1,iact\nx1,"));
    }
}
