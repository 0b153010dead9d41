//! Experiment configuration and the commands behind the `splitmcmc` binary.
//!
//! Commands only orchestrate calls into the library; every number they write
//! comes from [`crate::families`], [`crate::sampler`], [`crate::theory`] or
//! [`crate::diagnostics`].

mod commands;
mod validate;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{hmc_proposal, mala, mala_convergent, preconditioned_eigenvalues, theta_langevin};
use crate::families::{FamilyKind, HmcConfig, LangevinConfig, SplitProposal};
use crate::linalg::SymmetricOperator;
use crate::sampler::Direction;
use crate::target::{GaussianTarget, TargetSpec};
use crate::theory::{self, FamilyModel, LimitFamily, SpectralSplittingModel};

pub use commands::{
    cmd_predict, cmd_sample, cmd_scaling, scaling_summary_from_csv, verdict_from_csv, ChainRow, PredictionRow,
    ScalingRow, ScalingSummary, Verdict, VerdictCheck,
};
pub use validate::{cmd_validate, validation_checks, CheckOutcome, ValidationReport};

/// Stream ids are `param_index · STREAM_STRIDE + chain_index`.
pub const STREAM_STRIDE: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    pub proposal: ProposalSpec,
    #[serde(default)]
    pub chain: ChainSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub outputs: Option<PathBuf>,
}

/// Preconditioner: `"identity"` or an operator given like a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PreconditionerSpec {
    Named(String),
    Operator(TargetSpec),
}

impl Default for PreconditionerSpec {
    fn default() -> Self {
        PreconditionerSpec::Named("identity".into())
    }
}

impl PreconditionerSpec {
    fn operator(&self) -> Result<Option<SymmetricOperator>> {
        match self {
            PreconditionerSpec::Named(n) if n == "identity" => Ok(None),
            PreconditionerSpec::Named(n) => Err(Error::Config(format!("proposal.V: unknown preconditioner {n:?}"))),
            PreconditionerSpec::Operator(spec) => spec.operator().map(Some),
        }
    }
}

/// Step sizes may be absolute (`h`) or scaled (`l`, with `h = l²d^{−r}` for
/// Langevin families and `h = l·d^{−r}` for HMC). HMC takes `L` or `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalSpec {
    pub family: FamilyKind,
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub l: Option<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default, rename = "L")]
    pub steps: Option<usize>,
    #[serde(default, rename = "T")]
    pub time: Option<f64>,
    #[serde(default, rename = "V")]
    pub preconditioner: PreconditionerSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    /// Total steps per chain, burn-in included.
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "default_chains")]
    pub n_chains: usize,
    #[serde(default)]
    pub seed: u64,
    /// Mode indices (0-based) whose projections are tracked.
    #[serde(default = "default_directions")]
    pub directions: Vec<usize>,
}

fn default_steps() -> usize {
    10_000
}
fn default_chains() -> usize {
    4
}
fn default_directions() -> Vec<usize> {
    vec![0]
}

impl Default for ChainSpec {
    fn default() -> Self {
        Self {
            n_steps: default_steps(),
            burn_in: 0,
            n_chains: default_chains(),
            seed: 0,
            directions: default_directions(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "h")]
    Step,
    #[serde(rename = "l")]
    Scale,
    #[serde(rename = "d")]
    Dim,
    #[serde(rename = "theta")]
    Theta,
    #[serde(rename = "L")]
    Steps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl ExperimentConfig {
    /// Parses JSON; errors name the offending line, column and field.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep.values must be nonempty".into()));
            }
            let integral = matches!(s.parameter, SweepParameter::Dim | SweepParameter::Steps);
            for (k, v) in s.values.iter().enumerate() {
                if !v.is_finite() || (integral && (v.fract() != 0.0 || *v < 1.0)) {
                    return Err(Error::Config(format!("sweep.values[{k}] = {v} is not valid for {:?}", s.parameter)));
                }
            }
        }
        if self.chain.n_chains == 0 {
            return Err(Error::Config("chain.n_chains must be at least 1".into()));
        }
        if self.chain.burn_in > self.chain.n_steps {
            return Err(Error::Config("chain.burn_in exceeds chain.n_steps".into()));
        }
        self.points().map(|_| ())
    }

    /// Sweep values, or a single point labelled by the step size.
    pub fn points(&self) -> Result<Vec<Point>> {
        match &self.sweep {
            None => Ok(vec![Point::resolve(self, 0, None)?]),
            Some(s) => s
                .values
                .iter()
                .enumerate()
                .map(|(k, &v)| Point::resolve(self, k, Some((s.parameter, v))))
                .collect(),
        }
    }
}

/// Fully resolved proposal parameters at one sweep point.
#[derive(Debug, Clone)]
pub struct ResolvedProposal {
    pub family: FamilyKind,
    pub h: f64,
    pub theta: f64,
    /// Leapfrog steps (1 outside HMC).
    pub steps: usize,
    /// Scaled step, given or implied by `h`.
    pub l: f64,
    pub preconditioner: Option<SymmetricOperator>,
}

/// One sweep point: target, proposal parameters and tracked modes.
#[derive(Debug, Clone)]
pub struct Point {
    pub index: usize,
    pub param: f64,
    pub target: GaussianTarget,
    pub kappa: f64,
    pub proposal: ResolvedProposal,
    pub modes: Vec<usize>,
}

fn limit_family(family: FamilyKind, theta: f64) -> Option<LimitFamily> {
    match family {
        FamilyKind::Mala => Some(LimitFamily::Mala),
        FamilyKind::ThetaLangevin => Some(LimitFamily::ThetaLangevin { theta }),
        FamilyKind::Hmc => Some(LimitFamily::Hmc),
        FamilyKind::Ula => None,
    }
}

/// Step-size exponent `r` of the optimal scaling.
pub fn scaling_exponent(family: FamilyKind, kappa: f64) -> f64 {
    match family {
        FamilyKind::Hmc => 0.25 + kappa,
        _ => 1.0 / 3.0 + 2.0 * kappa,
    }
}

impl Point {
    fn resolve(cfg: &ExperimentConfig, index: usize, sweep: Option<(SweepParameter, f64)>) -> Result<Self> {
        let mut spec = cfg.proposal.clone();
        let mut target_spec = cfg.target.clone();
        match sweep {
            Some((SweepParameter::Step, v)) => {
                spec.h = Some(v);
                spec.l = None;
            }
            Some((SweepParameter::Scale, v)) => {
                spec.l = Some(v);
                spec.h = None;
            }
            Some((SweepParameter::Dim, v)) => target_spec = cfg.target.with_dim(v as usize)?,
            Some((SweepParameter::Theta, v)) => spec.theta = Some(v),
            Some((SweepParameter::Steps, v)) => {
                spec.steps = Some(v as usize);
                spec.time = None;
            }
            None => {}
        }
        let target = target_spec.build()?;
        let d = target.dim();
        let kappa = target_spec.kappa().unwrap_or(0.0);
        let r = scaling_exponent(spec.family, kappa);
        let df = d as f64;
        let hmc = spec.family == FamilyKind::Hmc;
        let (h, l) = match (spec.h, spec.l) {
            (Some(_), Some(_)) => return Err(Error::Config("proposal: give only one of h and l".into())),
            (None, None) => return Err(Error::Config("proposal: one of h or l is required".into())),
            (Some(h), None) => (h, if hmc { h * df.powf(r) } else { (h * df.powf(r)).sqrt() }),
            (None, Some(l)) => (if hmc { l * df.powf(-r) } else { l * l * df.powf(-r) }, l),
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("proposal: step h = {h} must be positive")));
        }
        let theta = match spec.family {
            FamilyKind::ThetaLangevin => spec
                .theta
                .ok_or_else(|| Error::Config("proposal.theta is required for theta_langevin".into()))?,
            _ => 0.0,
        };
        let steps = if hmc {
            match (spec.steps, spec.time) {
                (Some(_), Some(_)) => return Err(Error::Config("proposal: give only one of L and T".into())),
                (Some(n), None) => n,
                (None, Some(t)) => ((t / h + 1e-9).floor() as usize).max(1),
                (None, None) => return Err(Error::Config("proposal: HMC needs L or T".into())),
            }
        } else {
            1
        };
        let preconditioner = spec.preconditioner.operator()?;
        if let Some(v) = &preconditioner {
            crate::linalg::check_dim(d, v.dim())
                .map_err(|_| Error::Config(format!("proposal.V has dimension {} but d = {d}", v.dim())))?;
        }
        for (k, &m) in cfg.chain.directions.iter().enumerate() {
            if m >= d {
                return Err(Error::Config(format!("chain.directions[{k}] = {m} is not < d = {d}")));
            }
        }
        let param = sweep.map_or(h, |(_, v)| v);
        Ok(Self {
            index,
            param,
            target,
            kappa,
            proposal: ResolvedProposal {
                family: spec.family,
                h,
                theta,
                steps,
                l,
                preconditioner,
            },
            modes: cfg.chain.directions.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// `T′ = L·h` for HMC.
    pub fn integration_time(&self) -> Option<f64> {
        (self.proposal.family == FamilyKind::Hmc).then_some(self.proposal.steps as f64 * self.proposal.h)
    }

    pub fn build_proposal(&self) -> Result<SplitProposal> {
        let p = &self.proposal;
        match (p.family, &p.preconditioner) {
            (FamilyKind::Mala, None) => mala(&self.target, p.h),
            (FamilyKind::Ula, None) => mala_convergent(&self.target, p.h),
            (FamilyKind::Ula, Some(_)) => Err(Error::Config("ula does not take a preconditioner".into())),
            (FamilyKind::Mala | FamilyKind::ThetaLangevin, v) => {
                let mut cfg = LangevinConfig::new(p.h, p.theta)?;
                if let Some(v) = v {
                    cfg = cfg.with_preconditioner(v.clone());
                }
                theta_langevin(&self.target, &cfg)
            }
            (FamilyKind::Hmc, v) => {
                let mut cfg = HmcConfig::new(p.h, p.steps)?;
                if let Some(v) = v {
                    cfg = cfg.with_preconditioner(v.clone());
                }
                hmc_proposal(&self.target, &cfg)
            }
        }
    }

    /// Spectral model of the proposal. Identity preconditioning on a
    /// diagonal target uses the closed-form family model.
    pub fn spectral_model(&self, proposal: Option<&SplitProposal>) -> Result<SpectralSplittingModel> {
        let p = &self.proposal;
        let family = match p.family {
            FamilyKind::Mala => FamilyModel::Mala { h: p.h },
            FamilyKind::ThetaLangevin => FamilyModel::ThetaLangevin { theta: p.theta, h: p.h },
            FamilyKind::Hmc => FamilyModel::Hmc { h: p.h, steps: p.steps },
            FamilyKind::Ula => return Err(Error::Config("ula has no acceptance step to predict".into())),
        };
        if p.preconditioner.is_none() && self.target.precision().is_diagonal() {
            let lambdas: Vec<f64> = self.target.precision().matrix().diagonal_entries().unwrap().iter().copied().collect();
            let means: Vec<f64> = self.target.mean().iter().copied().collect();
            return theory::model_from_family(&lambdas, Some(&means), family);
        }
        let built;
        let s = match proposal {
            Some(s) => s,
            None => {
                built = self.build_proposal()?;
                &built
            }
        };
        theory::model_from_dense(&self.target, &s.splitting)
    }

    /// Unit eigenvectors for the tracked modes, in the model's mode order.
    pub fn directions(&self) -> Result<Vec<Direction>> {
        if self.target.precision().is_diagonal() {
            return Ok(self
                .modes
                .iter()
                .map(|&i| Direction::coordinate(i).with_label(format!("mode{i}")))
                .collect());
        }
        let vecs = theory::eigen_directions(&self.target)?;
        Ok(self
            .modes
            .iter()
            .map(|&i| Direction::vector(format!("mode{i}"), vecs[i].clone()))
            .collect())
    }

    /// Asymptotic acceptance limit at this point's scaled step.
    pub fn limits(&self) -> Result<Option<theory::AsymptoticLimits>> {
        let Some(fam) = limit_family(self.proposal.family, self.proposal.theta) else {
            return Ok(None);
        };
        let lambdas = preconditioned_eigenvalues(self.target.precision(), self.proposal.preconditioner.as_ref())?;
        let tau = theory::tau(&lambdas, self.kappa);
        Ok(Some(theory::asymptotic_limits(fam, self.proposal.l, self.kappa, tau)))
    }
}

/// Command-line options shared by the commands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub force: bool,
    pub cold_start: bool,
}

impl RunOptions {
    fn out_dir(&self, cfg: Option<&ExperimentConfig>) -> Result<PathBuf> {
        self.out
            .clone()
            .or_else(|| cfg.and_then(|c| c.outputs.clone()))
            .ok_or_else(|| Error::Config("no output directory (use --out or \"outputs\")".into()))
    }
}

/// Creates `dir` and refuses to overwrite any of `files` unless `force`.
fn prepare_outputs(dir: &Path, files: &[&str], force: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let paths: Vec<PathBuf> = files.iter().map(|f| dir.join(f)).collect();
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(Error::Config(format!("{} exists; pass --force to overwrite", p.display())));
        }
    }
    Ok(paths)
}

/// Result of a command: success or failed checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    CheckFailure,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::CheckFailure => 1,
        }
    }

    fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Success
        } else {
            Outcome::CheckFailure
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(extra: &str) -> String {
        format!(
            r#"{{"target":{{"type":"diagonal","eigenvalues":{{"kind":"power","kappa":0.0,"d":10}},"b":"zero"}},
                "proposal":{{"family":"mala","l":1.0}}{extra}}}"#
        )
    }

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_json(&base("")).unwrap();
        let pts = cfg.points().unwrap();
        assert_eq!(pts.len(), 1);
        assert!((pts[0].proposal.h - 10f64.powf(-1.0 / 3.0)).abs() < 1e-14);
        assert_eq!(cfg.chain.n_chains, 4);
    }

    #[test]
    fn unknown_field_is_located() {
        let err = ExperimentConfig::from_json(&base(r#","chian":{}"#)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("chian") && msg.contains("line"), "{msg}");
    }

    #[test]
    fn invalid_configs() {
        for extra in [
            r#","sweep":{"parameter":"h","values":[]}"#,
            r#","sweep":{"parameter":"d","values":[10.5]}"#,
            r#","chain":{"directions":[10]}"#,
            r#","chain":{"n_steps":5,"burn_in":6}"#,
            r#","sweep":{"parameter":"q","values":[1]}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(&base(extra)), Err(Error::Config(_))), "{extra}");
        }
    }

    #[test]
    fn sweeps_resolve() {
        let cfg = ExperimentConfig::from_json(&base(r#","sweep":{"parameter":"d","values":[8,27]}"#)).unwrap();
        let pts = cfg.points().unwrap();
        assert_eq!(pts[1].dim(), 27);
        assert!((pts[1].proposal.h - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(pts[1].param, 27.0);

        let hmc = r#"{"target":{"type":"diagonal","eigenvalues":{"kind":"power","kappa":0.0,"d":16},"b":"zero"},
                      "proposal":{"family":"hmc","l":1.0,"T":1.0}}"#;
        let p = &ExperimentConfig::from_json(hmc).unwrap().points().unwrap()[0];
        assert_eq!(p.proposal.h, 0.5);
        assert_eq!(p.proposal.steps, 2);
        assert_eq!(p.integration_time(), Some(1.0));
    }
}
