//! Metropolis-Hastings over AR(1) proposals with streamed statistics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::families::SplitProposal;
use crate::linalg::{check_dim, spd_factorize, Matrix};
use crate::rng::RandomStream;
use crate::splitting::{proposal_target, Ar1Proposal, MatrixSplitting};
use crate::target::{GaussianTarget, LogDensity};

/// Full covariance accumulators are kept up to this dimension.
pub const FULL_MOMENTS_MAX_DIM: usize = 64;
/// State coordinates are written to traces up to this dimension.
pub const TRACE_MAX_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    /// Exact draw from the Gaussian target (equilibrium start).
    ExactSample,
    Explicit(DVector<f64>),
    /// Draw from the proposal target `N(𝒜⁻¹β, 𝒜⁻¹)`.
    ProposalTargetSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentsMode {
    /// Full covariance for `d ≤ 64`, diagonal above.
    Auto,
    Diagonal,
    Full,
    Off,
}

/// A linear functional `x ↦ wᵀx` tracked during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub label: String,
    pub kind: DirectionKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DirectionKind {
    Coordinate(usize),
    /// `scale · e_i`.
    ScaledCoordinate(usize, f64),
    Vector(DVector<f64>),
}

impl Direction {
    pub fn coordinate(i: usize) -> Self {
        Self {
            label: format!("x{i}"),
            kind: DirectionKind::Coordinate(i),
        }
    }

    pub fn vector(label: impl Into<String>, w: DVector<f64>) -> Self {
        Self {
            label: label.into(),
            kind: DirectionKind::Vector(w),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn project(&self, x: &DVector<f64>) -> f64 {
        match &self.kind {
            DirectionKind::Coordinate(i) => x[*i],
            DirectionKind::ScaledCoordinate(i, s) => s * x[*i],
            DirectionKind::Vector(w) => w.dot(x),
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        match &self.kind {
            DirectionKind::Coordinate(i) | DirectionKind::ScaledCoordinate(i, _) if *i >= d => {
                Err(Error::InvalidParameter(format!("direction index {i} out of range for d = {d}")))
            }
            DirectionKind::Vector(w) => check_dim(d, w.len()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainConfig {
    /// Total steps, burn-in included.
    pub n_steps: usize,
    pub burn_in: usize,
    pub start: Start,
    pub store_trace: bool,
    /// Keep the projected trace of every direction (needed for IACT).
    pub store_projections: bool,
    pub directions: Vec<Direction>,
    pub moments: MomentsMode,
}

impl ChainConfig {
    pub fn new(n_steps: usize) -> Self {
        Self {
            n_steps,
            burn_in: 0,
            start: Start::ExactSample,
            store_trace: false,
            store_projections: true,
            directions: Vec::new(),
            moments: MomentsMode::Auto,
        }
    }

    pub fn burn_in(mut self, n: usize) -> Self {
        self.burn_in = n;
        self
    }

    pub fn start(mut self, s: Start) -> Self {
        self.start = s;
        self
    }

    pub fn directions(mut self, d: Vec<Direction>) -> Self {
        self.directions = d;
        self
    }

    pub fn store_trace(mut self, on: bool) -> Self {
        self.store_trace = on;
        self
    }

    pub fn moments(mut self, m: MomentsMode) -> Self {
        self.moments = m;
        self
    }

    pub fn store_projections(mut self, on: bool) -> Self {
        self.store_projections = on;
        self
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.burn_in > self.n_steps {
            return Err(Error::InvalidParameter(format!(
                "burn_in {} exceeds n_steps {}",
                self.burn_in, self.n_steps
            )));
        }
        if let Start::Explicit(x) = &self.start {
            check_dim(d, x.len())?;
        }
        self.directions.iter().try_for_each(|w| w.check(d))
    }
}

/// Running mean and (co)variance of retained states.
#[derive(Debug, Clone, PartialEq)]
pub enum MomentAccumulator {
    Off,
    Diagonal { n: usize, mean: DVector<f64>, m2: DVector<f64> },
    Full { n: usize, mean: DVector<f64>, m2: DMatrix<f64> },
}

impl MomentAccumulator {
    fn new(mode: MomentsMode, d: usize) -> Self {
        let full = match mode {
            MomentsMode::Off => return MomentAccumulator::Off,
            MomentsMode::Auto => d <= FULL_MOMENTS_MAX_DIM,
            MomentsMode::Full => true,
            MomentsMode::Diagonal => false,
        };
        if full {
            MomentAccumulator::Full {
                n: 0,
                mean: DVector::zeros(d),
                m2: DMatrix::zeros(d, d),
            }
        } else {
            MomentAccumulator::Diagonal {
                n: 0,
                mean: DVector::zeros(d),
                m2: DVector::zeros(d),
            }
        }
    }

    fn push(&mut self, x: &DVector<f64>) {
        match self {
            MomentAccumulator::Off => {}
            MomentAccumulator::Diagonal { n, mean, m2 } => {
                *n += 1;
                let k = *n as f64;
                for i in 0..x.len() {
                    let delta = x[i] - mean[i];
                    mean[i] += delta / k;
                    m2[i] += delta * (x[i] - mean[i]);
                }
            }
            MomentAccumulator::Full { n, mean, m2 } => {
                *n += 1;
                let delta = x - &*mean;
                *mean += &delta / *n as f64;
                let after = x - &*mean;
                m2.ger(1.0, &delta, &after, 1.0);
            }
        }
    }

    pub fn count(&self) -> usize {
        match self {
            MomentAccumulator::Off => 0,
            MomentAccumulator::Diagonal { n, .. } | MomentAccumulator::Full { n, .. } => *n,
        }
    }

    pub fn mean(&self) -> Option<&DVector<f64>> {
        match self {
            MomentAccumulator::Off => None,
            MomentAccumulator::Diagonal { mean, .. } | MomentAccumulator::Full { mean, .. } => Some(mean),
        }
    }

    /// Per-coordinate sample variances (divisor `n − 1`).
    pub fn variances(&self) -> Option<DVector<f64>> {
        let n = self.count();
        if n < 2 {
            return None;
        }
        let div = (n - 1) as f64;
        match self {
            MomentAccumulator::Off => None,
            MomentAccumulator::Diagonal { m2, .. } => Some(m2 / div),
            MomentAccumulator::Full { m2, .. } => Some(m2.diagonal() / div),
        }
    }

    /// Sample covariance, when accumulated in full.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        match self {
            MomentAccumulator::Full { n, m2, .. } if *n >= 2 => Some((m2 + m2.transpose()) * (0.5 / (*n - 1) as f64)),
            _ => None,
        }
    }
}

/// Welford accumulator for a scalar.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    pub n: usize,
    pub mean: f64,
    pub m2: f64,
}

impl Welford {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let delta = v - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn standard_error(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Streamed statistics of `s = wᵀx` over the retained window.
///
/// States `s₀ … sₙ` include the state entering the first retained step, so
/// there are `n` jumps and `n + 1` states. Sums are of `s − s₀` to limit
/// cancellation.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionStats {
    pub direction: Direction,
    pub origin: f64,
    pub jumps: Welford,
    pub states: Welford,
    pub lag_sum: f64,
    pub first: f64,
    pub last: f64,
    pub projections: Option<Vec<f64>>,
}

impl DirectionStats {
    fn new(direction: Direction, s0: f64, keep: bool) -> Self {
        let mut states = Welford::default();
        states.push(0.0);
        Self {
            direction,
            origin: s0,
            jumps: Welford::default(),
            states,
            lag_sum: 0.0,
            first: 0.0,
            last: 0.0,
            projections: keep.then(|| vec![s0]),
        }
    }

    fn push(&mut self, s: f64) {
        let t = s - self.origin;
        let jump = t - self.last;
        self.jumps.push(jump * jump);
        self.lag_sum += self.last * t;
        self.states.push(t);
        self.last = t;
        if let Some(p) = &mut self.projections {
            p.push(s);
        }
    }

    pub fn label(&self) -> &str {
        &self.direction.label
    }

    pub fn n_jumps(&self) -> usize {
        self.jumps.n
    }

    /// Mean of `(wᵀ(x_{k+1} − x_k))²`.
    pub fn esjd(&self) -> f64 {
        if self.jumps.n == 0 {
            0.0
        } else {
            self.jumps.mean
        }
    }

    /// Sample variance of the retained states.
    pub fn variance(&self) -> f64 {
        self.states.variance()
    }

    /// Direct lag-1 autocorrelation `γ₁/γ₀`, both with the pooled mean.
    pub fn lag1_direct(&self) -> f64 {
        let n = self.jumps.n;
        if n == 0 {
            return f64::NAN;
        }
        let m = self.states.n as f64;
        let mean = self.states.mean;
        let total = mean * m;
        let gamma0 = self.states.m2 / m;
        let cross = self.lag_sum - mean * ((total - self.last) + (total - self.first)) + n as f64 * mean * mean;
        (cross / n as f64) / gamma0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub accepted: bool,
    pub z: f64,
    pub x: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub seed: u64,
    pub stream: u64,
    pub dim: usize,
    pub n_steps: usize,
    pub burn_in: usize,
    /// Accepted proposals among retained steps.
    pub accept_count: usize,
    pub moments: MomentAccumulator,
    pub directions: Vec<DirectionStats>,
    /// Log acceptance ratio `Z` over retained steps (empty for unadjusted chains).
    pub z: Welford,
    /// Sum of `1 ∧ e^Z` over retained steps.
    pub alpha_sum: f64,
    pub trace: Option<Vec<TraceRow>>,
    pub final_state: DVector<f64>,
}

impl ChainResult {
    pub fn retained(&self) -> usize {
        self.n_steps - self.burn_in
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.retained() == 0 {
            f64::NAN
        } else {
            self.accept_count as f64 / self.retained() as f64
        }
    }

    /// Binomial standard error of the acceptance rate (ignores autocorrelation).
    pub fn acceptance_se(&self) -> f64 {
        let p = self.acceptance_rate();
        (p * (1.0 - p) / self.retained() as f64).sqrt()
    }

    /// Rao-Blackwellised acceptance, mean of `1 ∧ e^Z`.
    pub fn mean_alpha(&self) -> f64 {
        if self.z.n == 0 {
            f64::NAN
        } else {
            self.alpha_sum / self.z.n as f64
        }
    }

    pub fn direction(&self, label: &str) -> Result<&DirectionStats> {
        self.directions
            .iter()
            .find(|d| d.label() == label)
            .ok_or_else(|| Error::UnknownDirection(label.to_string()))
    }

    /// Writes `step,accepted,z,x_0,...`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("trace was not stored".into()))?;
        let mut w = csv::Writer::from_writer(out);
        let with_x = rows.first().is_some_and(|r| r.x.is_some());
        let mut header = vec!["step".to_string(), "accepted".into(), "z".into()];
        if with_x {
            header.extend((0..self.dim).map(|i| format!("x_{i}")));
        }
        w.write_record(&header)?;
        for r in rows {
            let mut rec = vec![r.step.to_string(), (r.accepted as u8).to_string(), format!("{:e}", r.z)];
            if let Some(x) = &r.x {
                rec.extend(x.iter().map(|v| format!("{v:e}")));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pooled acceptance over several chains.
pub fn pooled_acceptance(results: &[ChainResult]) -> f64 {
    let acc: usize = results.iter().map(|r| r.accept_count).sum();
    let n: usize = results.iter().map(|r| r.retained()).sum();
    acc as f64 / n as f64
}

/// `D = A − 𝒜`, `c = b − β` for the quadratic acceptance path.
#[derive(Debug, Clone)]
pub struct QuadraticAcceptance {
    d: Matrix,
    c: DVector<f64>,
}

impl QuadraticAcceptance {
    pub fn new(target: &GaussianTarget, s: &MatrixSplitting) -> Result<Self> {
        if !s.is_symmetric() {
            return Err(Error::NotSymmetricSplitting);
        }
        check_dim(target.dim(), s.dim())?;
        Ok(Self {
            d: target.precision().matrix() - s.precision().matrix(),
            c: target.shift() - s.beta(),
        })
    }

    /// `Z = −½yᵀDy + ½xᵀDx + cᵀ(y − x)`.
    pub fn log_ratio(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let half = |v: &DVector<f64>| 0.5 * v.dot(&self.d.apply(v));
        half(x) - half(y) + self.c.dot(&(y - x))
    }
}

/// Log acceptance ratio for a Gaussian target and a symmetric splitting.
pub fn log_accept_ratio_quadratic(
    target: &GaussianTarget,
    s: &MatrixSplitting,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<f64> {
    check_dim(target.dim(), x.len())?;
    check_dim(target.dim(), y.len())?;
    Ok(QuadraticAcceptance::new(target, s)?.log_ratio(x, y))
}

/// `log π(y) − log π(x) + log q(y, x) − log q(x, y)`, normalisers dropped.
pub fn log_accept_ratio_generic(
    logpi: &dyn LogDensity,
    p: &Ar1Proposal,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<f64> {
    check_dim(p.dim(), x.len())?;
    check_dim(p.dim(), y.len())?;
    let z = logpi.log_density(y)? - logpi.log_density(x)? + p.log_transition(y, x) - p.log_transition(x, y);
    if z.is_finite() {
        Ok(z)
    } else {
        Err(Error::EvaluationFailure(format!("non-finite acceptance ratio {z}")))
    }
}

fn initial_state(
    start: &Start,
    target: Option<&GaussianTarget>,
    splitting: Option<&MatrixSplitting>,
    rng: &mut RandomStream,
) -> Result<DVector<f64>> {
    match start {
        Start::Explicit(x) => Ok(x.clone()),
        Start::ExactSample => target
            .map(|t| t.exact_sample(rng))
            .ok_or_else(|| Error::InvalidParameter("exact start needs a Gaussian target".into())),
        Start::ProposalTargetSample => {
            let s = splitting.ok_or_else(|| Error::InvalidParameter("proposal-target start needs a splitting".into()))?;
            let pt = proposal_target(s)?;
            let f = spd_factorize(&pt.precision)?;
            let xi = rng.normal_vector(s.dim());
            Ok(pt.mean + f.solve_lower_transpose(&xi))
        }
    }
}

enum Kernel<'a> {
    Quadratic(QuadraticAcceptance),
    Generic(&'a dyn LogDensity),
    Unadjusted,
}

fn execute(
    ar1: &Ar1Proposal,
    kernel: Kernel<'_>,
    cfg: &ChainConfig,
    mut x: DVector<f64>,
    rng: &mut RandomStream,
) -> Result<ChainResult> {
    let d = ar1.dim();
    let (seed, stream) = (rng.seed(), rng.stream_id());
    let mut moments = MomentAccumulator::new(cfg.moments, d);
    let mut directions: Vec<DirectionStats> = Vec::new();
    let mut z_stats = Welford::default();
    let mut alpha_sum = 0.0;
    let mut accept_count = 0;
    let mut trace = cfg.store_trace.then(Vec::new);
    let mut xi = DVector::zeros(d);

    let open_window = |x: &DVector<f64>, dirs: &mut Vec<DirectionStats>| {
        *dirs = cfg
            .directions
            .iter()
            .map(|w| DirectionStats::new(w.clone(), w.project(x), cfg.store_projections))
            .collect();
    };
    if cfg.burn_in == 0 {
        open_window(&x, &mut directions);
    }

    for step in 0..cfg.n_steps {
        rng.fill_normal(&mut xi);
        let y = ar1.propose_with(&x, &xi);
        let (z, accepted) = match &kernel {
            Kernel::Unadjusted => (0.0, true),
            Kernel::Quadratic(q) => {
                let z = q.log_ratio(&x, &y);
                (z, rng.uniform_open().ln() < z)
            }
            Kernel::Generic(pi) => {
                let z = log_accept_ratio_generic(*pi, ar1, &x, &y)?;
                (z, rng.uniform_open().ln() < z)
            }
        };
        if accepted {
            x = y;
        }
        if step < cfg.burn_in {
            if step + 1 == cfg.burn_in {
                open_window(&x, &mut directions);
            }
            continue;
        }
        if accepted {
            accept_count += 1;
        }
        if !matches!(kernel, Kernel::Unadjusted) {
            z_stats.push(z);
            alpha_sum += z.min(0.0).exp();
        }
        moments.push(&x);
        for s in directions.iter_mut() {
            s.push(s.direction.project(&x));
        }
        if let Some(t) = &mut trace {
            t.push(TraceRow {
                step,
                accepted,
                z,
                x: (d <= TRACE_MAX_DIM).then(|| x.clone()),
            });
        }
    }

    Ok(ChainResult {
        seed,
        stream,
        dim: d,
        n_steps: cfg.n_steps,
        burn_in: cfg.burn_in,
        accept_count,
        moments,
        directions,
        z: z_stats,
        alpha_sum,
        trace,
        final_state: x,
    })
}

/// Runs one MH chain. Symmetric splittings use the quadratic acceptance
/// formula; others fall back to the density ratio.
pub fn run_chain(
    target: &GaussianTarget,
    proposal: &SplitProposal,
    cfg: &ChainConfig,
    rng: &mut RandomStream,
) -> Result<ChainResult> {
    check_dim(target.dim(), proposal.dim())?;
    cfg.validate(target.dim())?;
    let x0 = initial_state(&cfg.start, Some(target), Some(&proposal.splitting), rng)?;
    let kernel = if proposal.splitting.is_symmetric() {
        Kernel::Quadratic(QuadraticAcceptance::new(target, &proposal.splitting)?)
    } else {
        Kernel::Generic(target)
    };
    execute(&proposal.ar1, kernel, cfg, x0, rng)
}

/// MH chain for an arbitrary log-density with a fixed AR(1) proposal.
/// The start must be [`Start::Explicit`].
pub fn run_chain_generic(
    logpi: &dyn LogDensity,
    ar1: &Ar1Proposal,
    cfg: &ChainConfig,
    rng: &mut RandomStream,
) -> Result<ChainResult> {
    check_dim(logpi.dim(), ar1.dim())?;
    cfg.validate(ar1.dim())?;
    let x0 = initial_state(&cfg.start, None, None, rng)?;
    execute(ar1, Kernel::Generic(logpi), cfg, x0, rng)
}

/// Iterates the AR(1) proposal with every move accepted.
pub fn run_unadjusted(
    target: &GaussianTarget,
    proposal: &SplitProposal,
    cfg: &ChainConfig,
    rng: &mut RandomStream,
) -> Result<ChainResult> {
    check_dim(target.dim(), proposal.dim())?;
    cfg.validate(target.dim())?;
    let x0 = initial_state(&cfg.start, Some(target), Some(&proposal.splitting), rng)?;
    execute(&proposal.ar1, Kernel::Unadjusted, cfg, x0, rng)
}

/// Runs `n_chains` independent chains in parallel; chain `k` uses stream
/// `base_stream + k`. Results are in chain order and do not depend on
/// scheduling.
pub fn run_parallel_chains(
    target: &GaussianTarget,
    proposal: &SplitProposal,
    cfg: &ChainConfig,
    seed: u64,
    base_stream: u64,
    n_chains: usize,
) -> Result<Vec<ChainResult>> {
    if n_chains == 0 {
        return Err(Error::InvalidParameter("n_chains must be at least 1".into()));
    }
    (0..n_chains as u64)
        .into_par_iter()
        .map(|k| run_chain(target, proposal, cfg, &mut RandomStream::new(seed, base_stream + k)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{mala, theta_langevin, LangevinConfig};
    use crate::linalg::SymmetricOperator;
    use crate::target::FnDensity;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_target(d: usize, seed: u64) -> GaussianTarget {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.5..0.5));
        let a = &x * x.transpose() + DMatrix::identity(d, d);
        let b = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        GaussianTarget::new(SymmetricOperator::dense(a).unwrap(), b).unwrap()
    }

    #[test]
    fn quadratic_ratio_vanishes_for_exact_splitting() {
        let t = dense_target(4, 1);
        let p = theta_langevin(&t, &LangevinConfig::new(0.8, 0.5).unwrap()).unwrap();
        let mut rng = RandomStream::new(1, 1);
        for _ in 0..20 {
            let x = rng.normal_vector(4);
            let y = rng.normal_vector(4);
            assert!(log_accept_ratio_quadratic(&t, &p.splitting, &x, &y).unwrap().abs() < 1e-10);
        }
        let p = mala(&t, 0.3).unwrap();
        let x = rng.normal_vector(4);
        assert_eq!(log_accept_ratio_quadratic(&t, &p.splitting, &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_matches_generic() {
        let t = dense_target(5, 2);
        let p = mala(&t, 0.4).unwrap();
        let mut rng = RandomStream::new(2, 0);
        for _ in 0..50 {
            let x = rng.normal_vector(5);
            let y = p.ar1.propose(&x, &mut rng);
            let q = log_accept_ratio_quadratic(&t, &p.splitting, &x, &y).unwrap();
            let g = log_accept_ratio_generic(&t, &p.ar1, &x, &y).unwrap();
            assert!((q - g).abs() < 1e-10 * (1.0 + g.abs()), "{q} vs {g}");
        }
    }

    #[test]
    fn generic_reduces_to_density_ratio_for_symmetric_proposal() {
        let ar1 = Ar1Proposal::new(Matrix::zeros(2), DVector::zeros(2), SymmetricOperator::identity(2)).unwrap();
        let pi = FnDensity::new(2, |x: &DVector<f64>| -x.norm_squared().powi(2));
        let x = DVector::from_vec(vec![0.4, -0.1]);
        let y = DVector::from_vec(vec![-0.4, 0.1]);
        assert_eq!(log_accept_ratio_generic(&pi, &ar1, &x, &y).unwrap(), 0.0);
        let y = DVector::from_vec(vec![1.0, 0.3]);
        let z = log_accept_ratio_generic(&pi, &ar1, &x, &y).unwrap();
        let expected = pi.log_density(&y).unwrap() - pi.log_density(&x).unwrap();
        // q(y, x) = q(x, y) only up to the ‖x‖² − ‖y‖² Gaussian factor for G = 0
        assert!((z - expected - 0.5 * (y.norm_squared() - x.norm_squared())).abs() < 1e-12);
        assert_eq!(log_accept_ratio_generic(&pi, &ar1, &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn exact_splitting_accepts_everything() {
        let t = dense_target(3, 3);
        let p = theta_langevin(&t, &LangevinConfig::new(1.0, 0.5).unwrap()).unwrap();
        let r = run_chain(&t, &p, &ChainConfig::new(2000), &mut RandomStream::new(3, 0)).unwrap();
        assert_eq!(r.accept_count, 2000);
        assert!(r.z.mean.abs() < 1e-10);
    }

    #[test]
    fn burn_in_equal_to_length_is_empty() {
        let t = dense_target(3, 4);
        let p = mala(&t, 0.3).unwrap();
        let cfg = ChainConfig::new(50).burn_in(50).directions(vec![Direction::coordinate(0)]);
        let r = run_chain(&t, &p, &cfg, &mut RandomStream::new(4, 0)).unwrap();
        assert_eq!(r.retained(), 0);
        assert_eq!(r.accept_count, 0);
        assert_eq!(r.moments.count(), 0);
        assert_eq!(r.directions[0].n_jumps(), 0);
        assert!(ChainConfig::new(5).burn_in(6).validate(3).is_err());
    }

    #[test]
    fn deterministic_and_stream_dependent() {
        let t = dense_target(3, 5);
        let p = mala(&t, 0.5).unwrap();
        let cfg = ChainConfig::new(500).store_trace(true).directions(vec![Direction::coordinate(1)]);
        let a = run_chain(&t, &p, &cfg, &mut RandomStream::new(9, 2)).unwrap();
        let b = run_chain(&t, &p, &cfg, &mut RandomStream::new(9, 2)).unwrap();
        let c = run_chain(&t, &p, &cfg, &mut RandomStream::new(9, 3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.trace, c.trace);
        let par = run_parallel_chains(&t, &p, &cfg, 9, 2, 2).unwrap();
        assert_eq!(par[0], a);
        assert_eq!(par[1], c);
    }

    #[test]
    fn pooled_acceptance_is_weighted_mean() {
        let t = dense_target(3, 6);
        let p = mala(&t, 0.8).unwrap();
        let rs = run_parallel_chains(&t, &p, &ChainConfig::new(300), 1, 0, 8).unwrap();
        let weighted: f64 = rs.iter().map(|r| r.acceptance_rate() * r.retained() as f64).sum::<f64>()
            / rs.iter().map(|r| r.retained() as f64).sum::<f64>();
        assert!((pooled_acceptance(&rs) - weighted).abs() < 1e-15);
    }

    #[test]
    fn streamed_lag1_matches_trace_estimator() {
        let t = dense_target(3, 7);
        let p = mala(&t, 0.6).unwrap();
        let cfg = ChainConfig::new(5000).burn_in(100).directions(vec![Direction::coordinate(2)]);
        let r = run_chain(&t, &p, &cfg, &mut RandomStream::new(7, 0)).unwrap();
        let s = &r.directions[0];
        let tr = s.projections.as_ref().unwrap();
        assert_eq!(tr.len(), r.retained() + 1);
        let m = tr.iter().sum::<f64>() / tr.len() as f64;
        let g0 = tr.iter().map(|v| (v - m).powi(2)).sum::<f64>() / tr.len() as f64;
        let g1 = tr.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / (tr.len() - 1) as f64;
        assert!((s.lag1_direct() - g1 / g0).abs() < 1e-10);
        let esjd = tr.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (tr.len() - 1) as f64;
        assert!((s.esjd() - esjd).abs() < 1e-12);
    }

    #[test]
    fn trace_csv_layout() {
        let t = dense_target(2, 8);
        let p = mala(&t, 0.5).unwrap();
        let cfg = ChainConfig::new(3).store_trace(true);
        let r = run_chain(&t, &p, &cfg, &mut RandomStream::new(8, 0)).unwrap();
        let mut buf = Vec::new();
        r.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,accepted,z,x_0,x_1");
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn generic_chain_rejects_non_finite_density() {
        let ar1 = Ar1Proposal::new(Matrix::zeros(1), DVector::zeros(1), SymmetricOperator::identity(1)).unwrap();
        let pi = FnDensity::new(1, |x: &DVector<f64>| if x[0] > 0.0 { f64::NAN } else { 0.0 });
        let cfg = ChainConfig::new(100).start(Start::Explicit(DVector::from_vec(vec![-1.0])));
        let r = run_chain_generic(&pi, &ar1, &cfg, &mut RandomStream::new(1, 0));
        assert!(matches!(r, Err(Error::EvaluationFailure(_))));
    }

    #[test]
    fn generic_chain_samples_non_gaussian_target() {
        // Laplace(1) density, independence proposal N(0, 4)
        let ar1 = Ar1Proposal::new(
            Matrix::zeros(1),
            DVector::zeros(1),
            SymmetricOperator::diagonal(DVector::from_vec(vec![4.0])).unwrap(),
        )
        .unwrap();
        let pi = FnDensity::new(1, |x: &DVector<f64>| -x[0].abs());
        let cfg = ChainConfig::new(200_000).start(Start::Explicit(DVector::zeros(1)));
        let r = run_chain_generic(&pi, &ar1, &cfg, &mut RandomStream::new(11, 0)).unwrap();
        let var = r.moments.variances().unwrap()[0];
        assert!((var - 2.0).abs() < 0.1, "variance {var}");
    }
}
