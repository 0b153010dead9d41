//! Python bindings: targets, proposal families, chains and spectral predictions.

use nalgebra::DVector;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use splitmcmc::experiment::{cmd_validate, RunOptions};
use splitmcmc::families::{hmc_proposal, mala, theta_langevin, HmcConfig, LangevinConfig, SplitProposal};
use splitmcmc::linalg::SymmetricOperator;
use splitmcmc::rng::RandomStream;
use splitmcmc::sampler::{self, ChainConfig, Direction, MomentsMode};
use splitmcmc::target::{dense_from_rows, GaussianTarget};
use splitmcmc::theory::{self, LimitFamily};

type CheckList = Vec<(String, f64, bool)>;

fn py_err(e: splitmcmc::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Gaussian target `π(x) ∝ exp(−½xᵀAx + bᵀx)`.
#[pyclass(name = "GaussianTarget", frozen)]
struct PyTarget(GaussianTarget);

#[pymethods]
impl PyTarget {
    /// Diagonal precision with the given eigenvalues.
    #[staticmethod]
    #[pyo3(signature = (eigenvalues, b=None))]
    fn diagonal(eigenvalues: Vec<f64>, b: Option<Vec<f64>>) -> PyResult<Self> {
        GaussianTarget::diagonal(eigenvalues, b).map(Self).map_err(py_err)
    }

    /// Dense precision given as a list of rows.
    #[staticmethod]
    fn dense(a: Vec<Vec<f64>>, b: Vec<f64>) -> PyResult<Self> {
        let a = SymmetricOperator::dense(dense_from_rows(&a).map_err(py_err)?).map_err(py_err)?;
        GaussianTarget::new(a, DVector::from_vec(b)).map(Self).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    /// `A⁻¹b`.
    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.0.mean().as_slice().to_vec()
    }

    fn sample(&self, seed: u64, stream: u64) -> Vec<f64> {
        self.0.exact_sample(&mut RandomStream::new(seed, stream)).as_slice().to_vec()
    }
}

/// An AR(1) proposal together with its matrix splitting.
#[pyclass(name = "Proposal", frozen)]
struct PyProposal(SplitProposal);

#[pymethods]
impl PyProposal {
    #[staticmethod]
    fn mala(target: &PyTarget, h: f64) -> PyResult<Self> {
        mala(&target.0, h).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn theta_langevin(target: &PyTarget, h: f64, theta: f64) -> PyResult<Self> {
        let cfg = LangevinConfig::new(h, theta).map_err(py_err)?;
        theta_langevin(&target.0, &cfg).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn hmc(target: &PyTarget, h: f64, steps: usize) -> PyResult<Self> {
        let cfg = HmcConfig::new(h, steps).map_err(py_err)?;
        hmc_proposal(&target.0, &cfg).map(Self).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Iteration matrix `G` as rows.
    fn iteration(&self) -> Vec<Vec<f64>> {
        let g = self.0.ar1.iteration().to_dense();
        g.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// Result summary of one Metropolis-Hastings chain.
#[pyclass(name = "ChainSummary", frozen, get_all)]
struct PyChainSummary {
    acceptance_rate: f64,
    mean_log_ratio: f64,
    /// Expected squared jump per requested coordinate.
    esjd: Vec<f64>,
    final_state: Vec<f64>,
}

#[pyfunction]
#[pyo3(signature = (target, proposal, n_steps, seed=0, stream=0, coordinates=vec![0]))]
fn run_chain(
    py: Python<'_>,
    target: &PyTarget,
    proposal: &PyProposal,
    n_steps: usize,
    seed: u64,
    stream: u64,
    coordinates: Vec<usize>,
) -> PyResult<PyChainSummary> {
    let dirs = coordinates.iter().map(|&i| Direction::coordinate(i)).collect();
    let cfg = ChainConfig::new(n_steps).directions(dirs).moments(MomentsMode::Off);
    let res = py
        .detach(|| sampler::run_chain(&target.0, &proposal.0, &cfg, &mut RandomStream::new(seed, stream)))
        .map_err(py_err)?;
    Ok(PyChainSummary {
        acceptance_rate: res.acceptance_rate(),
        mean_log_ratio: res.z.mean,
        esjd: res.directions.iter().map(|d| d.esjd()).collect(),
        final_state: res.final_state.as_slice().to_vec(),
    })
}

/// Finite-dimension acceptance prediction: `(mu, sigma2, acceptance)`.
#[pyfunction]
fn predict_acceptance(target: &PyTarget, proposal: &PyProposal) -> PyResult<(f64, f64, f64)> {
    let model = theory::model_from_dense(&target.0, &proposal.0.splitting).map_err(py_err)?;
    let p = theory::predict_acceptance(&model, 0.0).map_err(py_err)?;
    Ok((p.mu, p.sigma2, p.acceptance))
}

/// Predicted expected squared jump along eigenmode `mode`: `(esjd, bound)`.
#[pyfunction]
fn predict_jump(target: &PyTarget, proposal: &PyProposal, mode: usize) -> PyResult<(f64, f64)> {
    let model = theory::model_from_dense(&target.0, &proposal.0.splitting).map_err(py_err)?;
    let j = theory::predict_jump(&model, mode).map_err(py_err)?;
    Ok((j.esjd(), j.u3_bound.abs()))
}

/// Large-d acceptance limit for `family` in {"mala", "hmc"} or a θ value.
#[pyfunction]
#[pyo3(signature = (family, l, kappa=0.0, tau=1.0, theta=None))]
fn asymptotic_acceptance(family: &str, l: f64, kappa: f64, tau: f64, theta: Option<f64>) -> PyResult<f64> {
    let fam = match (family, theta) {
        ("mala", None) => LimitFamily::Mala,
        ("theta", Some(theta)) => LimitFamily::ThetaLangevin { theta },
        ("hmc", None) => LimitFamily::Hmc,
        _ => return Err(PyValueError::new_err(format!("unknown family {family:?}"))),
    };
    Ok(theory::asymptotic_limits(fam, l, kappa, tau).acceptance)
}

/// Runs the identity suite; returns `(pass, [(name, residual, pass)])`.
#[pyfunction]
#[pyo3(signature = (only=None, perturb=0.0))]
fn validate(only: Option<&str>, perturb: f64) -> PyResult<(bool, CheckList)> {
    let opts = RunOptions { out: None, seed: None, force: false, cold_start: false };
    let (_, report) = cmd_validate(only, perturb, &opts).map_err(py_err)?;
    let checks = report.checks.into_iter().map(|c| (c.name, c.residual, c.pass)).collect();
    Ok((report.pass, checks))
}

#[pymodule]
fn pysplitmcmc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTarget>()?;
    m.add_class::<PyProposal>()?;
    m.add_class::<PyChainSummary>()?;
    m.add_function(wrap_pyfunction!(run_chain, m)?)?;
    m.add_function(wrap_pyfunction!(predict_acceptance, m)?)?;
    m.add_function(wrap_pyfunction!(predict_jump, m)?)?;
    m.add_function(wrap_pyfunction!(asymptotic_acceptance, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
