//! Python bindings for the 1D singular Cucker-Smale toolkit.
//!
//! The module mirrors the Rust crate's main operations on plain Python data:
//! kernel/potential evaluation, natural velocities, cluster prediction and
//! critical couplings, the equilibrium solver, bound constants, and both
//! integrators (returning a `Trajectory` with samples and the event log).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use singular_cs::analysis;
use singular_cs::clustering;
use singular_cs::integrator::{self, EventKind, IntegratorConfig};
use singular_cs::model::{self, FirstOrderState, ModelParams, SecondOrderState};
use singular_cs::potential::Potential;

fn err(e: singular_cs::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn potential(beta: f64) -> PyResult<Potential> {
    Potential::new(beta).map_err(err)
}

fn params(n: usize, kappa: f64, beta: f64) -> PyResult<ModelParams> {
    ModelParams::new(n, kappa, potential(beta)?).map_err(err)
}

/// Communication weight psi(r) = |r|^(-beta).
#[pyfunction]
fn psi(beta: f64, r: f64) -> PyResult<f64> {
    potential(beta)?.psi(r).map_err(err)
}

/// Antiderivative of the weight from zero (beta < 1).
#[pyfunction]
fn big_psi(beta: f64, x: f64) -> PyResult<f64> {
    potential(beta)?.big_psi(x).map_err(err)
}

/// Antiderivative of the weight from one (beta >= 1).
#[pyfunction]
fn phi(beta: f64, x: f64) -> PyResult<f64> {
    potential(beta)?.phi(x).map_err(err)
}

/// Long-distance limit of phi, 1 / (beta - 1) (beta > 1).
#[pyfunction]
fn phi_limit(beta: f64) -> PyResult<f64> {
    potential(beta)?.phi_limit().map_err(err)
}

/// Positive solution of phi(x) = c.
#[pyfunction]
fn phi_inverse(beta: f64, c: f64) -> PyResult<f64> {
    potential(beta)?.phi_inverse(c).map_err(err)
}

/// Nonnegative solution of big_psi(x) = c.
#[pyfunction]
fn big_psi_inverse(beta: f64, c: f64) -> PyResult<f64> {
    potential(beta)?.big_psi_inverse(c).map_err(err)
}

/// Subtract means; returns (x, v, (mean_position, mean_velocity)).
#[pyfunction]
fn normalize(x: Vec<f64>, v: Vec<f64>) -> (Vec<f64>, Vec<f64>, (f64, f64)) {
    let (xs, vs, shift) = model::normalize(&x, &v);
    (xs, vs, (shift.mean_position, shift.mean_velocity))
}

/// Natural velocities of the first-order reduction from zero-mean data.
#[pyfunction]
fn natural_velocities(beta: f64, kappa: f64, x0: Vec<f64>, v0: Vec<f64>) -> PyResult<Vec<f64>> {
    let p = params(x0.len(), kappa, beta)?;
    model::natural_velocities(&p, &x0, &v0).map_err(err)
}

/// Predicted cluster partition with group velocities.
#[pyclass(name = "ClusterPartition", skip_from_py_object)]
#[derive(Clone)]
struct PyClusterPartition {
    #[pyo3(get)]
    boundaries: Vec<usize>,
    #[pyo3(get)]
    group_velocities: Vec<f64>,
    #[pyo3(get)]
    min_margin: f64,
}

#[pymethods]
impl PyClusterPartition {
    #[getter]
    fn count(&self) -> usize {
        self.boundaries.len() - 1
    }

    fn is_degenerate(&self) -> bool {
        self.min_margin == 0.0
    }

    fn __repr__(&self) -> String {
        format!(
            "ClusterPartition(boundaries={:?}, group_velocities={:?})",
            self.boundaries, self.group_velocities
        )
    }
}

impl From<clustering::ClusterPartition> for PyClusterPartition {
    fn from(p: clustering::ClusterPartition) -> Self {
        Self {
            boundaries: p.boundaries,
            group_velocities: p.group_velocities,
            min_margin: p.min_margin,
        }
    }
}

/// Greedy cluster prediction from natural velocities in spatial order
/// (beta > 1).
#[pyfunction]
fn predict_first_order(nu: Vec<f64>, kappa: f64, beta: f64) -> PyResult<PyClusterPartition> {
    clustering::predict_first_order(&nu, kappa, &potential(beta)?)
        .map(Into::into)
        .map_err(err)
}

/// Cluster prediction for the second-order system (beta > 1).
#[pyfunction]
fn predict_second_order(
    x0: Vec<f64>,
    v0: Vec<f64>,
    kappa: f64,
    beta: f64,
) -> PyResult<PyClusterPartition> {
    clustering::predict_second_order(&x0, &v0, kappa, &potential(beta)?)
        .map(Into::into)
        .map_err(err)
}

/// Critical coupling for mono-cluster flocking, first order.
#[pyfunction]
fn kappa_critical_first_order(nu: Vec<f64>, beta: f64) -> PyResult<f64> {
    clustering::kappa_critical_first_order(&nu, &potential(beta)?).map_err(err)
}

/// Critical coupling for mono-cluster flocking, second order.
#[pyfunction]
fn kappa_critical_second_order(x0: Vec<f64>, v0: Vec<f64>, beta: f64) -> PyResult<f64> {
    clustering::kappa_critical_second_order(&x0, &v0, &potential(beta)?).map_err(err)
}

/// Small-coupling limit partition: (boundaries, min_margin).
#[pyfunction]
fn predict_small_kappa(v0: Vec<f64>) -> PyResult<(Vec<usize>, f64)> {
    clustering::predict_small_kappa(&v0)
        .map(|p| (p.boundaries, p.min_margin))
        .map_err(err)
}

/// Cluster counts over a coupling grid; returns a list of (kappa, count).
#[pyfunction]
#[pyo3(signature = (kappa_grid, beta, nu=None, x0=None, v0=None))]
fn sweep_cluster_count(
    kappa_grid: Vec<f64>,
    beta: f64,
    nu: Option<Vec<f64>>,
    x0: Option<Vec<f64>>,
    v0: Option<Vec<f64>>,
) -> PyResult<Vec<(f64, usize)>> {
    let pot = potential(beta)?;
    let input = match (&nu, &x0, &v0) {
        (Some(nu), None, None) => clustering::SweepInput::FirstOrder { nu },
        (None, Some(x0), Some(v0)) => clustering::SweepInput::SecondOrder { x0, v0 },
        _ => {
            return Err(PyValueError::new_err(
                "pass either nu (first order) or x0 and v0 (second order)",
            ))
        }
    };
    clustering::sweep_cluster_count(&input, &kappa_grid, &pot).map_err(err)
}

/// Solve the window equilibrium system; returns sorted positions.
#[pyfunction]
#[pyo3(signature = (nu, kappa, beta, n_total=None))]
fn solve_equilibrium(
    nu: Vec<f64>,
    kappa: f64,
    beta: f64,
    n_total: Option<usize>,
) -> PyResult<Vec<f64>> {
    let n_total = n_total.unwrap_or(nu.len());
    analysis::solve_equilibrium(&nu, kappa, &potential(beta)?, n_total).map_err(err)
}

fn bounds_to_dict(py: Python<'_>, rep: &analysis::BoundsReport) -> PyResult<Py<PyDict>> {
    let d = PyDict::new(py);
    d.set_item("regime", format!("{:?}", rep.regime))?;
    d.set_item("kappa", rep.kappa)?;
    d.set_item("min_distance_bound", rep.min_distance_bound)?;
    d.set_item("min_distance_degenerate", rep.min_distance_degenerate)?;
    d.set_item("diameter_bound", rep.diameter_bound)?;
    d.set_item("decay_rate", rep.decay_rate)?;
    d.set_item("diameter_floor", rep.diameter_floor)?;
    d.set_item("chain", rep.chain.clone())?;
    d.set_item("min_distance_floor", rep.min_distance_floor)?;
    d.set_item("scaling_estimate", rep.scaling_estimate)?;
    Ok(d.into())
}

/// Explicit bound constants for beta < 1, as a dict.
#[pyfunction]
fn bounds_long_range(
    py: Python<'_>,
    nu: Vec<f64>,
    x0: Vec<f64>,
    kappa: f64,
    beta: f64,
) -> PyResult<Py<PyDict>> {
    let rep = analysis::bounds_long_range(&nu, &x0, kappa, &potential(beta)?).map_err(err)?;
    bounds_to_dict(py, &rep)
}

/// Explicit bound constants for beta > 1, as a dict.
#[pyfunction]
fn bounds_short_range(
    py: Python<'_>,
    nu: Vec<f64>,
    x0: Vec<f64>,
    kappa: f64,
    beta: f64,
) -> PyResult<Py<PyDict>> {
    let rep = analysis::bounds_short_range(&nu, &x0, kappa, &potential(beta)?).map_err(err)?;
    bounds_to_dict(py, &rep)
}

/// Sampled trajectory with a typed event log.
#[pyclass(name = "Trajectory")]
struct PyTrajectory {
    inner: integrator::Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.samples.iter().map(|s| s.time).collect()
    }

    /// Positions per sample, one row per original particle index.
    #[getter]
    fn positions(&self) -> Vec<Vec<f64>> {
        self.inner
            .samples
            .iter()
            .map(|s| s.positions.clone())
            .collect()
    }

    #[getter]
    fn velocities(&self) -> Vec<Vec<f64>> {
        self.inner
            .samples
            .iter()
            .map(|s| s.velocities.clone())
            .collect()
    }

    #[getter]
    fn weights(&self) -> Vec<Vec<u32>> {
        self.inner
            .samples
            .iter()
            .map(|s| s.weights.clone())
            .collect()
    }

    /// Events as dicts {kind, i, j, t} with zero-based indices.
    #[getter]
    fn events<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .events
            .iter()
            .map(|e| {
                let d = PyDict::new(py);
                d.set_item(
                    "kind",
                    match e.kind {
                        EventKind::Crossing => "crossing",
                        EventKind::Sticking => "sticking",
                    },
                )?;
                d.set_item("i", e.i)?;
                d.set_item("j", e.j)?;
                d.set_item("t", e.time)?;
                Ok(d)
            })
            .collect()
    }

    /// Empirical cluster boundaries from trailing-window slope fits.
    fn empirical_boundaries(
        &self,
        window_fraction: f64,
        slope_threshold: f64,
    ) -> PyResult<Vec<usize>> {
        analysis::empirical_clusters(&self.inner, window_fraction, slope_threshold)
            .map(|e| e.boundaries)
            .map_err(err)
    }

    fn csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_csv(&mut buf, None).map_err(err)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(samples={}, events={})",
            self.inner.samples.len(),
            self.inner.events.len()
        )
    }
}

fn config_from(
    rtol: f64,
    atol: f64,
    sample_dt: Option<f64>,
    refine_events: bool,
) -> IntegratorConfig {
    IntegratorConfig {
        rtol,
        atol,
        sample_dt,
        refine_events,
        ..Default::default()
    }
}

/// Integrate the first-order reduction from zero-mean data.
#[pyfunction]
#[pyo3(signature = (beta, kappa, x0, nu, t_end, rtol=1e-6, atol=1e-9, sample_dt=None, refine_events=true))]
#[allow(clippy::too_many_arguments)]
fn simulate_first_order(
    beta: f64,
    kappa: f64,
    x0: Vec<f64>,
    nu: Vec<f64>,
    t_end: f64,
    rtol: f64,
    atol: f64,
    sample_dt: Option<f64>,
    refine_events: bool,
) -> PyResult<PyTrajectory> {
    let p = params(x0.len(), kappa, beta)?;
    let state = FirstOrderState::new(x0, nu).map_err(err)?;
    let cfg = config_from(rtol, atol, sample_dt, refine_events);
    integrator::integrate_first_order(&p, &state, &cfg, t_end)
        .map(|inner| PyTrajectory { inner })
        .map_err(err)
}

/// Integrate the second-order system (beta >= 1) from zero-mean data.
#[pyfunction]
#[pyo3(signature = (beta, kappa, x0, v0, t_end, rtol=1e-6, atol=1e-9, sample_dt=None))]
#[allow(clippy::too_many_arguments)]
fn simulate_second_order(
    beta: f64,
    kappa: f64,
    x0: Vec<f64>,
    v0: Vec<f64>,
    t_end: f64,
    rtol: f64,
    atol: f64,
    sample_dt: Option<f64>,
) -> PyResult<PyTrajectory> {
    let p = params(x0.len(), kappa, beta)?;
    let state = SecondOrderState::new(x0, v0).map_err(err)?;
    let cfg = config_from(rtol, atol, sample_dt, false);
    integrator::integrate_second_order(&p, &state, &cfg, t_end)
        .map(|inner| PyTrajectory { inner })
        .map_err(err)
}

#[pymodule(name = "singular_cs")]
fn pymodule(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyClusterPartition>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(psi, m)?)?;
    m.add_function(wrap_pyfunction!(big_psi, m)?)?;
    m.add_function(wrap_pyfunction!(phi, m)?)?;
    m.add_function(wrap_pyfunction!(phi_limit, m)?)?;
    m.add_function(wrap_pyfunction!(phi_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(big_psi_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(natural_velocities, m)?)?;
    m.add_function(wrap_pyfunction!(predict_first_order, m)?)?;
    m.add_function(wrap_pyfunction!(predict_second_order, m)?)?;
    m.add_function(wrap_pyfunction!(kappa_critical_first_order, m)?)?;
    m.add_function(wrap_pyfunction!(kappa_critical_second_order, m)?)?;
    m.add_function(wrap_pyfunction!(predict_small_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_cluster_count, m)?)?;
    m.add_function(wrap_pyfunction!(solve_equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(bounds_long_range, m)?)?;
    m.add_function(wrap_pyfunction!(bounds_short_range, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_first_order, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_second_order, m)?)?;
    Ok(())
}
