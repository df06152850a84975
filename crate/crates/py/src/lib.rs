//! Python bindings: configuration, hit maps, the Weyl constant, assembly,
//! singular values and truncated-SVD inversion.

use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use audible_core::config::RunConfig as CoreConfig;
use audible_core::geometry::{self, PhasePoint};
use audible_core::inversion::{self, TruncationRule};
use audible_core::linalg::Svd;
use audible_core::observation::{self, ObservationMatrix as CoreMatrix};
use audible_core::pipeline::{self, Stage};
use audible_core::spectral::{self, FitWindow};
use audible_core::wavefield;
use audible_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Domain(_) | Error::Construction(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Run configuration, round-tripped through JSON.
#[pyclass(name = "RunConfig", skip_from_py_object)]
#[derive(Clone)]
struct RunConfig {
    inner: CoreConfig,
}

#[pymethods]
impl RunConfig {
    /// Reference configuration at spacing `h`, writing into `output_dir`.
    #[staticmethod]
    fn reference(h: f64, output_dir: &str) -> Self {
        Self { inner: CoreConfig::reference(h, output_dir) }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        CoreConfig::from_json(text).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    /// Number of Omega nodes (matrix columns).
    fn n_cols(&self) -> PyResult<usize> {
        Ok(self.inner.resolve().map_err(to_py)?.scheme.n_cols())
    }

    fn n_rows(&self) -> PyResult<usize> {
        Ok(self.inner.resolve().map_err(to_py)?.scheme.n_rows())
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(h={}, output_dir={:?})", self.inner.grid.h, self.inner.output_dir)
    }
}

/// Observation matrix with its sampling scheme.
#[pyclass]
struct ObservationMatrix {
    inner: CoreMatrix,
}

#[pymethods]
impl ObservationMatrix {
    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.matrix.shape()
    }

    /// Row-major entries.
    fn to_list(&self) -> Vec<Vec<f64>> {
        self.inner.matrix.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    fn matvec(&self, c: Vec<f64>) -> PyResult<Vec<f64>> {
        if c.len() != self.inner.ncols() {
            return Err(PyValueError::new_err("vector length does not match the columns"));
        }
        Ok((&self.inner.matrix * DVector::from_vec(c)).as_slice().to_vec())
    }

    fn rmatvec(&self, f: Vec<f64>) -> PyResult<Vec<f64>> {
        if f.len() != self.inner.nrows() {
            return Err(PyValueError::new_err("vector length does not match the rows"));
        }
        Ok((self.inner.matrix.tr_mul(&DVector::from_vec(f))).as_slice().to_vec())
    }

    fn save(&self, path: &str, config_hash: &str) -> PyResult<()> {
        audible_core::io::write_matrix(path.as_ref(), &self.inner, config_hash, Default::default()).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (inner, _) = audible_core::io::read_matrix(path.as_ref()).map_err(to_py)?;
        Ok(Self { inner })
    }
}

/// Boundary hit `(x', t)` of the phase point `(y, eta)`.
#[pyfunction]
fn gamma(y: Vec<f64>, eta: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
    let p = PhasePoint::new(y, eta).map_err(to_py)?;
    let e = geometry::gamma(&p).map_err(to_py)?;
    Ok((e.xprime, e.t))
}

#[pyfunction]
fn in_audible_zone(config: &RunConfig, y: Vec<f64>, eta: Vec<f64>) -> PyResult<bool> {
    let res = config.inner.resolve().map_err(to_py)?;
    let p = PhasePoint::new(y, eta).map_err(to_py)?;
    Ok(geometry::in_audible_zone(&p, &res.sigma))
}

/// Principal symbol `b2(y, eta)` with the configured cutoff.
#[pyfunction]
fn principal_symbol(config: &RunConfig, y: Vec<f64>, eta: Vec<f64>) -> PyResult<f64> {
    let res = config.inner.resolve().map_err(to_py)?;
    let p = PhasePoint::new(y, eta).map_err(to_py)?;
    Ok(geometry::principal_symbol_b2(&p, &res.chi))
}

/// Weyl constant by midpoint quadrature.
#[pyfunction]
fn sigma(config: &RunConfig, resolution: usize) -> PyResult<f64> {
    let res = config.inner.resolve().map_err(to_py)?;
    Ok(geometry::sigma_quadrature(&res.omega, &res.sigma, resolution).map_err(to_py)?.value)
}

/// Weyl constant by Monte Carlo: `(value, stderr)`.
#[pyfunction]
fn sigma_montecarlo(config: &RunConfig, samples: u64, seed: u64) -> PyResult<(f64, f64)> {
    let res = config.inner.resolve().map_err(to_py)?;
    let e = geometry::sigma_montecarlo(&res.omega, &res.sigma, samples, seed).map_err(to_py)?;
    Ok((e.value, e.stderr))
}

/// Euclidean data `A c` on the Sigma nodes, computed by one forward solve.
#[pyfunction]
fn solve(py: Python<'_>, config: &RunConfig, coefficients: Vec<f64>) -> PyResult<Vec<f64>> {
    let cfg = config.inner.clone();
    py.detach(move || {
        let res = cfg.resolve()?;
        let v = res.scheme.field_from_coefficients(&coefficients)?;
        let trace = wavefield::solve_halfspace_neumann(&v, &cfg.potential, &res.grid)?;
        observation::weighted_samples(&res.scheme, &trace)
    })
    .map_err(to_py)
}

#[pyfunction]
fn assemble(py: Python<'_>, config: &RunConfig) -> PyResult<ObservationMatrix> {
    let cfg = config.inner.clone();
    py.detach(move || {
        let res = cfg.resolve()?;
        observation::assemble(cfg.sampling.solver, &cfg.potential, &res.grid, &res.scheme)
    })
    .map(|inner| ObservationMatrix { inner })
    .map_err(to_py)
}

#[pyfunction]
fn singular_values(py: Python<'_>, matrix: &ObservationMatrix) -> PyResult<Vec<f64>> {
    py.detach(|| spectral::singular_values(&matrix.inner)).map_err(to_py)
}

#[pyfunction]
fn counting_function(svals: Vec<f64>, lam: f64) -> usize {
    spectral::counting_function(&svals, lam)
}

/// `(sigma_est, slope_est)` over the window `[lo N, hi N]`.
#[pyfunction]
#[pyo3(signature = (svals, d, lo = 0.05, hi = 0.3))]
fn weyl_estimate(svals: Vec<f64>, d: usize, lo: f64, hi: f64) -> PyResult<(f64, f64)> {
    let window = FitWindow::from_fractions(svals.len(), lo, hi).map_err(to_py)?;
    let e = spectral::weyl_estimate(&svals, d, window).map_err(to_py)?;
    Ok((e.sigma_est, e.slope_est))
}

fn parse_rule(kind: &str, value: f64) -> PyResult<TruncationRule> {
    match kind {
        "relative" => Ok(TruncationRule::Relative { factor: value }),
        "threshold" => Ok(TruncationRule::Threshold { lambda: value }),
        "rank" if value >= 0.0 && value.fract() == 0.0 => Ok(TruncationRule::Rank { rank: value as usize }),
        _ => Err(PyValueError::new_err(format!("unknown truncation rule {kind}:{value}"))),
    }
}

/// Truncated-SVD solution of `A c = f`: `(coefficients, kept_terms)`.
#[pyfunction]
#[pyo3(signature = (matrix, f, rule = "relative", value = 1e-3))]
fn truncated_solve(
    py: Python<'_>,
    matrix: &ObservationMatrix,
    f: Vec<f64>,
    rule: &str,
    value: f64,
) -> PyResult<(Vec<f64>, usize)> {
    let rule = parse_rule(rule, value)?;
    py.detach(|| {
        let svd = Svd::new(&matrix.inner.matrix)?;
        inversion::truncated_svd_solve(&svd, &f, rule)
    })
    .map(|s| (s.coefficients, s.kept_terms))
    .map_err(to_py)
}

#[pyfunction]
fn correlation(a: Vec<f64>, b: Vec<f64>) -> f64 {
    inversion::correlation(&a, &b)
}

/// Run pipeline stages by name; returns the exit code (0, 1 or 2).
#[pyfunction]
#[pyo3(signature = (config, stages = None))]
fn run_pipeline(py: Python<'_>, config: &RunConfig, stages: Option<Vec<String>>) -> PyResult<i32> {
    let stages: Vec<Stage> = match stages {
        Some(names) => names.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(to_py)?,
        None => Stage::ALL.to_vec(),
    };
    let cfg = config.inner.clone();
    Ok(py.detach(move || pipeline::exit_code(&pipeline::run_pipeline(&cfg, &stages))))
}

#[pymodule]
pub fn audible_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RunConfig>()?;
    m.add_class::<ObservationMatrix>()?;
    m.add_function(wrap_pyfunction!(gamma, m)?)?;
    m.add_function(wrap_pyfunction!(in_audible_zone, m)?)?;
    m.add_function(wrap_pyfunction!(principal_symbol, m)?)?;
    m.add_function(wrap_pyfunction!(sigma, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_montecarlo, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(assemble, m)?)?;
    m.add_function(wrap_pyfunction!(singular_values, m)?)?;
    m.add_function(wrap_pyfunction!(counting_function, m)?)?;
    m.add_function(wrap_pyfunction!(weyl_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(truncated_solve, m)?)?;
    m.add_function(wrap_pyfunction!(correlation, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
