//! Python bindings. Matrices cross the boundary as lists of rows and
//! vectors as flat lists of floats.

use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use d2pc::controllers::{run_closed_loop, Trajectory};
use d2pc::datadriven::{build_predictor, identify, DataDrivenModel};
use d2pc::harness::{self, build_controller, nominal_outputs, DeepcData, ExperimentSpec, Method};
use d2pc::numerics::{self, Matrix, Vector, DEFAULT_REL_TOL, IDENTIFICATION_REL_TOL};
use d2pc::plant::{self, BenchmarkName, EpisodeData, ExcitationSpec, NoiseSpec};
use d2pc::qp::{self, QpProblem, QpSettings};
use d2pc::Error;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::NotFound(msg) => PyKeyError::new_err(msg),
        Error::InvalidInput(_) | Error::Config(_) | Error::Parse { .. } => PyValueError::new_err(err.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("matrix rows have different lengths"));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

fn list(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

fn bench_name(name: &str) -> PyResult<BenchmarkName> {
    name.parse().map_err(to_py)
}

/// Discrete-time plant `x⁺ = A x + B u`, `y = C x`.
#[pyclass(name = "LtiSystem", module = "d2pc_py", from_py_object)]
#[derive(Clone)]
struct PyLtiSystem {
    inner: plant::LtiSystem,
}

#[pymethods]
impl PyLtiSystem {
    #[new]
    fn new(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, c: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = plant::LtiSystem::new(matrix(&a)?, matrix(&b)?, matrix(&c)?).map_err(to_py)?;
        Ok(PyLtiSystem { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn a(&self) -> Vec<Vec<f64>> {
        rows(self.inner.a())
    }

    #[getter]
    fn b(&self) -> Vec<Vec<f64>> {
        rows(self.inner.b())
    }

    #[getter]
    fn c(&self) -> Vec<Vec<f64>> {
        rows(self.inner.c())
    }

    /// Outputs (`p × T`, rows per channel) for inputs given as `m × T` rows.
    #[pyo3(signature = (inputs, x0=None, noise=0.0, seed=0))]
    fn simulate(&self, inputs: Vec<Vec<f64>>, x0: Option<Vec<f64>>, noise: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let x0 = x0.map_or_else(|| Vector::zeros(self.inner.n()), |v| vector(&v));
        let noise = NoiseSpec::new(noise, seed).map_err(to_py)?;
        let y = plant::simulate(&self.inner, &x0, &matrix(&inputs)?, &noise).map_err(to_py)?;
        Ok(rows(&y))
    }

    fn __repr__(&self) -> String {
        format!("LtiSystem(n={}, m={}, p={})", self.inner.n(), self.inner.m(), self.inner.p())
    }
}

/// Recorded pre-experiment with `initial_offset` history samples.
#[pyclass(name = "Episode", module = "d2pc_py", from_py_object)]
#[derive(Clone)]
struct PyEpisode {
    inner: EpisodeData,
}

#[pymethods]
impl PyEpisode {
    #[new]
    #[pyo3(signature = (inputs, outputs, initial_offset=0))]
    fn new(inputs: Vec<Vec<f64>>, outputs: Vec<Vec<f64>>, initial_offset: usize) -> PyResult<Self> {
        let inner = EpisodeData::new(matrix(&inputs)?, matrix(&outputs)?, initial_offset).map_err(to_py)?;
        Ok(PyEpisode { inner })
    }

    #[getter]
    fn inputs(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.inputs)
    }

    #[getter]
    fn outputs(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.outputs)
    }

    #[getter]
    fn initial_offset(&self) -> usize {
        self.inner.initial_offset
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_csv(&mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        let inner = EpisodeData::read_csv(text.as_bytes()).map_err(to_py)?;
        Ok(PyEpisode { inner })
    }
}

/// Identified per-channel model on the stacked χ̄ state.
#[pyclass(name = "DataDrivenModel", module = "d2pc_py", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: DataDrivenModel,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn nbar(&self) -> usize {
        self.inner.nbar()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn episodes_averaged(&self) -> usize {
        self.inner.episodes_averaged()
    }

    fn a_block_diag(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.a_block_diag())
    }

    fn b_stack(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.b_stack())
    }

    /// Stacked χ̄ from the last `n̄` outputs (`p × n̄`) and inputs (`m × n̄`).
    fn stacked_chi(&self, y_history: Vec<Vec<f64>>, u_history: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let chi = self
            .inner
            .stacked_chi(&matrix(&y_history)?, &matrix(&u_history)?)
            .map_err(to_py)?;
        Ok(list(&chi))
    }

    /// Predicted `col(y(t), …, y(t+N−1))` for stacked state `chi` and inputs `col(u(t), …)`.
    fn predict_outputs(&self, chi: Vec<f64>, inputs: Vec<f64>) -> PyResult<Vec<f64>> {
        let m = self.inner.m();
        if inputs.is_empty() || inputs.len() % m != 0 {
            return Err(PyValueError::new_err("input sequence length must be a positive multiple of m"));
        }
        if chi.len() != self.inner.state_dim() {
            return Err(PyValueError::new_err("chi has the wrong length"));
        }
        let pred = build_predictor(&self.inner, inputs.len() / m).map_err(to_py)?;
        Ok(list(&pred.predict_outputs(&vector(&chi), &vector(&inputs))))
    }

    /// `(F, G)` of the horizon predictor.
    fn predictor(&self, horizon: usize) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let pred = build_predictor(&self.inner, horizon).map_err(to_py)?;
        Ok((rows(&pred.f), rows(&pred.g)))
    }

    fn to_text(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_text(&mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let inner = DataDrivenModel::read_text(text.as_bytes()).map_err(to_py)?;
        Ok(PyModel { inner })
    }
}

#[pyfunction]
#[pyo3(signature = (matrix_rows, rel_tol=DEFAULT_REL_TOL))]
fn pinv(matrix_rows: Vec<Vec<f64>>, rel_tol: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&numerics::pinv(&matrix(&matrix_rows)?, rel_tol).map_err(to_py)?))
}

#[pyfunction]
#[pyo3(signature = (matrix_rows, rel_tol=DEFAULT_REL_TOL))]
fn numeric_rank(matrix_rows: Vec<Vec<f64>>, rel_tol: f64) -> PyResult<usize> {
    Ok(numerics::numeric_rank(&matrix(&matrix_rows)?, rel_tol)
        .map_err(to_py)?
        .numeric_rank)
}

/// Block Hankel matrix of an `m × T` signal.
#[pyfunction]
fn hankel(signal: Vec<Vec<f64>>, depth: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&numerics::hankel(&matrix(&signal)?, depth).map_err(to_py)?))
}

#[pyfunction]
#[pyo3(signature = (signal, depth, rel_tol=DEFAULT_REL_TOL))]
fn is_persistently_exciting(signal: Vec<Vec<f64>>, depth: usize, rel_tol: f64) -> PyResult<bool> {
    Ok(numerics::is_persistently_exciting(&matrix(&signal)?, depth, rel_tol).0)
}

#[pyfunction]
fn benchmark_system(name: &str) -> PyResult<PyLtiSystem> {
    Ok(PyLtiSystem {
        inner: plant::Benchmark::get(bench_name(name)?).system,
    })
}

/// Identification episode of `t_len + nbar` samples from the named benchmark or a given system.
#[pyfunction]
#[pyo3(signature = (system, t_len, nbar, seed=0, noise=0.0, amplitude=1.0))]
fn collect_episode(system: &PyLtiSystem, t_len: usize, nbar: usize, seed: u64, noise: f64, amplitude: f64) -> PyResult<PyEpisode> {
    let inner = plant::collect_episode(
        &system.inner,
        t_len,
        nbar,
        &ExcitationSpec::new(amplitude, seed).with_stream(1),
        &NoiseSpec::new(noise, seed).map_err(to_py)?.with_stream(2),
    )
    .map_err(to_py)?;
    Ok(PyEpisode { inner })
}

#[pyfunction(name = "identify")]
#[pyo3(signature = (episodes, nbar, pinv_tol=IDENTIFICATION_REL_TOL))]
fn py_identify(episodes: Vec<PyEpisode>, nbar: usize, pinv_tol: f64) -> PyResult<PyModel> {
    let eps: Vec<EpisodeData> = episodes.into_iter().map(|e| e.inner).collect();
    Ok(PyModel {
        inner: identify(&eps, nbar, pinv_tol).map_err(to_py)?,
    })
}

/// Solves `min ½zᵀHz + fᵀz  s.t. l ≤ Mz ≤ u`.
#[pyfunction]
#[pyo3(signature = (h, f, m=None, l=None, u=None, max_iter=10_000, eps=1e-6))]
#[allow(clippy::too_many_arguments)]
fn solve_qp<'py>(
    py: Python<'py>,
    h: Vec<Vec<f64>>,
    f: Vec<f64>,
    m: Option<Vec<Vec<f64>>>,
    l: Option<Vec<f64>>,
    u: Option<Vec<f64>>,
    max_iter: usize,
    eps: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let d = f.len();
    let mm = match m {
        Some(rows) if !rows.is_empty() => matrix(&rows)?,
        _ => Matrix::zeros(0, d),
    };
    let c = mm.nrows();
    let l = l.map_or_else(|| Vector::from_element(c, f64::NEG_INFINITY), |v| vector(&v));
    let u = u.map_or_else(|| Vector::from_element(c, f64::INFINITY), |v| vector(&v));
    let prob = QpProblem::new(matrix(&h)?, vector(&f), mm, l, u).map_err(to_py)?;
    let settings = QpSettings {
        max_iter,
        eps_abs: eps,
        eps_rel: eps,
        ..QpSettings::default()
    };
    let sol = qp::solve(&prob, &settings).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("status", sol.status.as_str())?;
    out.set_item("z", list(&sol.z))?;
    out.set_item("lambda", list(&sol.lambda))?;
    out.set_item("objective", prob.objective(&sol.z))?;
    out.set_item("iterations", sol.iterations)?;
    out.set_item("primal_residual", sol.primal_residual)?;
    out.set_item("dual_residual", sol.dual_residual)?;
    Ok(out)
}

#[pyfunction]
fn compute_mae(y: Vec<Vec<f64>>, y_nom: Vec<Vec<f64>>) -> PyResult<f64> {
    harness::compute_mae(&matrix(&y)?, &matrix(&y_nom)?).map_err(to_py)
}

#[allow(clippy::too_many_arguments)]
fn make_spec(
    benchmark: &str,
    method: &str,
    nbar: Option<usize>,
    n_d: Option<usize>,
    t_ini: Option<usize>,
    q: Option<usize>,
    lambda_g: Option<f64>,
    lambda_y: Option<f64>,
    noise: f64,
    trials: usize,
    n_sim: Option<usize>,
    seed: u64,
    averaged: bool,
) -> PyResult<ExperimentSpec> {
    let method: Method = method.parse().map_err(to_py)?;
    let mut s = ExperimentSpec::new(bench_name(benchmark)?, method);
    s.nbar = nbar.unwrap_or(s.nbar);
    s.n_d = n_d.unwrap_or(s.n_d);
    s.t_ini = t_ini.unwrap_or(s.t_ini);
    s.q = q.unwrap_or(s.q);
    s.lambda_g = lambda_g.unwrap_or(s.lambda_g);
    s.lambda_y = lambda_y.unwrap_or(s.lambda_y);
    s.n_sim = n_sim.unwrap_or(s.n_sim);
    s.noise = noise;
    s.trials = trials;
    s.base_seed = seed;
    if averaged {
        s.deepc_data = DeepcData::Averaged;
    }
    s.validate().map_err(to_py)?;
    Ok(s)
}

fn trajectory_dict<'py>(py: Python<'py>, traj: &Trajectory, y_nom: &Matrix) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("inputs", rows(&traj.inputs))?;
    out.set_item("outputs", rows(&traj.outputs))?;
    out.set_item("measured", rows(&traj.measured))?;
    out.set_item("reference", rows(&traj.reference))?;
    out.set_item("y_nom", rows(y_nom))?;
    out.set_item("status", traj.status.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
    out.set_item("failed", traj.failed)?;
    Ok(out)
}

/// One closed loop on a benchmark; returns the trajectory as a dict.
#[pyfunction]
#[pyo3(signature = (benchmark, method="d2pc", nbar=None, n_d=None, t_ini=None, q=None, lambda_g=None, lambda_y=None, noise=0.0, n_sim=None, seed=0, averaged=false))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    benchmark: &str,
    method: &str,
    nbar: Option<usize>,
    n_d: Option<usize>,
    t_ini: Option<usize>,
    q: Option<usize>,
    lambda_g: Option<f64>,
    lambda_y: Option<f64>,
    noise: f64,
    n_sim: Option<usize>,
    seed: u64,
    averaged: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = make_spec(benchmark, method, nbar, n_d, t_ini, q, lambda_g, lambda_y, noise, 1, n_sim, seed, averaged)?;
    let (traj, y_nom) = py
        .detach(|| -> d2pc::Result<_> {
            let bench = plant::Benchmark::get(spec.benchmark);
            let mut ctrl = build_controller(&spec, seed)?;
            let noise = NoiseSpec::new(spec.noise, seed)?.with_stream(0);
            let traj = run_closed_loop(&bench.system, ctrl.as_mut(), &bench.defaults.reference, &noise, spec.n_sim)?;
            Ok((traj, nominal_outputs(spec.benchmark, spec.n_sim)?))
        })
        .map_err(to_py)?;
    trajectory_dict(py, &traj, &y_nom)
}

/// Seeded trial battery; returns mean MAE (None when every trial failed),
/// failure ratio and per-trial MAEs.
#[pyfunction]
#[pyo3(signature = (benchmark, method="d2pc", nbar=None, n_d=None, t_ini=None, q=None, lambda_g=None, lambda_y=None, noise=0.0, trials=10, n_sim=None, seed=0, averaged=false))]
#[allow(clippy::too_many_arguments)]
fn run_experiment<'py>(
    py: Python<'py>,
    benchmark: &str,
    method: &str,
    nbar: Option<usize>,
    n_d: Option<usize>,
    t_ini: Option<usize>,
    q: Option<usize>,
    lambda_g: Option<f64>,
    lambda_y: Option<f64>,
    noise: f64,
    trials: usize,
    n_sim: Option<usize>,
    seed: u64,
    averaged: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = make_spec(benchmark, method, nbar, n_d, t_ini, q, lambda_g, lambda_y, noise, trials, n_sim, seed, averaged)?;
    let res = py.detach(|| harness::run_experiment(&spec)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("label", spec.label())?;
    out.set_item("mean_mae", res.cell.mean_mae)?;
    out.set_item("failure_ratio", res.cell.failure_ratio)?;
    out.set_item("trial_mae", res.trials.iter().map(|t| t.mae).collect::<Vec<_>>())?;
    out.set_item("seeds", res.trials.iter().map(|t| t.seed).collect::<Vec<_>>())?;
    Ok(out)
}

#[pymodule]
fn d2pc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLtiSystem>()?;
    m.add_class::<PyEpisode>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(pinv, m)?)?;
    m.add_function(wrap_pyfunction!(numeric_rank, m)?)?;
    m.add_function(wrap_pyfunction!(hankel, m)?)?;
    m.add_function(wrap_pyfunction!(is_persistently_exciting, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark_system, m)?)?;
    m.add_function(wrap_pyfunction!(collect_episode, m)?)?;
    m.add_function(wrap_pyfunction!(py_identify, m)?)?;
    m.add_function(wrap_pyfunction!(solve_qp, m)?)?;
    m.add_function(wrap_pyfunction!(compute_mae, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
