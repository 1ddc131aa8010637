//! Python bindings: the `Model` class wraps one configured experiment
//! (task, model, optimizer settings parsed from the same TOML the CLI
//! takes), and module functions cover the one-shot path plus the small
//! numeric helpers worth calling from notebooks.

use inrlab::cli::config::{self, Config};
use inrlab::mat::Mat;
use inrlab::models::Model;
use inrlab::tasks::fit::{self, EvalMetrics, FitOutcome, RunRecord};
use inrlab::tasks::{metrics, Task};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::Path;

fn to_py_err(e: inrlab::Error) -> PyErr {
    let msg = e.to_string();
    match e.kind() {
        "config" | "usage" | "domain" => PyValueError::new_err(msg),
        "io" => PyOSError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn mat_from_rows(rows: &[Vec<f64>], want_cols: usize, what: &str) -> PyResult<Mat> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != want_cols {
            return Err(PyValueError::new_err(format!(
                "{what} row {i} has {} values, expected {want_cols}",
                row.len()
            )));
        }
    }
    Ok(Mat::from_rows(rows))
}

fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn set_metrics(d: &Bound<'_, PyDict>, m: &EvalMetrics) -> PyResult<()> {
    d.set_item("train_mse", m.train_mse)?;
    d.set_item("train_psnr", m.train_psnr)?;
    d.set_item("heldout_mse", m.heldout_mse)?;
    d.set_item("heldout_psnr", m.heldout_psnr)?;
    d.set_item("iou", m.iou)?;
    Ok(())
}

fn record_dict<'py>(py: Python<'py>, r: &RunRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("seed", r.seed)?;
    d.set_item("iters_completed", r.iters_completed)?;
    d.set_item("final_loss", r.final_loss)?;
    d.set_item("wall_time_s", r.wall_time_s)?;
    d.set_item("losses", r.rows.iter().map(|row| row.loss).collect::<Vec<f64>>())?;
    if let Some(m) = &r.final_metrics {
        set_metrics(&d, m)?;
    }
    Ok(d)
}

/// One configured experiment: the task, the model and the optimizer
/// settings from a config document. Construction seeds the weights; `fit`
/// trains in place.
#[pyclass(name = "Model")]
struct PyModel {
    inner: Model,
    task: Task,
    cfg: Config,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(config_text: &str) -> PyResult<Self> {
        let cfg = config::parse(config_text, &[]).map_err(to_py_err)?;
        let task = cfg.build_task().map_err(to_py_err)?;
        let kind = cfg.model_kind().map_err(to_py_err)?;
        let mcfg = cfg.model_config(&task).map_err(to_py_err)?;
        let inner = fit::seeded_model(kind, task.d_in(), task.d_out(), &mcfg, cfg.seed)
            .map_err(to_py_err)?;
        Ok(PyModel { inner, task, cfg })
    }

    /// Runs the configured training loop and returns the run summary.
    /// Calling it again continues from the current weights with a fresh
    /// optimizer state.
    fn fit<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let params = self.cfg.fit_params();
        match fit::fit(&self.task, &mut self.inner, &params).map_err(to_py_err)? {
            FitOutcome::Completed(record) => record_dict(py, &record),
            FitOutcome::Aborted { reason, .. } => Err(PyRuntimeError::new_err(reason)),
        }
    }

    /// Model outputs for coordinate rows in [0, 1]^d_in.
    fn predict(&self, coords: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let m = mat_from_rows(&coords, self.inner.d_in, "coords")?;
        Ok(mat_to_rows(&self.inner.predict(&m).map_err(to_py_err)?))
    }

    /// Split metrics of the current weights on the configured task.
    fn evaluate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        set_metrics(&d, &self.task.evaluate(&self.inner).map_err(to_py_err)?)?;
        Ok(d)
    }

    /// Analytic d_out x d_in Jacobian of the model output at one coordinate.
    /// Lookup encoders contribute their within-cell interpolation slope.
    fn coord_jacobian(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        if x.len() != self.inner.d_in {
            return Err(PyValueError::new_err(format!(
                "coordinate has {} values, expected {}",
                x.len(),
                self.inner.d_in
            )));
        }
        Ok(mat_to_rows(&self.inner.coord_jacobian_analytic(&x).map_err(to_py_err)?))
    }

    /// Central finite-difference Jacobian with step h, for checking the
    /// analytic one.
    fn coord_jacobian_fd(&self, x: Vec<f64>, h: f64) -> PyResult<Vec<Vec<f64>>> {
        if x.len() != self.inner.d_in {
            return Err(PyValueError::new_err(format!(
                "coordinate has {} values, expected {}",
                x.len(),
                self.inner.d_in
            )));
        }
        Ok(mat_to_rows(&self.inner.coord_jacobian_fd(&x, h).map_err(to_py_err)?))
    }

    fn save_checkpoint(&self, path: &str) -> PyResult<()> {
        self.inner.save_checkpoint(Path::new(path)).map_err(to_py_err)
    }

    fn load_checkpoint(&mut self, path: &str) -> PyResult<()> {
        self.inner.load_checkpoint(Path::new(path)).map_err(to_py_err)
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn task_kind(&self) -> &'static str {
        self.task.kind_name()
    }

    #[getter]
    fn d_in(&self) -> usize {
        self.inner.d_in
    }

    #[getter]
    fn d_out(&self) -> usize {
        self.inner.d_out
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_scalar_params()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind='{}', task='{}', d_in={}, d_out={}, params={})",
            self.inner.kind,
            self.task.kind_name(),
            self.inner.d_in,
            self.inner.d_out,
            self.inner.num_scalar_params()
        )
    }
}

/// Parses a config document, trains the configured model and returns the
/// run summary. Nothing is written to disk.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config_text: &str) -> PyResult<Bound<'py, PyDict>> {
    let mut model = PyModel::new(config_text)?;
    model.fit(py)
}

/// Order-invariant spatial hash of an integer grid index into a table of
/// `table_size` slots.
#[pyfunction]
fn spatial_hash(grid_index: Vec<usize>, table_size: usize) -> PyResult<usize> {
    if table_size == 0 {
        return Err(PyValueError::new_err("table_size must be positive"));
    }
    Ok(inrlab::encodings::spatial_hash(&grid_index, table_size))
}

/// Peak signal-to-noise ratio in dB between two equal-length signals.
#[pyfunction]
#[pyo3(signature = (pred, target, peak = 1.0))]
fn psnr(pred: Vec<f64>, target: Vec<f64>, peak: f64) -> PyResult<f64> {
    if pred.len() != target.len() {
        return Err(PyValueError::new_err("pred and target lengths differ"));
    }
    let n = pred.len();
    let p = Mat::from_vec(n, 1, pred);
    let t = Mat::from_vec(n, 1, target);
    metrics::psnr(&p, &t, peak).map_err(to_py_err)
}

/// Intersection over union of the sign-based occupancies of two signed
/// distance samplings.
#[pyfunction]
fn iou(pred: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    metrics::iou(&pred, &target).map_err(to_py_err)
}

/// The model kinds accepted as `model.kind` in a config.
#[pyfunction]
fn model_kinds() -> Vec<String> {
    inrlab::models::ModelKind::all().iter().map(|k| k.to_string()).collect()
}

#[pymodule]
fn inrlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(spatial_hash, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(model_kinds, m)?)?;
    Ok(())
}
