//! Python bindings. Matrices cross the boundary as nested lists of floats,
//! bases as `[K][n][n]`, signals as `[s][n]`.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lwgcn::connectivity::{self as conn, ConstraintMode};
use lwgcn::gcn::{self, GcnModel};
use lwgcn::numkit::{Mat, Tensor3};
use lwgcn::skeleton::{self, SkeletonGraph, Split, SynthConfig, Trajectory};
use lwgcn::trainer::{self, EvalReport, PruneConfig};

fn err(e: lwgcn::Error) -> PyErr {
    match e {
        lwgcn::Error::Io(_) => PyOSError::new_err(e.to_string()),
        lwgcn::Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_mat(rows: &[Vec<f64>]) -> PyResult<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Mat::new(r, c, rows.concat()).map_err(err)
}

fn from_mat(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn to_tensor(t: &[Vec<Vec<f64>>]) -> PyResult<Tensor3> {
    let mats = t.iter().map(|m| to_mat(m)).collect::<PyResult<Vec<_>>>()?;
    Tensor3::from_mats(&mats).map_err(err)
}

fn from_tensor(t: &Tensor3) -> Vec<Vec<Vec<f64>>> {
    t.mats().iter().map(from_mat).collect()
}

fn parse_mode(mode: &str) -> PyResult<ConstraintMode> {
    mode.parse().map_err(err)
}

/// Smallest crispmax sharpness giving ε-orthogonality at per-entry gap `delta`.
#[pyfunction]
#[pyo3(signature = (k, delta = 0.01, epsilon = 0.01))]
fn epsilon_orth_bound(k: usize, delta: f64, epsilon: f64) -> PyResult<f64> {
    conn::epsilon_orth_bound(k, delta, epsilon).map_err(err)
}

/// Softmax across the K matrices at every entry.
#[pyfunction]
fn crispmax(ahat: Vec<Vec<Vec<f64>>>, gamma: f64) -> PyResult<Vec<Vec<Vec<f64>>>> {
    Ok(from_tensor(&conn::crispmax_forward(&to_tensor(&ahat)?, gamma).map_err(err)?))
}

/// Softmax down every column.
#[pyfunction]
fn column_softmax(a: Vec<Vec<f64>>, gamma: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(from_mat(&conn::stochastic_forward(&to_mat(&a)?, gamma).map_err(err)?))
}

/// `[A, A^2, ..., A^k]`.
#[pyfunction]
fn power_map(a: Vec<Vec<f64>>, k: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
    Ok(from_tensor(&skeleton::power_map_basis(&to_mat(&a)?, k).map_err(err)?))
}

/// Per-chunk mean positions, flattened to `3 * m` values.
#[pyfunction]
#[pyo3(signature = (points, m, times = None))]
fn temporal_chunking(points: Vec<[f64; 3]>, m: usize, times: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let traj = match times {
        Some(t) => Trajectory::new(points, t),
        None => Trajectory::uniform(points),
    }
    .map_err(err)?;
    skeleton::temporal_chunking(&traj, m).map_err(err)
}

#[pyclass(name = "Dataset", module = "lwgcn_py", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: skeleton::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Seeded synthetic skeleton actions.
    #[staticmethod]
    #[pyo3(signature = (num_classes = 5, n = 12, per_class = 20, noise = 0.05, seed = 0))]
    fn synthetic(num_classes: usize, n: usize, per_class: usize, noise: f64, seed: u64) -> PyResult<Self> {
        let cfg = SynthConfig {
            num_classes,
            n,
            per_class,
            noise,
            seed,
            ..SynthConfig::default()
        };
        Ok(Self {
            inner: skeleton::synth_dataset(&cfg).map_err(err)?,
        })
    }

    /// Sequences listed in a `path,label,split` manifest.
    #[staticmethod]
    #[pyo3(signature = (manifest, joints = 21, chunks = 4, center = false))]
    fn from_manifest(manifest: PathBuf, joints: usize, chunks: usize, center: bool) -> PyResult<Self> {
        let graph = if joints == 21 {
            SkeletonGraph::hand21()
        } else {
            SkeletonGraph::chain(joints)
        };
        Ok(Self {
            inner: skeleton::load_split(&manifest, &graph, chunks, center).map_err(err)?,
        })
    }

    #[staticmethod]
    fn import_dir(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: skeleton::Dataset::import(&dir).map_err(err)?,
        })
    }

    fn export(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.export(&dir).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn signal_dim(&self) -> usize {
        self.inner.signal_dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names.clone()
    }

    #[getter]
    fn train_size(&self) -> usize {
        self.inner.train.len()
    }

    #[getter]
    fn test_size(&self) -> usize {
        self.inner.test.len()
    }

    /// `(signal, label)` of sample `i`.
    fn sample(&self, i: usize) -> PyResult<(Vec<Vec<f64>>, usize)> {
        let s = self
            .inner
            .samples
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("sample {i} out of range")))?;
        Ok((from_mat(&s.u), s.label))
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, classes={}, train={}, test={})",
            self.inner.n(),
            self.inner.num_classes,
            self.inner.train.len(),
            self.inner.test.len()
        )
    }
}

#[pyclass(name = "TrainConfig", module = "lwgcn_py", skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: trainer::TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    /// `gamma_max = None` uses the ε-orthogonality bound for `k`.
    #[new]
    #[pyo3(signature = (
        max_epochs = 2800, mode = "orth+stc", k = 4, channels = 16, gamma_max = None, batch_size = 600,
        lr = 1e-2, lr_factor = 0.99, lr_min = 1e-5, lr_max = 1e-1, noise = 0.005, seed = 0,
        prune_rate = None, fine_tune_epochs = None, sparsity_threshold = 1e-2
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        max_epochs: usize,
        mode: &str,
        k: usize,
        channels: usize,
        gamma_max: Option<f64>,
        batch_size: usize,
        lr: f64,
        lr_factor: f64,
        lr_min: f64,
        lr_max: f64,
        noise: f64,
        seed: u64,
        prune_rate: Option<f64>,
        fine_tune_epochs: Option<usize>,
        sparsity_threshold: f64,
    ) -> PyResult<Self> {
        let gamma_max = match gamma_max {
            Some(g) => g,
            None => conn::epsilon_orth_bound(k.max(2), conn::DEFAULT_DELTA, conn::DEFAULT_EPSILON).map_err(err)?,
        };
        let inner = trainer::TrainConfig {
            max_epochs,
            mode: parse_mode(mode)?,
            k,
            channels,
            gamma_max,
            batch_size,
            lr_init: lr,
            lr_factor,
            lr_bounds: (lr_min, lr_max),
            noise_magnitude: noise,
            seed,
            prune: prune_rate.map(|rate| PruneConfig {
                rate,
                fine_tune_epochs: fine_tune_epochs.unwrap_or(max_epochs / 10),
            }),
            sparsity_threshold,
            ..trainer::TrainConfig::default()
        };
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn gamma_max(&self) -> f64 {
        self.inner.gamma_max
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.as_str()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "Model", module = "lwgcn_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: GcnModel,
}

impl PyModel {
    fn gamma(&self, gamma: Option<f64>) -> f64 {
        gamma.unwrap_or(self.inner.basis.gamma_max)
    }
}

#[pymethods]
impl PyModel {
    /// Fresh model sized for `dataset` from `config`.
    #[staticmethod]
    fn init(dataset: &PyDataset, config: &PyTrainConfig) -> PyResult<Self> {
        Ok(Self {
            inner: trainer::init_model(&dataset.inner, &config.inner).map_err(err)?,
        })
    }

    /// Random model of explicit shape, for gradient checks.
    #[staticmethod]
    #[pyo3(signature = (k, n, signal_dim, channels, num_classes, mode = "orth+stc", gamma_max = 2.0, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn random(
        k: usize,
        n: usize,
        signal_dim: usize,
        channels: usize,
        num_classes: usize,
        mode: &str,
        gamma_max: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = conn::AdjacencyBasis::random(k, n, parse_mode(mode)?, gamma_max, &mut rng).map_err(err)?;
        Ok(Self {
            inner: GcnModel::init(basis, signal_dim, channels, num_classes, &mut rng).map_err(err)?,
        })
    }

    /// Returns `(model, epoch)`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<(Self, usize)> {
        let (inner, epoch) = GcnModel::load(&path).map_err(err)?;
        Ok((Self { inner }, epoch))
    }

    #[pyo3(signature = (path, epoch = 0))]
    fn save(&self, path: PathBuf, epoch: usize) -> PyResult<()> {
        self.inner.save(&path, epoch).map_err(err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.basis.mode.as_str()
    }

    #[getter]
    fn gamma_max(&self) -> f64 {
        self.inner.basis.gamma_max
    }

    #[getter]
    fn masked(&self) -> bool {
        self.inner.mask.is_some()
    }

    /// Raw basis parameters.
    #[getter]
    fn ahat(&self) -> Vec<Vec<Vec<f64>>> {
        from_tensor(&self.inner.basis.ahat)
    }

    /// Effective basis (mask applied) at `gamma`, default `gamma_max`.
    #[pyo3(signature = (gamma = None))]
    fn effective(&self, gamma: Option<f64>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let (_, a) = self.inner.effective(self.gamma(gamma)).map_err(err)?;
        Ok(from_tensor(&a))
    }

    /// Pruning rate, orthogonality and column-sum diagnostics of the effective basis.
    #[pyo3(signature = (threshold = 1e-2, gamma = None))]
    fn diagnostics<'py>(&self, py: Python<'py>, threshold: f64, gamma: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
        let (eff, a) = self.inner.effective(self.gamma(gamma)).map_err(err)?;
        let report = conn::sparsity_of(&a, eff.mode, threshold);
        let d = PyDict::new(py);
        d.set_item("pruning_rate_percent", report.pruning_rate_percent)?;
        d.set_item("target_rate_percent", report.target_rate_percent)?;
        d.set_item("nonzero_count", report.nonzero_count)?;
        d.set_item("total", report.total)?;
        d.set_item("max_cross_orth", conn::max_cross_product(&a))?;
        d.set_item("max_colsum_dev", conn::max_colsum_dev(&a))?;
        d.set_item("delta_gap", conn::delta_gap(&self.inner.basis.ahat))?;
        Ok(d)
    }

    #[pyo3(signature = (u, gamma = None))]
    fn logits(&self, u: Vec<Vec<f64>>, gamma: Option<f64>) -> PyResult<Vec<f64>> {
        let trace = gcn::model_forward(&self.inner, &to_mat(&u)?, self.gamma(gamma)).map_err(err)?;
        Ok(trace.logits().to_vec())
    }

    #[pyo3(signature = (u, gamma = None))]
    fn predict(&self, u: Vec<Vec<f64>>, gamma: Option<f64>) -> PyResult<usize> {
        Ok(gcn::argmax(&self.logits(u, gamma)?))
    }

    /// Max relative error per parameter group, analytic vs central differences.
    #[pyo3(signature = (u, label, gamma, step = 1e-5))]
    fn gradient_check(&self, u: Vec<Vec<f64>>, label: usize, gamma: f64, step: f64) -> PyResult<Vec<(String, f64)>> {
        let checks = gcn::gradient_check(&self.inner, &to_mat(&u)?, label, gamma, step, false).map_err(err)?;
        Ok(checks
            .into_iter()
            .map(|c| (c.group.name().to_string(), c.max_rel_error))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(mode={}, k={}, n={}, channels={}, classes={})",
            self.inner.basis.mode,
            self.inner.k(),
            self.inner.n(),
            self.inner.channels(),
            self.inner.num_classes()
        )
    }
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean_class_accuracy", r.mean_class_accuracy)?;
    d.set_item("per_class", r.per_class.clone())?;
    d.set_item("confusion", r.confusion.clone())?;
    Ok(d)
}

fn parse_split(split: &str) -> PyResult<Split> {
    split.parse().map_err(err)
}

/// Trains a copy of `model`. Returns `(model, epoch_records, final_eval)`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn train<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    model: &PyModel,
    config: &PyTrainConfig,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>, Option<Bound<'py, PyDict>>)> {
    let (ds, m, cfg) = (&dataset.inner, &model.inner, &config.inner);
    let (trained, metrics) = py.detach(|| trainer::train(ds, m, cfg)).map_err(err)?;
    let records = metrics
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("loss", r.loss)?;
            d.set_item("nu", r.nu)?;
            d.set_item("gamma_eff", r.gamma_eff)?;
            d.set_item("max_cross_orth", r.max_cross_orth)?;
            d.set_item("max_colsum_dev", r.max_colsum_dev)?;
            d.set_item("pruning_rate", r.pruning_rate)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let eval = metrics.final_eval.as_ref().map(|r| report_dict(py, r)).transpose()?;
    Ok((PyModel { inner: trained }, records, eval))
}

#[pyfunction]
#[pyo3(signature = (model, dataset, split = "test"))]
fn evaluate<'py>(py: Python<'py>, model: &PyModel, dataset: &PyDataset, split: &str) -> PyResult<Bound<'py, PyDict>> {
    let split = parse_split(split)?;
    let r = py
        .detach(|| trainer::evaluate(&model.inner, &dataset.inner, split))
        .map_err(err)?;
    report_dict(py, &r)
}

/// Zeroes the `rate` percent smallest effective-basis entries through a mask.
#[pyfunction]
fn magnitude_prune(model: &PyModel, rate: f64) -> PyResult<PyModel> {
    Ok(PyModel {
        inner: trainer::magnitude_prune(&model.inner, rate).map_err(err)?,
    })
}

#[pymodule]
fn lwgcn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(epsilon_orth_bound, m)?)?;
    m.add_function(wrap_pyfunction!(crispmax, m)?)?;
    m.add_function(wrap_pyfunction!(column_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(power_map, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_chunking, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(magnitude_prune, m)?)?;
    Ok(())
}
