//! Python bindings for geoforge-core: thin wrappers over the library's
//! types plus free functions mirroring each pipeline stage. Long-running
//! operations (forward modeling, batch runs) release the GIL.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use geoforge_core::align::{AlignMode, AlignSpec};
use geoforge_core::forward;
use geoforge_core::generator;
use geoforge_core::io;
use geoforge_core::leakage;
use geoforge_core::metrics;
use geoforge_core::model::{self, Grid};
use geoforge_core::pipeline;

fn verr(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn ioerr(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

// ---------------------------------------------------------------------------
// Grid types.

#[pyclass(name = "VelocityMap", skip_from_py_object)]
#[derive(Clone)]
struct PyVelocityMap {
    inner: model::VelocityMap,
}

#[pymethods]
impl PyVelocityMap {
    #[new]
    fn new(depth_cells: usize, width_cells: usize, dx: f32, values: Vec<f32>) -> PyResult<Self> {
        Ok(Self {
            inner: model::VelocityMap::new(depth_cells, width_cells, dx, values).map_err(verr)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_map(&path).map_err(ioerr)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_map(&self.inner, &path).map_err(ioerr)
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        io::save_map_csv(&self.inner, &path).map_err(ioerr)
    }

    #[getter]
    fn depth_cells(&self) -> usize {
        self.inner.depth_cells()
    }

    #[getter]
    fn width_cells(&self) -> usize {
        self.inner.width_cells()
    }

    #[getter]
    fn dx(&self) -> f32 {
        self.inner.dx()
    }

    fn values(&self) -> Vec<f32> {
        self.inner.values().to_vec()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<f32> {
        if row >= self.inner.depth_cells() || col >= self.inner.width_cells() {
            return Err(PyIndexError::new_err(format!(
                "({row}, {col}) outside {}x{}",
                self.inner.depth_cells(),
                self.inner.width_cells()
            )));
        }
        Ok(self.inner.get(row, col))
    }

    fn max_velocity(&self) -> f32 {
        self.inner.max_velocity()
    }

    fn __repr__(&self) -> String {
        format!(
            "<VelocityMap {}x{} dx={}>",
            self.inner.depth_cells(),
            self.inner.width_cells(),
            self.inner.dx()
        )
    }
}

#[pyclass(name = "Perturbation", skip_from_py_object)]
#[derive(Clone)]
struct PyPerturbation {
    inner: model::Perturbation,
}

#[pymethods]
impl PyPerturbation {
    #[new]
    fn new(depth_cells: usize, width_cells: usize, dx: f32, values: Vec<f32>) -> PyResult<Self> {
        Ok(Self {
            inner: model::Perturbation::new(depth_cells, width_cells, dx, values).map_err(verr)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_pert(&path).map_err(ioerr)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_pert(&self.inner, &path).map_err(ioerr)
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        io::save_pert_csv(&self.inner, &path).map_err(ioerr)
    }

    #[getter]
    fn depth_cells(&self) -> usize {
        self.inner.depth_cells()
    }

    #[getter]
    fn width_cells(&self) -> usize {
        self.inner.width_cells()
    }

    #[getter]
    fn dx(&self) -> f32 {
        self.inner.dx()
    }

    fn values(&self) -> Vec<f32> {
        self.inner.values().to_vec()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<f32> {
        if row >= self.inner.depth_cells() || col >= self.inner.width_cells() {
            return Err(PyIndexError::new_err(format!(
                "({row}, {col}) outside {}x{}",
                self.inner.depth_cells(),
                self.inner.width_cells()
            )));
        }
        Ok(self.inner.get(row, col))
    }

    fn max_value(&self) -> f32 {
        self.inner.max_value()
    }

    fn __repr__(&self) -> String {
        format!(
            "<Perturbation {}x{} dx={}>",
            self.inner.depth_cells(),
            self.inner.width_cells(),
            self.inner.dx()
        )
    }
}

#[pyclass(name = "LayerProfile", skip_from_py_object)]
#[derive(Clone)]
struct PyLayerProfile {
    inner: model::LayerProfile,
}

#[pymethods]
impl PyLayerProfile {
    #[new]
    fn new(shallow_end: usize, intermediate_end: usize) -> Self {
        Self {
            inner: model::LayerProfile {
                shallow_end,
                intermediate_end,
            },
        }
    }

    #[getter]
    fn shallow_end(&self) -> usize {
        self.inner.shallow_end
    }

    #[getter]
    fn intermediate_end(&self) -> usize {
        self.inner.intermediate_end
    }

    fn __repr__(&self) -> String {
        format!(
            "<LayerProfile shallow_end={} intermediate_end={}>",
            self.inner.shallow_end, self.inner.intermediate_end
        )
    }
}

// ---------------------------------------------------------------------------
// Leakage stage.

#[pyclass(name = "CroppedLeakage", skip_from_py_object)]
#[derive(Clone)]
struct PyCroppedLeakage {
    inner: leakage::CroppedLeakage,
}

#[pymethods]
impl PyCroppedLeakage {
    #[getter]
    fn pert(&self) -> PyPerturbation {
        PyPerturbation {
            inner: self.inner.pert.clone(),
        }
    }

    /// (row_min, row_max, col_min, col_max), all inclusive.
    #[getter]
    fn bbox(&self) -> (usize, usize, usize, usize) {
        let b = self.inner.bbox;
        (b.row_min, b.row_max, b.col_min, b.col_max)
    }
}

#[pyclass(name = "SplitLeakage", skip_from_py_object)]
#[derive(Clone)]
struct PySplitLeakage {
    inner: leakage::SplitLeakage,
}

#[pymethods]
impl PySplitLeakage {
    #[getter]
    fn upper(&self) -> PyPerturbation {
        PyPerturbation {
            inner: self.inner.upper.clone(),
        }
    }

    #[getter]
    fn lower(&self) -> PyPerturbation {
        PyPerturbation {
            inner: self.inner.lower.clone(),
        }
    }

    #[getter]
    fn split_row(&self) -> usize {
        self.inner.split_row
    }
}

// ---------------------------------------------------------------------------
// Alignment.

#[pyclass(name = "EmpiricalCdf", skip_from_py_object)]
#[derive(Clone)]
struct PyEmpiricalCdf {
    inner: geoforge_core::align::EmpiricalCdf,
}

#[pymethods]
impl PyEmpiricalCdf {
    #[staticmethod]
    fn from_samples(samples: Vec<f64>, threshold: f64) -> PyResult<Self> {
        Ok(Self {
            inner: geoforge_core::align::EmpiricalCdf::from_samples(&samples, threshold)
                .map_err(verr)?,
        })
    }

    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: geoforge_core::align::EmpiricalCdf::read_csv(&path).map_err(ioerr)?,
        })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_csv(&path).map_err(ioerr)
    }

    fn eval(&self, x: f64) -> f64 {
        self.inner.eval(x)
    }

    fn samples(&self) -> Vec<f64> {
        self.inner.samples().to_vec()
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold()
    }

    fn min(&self) -> f64 {
        self.inner.min()
    }

    fn max(&self) -> f64 {
        self.inner.max()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "<EmpiricalCdf n={} threshold={}>",
            self.inner.len(),
            self.inner.threshold()
        )
    }
}

fn parse_mode(mode: &str) -> PyResult<AlignMode> {
    match mode {
        "absolute" => Ok(AlignMode::Absolute),
        "delta" => Ok(AlignMode::Delta),
        other => Err(verr(format!(
            "mode must be 'absolute' or 'delta', got {other:?}"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Forward modeling.

#[pyclass(name = "SimConfig", skip_from_py_object)]
#[derive(Clone)]
struct PySimConfig {
    inner: forward::SimConfig,
}

#[pymethods]
impl PySimConfig {
    #[new]
    #[pyo3(signature = (dt, nt, stencil_order=4, source_freq=15.0, source_delay=0.08, sponge_width=20, sponge_strength=0.3))]
    fn new(
        dt: f64,
        nt: usize,
        stencil_order: u32,
        source_freq: f64,
        source_delay: f64,
        sponge_width: usize,
        sponge_strength: f64,
    ) -> PyResult<Self> {
        let cfg = forward::SimConfig {
            dt,
            nt,
            stencil_order: forward::StencilOrder::try_from(stencil_order).map_err(verr)?,
            source_freq,
            source_delay,
            sponge_width,
            sponge_strength,
        };
        cfg.validate().map_err(verr)?;
        Ok(Self { inner: cfg })
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn nt(&self) -> usize {
        self.inner.nt
    }

    #[getter]
    fn stencil_order(&self) -> u32 {
        self.inner.stencil_order.into()
    }

    #[getter]
    fn source_freq(&self) -> f64 {
        self.inner.source_freq
    }
}

#[pyclass(name = "ShotGeometry", skip_from_py_object)]
#[derive(Clone)]
struct PyShotGeometry {
    inner: forward::ShotGeometry,
}

#[pymethods]
impl PyShotGeometry {
    #[new]
    fn new(source: (usize, usize), receivers: Vec<(usize, usize)>) -> Self {
        Self {
            inner: forward::ShotGeometry { source, receivers },
        }
    }

    #[getter]
    fn source(&self) -> (usize, usize) {
        self.inner.source
    }

    #[getter]
    fn receivers(&self) -> Vec<(usize, usize)> {
        self.inner.receivers.clone()
    }
}

#[pyclass(name = "SeismicGather", skip_from_py_object)]
#[derive(Clone)]
struct PySeismicGather {
    inner: forward::SeismicGather,
}

#[pymethods]
impl PySeismicGather {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_gather(&path).map_err(ioerr)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_gather(&self.inner, &path).map_err(ioerr)
    }

    #[getter]
    fn n_receivers(&self) -> usize {
        self.inner.n_receivers()
    }

    #[getter]
    fn nt(&self) -> usize {
        self.inner.nt()
    }

    #[getter]
    fn dt(&self) -> f32 {
        self.inner.dt()
    }

    fn receivers(&self) -> Vec<(u32, u32)> {
        self.inner.receivers().to_vec()
    }

    /// All samples, receiver-major.
    fn samples(&self) -> Vec<f64> {
        self.inner.samples().to_vec()
    }

    fn trace(&self, receiver: usize) -> PyResult<Vec<f64>> {
        if receiver >= self.inner.n_receivers() {
            return Err(PyIndexError::new_err(format!(
                "receiver {receiver} of {}",
                self.inner.n_receivers()
            )));
        }
        Ok(self.inner.trace(receiver).to_vec())
    }

    fn max_abs(&self) -> f64 {
        self.inner.max_abs()
    }

    fn __repr__(&self) -> String {
        format!(
            "<SeismicGather {} receivers x {} samples dt={}>",
            self.inner.n_receivers(),
            self.inner.nt(),
            self.inner.dt()
        )
    }
}

#[pyclass(name = "ProposalParams", skip_from_py_object)]
#[derive(Clone)]
struct PyProposalParams {
    inner: generator::ProposalParams,
}

#[pymethods]
impl PyProposalParams {
    #[new]
    #[pyo3(signature = (jitter_min=0.8, jitter_max=1.3, smooth_warp_sigma=2.0, warp_max_shift=2, seed=0))]
    fn new(
        jitter_min: f64,
        jitter_max: f64,
        smooth_warp_sigma: f64,
        warp_max_shift: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let params = generator::ProposalParams {
            jitter_min,
            jitter_max,
            smooth_warp_sigma,
            warp_max_shift,
            seed,
        };
        params.validate().map_err(verr)?;
        Ok(Self { inner: params })
    }
}

// ---------------------------------------------------------------------------
// Stage functions.

#[pyfunction]
fn subtract_baseline(baseline: &PyVelocityMap, leaked: &PyVelocityMap) -> PyResult<PyPerturbation> {
    Ok(PyPerturbation {
        inner: model::subtract_baseline(&baseline.inner, &leaked.inner).map_err(verr)?,
    })
}

#[pyfunction]
fn recompose(
    baseline: &PyVelocityMap,
    pert: &PyPerturbation,
    v_min: f32,
    v_max: f32,
) -> PyResult<PyVelocityMap> {
    Ok(PyVelocityMap {
        inner: model::recompose(&baseline.inner, &pert.inner, v_min, v_max).map_err(verr)?,
    })
}

#[pyfunction]
fn layer_samples(
    map: &PyVelocityMap,
    profile: &PyLayerProfile,
    layer: &str,
) -> PyResult<Vec<f32>> {
    let layer = match layer {
        "shallow" => model::Layer::Shallow,
        "intermediate" => model::Layer::Intermediate,
        "deep" => model::Layer::Deep,
        other => {
            return Err(verr(format!(
                "layer must be 'shallow', 'intermediate', or 'deep', got {other:?}"
            )))
        }
    };
    model::layer_samples(&map.inner, &profile.inner, layer).map_err(verr)
}

#[pyfunction]
fn default_crop_threshold(pert: &PyPerturbation) -> PyResult<f64> {
    leakage::default_crop_threshold(&pert.inner).map_err(verr)
}

#[pyfunction]
fn crop_leakage(pert: &PyPerturbation, th_l: f64) -> PyResult<PyCroppedLeakage> {
    Ok(PyCroppedLeakage {
        inner: leakage::crop_leakage(&pert.inner, th_l).map_err(verr)?,
    })
}

#[pyfunction]
fn split_horizontal(cropped: &PyCroppedLeakage, seed: u64) -> PyResult<PySplitLeakage> {
    Ok(PySplitLeakage {
        inner: leakage::split_horizontal(&cropped.inner, seed).map_err(verr)?,
    })
}

#[pyfunction]
fn move_to_boundary(
    split: &PySplitLeakage,
    profile: &PyLayerProfile,
) -> PyResult<PyPerturbation> {
    Ok(PyPerturbation {
        inner: leakage::move_to_boundary(&split.inner, &profile.inner).map_err(verr)?,
    })
}

#[pyfunction]
fn build_cdf(samples: Vec<f64>, threshold: f64) -> PyResult<PyEmpiricalCdf> {
    PyEmpiricalCdf::from_samples(samples, threshold)
}

#[pyfunction]
fn map_value(m: f64, source: &PyEmpiricalCdf, target: &PyEmpiricalCdf) -> PyResult<f64> {
    geoforge_core::align::map_value(m, &source.inner, &target.inner).map_err(verr)
}

#[pyfunction]
#[pyo3(signature = (pert, baseline, profile, target_shallow, target_intermediate, th_s=50.0, th_m=50.0, mode="absolute"))]
#[allow(clippy::too_many_arguments)]
fn align_perturbation(
    pert: &PyPerturbation,
    baseline: &PyVelocityMap,
    profile: &PyLayerProfile,
    target_shallow: &PyEmpiricalCdf,
    target_intermediate: &PyEmpiricalCdf,
    th_s: f64,
    th_m: f64,
    mode: &str,
) -> PyResult<PyPerturbation> {
    let spec = AlignSpec {
        target_shallow: target_shallow.inner.clone(),
        target_intermediate: target_intermediate.inner.clone(),
        th_s,
        th_m,
        mode: parse_mode(mode)?,
    };
    Ok(PyPerturbation {
        inner: geoforge_core::align::align_perturbation(
            &pert.inner,
            &baseline.inner,
            &spec,
            &profile.inner,
        )
        .map_err(verr)?,
    })
}

#[pyfunction]
fn propose_map(
    condition: &PyVelocityMap,
    baseline: &PyVelocityMap,
    params: &PyProposalParams,
    v_min: f32,
    v_max: f32,
) -> PyResult<PyVelocityMap> {
    Ok(PyVelocityMap {
        inner: generator::propose_map(
            &condition.inner,
            &baseline.inner,
            &params.inner,
            v_min,
            v_max,
        )
        .map_err(verr)?,
    })
}

#[pyfunction]
fn ricker(t: f64, freq: f64, delay: f64) -> f64 {
    forward::ricker(t, freq, delay)
}

#[pyfunction]
fn check_cfl(map: &PyVelocityMap, cfg: &PySimConfig) -> PyResult<()> {
    forward::check_cfl(&map.inner, &cfg.inner).map_err(verr)
}

#[pyfunction]
fn simulate(
    py: Python<'_>,
    map: &PyVelocityMap,
    cfg: &PySimConfig,
    shot: &PyShotGeometry,
) -> PyResult<PySeismicGather> {
    let (map, cfg, shot) = (map.inner.clone(), cfg.inner.clone(), shot.inner.clone());
    let gather = py
        .detach(move || forward::simulate(&map, &cfg, &shot))
        .map_err(verr)?;
    Ok(PySeismicGather { inner: gather })
}

#[pyfunction]
fn ssim(a: &PyVelocityMap, b: &PyVelocityMap, norm_min: f32, norm_max: f32) -> PyResult<f64> {
    metrics::ssim(&a.inner, &b.inner, norm_min, norm_max).map_err(verr)
}

#[pyfunction]
fn mae(a: &PyVelocityMap, b: &PyVelocityMap) -> PyResult<f64> {
    metrics::mae(&a.inner, &b.inner).map_err(verr)
}

#[pyfunction]
fn mse(a: &PyVelocityMap, b: &PyVelocityMap) -> PyResult<f64> {
    metrics::mse(&a.inner, &b.inner).map_err(verr)
}

#[pyfunction]
fn compare<'py>(
    py: Python<'py>,
    a: &PyVelocityMap,
    b: &PyVelocityMap,
    norm_min: f32,
    norm_max: f32,
) -> PyResult<Bound<'py, PyDict>> {
    let r = metrics::compare(&a.inner, &b.inner, norm_min, norm_max).map_err(verr)?;
    let d = PyDict::new(py);
    d.set_item("ssim", r.ssim)?;
    d.set_item("mae", r.mae)?;
    d.set_item("mse", r.mse)?;
    Ok(d)
}

#[pyfunction]
fn finetune_loss(
    py: Python<'_>,
    pred_synth: Vec<Py<PyVelocityMap>>,
    truth_synth: Vec<Py<PyVelocityMap>>,
    pred_orig: Vec<Py<PyVelocityMap>>,
    truth_orig: Vec<Py<PyVelocityMap>>,
    lam: f64,
) -> PyResult<f64> {
    let unwrap = |v: &[Py<PyVelocityMap>]| -> Vec<model::VelocityMap> {
        v.iter().map(|m| m.borrow(py).inner.clone()).collect()
    };
    let weights = metrics::LossWeights::new(lam).map_err(verr)?;
    metrics::finetune_loss(
        &unwrap(&pred_synth),
        &unwrap(&truth_synth),
        &unwrap(&pred_orig),
        &unwrap(&truth_orig),
        &weights,
    )
    .map_err(verr)
}

// ---------------------------------------------------------------------------
// Batch pipeline.

#[pyfunction]
#[pyo3(signature = (config, workers=None))]
fn run_pipeline(
    py: Python<'_>,
    config: PathBuf,
    workers: Option<usize>,
) -> PyResult<Vec<Py<PyDict>>> {
    let cfg = pipeline::load_config(&config).map_err(verr)?;
    let records = py
        .detach(move || pipeline::run_pipeline_with_workers(&cfg, workers))
        .map_err(verr)?;
    records
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("sample_id", r.sample_id)?;
            d.set_item("seed", r.seed)?;
            d.set_item("status", r.status)?;
            d.set_item("vmap", r.vmap)?;
            d.set_item("gather", r.gather)?;
            d.set_item("condition", r.condition)?;
            d.set_item("split_row", r.split_row)?;
            d.set_item("th_l", r.th_l)?;
            Ok(d.unbind())
        })
        .collect()
}

#[pyfunction]
fn validate_config(config: PathBuf) -> PyResult<()> {
    let cfg = pipeline::load_config(&config).map_err(verr)?;
    pipeline::validate_config(&cfg).map_err(verr)
}

#[pyfunction]
fn sample_seed(master_seed: u64, index: usize) -> u64 {
    pipeline::sample_seed(master_seed, index)
}

#[pyfunction]
fn propose_seed(sample_seed: u64) -> u64 {
    pipeline::propose_seed(sample_seed)
}

#[pyfunction]
fn split_seed(sample_seed: u64) -> u64 {
    pipeline::split_seed(sample_seed)
}

#[pymodule]
fn geoforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVelocityMap>()?;
    m.add_class::<PyPerturbation>()?;
    m.add_class::<PyLayerProfile>()?;
    m.add_class::<PyCroppedLeakage>()?;
    m.add_class::<PySplitLeakage>()?;
    m.add_class::<PyEmpiricalCdf>()?;
    m.add_class::<PySimConfig>()?;
    m.add_class::<PyShotGeometry>()?;
    m.add_class::<PySeismicGather>()?;
    m.add_class::<PyProposalParams>()?;
    m.add_function(wrap_pyfunction!(subtract_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(recompose, m)?)?;
    m.add_function(wrap_pyfunction!(layer_samples, m)?)?;
    m.add_function(wrap_pyfunction!(default_crop_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(crop_leakage, m)?)?;
    m.add_function(wrap_pyfunction!(split_horizontal, m)?)?;
    m.add_function(wrap_pyfunction!(move_to_boundary, m)?)?;
    m.add_function(wrap_pyfunction!(build_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(map_value, m)?)?;
    m.add_function(wrap_pyfunction!(align_perturbation, m)?)?;
    m.add_function(wrap_pyfunction!(propose_map, m)?)?;
    m.add_function(wrap_pyfunction!(ricker, m)?)?;
    m.add_function(wrap_pyfunction!(check_cfl, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(finetune_loss, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(sample_seed, m)?)?;
    m.add_function(wrap_pyfunction!(propose_seed, m)?)?;
    m.add_function(wrap_pyfunction!(split_seed, m)?)?;
    Ok(())
}
