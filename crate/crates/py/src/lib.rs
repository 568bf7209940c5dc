//! Python bindings for the occupancy toolkit.

use std::path::PathBuf;

use bevocc_core::config::RunConfig;
use bevocc_core::geometry::{project_point, CameraRig, VoxelGridSpec};
use bevocc_core::gradcheck::run_suite;
use bevocc_core::head::{forward_pipeline, interp_sample, HeadWeights};
use bevocc_core::metrics::{
    bench_heads, emit_flops_table, flops_conv2d, flops_conv3d, flops_interp, flops_report, speedup_ratio,
    FlopsLayerSpec, TableFormat,
};
use bevocc_core::scenegen::{
    add_feature_noise, camera_inputs, gen_scene, read_scene, render_views, write_scene, RenderedView,
};
use bevocc_core::supervision::{
    bev_gt_from_occ, dice_loss, focal_loss, loss_breakdown, lovasz_softmax, total_loss, OccupancyVolume, DICE_EPS,
    FOCAL_GAMMA,
};
use bevocc_core::tensor::io::{read_tensor, write_tensor, DType};
use bevocc_core::tensor::{conv2d, conv3d, ConvParams, Tensor};
use bevocc_core::OccError;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: OccError) -> PyErr {
    match e {
        OccError::Io(_) => PyOSError::new_err(e.to_string()),
        OccError::Generation { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for bevocc_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

/// Dense row-major f64 tensor.
#[pyclass(name = "Tensor", module = "bevocc", from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(dims: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: Tensor::new(dims, data).py()? })
    }

    #[staticmethod]
    fn zeros(dims: Vec<usize>) -> Self {
        Self { inner: Tensor::zeros(&dims) }
    }

    /// Reads an `.occt` float file.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: read_tensor(path).py()? })
    }

    /// Writes an `.occt` file; `dtype` is `"f32"` or `"f64"`.
    #[pyo3(signature = (path, dtype = "f32"))]
    fn write(&self, path: PathBuf, dtype: &str) -> PyResult<()> {
        let dtype = match dtype {
            "f32" => DType::F32,
            "f64" => DType::F64,
            other => return Err(PyValueError::new_err(format!("unsupported dtype {other}"))),
        };
        write_tensor(path, &self.inner, dtype).py()
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn at(&self, index: Vec<usize>) -> PyResult<f64> {
        let dims = self.inner.dims();
        if index.len() != dims.len() || index.iter().zip(dims).any(|(i, d)| i >= d) {
            return Err(PyValueError::new_err(format!("index {index:?} out of bounds for {dims:?}")));
        }
        Ok(self.inner.at(&index))
    }

    fn sum(&self) -> f64 {
        self.inner.sum()
    }

    fn max_abs(&self) -> f64 {
        self.inner.max_abs()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(dims={:?})", self.inner.dims())
    }
}

/// Voxel grid: range `[H_s, W_s, Z_s, H_e, W_e, Z_e]` and counts `[H, W, Z]`.
#[pyclass(name = "VoxelGrid", module = "bevocc", skip_from_py_object)]
#[derive(Clone)]
struct PyGrid {
    inner: VoxelGridSpec,
}

#[pymethods]
impl PyGrid {
    #[new]
    fn new(range: [f64; 6], dims: [usize; 3]) -> PyResult<Self> {
        Ok(Self { inner: VoxelGridSpec::new(range, dims).py()? })
    }

    #[getter]
    fn range(&self) -> [f64; 6] {
        self.inner.range
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.dims
    }

    fn voxel_size(&self) -> [f64; 3] {
        self.inner.voxel_size()
    }

    fn voxel_count(&self) -> usize {
        self.inner.voxel_count()
    }

    fn halved(&self) -> PyResult<Self> {
        Ok(Self { inner: self.inner.halved().py()? })
    }

    fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        self.inner.center(i, j, k)
    }

    fn locate(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        self.inner.locate(p)
    }

    fn __repr__(&self) -> String {
        format!("VoxelGrid(range={:?}, dims={:?})", self.inner.range, self.inner.dims)
    }
}

#[pyclass(name = "CameraRig", module = "bevocc", skip_from_py_object)]
#[derive(Clone)]
struct PyRig {
    inner: CameraRig,
}

#[pymethods]
impl PyRig {
    /// `n` cameras evenly spaced in yaw on a circle, all pitched down by `pitch`.
    #[staticmethod]
    fn ring(n: usize, radius: f64, height: f64, pitch: f64, focal: f64, image_dims: [usize; 2]) -> PyResult<Self> {
        Ok(Self { inner: CameraRig::ring(n, radius, height, pitch, focal, image_dims).py()? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: CameraRig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().py()?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("rig serializes")
    }

    /// `(u, v, depth, valid)` of an ego-frame point in camera `camera`.
    fn project(&self, camera: usize, point: [f64; 3]) -> PyResult<(f64, f64, f64, bool)> {
        let cam = self
            .inner
            .cameras
            .get(camera)
            .ok_or_else(|| PyValueError::new_err(format!("camera {camera} of {}", self.inner.len())))?;
        let p = project_point(cam, point);
        Ok((p.u, p.v, p.depth, p.valid))
    }

    fn image_dims(&self) -> Vec<[usize; 2]> {
        self.inner.cameras.iter().map(|c| c.image_dims).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// JSON run configuration; `RunConfig()` gives the defaults.
#[pyclass(name = "RunConfig", module = "bevocc", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self { inner: RunConfig::default() }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: RunConfig::from_json(text).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: RunConfig::load(&path).py()? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid { inner: self.inner.grid }
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.head.classes
    }

    fn rig(&self) -> PyResult<PyRig> {
        Ok(PyRig { inner: self.inner.rig.build().py()? })
    }
}

#[pyfunction]
fn set_parallel(enabled: bool) {
    bevocc_core::tensor::set_parallel(enabled);
}

fn conv_params(weight: &PyTensor, bias: Vec<f64>, stride: usize, padding: Option<usize>) -> PyResult<ConvParams> {
    let k = *weight.inner.dims().last().unwrap_or(&1);
    ConvParams::new(weight.inner.clone(), bias, stride, padding.unwrap_or(k / 2)).py()
}

/// Cross-correlation of `[C_in, H, W]` with `[C_out, C_in, k, k]`; padding defaults to `k / 2`.
#[pyfunction]
#[pyo3(name = "conv2d")]
#[pyo3(signature = (input, weight, bias, stride = 1, padding = None))]
fn py_conv2d(input: &PyTensor, weight: &PyTensor, bias: Vec<f64>, stride: usize, padding: Option<usize>) -> PyResult<PyTensor> {
    let params = conv_params(weight, bias, stride, padding)?;
    Ok(PyTensor { inner: conv2d(&input.inner, &params).py()? })
}

#[pyfunction]
#[pyo3(name = "conv3d")]
#[pyo3(signature = (input, weight, bias, stride = 1, padding = None))]
fn py_conv3d(input: &PyTensor, weight: &PyTensor, bias: Vec<f64>, stride: usize, padding: Option<usize>) -> PyResult<PyTensor> {
    let params = conv_params(weight, bias, stride, padding)?;
    Ok(PyTensor { inner: conv3d(&input.inner, &params).py()? })
}

/// Bilinear sample of per-camera `[C, H', W']` features at every voxel center.
/// Returns the `[C, H, W, Z]` volume and per-voxel observing-camera counts.
#[pyfunction]
#[pyo3(name = "interp_sample")]
fn py_interp_sample(features: Vec<PyTensor>, rig: &PyRig, grid: &PyGrid) -> PyResult<(PyTensor, Vec<u32>)> {
    let feats: Vec<Tensor> = features.into_iter().map(|t| t.inner).collect();
    let p = interp_sample(&feats, &rig.inner, &grid.inner).py()?;
    Ok((PyTensor { inner: p.features().clone() }, p.counts().to_vec()))
}

#[pyfunction]
#[pyo3(name = "flops_conv2d")]
fn py_flops_conv2d(c_in: u64, c_out: u64, k: u64, h: u64, w: u64) -> PyResult<u64> {
    flops_conv2d(&FlopsLayerSpec::Conv2d { c_in, c_out, k, h, w }).py()
}

#[pyfunction]
#[pyo3(name = "flops_conv3d")]
fn py_flops_conv3d(c_in: u64, c_out: u64, k: u64, h: u64, w: u64, z: u64) -> PyResult<u64> {
    flops_conv3d(&FlopsLayerSpec::Conv3d { c_in, c_out, k, h, w, z }).py()
}

#[pyfunction]
#[pyo3(name = "flops_interp")]
fn py_flops_interp(n: u64, c: u64, h: u64, w: u64, z: u64) -> u64 {
    flops_interp(n, c, h, w, z)
}

/// Exact 3D/2D FLOPs ratio of a matched layer pair as `(numerator, denominator)`.
#[pyfunction]
#[pyo3(name = "speedup_ratio")]
fn py_speedup_ratio(c_in: u64, c_out: u64, k: u64, h: u64, w: u64, z: u64) -> PyResult<(u64, u64)> {
    let r = speedup_ratio(
        &FlopsLayerSpec::Conv3d { c_in, c_out, k, h, w, z },
        &FlopsLayerSpec::Conv2d { c_in, c_out, k, h, w },
    )
    .py()?;
    Ok((*r.numer(), *r.denom()))
}

fn table_format(format: &str) -> PyResult<TableFormat> {
    format.parse().py()
}

#[pyfunction]
#[pyo3(signature = (config, format = "csv"))]
fn flops_table(config: &PyConfig, format: &str) -> PyResult<String> {
    let cfg = &config.inner;
    let report = flops_report(&cfg.head, &cfg.grid, cfg.rig.build().py()?.len()).py()?;
    Ok(emit_flops_table(&report, table_format(format)?))
}

#[pyfunction]
#[pyo3(name = "miou")]
fn py_miou<'py>(py: Python<'py>, pred: Vec<usize>, gt: Vec<usize>, classes: usize) -> PyResult<Bound<'py, PyDict>> {
    let r = bevocc_core::metrics::miou(&pred, &gt, classes, None).py()?;
    let d = PyDict::new(py);
    d.set_item("per_class", r.per_class)?;
    d.set_item("mean", r.mean)?;
    d.set_item("undefined", r.undefined)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(name = "focal_loss")]
#[pyo3(signature = (logits, labels, gamma = FOCAL_GAMMA))]
fn py_focal_loss(logits: &PyTensor, labels: Vec<usize>, gamma: f64) -> PyResult<(f64, PyTensor)> {
    let l = focal_loss(&logits.inner, &labels, gamma, None).py()?;
    Ok((l.value, PyTensor { inner: l.grad }))
}

#[pyfunction]
#[pyo3(name = "dice_loss")]
#[pyo3(signature = (logits, labels, eps = DICE_EPS))]
fn py_dice_loss(logits: &PyTensor, labels: Vec<usize>, eps: f64) -> PyResult<(f64, PyTensor)> {
    let l = dice_loss(&logits.inner, &labels, eps).py()?;
    Ok((l.value, PyTensor { inner: l.grad }))
}

#[pyfunction]
#[pyo3(name = "lovasz_softmax")]
fn py_lovasz_softmax(logits: &PyTensor, labels: Vec<usize>) -> PyResult<(f64, PyTensor)> {
    let l = lovasz_softmax(&logits.inner, &labels, None).py()?;
    Ok((l.value, PyTensor { inner: l.grad }))
}

/// `[M, H, W]` per-column class presence of a `[H, W, Z]` label volume.
#[pyfunction]
#[pyo3(name = "bev_gt")]
fn py_bev_gt(labels: Vec<usize>, dims: [usize; 3], classes: usize) -> PyResult<PyTensor> {
    let vol = OccupancyVolume::new(dims, labels, OccupancyVolume::default_names(classes)).py()?;
    Ok(PyTensor { inner: bev_gt_from_occ(&vol).into_tensor() })
}

/// Generates, renders and writes the configured scene; returns the manifest path.
#[pyfunction]
fn generate_scene(config: &PyConfig, out_dir: PathBuf) -> PyResult<String> {
    let cfg = &config.inner;
    let rig = cfg.rig.build().py()?;
    let scene = gen_scene(&cfg.scene_spec()).py()?;
    let mut views = render_views(&scene.volume, &cfg.grid, &rig).py()?;
    if cfg.scene.noise_sigma > 0.0 {
        add_feature_noise(&mut views, cfg.scene.noise_sigma, cfg.seed);
    }
    let path = write_scene(&out_dir, cfg.seed, &cfg.grid, &scene, &rig, &views).py()?;
    Ok(path.display().to_string())
}

/// Runs the collapsed-BEV head on a written scene. Weights are seeded from the
/// config seed unless `zero` is set. Returns logits, BEV logits and every loss term.
#[pyfunction]
#[pyo3(signature = (config, scene_manifest, zero = false))]
fn forward<'py>(py: Python<'py>, config: &PyConfig, scene_manifest: PathBuf, zero: bool) -> PyResult<Bound<'py, PyDict>> {
    let cfg = &config.inner;
    let loaded = read_scene(&scene_manifest).py()?;
    let weights = if zero {
        HeadWeights::zeros(&cfg.head, &cfg.grid)
    } else {
        HeadWeights::seeded(&cfg.head, &cfg.grid, cfg.seed)
    }
    .py()?;
    let views: Vec<RenderedView> = loaded
        .features
        .iter()
        .zip(&loaded.depths)
        .map(|(f, d)| RenderedView { features: f.clone(), depth: d.clone(), hits: Vec::new() })
        .collect();
    let inputs = camera_inputs(&views, &cfg.head, &cfg.depth_bins).py()?;
    let out = forward_pipeline(&inputs, &loaded.manifest.rig, &cfg.grid, &cfg.depth_bins, &cfg.head, &weights).py()?;
    let terms = loss_breakdown(&out.logits, &out.bev_logits, &inputs.depth_logits, &loaded.depths, &cfg.depth_bins, &loaded.volume)
        .py()?;
    let losses = PyDict::new(py);
    for (name, v) in terms.terms() {
        losses.set_item(name, v)?;
    }
    losses.set_item("total", total_loss(&terms))?;
    let d = PyDict::new(py);
    d.set_item("logits", PyTensor { inner: out.logits })?;
    d.set_item("bev_logits", PyTensor { inner: out.bev_logits })?;
    d.set_item("losses", losses)?;
    Ok(d)
}

/// Finite-difference suite; one dict per operation.
#[pyfunction]
#[pyo3(signature = (seeds = 20, base_seed = 0))]
fn gradcheck<'py>(py: Python<'py>, seeds: usize, base_seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let report = run_suite(seeds, base_seed).py()?;
    report
        .ops
        .into_iter()
        .map(|o| {
            let d = PyDict::new(py);
            d.set_item("op", o.op)?;
            d.set_item("seeds", o.seeds)?;
            d.set_item("max_rel_error", o.max_rel_error)?;
            d.set_item("worst_seed", o.worst_seed)?;
            d.set_item("passed", o.passed)?;
            Ok(d)
        })
        .collect()
}

/// Times both heads; returns `{stage: (flops, median_ms)}`.
#[pyfunction]
#[pyo3(name = "bench", signature = (config, repeats = 9))]
fn py_bench<'py>(py: Python<'py>, config: &PyConfig, repeats: usize) -> PyResult<Bound<'py, PyDict>> {
    let cfg = &config.inner;
    let mut opts = cfg.bench_options();
    opts.repeats = repeats;
    let report = bench_heads(&cfg.head, &cfg.grid, &cfg.rig.build().py()?, &opts).py()?;
    let d = PyDict::new(py);
    for s in report.stages {
        d.set_item(s.stage, (s.flops, s.median_ms))?;
    }
    Ok(d)
}

#[pymodule]
fn bevocc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyRig>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(set_parallel, m)?)?;
    m.add_function(wrap_pyfunction!(py_conv2d, m)?)?;
    m.add_function(wrap_pyfunction!(py_conv3d, m)?)?;
    m.add_function(wrap_pyfunction!(py_interp_sample, m)?)?;
    m.add_function(wrap_pyfunction!(py_flops_conv2d, m)?)?;
    m.add_function(wrap_pyfunction!(py_flops_conv3d, m)?)?;
    m.add_function(wrap_pyfunction!(py_flops_interp, m)?)?;
    m.add_function(wrap_pyfunction!(py_speedup_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(flops_table, m)?)?;
    m.add_function(wrap_pyfunction!(py_miou, m)?)?;
    m.add_function(wrap_pyfunction!(py_focal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(py_dice_loss, m)?)?;
    m.add_function(wrap_pyfunction!(py_lovasz_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(py_bev_gt, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(py_bench, m)?)?;
    Ok(())
}
