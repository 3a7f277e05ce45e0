//! Python bindings: configs, scenes, rendering, datasets and scoring.

use std::path::PathBuf;

use orchardsynth::autolabel::Annotation;
use orchardsynth::config::ConfigError;
use orchardsynth::dataset::{self, DatasetError, ExportOptions, SplitOptions};
use orchardsynth::eval::{self, Corners, EvalError, EvalOptions, Interpolation};
use orchardsynth::pipeline::{self, PipelineError};
use orchardsynth::{DatasetManifest, MetricsReport, Ray, RunConfig, Split, SplitRatio, Vec3};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn config_err(e: ConfigError) -> PyErr {
    match e {
        ConfigError::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => value_err(e),
    }
}

fn pipeline_err(e: PipelineError) -> PyErr {
    if e.is_io() {
        PyOSError::new_err(e.to_string())
    } else {
        value_err(e)
    }
}

fn dataset_err(e: DatasetError) -> PyErr {
    if e.is_io() {
        PyOSError::new_err(e.to_string())
    } else {
        value_err(e)
    }
}

fn eval_err(e: EvalError) -> PyErr {
    match e {
        EvalError::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => value_err(e),
    }
}

fn parse_interpolation(s: &str) -> PyResult<Interpolation> {
    s.parse().map_err(PyValueError::new_err)
}

/// Run configuration (JSON, unknown keys rejected).
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: RunConfig::default(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        RunConfig::from_json(text).map(|inner| Self { inner }).map_err(config_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        RunConfig::load(&path).map(|inner| Self { inner }).map_err(config_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(config_err)
    }

    #[getter]
    fn width(&self) -> u32 {
        self.inner.render.width
    }

    #[setter]
    fn set_width(&mut self, v: u32) {
        self.inner.render.width = v;
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.render.height
    }

    #[setter]
    fn set_height(&mut self, v: u32) {
        self.inner.render.height = v;
    }

    #[getter]
    fn samples_per_pixel(&self) -> u32 {
        self.inner.render.samples_per_pixel
    }

    #[setter]
    fn set_samples_per_pixel(&mut self, v: u32) {
        self.inner.render.samples_per_pixel = v;
    }

    #[getter]
    fn count(&self) -> u32 {
        self.inner.generation.count
    }

    #[setter]
    fn set_count(&mut self, v: u32) {
        self.inner.generation.count = v;
    }

    #[getter]
    fn master_seed(&self) -> u64 {
        self.inner.generation.master_seed
    }

    #[setter]
    fn set_master_seed(&mut self, v: u64) {
        self.inner.generation.master_seed = v;
    }

    #[getter]
    fn min_pixels(&self) -> u32 {
        self.inner.label.min_pixels
    }

    #[setter]
    fn set_min_pixels(&mut self, v: u32) {
        self.inner.label.min_pixels = v;
    }

    fn __repr__(&self) -> String {
        let r = &self.inner.render;
        format!(
            "Config(width={}, height={}, samples_per_pixel={}, count={}, master_seed={})",
            r.width, r.height, r.samples_per_pixel, self.inner.generation.count, self.inner.generation.master_seed
        )
    }
}

/// Closest-hit record returned by `Scene.intersect`.
#[pyclass(name = "Hit", get_all, frozen)]
struct PyHit {
    t: f64,
    point: (f64, f64, f64),
    primitive_index: usize,
    class_name: String,
    instance_id: u32,
}

/// Triangulated orchard with its acceleration index.
#[pyclass(name = "Scene", frozen)]
struct PyScene {
    inner: orchardsynth::Scene,
}

#[pymethods]
impl PyScene {
    /// The orchard that image `index` (1-based) of `config` sees.
    #[staticmethod]
    #[pyo3(signature = (config, index = 1))]
    fn for_image(config: &PyConfig, index: u32) -> PyResult<Self> {
        pipeline::scene_for(&config.inner, index)
            .map(|inner| Self { inner })
            .map_err(pipeline_err)
    }

    #[getter]
    fn triangle_count(&self) -> usize {
        self.inner.primitives().len()
    }

    #[getter]
    fn walnut_count(&self) -> u32 {
        self.inner.instance_count()
    }

    fn intersect(&self, origin: (f64, f64, f64), direction: (f64, f64, f64)) -> PyResult<Option<PyHit>> {
        let d = Vec3::new(direction.0, direction.1, direction.2);
        if !(d.length() > 0.0) {
            return Err(PyValueError::new_err("direction must be nonzero"));
        }
        let ray = Ray::new(Vec3::new(origin.0, origin.1, origin.2), d);
        Ok(self.inner.intersect_closest(&ray).map(|h| {
            let p = &self.inner.primitives()[h.primitive_index];
            PyHit {
                t: h.t,
                point: (h.point.x, h.point.y, h.point.z),
                primitive_index: h.primitive_index,
                class_name: p.class_id.name().to_string(),
                instance_id: p.instance_id,
            }
        }))
    }
}

/// Tone-mapped images and labels of one rendered frame.
#[pyclass(name = "RenderedImage", frozen)]
struct PyRenderedImage {
    inner: pipeline::RenderedImage,
}

#[pymethods]
impl PyRenderedImage {
    #[getter]
    fn width(&self) -> u32 {
        self.inner.rgb.width
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.rgb.height
    }

    /// Row-major interleaved RGB bytes.
    #[getter]
    fn rgb<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.rgb.data)
    }

    /// Row-major single-channel NIR bytes, if the band set has NIR.
    #[getter]
    fn nir<'py>(&self, py: Python<'py>) -> Option<Bound<'py, PyBytes>> {
        self.inner.nir.as_ref().map(|n| PyBytes::new(py, &n.data))
    }

    /// `(class_id, x_center, y_center, width, height)` per walnut, normalized.
    #[getter]
    fn annotations(&self) -> Vec<(u32, f64, f64, f64, f64)> {
        self.inner
            .annotations
            .iter()
            .map(|a| (a.class_id, a.x_center, a.y_center, a.width, a.height))
            .collect()
    }

    /// Linear radiance of band `b`, row-major.
    fn radiance(&self, b: usize) -> PyResult<Vec<f64>> {
        if b >= self.inner.radiance.bands {
            return Err(PyValueError::new_err(format!(
                "band {b} out of range ({} bands)",
                self.inner.radiance.bands
            )));
        }
        Ok(self.inner.radiance.band(b))
    }

    fn label_text(&self) -> String {
        orchardsynth::autolabel::format_annotations(&self.inner.annotations)
    }
}

/// Renders image `index` (1-based) of `config` without writing files.
#[pyfunction]
#[pyo3(signature = (config, index = 1))]
fn render_image(py: Python<'_>, config: &PyConfig, index: u32) -> PyResult<PyRenderedImage> {
    config.validate()?;
    let cfg = config.inner.clone();
    py.detach(move || {
        let scene = pipeline::scene_for(&cfg, index)?;
        let camera = pipeline::camera_for(&cfg, index);
        pipeline::render_image(&cfg, &scene, &camera)
    })
    .map(|inner| PyRenderedImage { inner })
    .map_err(pipeline_err)
}

/// Writes the images, labels and manifests of `config` to `out_dir`.
/// Returns `(images, boxes)`.
#[pyfunction]
#[pyo3(signature = (config, out_dir, threads = 0))]
fn generate(py: Python<'_>, config: &PyConfig, out_dir: PathBuf, threads: usize) -> PyResult<(u32, usize)> {
    let cfg = config.inner.clone();
    py.detach(move || pipeline::generate(&cfg, &out_dir, threads))
        .map(|s| (s.images, s.boxes))
        .map_err(pipeline_err)
}

/// Dataset manifest: image/label paths with source, band and split.
#[pyclass(name = "Manifest", skip_from_py_object)]
#[derive(Clone)]
struct PyManifest {
    inner: DatasetManifest,
}

#[pymethods]
impl PyManifest {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        DatasetManifest::read(&path).map(|inner| Self { inner }).map_err(dataset_err)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(dataset_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn band(&self) -> &'static str {
        self.inner.band.as_str()
    }

    /// Entries in `split` ("train", "val" or "unassigned").
    fn count(&self, split: &str) -> PyResult<usize> {
        let s: Split = split.parse().map_err(value_err)?;
        Ok(self.inner.count(s))
    }

    /// `(image, label, source, band, split)` per entry.
    fn entries(&self) -> Vec<(String, Option<String>, &'static str, &'static str, &'static str)> {
        self.inner
            .entries
            .iter()
            .map(|e| {
                (
                    e.image.display().to_string(),
                    e.label.as_ref().map(|l| l.display().to_string()),
                    e.source.as_str(),
                    e.band.as_str(),
                    e.split.as_str(),
                )
            })
            .collect()
    }
}

#[pyfunction]
#[pyo3(signature = (manifest, ratio = "4:1", seed = 0, synthetic_train_only = false))]
fn split(manifest: &PyManifest, ratio: &str, seed: u64, synthetic_train_only: bool) -> PyResult<PyManifest> {
    let ratio: SplitRatio = ratio.parse().map_err(value_err)?;
    let options = SplitOptions { synthetic_train_only };
    dataset::split(&manifest.inner, ratio, seed, options)
        .map(|inner| PyManifest { inner })
        .map_err(dataset_err)
}

#[pyfunction]
fn mix(real: &PyManifest, synthetic: &PyManifest) -> PyResult<PyManifest> {
    dataset::mix(&real.inner, &synthetic.inner)
        .map(|inner| PyManifest { inner })
        .map_err(dataset_err)
}

/// Writes the training tree; returns `(train, val)` image counts.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, nir_three_channel = true))]
fn export(manifest: &PyManifest, out_dir: PathBuf, nir_three_channel: bool) -> PyResult<(usize, usize)> {
    dataset::export(&manifest.inner, &out_dir, ExportOptions { nir_three_channel })
        .map(|s| (s.train, s.val))
        .map_err(dataset_err)
}

/// Precision, recall, AP and F1 in percent.
#[pyclass(name = "MetricsReport", frozen)]
struct PyMetricsReport {
    inner: MetricsReport,
}

#[pymethods]
impl PyMetricsReport {
    #[new]
    fn new(precision: f64, recall: f64, ap: f64, f1: f64) -> Self {
        Self {
            inner: MetricsReport::from_values(precision, recall, ap, f1),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        MetricsReport::from_json(text).map(|inner| Self { inner }).map_err(value_err)
    }

    #[getter]
    fn precision(&self) -> f64 {
        self.inner.precision
    }

    #[getter]
    fn recall(&self) -> f64 {
        self.inner.recall
    }

    #[getter]
    fn ap(&self) -> f64 {
        self.inner.ap
    }

    #[getter]
    fn f1(&self) -> f64 {
        self.inner.f1
    }

    #[getter]
    fn confidence_threshold(&self) -> Option<f64> {
        self.inner.confidence_threshold
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        let r = &self.inner;
        format!(
            "MetricsReport(precision={:.2}, recall={:.2}, ap={:.2}, f1={:.2})",
            r.precision, r.recall, r.ap, r.f1
        )
    }
}

/// Scores every `<stem>.txt` prediction file against its ground truth.
#[pyfunction]
#[pyo3(signature = (gt_dir, pred_dir, iou_threshold = 0.5, interpolation = "continuous", class_id = 0))]
fn evaluate(
    gt_dir: PathBuf,
    pred_dir: PathBuf,
    iou_threshold: f64,
    interpolation: &str,
    class_id: u32,
) -> PyResult<PyMetricsReport> {
    let options = EvalOptions {
        iou_threshold,
        interpolation: parse_interpolation(interpolation)?,
        class_id,
    };
    eval::evaluate_dirs(&gt_dir, &pred_dir, &options)
        .map(|inner| PyMetricsReport { inner })
        .map_err(eval_err)
}

#[pyfunction]
#[pyo3(signature = (original, enhanced, title = ""))]
fn compare_report(original: &PyMetricsReport, enhanced: &PyMetricsReport, title: &str) -> String {
    eval::compare_report(&original.inner, &enhanced.inner, title)
}

/// IoU of two `(x_min, y_min, x_max, y_max)` boxes.
#[pyfunction]
fn iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    eval::iou(&Corners::new(a.0, a.1, a.2, a.3), &Corners::new(b.0, b.1, b.2, b.3))
}

/// AP of ranked detections given their true-positive flags.
#[pyfunction]
#[pyo3(signature = (flags, confidences, total_gt, interpolation = "continuous"))]
fn average_precision(flags: Vec<bool>, confidences: Vec<f64>, total_gt: usize, interpolation: &str) -> PyResult<f64> {
    if flags.len() != confidences.len() {
        return Err(PyValueError::new_err("flags and confidences differ in length"));
    }
    let curve = eval::pr_curve(&flags, &confidences, total_gt);
    Ok(eval::average_precision(&curve, parse_interpolation(interpolation)?))
}

/// Parses label-file text into `(class_id, x_center, y_center, width, height)` rows.
#[pyfunction]
fn parse_labels(text: &str) -> PyResult<Vec<(u32, f64, f64, f64, f64)>> {
    orchardsynth::autolabel::parse_annotations(text)
        .map(|v| {
            v.iter()
                .map(|a: &Annotation| (a.class_id, a.x_center, a.y_center, a.width, a.height))
                .collect()
        })
        .map_err(value_err)
}

#[pymodule]
#[pyo3(name = "orchardsynth")]
fn orchardsynth_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyHit>()?;
    m.add_class::<PyRenderedImage>()?;
    m.add_class::<PyManifest>()?;
    m.add_class::<PyMetricsReport>()?;
    m.add_function(wrap_pyfunction!(render_image, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(mix, m)?)?;
    m.add_function(wrap_pyfunction!(export, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(compare_report, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(parse_labels, m)?)?;
    Ok(())
}
