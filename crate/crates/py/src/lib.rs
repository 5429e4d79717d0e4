//! Python bindings for `nitex`.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use nitex::bake::{
    blend_weighted, BakeContext, HeuristicUncertainty, OracleUncertainty, RenderProvider, UncertaintySource,
    ZeroUncertainty,
};
use nitex::camera::{self, FramingConfig};
use nitex::errsim;
use nitex::geometry;
use nitex::io::{self, FloatMap, Png8};
use nitex::uncertainty::{self, SsimConfig, UncertaintyMap};
use nitex::viewsel::{Strategy, UqScore};

fn err(e: nitex::Error) -> PyErr {
    match e {
        nitex::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py_json(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse_strategy(s: &str) -> PyResult<Strategy> {
    s.parse().map_err(err)
}

fn parse_uq_score(s: &str) -> PyResult<UqScore> {
    match s {
        "mean" => Ok(UqScore::Mean),
        "sum" => Ok(UqScore::Sum),
        _ => Err(PyValueError::new_err(format!("unknown uq score {s:?}"))),
    }
}

/// Float image stored row-major with interleaved channels.
#[pyclass(name = "Image", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: nitex::Image,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: nitex::Image::from_vec(width, height, channels, data).map_err(err)?,
        })
    }

    /// Reads a PNG (scaled to [0, 1]) or PFM file.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        let inner = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")) {
            io::read_pfm(&path).map_err(err)?.to_image()
        } else {
            io::read_png(&path).map_err(err)?.to_image()
        };
        Ok(Self { inner })
    }

    fn write_png(&self, path: PathBuf) -> PyResult<()> {
        io::write_png(&Png8::from_image(&self.inner), path).map_err(err)
    }

    fn write_pfm(&self, path: PathBuf) -> PyResult<()> {
        io::write_pfm(&FloatMap::from_image(&self.inner).map_err(err)?, path).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn get(&self, x: usize, y: usize, c: usize) -> PyResult<f64> {
        if x >= self.inner.width() || y >= self.inner.height() || c >= self.inner.channels() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.get(x, y, c))
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{}x{})", self.inner.width(), self.inner.height(), self.inner.channels())
    }
}

#[pyclass(name = "Mesh", frozen)]
struct PyMesh {
    inner: nitex::TriMesh,
}

#[pymethods]
impl PyMesh {
    /// Loads an OBJ file and rescales it into the unit box.
    #[staticmethod]
    fn load_obj(path: PathBuf) -> PyResult<Self> {
        let mesh = geometry::load_obj(path).map_err(err)?;
        let (mesh, _) = geometry::normalize_to_unit(&mesh).map_err(err)?;
        Ok(Self { inner: mesh })
    }

    /// One of "quad", "cube", "sphere", "cloth".
    #[staticmethod]
    fn fixture(name: &str) -> PyResult<Self> {
        nitex::fixtures::by_name(name)
            .map(|inner| Self { inner })
            .ok_or_else(|| PyValueError::new_err(format!("unknown fixture {name:?}")))
    }

    #[getter]
    fn triangle_count(&self) -> usize {
        self.inner.triangle_count()
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn aabb_diagonal(&self) -> f64 {
        self.inner.aabb_diagonal()
    }

    fn to_obj(&self) -> String {
        geometry::write_obj(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Mesh({} vertices, {} triangles)", self.inner.vertex_count(), self.inner.triangle_count())
    }
}

#[pyclass(name = "View", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyView {
    inner: nitex::View,
}

#[pymethods]
impl PyView {
    #[new]
    #[pyo3(signature = (azimuth, elevation, resolution = 512, id = 0))]
    fn new(azimuth: f64, elevation: f64, resolution: usize, id: u32) -> PyResult<Self> {
        let cfg = FramingConfig {
            resolution,
            ..Default::default()
        };
        let mut inner = camera::make_view(azimuth, elevation, &cfg).map_err(err)?;
        inner.id = id;
        Ok(Self { inner })
    }

    #[getter]
    fn id(&self) -> u32 {
        self.inner.id
    }

    #[getter]
    fn azimuth(&self) -> f64 {
        self.inner.azimuth
    }

    #[getter]
    fn elevation(&self) -> f64 {
        self.inner.elevation
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.inner.resolution
    }

    /// Blending weight from the view score ladder.
    #[getter]
    fn weight(&self) -> f64 {
        camera::view_weight(&self.inner).value()
    }

    fn __repr__(&self) -> String {
        format!("View(id={}, azimuth={}, elevation={})", self.inner.id, self.inner.azimuth, self.inner.elevation)
    }
}

#[pyclass(name = "TextureSet", frozen)]
struct PyTextureSet {
    inner: nitex::TextureSet,
}

#[pymethods]
impl PyTextureSet {
    /// Procedural ground truth: solid albedo and a uniform material.
    #[staticmethod]
    #[pyo3(signature = (mesh, resolution = 512, detail = 4.0, seed = 7))]
    fn ground_truth(mesh: &PyMesh, resolution: usize, detail: f64, seed: u64) -> PyResult<Self> {
        let inner = nitex::fixtures::ground_truth_textures(&mesh.inner, resolution, detail, seed).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn albedo(&self) -> PyImage {
        PyImage {
            inner: self.inner.albedo.clone(),
        }
    }

    #[getter]
    fn roughness(&self) -> PyImage {
        PyImage {
            inner: self.inner.roughness.clone(),
        }
    }

    #[getter]
    fn metallic(&self) -> PyImage {
        PyImage {
            inner: self.inner.metallic.clone(),
        }
    }
}

#[pyclass(name = "BakeResult", frozen)]
struct PyBakeResult {
    inner: nitex::BakeResult,
}

#[pymethods]
impl PyBakeResult {
    #[getter]
    fn views_used(&self) -> Vec<u32> {
        self.inner.views_used.clone()
    }

    #[getter]
    fn uncovered_fraction(&self) -> f64 {
        self.inner.uncovered_fraction()
    }

    #[getter]
    fn covered_count(&self) -> usize {
        self.inner.covered_count()
    }

    #[getter]
    fn coverage(&self) -> Vec<bool> {
        self.inner.coverage.clone()
    }

    #[getter]
    fn albedo(&self) -> PyImage {
        PyImage {
            inner: self.inner.textures.albedo.clone(),
        }
    }

    #[getter]
    fn raw_albedo(&self) -> PyImage {
        PyImage {
            inner: self.inner.raw_albedo.clone(),
        }
    }

    #[getter]
    fn residual_uncertainty(&self) -> PyImage {
        PyImage {
            inner: self.inner.residual_uncertainty.to_image(),
        }
    }

    /// Per-iteration candidate scores and stop reasons.
    fn iterations(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py_json(py, &self.inner.per_view_scores)
    }
}

#[allow(clippy::too_many_arguments)]
fn settings(
    resolution: usize,
    strategy: &str,
    max_views: usize,
    threshold: f64,
    epsilon1: f64,
    uq_score: &str,
    exhaust_views: bool,
) -> PyResult<nitex::BakeConfig> {
    let config = nitex::BakeConfig {
        resolution,
        strategy: parse_strategy(strategy)?,
        max_views,
        threshold,
        epsilon1,
        uq_score: parse_uq_score(uq_score)?,
        exhaust_views,
        ..Default::default()
    };
    config.validate().map_err(err)?;
    Ok(config)
}

/// Bakes `textures` rendered from the 24 canonical views back onto `mesh`.
#[pyfunction]
#[pyo3(signature = (
    mesh, textures, *, strategy = "uq", max_views = 10, uncertainty = "oracle", threshold = 0.05,
    epsilon1 = 1e-6, uq_score = "mean", exhaust_views = false
))]
#[allow(clippy::too_many_arguments)]
fn bake(
    py: Python<'_>,
    mesh: &PyMesh,
    textures: &PyTextureSet,
    strategy: &str,
    max_views: usize,
    uncertainty: &str,
    threshold: f64,
    epsilon1: f64,
    uq_score: &str,
    exhaust_views: bool,
) -> PyResult<PyBakeResult> {
    let config = settings(
        textures.inner.albedo.width(),
        strategy,
        max_views,
        threshold,
        epsilon1,
        uq_score,
        exhaust_views,
    )?;
    let source: Box<dyn UncertaintySource> = match uncertainty {
        "oracle" => Box::new(OracleUncertainty {
            ground_truth: textures.inner.albedo.clone(),
            ssim: SsimConfig::default(),
        }),
        "heuristic" => Box::new(HeuristicUncertainty),
        "zero" => Box::new(ZeroUncertainty),
        _ => return Err(PyValueError::new_err(format!("unknown uncertainty source {uncertainty:?}"))),
    };
    let (mesh, tex) = (&mesh.inner, &textures.inner);
    let inner = py
        .detach(|| {
            let provider = RenderProvider { mesh, textures: tex };
            nitex::iterative_bake(mesh, &camera::canonical_candidates(), &provider, source.as_ref(), &config)
        })
        .map_err(err)?;
    Ok(PyBakeResult { inner })
}

/// Runs both selection strategies on corrupted views for each seed and
/// returns the comparison report as a dict.
#[pyfunction]
#[pyo3(signature = (mesh, textures, seeds, *, max_views = 10, epsilon1 = 1e-6, uq_score = "mean"))]
fn compare(
    py: Python<'_>,
    mesh: &PyMesh,
    textures: &PyTextureSet,
    seeds: Vec<u64>,
    max_views: usize,
    epsilon1: f64,
    uq_score: &str,
) -> PyResult<Py<PyAny>> {
    let config = settings(textures.inner.albedo.width(), "uq", max_views, 0.05, epsilon1, uq_score, true)?;
    let (mesh, tex) = (&mesh.inner, &textures.inner);
    let report = py
        .detach(|| {
            let ctx = BakeContext::new(mesh, &camera::canonical_candidates(), &config)?;
            errsim::compare_over_seeds(&ctx, tex, &seeds, &config)
        })
        .map_err(err)?;
    to_py_json(py, &report)
}

/// The 24 canonical candidate views.
#[pyfunction]
#[pyo3(signature = (resolution = 512))]
fn canonical_candidates(resolution: usize) -> Vec<PyView> {
    let cfg = FramingConfig {
        resolution,
        ..Default::default()
    };
    camera::canonical_candidates_with(&cfg)
        .into_iter()
        .map(|inner| PyView { inner })
        .collect()
}

/// Blends one texel from `(value, uncertainty, weight)` samples.
#[pyfunction]
#[pyo3(signature = (samples, epsilon1 = 1e-6))]
fn blend_texel(samples: Vec<(f64, f64, f64)>, epsilon1: f64) -> PyResult<(f64, f64)> {
    let mut contribs = Vec::with_capacity(samples.len());
    let mut weights = Vec::with_capacity(samples.len());
    for (j, &(p, u, c)) in samples.iter().enumerate() {
        let mut vc = nitex::ViewContribution::new(j as u32, nitex::Image::filled(1, 1, 1, p), vec![true]);
        vc.set_uncertainty(&UncertaintyMap {
            resolution: 1,
            values: vec![u],
        })
        .map_err(err)?;
        contribs.push(vc);
        weights.push(c);
    }
    let b = blend_weighted(&contribs, &weights, epsilon1).map_err(err)?;
    Ok((b.values.get(0, 0, 0), b.residual.values[0]))
}

#[pyfunction]
#[pyo3(signature = (a, b, mask = None))]
fn psnr(a: &PyImage, b: &PyImage, mask: Option<Vec<bool>>) -> PyResult<f64> {
    errsim::psnr(&a.inner, &b.inner, mask.as_deref()).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (a, b, mask = None))]
fn ssim(a: &PyImage, b: &PyImage, mask: Option<Vec<bool>>) -> PyResult<f64> {
    uncertainty::mean_ssim(&a.inner, &b.inner, mask.as_deref(), &SsimConfig::default()).map_err(err)
}

/// Runs the built-in kernel checks; returns `(name, passed, worst, tolerance)`.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn kernels_selftest(seed: u64) -> Vec<(String, bool, f64, f64)> {
    nitex::kernels::selftest(seed)
        .into_iter()
        .map(|c| (c.name, c.passed, c.worst, c.tolerance))
        .collect()
}

#[pymodule]
fn pynitex(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PyView>()?;
    m.add_class::<PyTextureSet>()?;
    m.add_class::<PyBakeResult>()?;
    m.add_function(wrap_pyfunction!(bake, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_candidates, m)?)?;
    m.add_function(wrap_pyfunction!(blend_texel, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(kernels_selftest, m)?)?;
    Ok(())
}
