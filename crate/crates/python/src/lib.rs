//! Python bindings: rig and pose types, the matcher, scene synthesis, the
//! global map and map evaluation.
//!
//! Images cross the boundary as 2-D `float32` arrays in `[0, 1]`; invalid
//! disparity and depth pixels come back as NaN.

use nalgebra::{Vector2, Vector3};
use numpy::ndarray::Array2;
use numpy::{IntoPyArray, PyArray1, PyArray2, PyReadonlyArray2, PyReadonlyArray3};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use densemap_core::config::ConfigFile;
use densemap_core::eval::{map_to_surface_error, Reference};
use densemap_core::geometry::DEFAULT_DISPARITY_FLOOR;
use densemap_core::mosaic::{
    lift_keyframe, mosaic_update, CullingMode, GlobalMap, KeyframeRecord, MapPoint,
};
use densemap_core::pfm::export_disparity;
use densemap_core::pipeline::{run_session as core_run_session, SessionConfig, SessionInputs};
use densemap_core::ply::read_ply_file;
use densemap_core::synth::{render_pair, SceneSpec};
use densemap_core::{
    DepthField, DisparityField, Error, GrayImage, MatcherConfig, OracleConfig, Pose,
    RectifiedStereoPair, RgbImage, StereoRig,
};

create_exception!(densemap, DensemapError, PyException);

fn to_py(e: Error) -> PyErr {
    DensemapError::new_err(e.to_string())
}

fn gray_from(array: &PyReadonlyArray2<'_, f32>) -> PyResult<GrayImage> {
    let view = array.as_array();
    let (h, w) = view.dim();
    GrayImage::from_vec(w, h, view.iter().copied().collect()).map_err(to_py)
}

fn grid<T: Copy>(width: usize, height: usize, data: Vec<T>) -> Array2<T> {
    Array2::from_shape_vec((height, width), data).expect("buffer matches shape")
}

#[pyclass(name = "StereoRig", frozen, from_py_object)]
#[derive(Clone)]
struct PyStereoRig {
    inner: StereoRig,
}

#[pymethods]
impl PyStereoRig {
    /// Principal point defaults to the image center and `fy` to `fx`.
    #[new]
    #[pyo3(signature = (fx, baseline, width, height, fy=None, cx=None, cy=None))]
    fn new(
        fx: f64,
        baseline: f64,
        width: usize,
        height: usize,
        fy: Option<f64>,
        cx: Option<f64>,
        cy: Option<f64>,
    ) -> PyResult<Self> {
        let cx = cx.unwrap_or((width as f64 - 1.0) / 2.0);
        let cy = cy.unwrap_or((height as f64 - 1.0) / 2.0);
        let inner =
            StereoRig::new(fx, fy.unwrap_or(fx), cx, cy, baseline, width, height).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn fx(&self) -> f64 {
        self.inner.fx()
    }
    #[getter]
    fn fy(&self) -> f64 {
        self.inner.fy()
    }
    #[getter]
    fn cx(&self) -> f64 {
        self.inner.cx()
    }
    #[getter]
    fn cy(&self) -> f64 {
        self.inner.cy()
    }
    #[getter]
    fn baseline(&self) -> f64 {
        self.inner.baseline()
    }
    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }
    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn __repr__(&self) -> String {
        let r = &self.inner;
        format!(
            "StereoRig(fx={}, fy={}, cx={}, cy={}, baseline={}, width={}, height={})",
            r.fx(),
            r.fy(),
            r.cx(),
            r.cy(),
            r.baseline(),
            r.width(),
            r.height()
        )
    }
}

/// Rigid camera-to-world transform.
#[pyclass(name = "Pose", frozen, from_py_object)]
#[derive(Clone)]
struct PyPose {
    inner: Pose,
}

#[pymethods]
impl PyPose {
    #[new]
    #[pyo3(signature = (translation=(0.0, 0.0, 0.0), quaternion=(0.0, 0.0, 0.0, 1.0)))]
    fn new(translation: (f64, f64, f64), quaternion: (f64, f64, f64, f64)) -> PyResult<Self> {
        let (x, y, z) = translation;
        let (qx, qy, qz, qw) = quaternion;
        let inner = Pose::from_quaternion(Vector3::new(x, y, z), qx, qy, qz, qw).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn identity() -> Self {
        Self {
            inner: Pose::identity(),
        }
    }

    #[getter]
    fn translation(&self) -> (f64, f64, f64) {
        let t = self.inner.translation();
        (t.x, t.y, t.z)
    }

    /// `(qx, qy, qz, qw)`.
    #[getter]
    fn quaternion(&self) -> (f64, f64, f64, f64) {
        let [x, y, z, w] = self.inner.quaternion();
        (x, y, z, w)
    }

    /// Homogeneous 4x4 matrix.
    fn matrix<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f64>> {
        let r = self.inner.rotation().matrix();
        let t = self.inner.translation();
        let mut m = Array2::<f64>::eye(4);
        for i in 0..3 {
            for j in 0..3 {
                m[[i, j]] = r[(i, j)];
            }
            m[[i, 3]] = t[i];
        }
        m.into_pyarray(py)
    }

    fn compose(&self, other: &PyPose) -> Self {
        Self {
            inner: self.inner.compose(&other.inner),
        }
    }

    fn inverse(&self) -> Self {
        Self {
            inner: self.inner.inverse(),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Pose(translation={:?}, quaternion={:?})",
            self.translation(),
            self.quaternion()
        )
    }
}

#[pyclass(name = "MatcherConfig", from_py_object)]
#[derive(Clone)]
struct PyMatcherConfig {
    inner: MatcherConfig,
}

#[pymethods]
impl PyMatcherConfig {
    #[new]
    #[pyo3(signature = (
        patch_size=16,
        patch_stride=8,
        pyramid_levels=4,
        max_iterations_per_patch=12,
        candidate_offsets=None,
        sigma_s=4.0,
        probability_threshold=0.15,
        min_valid_patch_ratio=0.75,
        max_disparity=None,
        coarse_search=true,
        parallel=true,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        patch_size: usize,
        patch_stride: usize,
        pyramid_levels: usize,
        max_iterations_per_patch: usize,
        candidate_offsets: Option<Vec<f64>>,
        sigma_s: f64,
        probability_threshold: f64,
        min_valid_patch_ratio: f64,
        max_disparity: Option<f64>,
        coarse_search: bool,
        parallel: bool,
    ) -> PyResult<Self> {
        let inner = MatcherConfig {
            patch_size,
            patch_stride,
            pyramid_levels,
            max_iterations_per_patch,
            candidate_offsets: candidate_offsets
                .unwrap_or_else(|| MatcherConfig::default().candidate_offsets),
            sigma_s,
            probability_threshold,
            min_valid_patch_ratio,
            max_disparity,
            coarse_search,
            parallel,
        };
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn patch_size(&self) -> usize {
        self.inner.patch_size
    }
    #[getter]
    fn patch_stride(&self) -> usize {
        self.inner.patch_stride
    }
    #[getter]
    fn pyramid_levels(&self) -> usize {
        self.inner.pyramid_levels
    }
    #[getter]
    fn probability_threshold(&self) -> f64 {
        self.inner.probability_threshold
    }
    #[getter]
    fn max_disparity(&self) -> Option<f64> {
        self.inner.max_disparity
    }
    #[getter]
    fn candidate_offsets(&self) -> Vec<f64> {
        self.inner.candidate_offsets.clone()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "DisparityField", frozen)]
struct PyDisparityField {
    inner: DisparityField,
}

#[pymethods]
impl PyDisparityField {
    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }
    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    /// Disparity in pixels, NaN where invalid.
    fn disparity<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f64>> {
        let f = &self.inner;
        let data = f
            .disparity()
            .iter()
            .zip(f.valid())
            .map(|(&d, &v)| if v { d } else { f64::NAN })
            .collect();
        grid(f.width(), f.height(), data).into_pyarray(py)
    }

    fn confidence<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f64>> {
        let f = &self.inner;
        grid(f.width(), f.height(), f.confidence().to_vec()).into_pyarray(py)
    }

    fn valid<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<bool>> {
        let f = &self.inner;
        grid(f.width(), f.height(), f.valid().to_vec()).into_pyarray(py)
    }

    fn valid_count(&self) -> usize {
        self.inner.valid_count()
    }

    /// Writes `<path>` plus `_conf.pfm` and `_mask.pgm` siblings.
    fn export_pfm(&self, path: std::path::PathBuf) -> PyResult<()> {
        export_disparity(&self.inner, &path)
            .map(|_| ())
            .map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.width() * self.inner.height()
    }
}

/// Dense disparity of a rectified grayscale pair.
#[pyfunction]
#[pyo3(signature = (left, right, config=None))]
fn match_pair(
    py: Python<'_>,
    left: PyReadonlyArray2<'_, f32>,
    right: PyReadonlyArray2<'_, f32>,
    config: Option<PyMatcherConfig>,
) -> PyResult<PyDisparityField> {
    let pair =
        RectifiedStereoPair::new(gray_from(&left)?, gray_from(&right)?, None).map_err(to_py)?;
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let inner = py
        .detach(|| densemap_core::match_pair(&pair, &cfg))
        .map_err(to_py)?;
    Ok(PyDisparityField { inner })
}

/// Brute-force SSD block matching over integer disparities.
#[pyfunction]
#[pyo3(signature = (left, right, max_disparity=16, window_size=9, subpixel_refine=false))]
fn exhaustive_disparity(
    py: Python<'_>,
    left: PyReadonlyArray2<'_, f32>,
    right: PyReadonlyArray2<'_, f32>,
    max_disparity: usize,
    window_size: usize,
    subpixel_refine: bool,
) -> PyResult<PyDisparityField> {
    let pair =
        RectifiedStereoPair::new(gray_from(&left)?, gray_from(&right)?, None).map_err(to_py)?;
    let cfg = OracleConfig {
        window_size,
        max_disparity,
        subpixel_refine,
    };
    let inner = py
        .detach(|| densemap_core::exhaustive_disparity(&pair, &cfg))
        .map_err(to_py)?;
    Ok(PyDisparityField { inner })
}

/// Depth `f·b/d`, or `None` at or below the disparity floor.
#[pyfunction]
#[pyo3(signature = (rig, disparity, floor=DEFAULT_DISPARITY_FLOOR))]
fn triangulate_depth(rig: &PyStereoRig, disparity: f64, floor: f64) -> Option<f64> {
    densemap_core::triangulate_depth(&rig.inner, disparity, floor)
}

/// World point seen at pixel `(u, v)` with camera depth `depth`.
#[pyfunction]
fn backproject_point(
    rig: &PyStereoRig,
    pose: &PyPose,
    u: f64,
    v: f64,
    depth: f64,
) -> PyResult<(f64, f64, f64)> {
    let p = densemap_core::backproject_point(&rig.inner, &pose.inner, Vector2::new(u, v), depth)
        .map_err(to_py)?;
    Ok((p.x, p.y, p.z))
}

/// `(u, v, depth)` of a world point, or `None` behind the camera.
#[pyfunction]
fn project_point(
    rig: &PyStereoRig,
    pose: &PyPose,
    point: (f64, f64, f64),
) -> Option<(f64, f64, f64)> {
    let world = Vector3::new(point.0, point.1, point.2);
    densemap_core::project_point(&rig.inner, &pose.inner, &world)
        .visible()
        .map(|(px, z)| (px.x, px.y, z))
}

/// Renders one frame of a preset scene. Returns a dict with `left`, `right`,
/// `color`, `disparity`, `depth`, `pose` and the scene's `reference` spec.
#[pyfunction]
#[pyo3(signature = (scene, frame=0, seed=1, rig=None))]
fn render_scene<'py>(
    py: Python<'py>,
    scene: &str,
    frame: usize,
    seed: u64,
    rig: Option<PyStereoRig>,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = match rig {
        Some(r) => SceneSpec::preset_with_rig(scene, r.inner, frame + 1, seed),
        None => SceneSpec::preset(scene, frame + 1, seed),
    }
    .map_err(to_py)?;
    let f = py.detach(|| render_pair(&spec, frame)).map_err(to_py)?;
    let (w, h) = (f.pair.width(), f.pair.height());
    let depth: Vec<f64> = f
        .depth
        .depth()
        .iter()
        .zip(f.depth.valid())
        .map(|(&d, &v)| if v { d } else { f64::NAN })
        .collect();
    let color: Vec<u8> = f.pair.color().as_slice().iter().flat_map(|c| *c).collect();
    let out = PyDict::new(py);
    out.set_item(
        "left",
        grid(w, h, f.pair.left.as_slice().to_vec()).into_pyarray(py),
    )?;
    out.set_item(
        "right",
        grid(w, h, f.pair.right.as_slice().to_vec()).into_pyarray(py),
    )?;
    out.set_item(
        "color",
        numpy::ndarray::Array3::from_shape_vec((h, w, 3), color)
            .expect("buffer matches shape")
            .into_pyarray(py),
    )?;
    out.set_item(
        "disparity",
        PyDisparityField { inner: f.disparity }.disparity(py),
    )?;
    out.set_item("depth", grid(w, h, depth).into_pyarray(py))?;
    out.set_item("pose", PyPose { inner: f.pose })?;
    out.set_item("rig", PyStereoRig { inner: spec.rig })?;
    out.set_item("reference", spec.geometry.reference().to_spec())?;
    Ok(out)
}

#[pyclass(name = "GlobalMap")]
#[derive(Default)]
struct PyGlobalMap {
    inner: GlobalMap,
}

#[pymethods]
impl PyGlobalMap {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    /// Loads points from a PLY file; source keyframes are set to 0.
    #[staticmethod]
    fn from_ply(path: std::path::PathBuf) -> PyResult<Self> {
        let points = read_ply_file(&path)
            .map_err(to_py)?
            .into_iter()
            .map(|v| MapPoint {
                position: v.position,
                color: v.color,
                source_keyframe: 0,
            })
            .collect();
        Ok(Self {
            inner: GlobalMap::from_points(points),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(N, 3)` float32 positions.
    fn points<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f32>> {
        let data: Vec<f32> = self
            .inner
            .points()
            .iter()
            .flat_map(|p| p.position)
            .collect();
        Array2::from_shape_vec((self.inner.len(), 3), data)
            .expect("three coordinates per point")
            .into_pyarray(py)
    }

    /// `(N, 3)` uint8 colors.
    fn colors<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<u8>> {
        let data: Vec<u8> = self.inner.points().iter().flat_map(|p| p.color).collect();
        Array2::from_shape_vec((self.inner.len(), 3), data)
            .expect("three channels per point")
            .into_pyarray(py)
    }

    fn source_keyframes<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<u64>> {
        let data: Vec<u64> = self
            .inner
            .points()
            .iter()
            .map(|p| p.source_keyframe)
            .collect();
        data.into_pyarray(py)
    }

    /// Lifts a depth map (NaN where invalid) and fuses it into the map.
    /// Returns `(culled, added, map_size)`.
    #[pyo3(signature = (rig, pose, depth, index, stride=2, color=None, depth_gate=None))]
    #[allow(clippy::too_many_arguments)]
    fn integrate(
        &mut self,
        py: Python<'_>,
        rig: &PyStereoRig,
        pose: &PyPose,
        depth: PyReadonlyArray2<'_, f64>,
        index: u64,
        stride: usize,
        color: Option<PyReadonlyArray3<'_, u8>>,
        depth_gate: Option<f64>,
    ) -> PyResult<(usize, usize, usize)> {
        let view = depth.as_array();
        let (h, w) = view.dim();
        let depth = DepthField::from_depths(w, h, view.iter().copied().collect()).map_err(to_py)?;
        let color = match color {
            Some(c) => {
                let c = c.as_array();
                let (ch, cw, n) = c.dim();
                if n != 3 {
                    return Err(DensemapError::new_err(
                        "color must have shape (height, width, 3)",
                    ));
                }
                let px: Vec<[u8; 3]> = (0..ch)
                    .flat_map(|y| (0..cw).map(move |x| (x, y)))
                    .map(|(x, y)| [c[[y, x, 0]], c[[y, x, 1]], c[[y, x, 2]]])
                    .collect();
                Some(RgbImage::from_vec(cw, ch, px).map_err(to_py)?)
            }
            None => None,
        };
        let kf = KeyframeRecord {
            index,
            pose: pose.inner,
            depth,
            color,
            disparity: None,
        };
        let mode = depth_gate.map_or(CullingMode::Literal, |gate| CullingMode::DepthGated {
            gate,
        });
        let rig = rig.inner;
        let map = &mut self.inner;
        let stats = py
            .detach(|| {
                let points = lift_keyframe(&kf, &rig, stride)?;
                mosaic_update(map, &kf, points, &rig, mode)
            })
            .map_err(to_py)?;
        Ok((stats.culled, stats.added, stats.map_size))
    }

    fn export_ply(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.export_ply(&path).map_err(to_py)
    }
}

/// Scores a map against a reference: an analytic spec such as
/// `sphere:0,0,80,60`, a PLY path or a text file holding a spec.
#[pyfunction]
#[pyo3(signature = (map, reference, cutoff=5.0))]
fn evaluate_map<'py>(
    py: Python<'py>,
    map: &PyGlobalMap,
    reference: &str,
    cutoff: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let reference = Reference::load(reference).map_err(to_py)?;
    let r = py
        .detach(|| map_to_surface_error(&map.inner, &reference, cutoff))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("point_count", r.point_count)?;
    out.set_item("inlier_count", r.inlier_count)?;
    out.set_item("outlier_count", r.outlier_count)?;
    out.set_item("cutoff_mm", r.cutoff_mm)?;
    out.set_item("mean_mm", r.mean_mm)?;
    out.set_item("median_mm", r.median_mm)?;
    out.set_item("rms_mm", r.rms_mm)?;
    out.set_item("max_mm", r.max_mm)?;
    Ok(out)
}

/// Runs a file-based mapping session and returns the resulting map.
#[pyfunction]
#[pyo3(signature = (left, right, trajectory, config, out))]
fn run_session(
    py: Python<'_>,
    left: String,
    right: String,
    trajectory: std::path::PathBuf,
    config: std::path::PathBuf,
    out: std::path::PathBuf,
) -> PyResult<PyGlobalMap> {
    let cfg =
        SessionConfig::from_config(&ConfigFile::load(&config).map_err(to_py)?).map_err(to_py)?;
    let inputs = SessionInputs {
        left_pattern: left,
        right_pattern: right,
        trajectory,
        out_dir: out,
    };
    let report = py
        .detach(|| core_run_session(&inputs, &cfg))
        .map_err(to_py)?;
    Ok(PyGlobalMap { inner: report.map })
}

#[pymodule]
fn densemap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DensemapError", m.py().get_type::<DensemapError>())?;
    m.add_class::<PyStereoRig>()?;
    m.add_class::<PyPose>()?;
    m.add_class::<PyMatcherConfig>()?;
    m.add_class::<PyDisparityField>()?;
    m.add_class::<PyGlobalMap>()?;
    m.add_function(wrap_pyfunction!(match_pair, m)?)?;
    m.add_function(wrap_pyfunction!(exhaustive_disparity, m)?)?;
    m.add_function(wrap_pyfunction!(triangulate_depth, m)?)?;
    m.add_function(wrap_pyfunction!(backproject_point, m)?)?;
    m.add_function(wrap_pyfunction!(project_point, m)?)?;
    m.add_function(wrap_pyfunction!(render_scene, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_map, m)?)?;
    m.add_function(wrap_pyfunction!(run_session, m)?)?;
    Ok(())
}
