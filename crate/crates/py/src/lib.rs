//! Python bindings exposing the core geometry, generation, model, and
//! metric operations for scripting and inspection.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use hoirecon::geometry as geo;
use hoirecon::metrics;
use hoirecon::model;
use hoirecon::synth;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn to_vec3(t: (f64, f64, f64)) -> geo::Vec3 {
    geo::Vec3::new(t.0, t.1, t.2)
}

fn from_vec3(v: &geo::Vec3) -> (f64, f64, f64) {
    (v.x, v.y, v.z)
}

/// Rigid transform (unit quaternion + translation).
#[pyclass(name = "SE3Pose", from_py_object)]
#[derive(Clone)]
struct PySE3Pose {
    inner: geo::SE3Pose,
}

#[pymethods]
impl PySE3Pose {
    #[staticmethod]
    fn identity() -> Self {
        Self {
            inner: geo::SE3Pose::identity(),
        }
    }

    /// Builds from quaternion (w, x, y, z) and translation (tx, ty, tz).
    #[new]
    fn new(quat: (f64, f64, f64, f64), translation: (f64, f64, f64)) -> Self {
        Self {
            inner: geo::SE3Pose::from_quat_parts(quat.0, quat.1, quat.2, quat.3, to_vec3(translation)),
        }
    }

    /// Camera at `eye` looking at `target` (world-to-camera).
    #[staticmethod]
    fn look_at(eye: (f64, f64, f64), target: (f64, f64, f64)) -> Self {
        Self {
            inner: geo::look_at_pose(&to_vec3(eye), &to_vec3(target)),
        }
    }

    fn compose(&self, other: &PySE3Pose) -> Self {
        Self {
            inner: self.inner.compose(&other.inner),
        }
    }

    fn inverse(&self) -> Self {
        Self {
            inner: self.inner.inverse(),
        }
    }

    fn transform_point(&self, p: (f64, f64, f64)) -> (f64, f64, f64) {
        from_vec3(&self.inner.transform_point(&to_vec3(p)))
    }

    #[getter]
    fn translation(&self) -> (f64, f64, f64) {
        from_vec3(&self.inner.translation)
    }

    /// Quaternion as (w, x, y, z).
    #[getter]
    fn quaternion(&self) -> (f64, f64, f64, f64) {
        let q = self.inner.rotation.quaternion();
        (q.w, q.i, q.j, q.k)
    }

    fn rotation_angle_to(&self, other: &PySE3Pose) -> f64 {
        self.inner.rotation.angle_to(&other.inner.rotation)
    }

    fn __repr__(&self) -> String {
        let t = self.inner.translation;
        format!("SE3Pose(t=({:.4}, {:.4}, {:.4}))", t.x, t.y, t.z)
    }
}

/// Pinhole camera intrinsics.
#[pyclass(name = "CameraIntrinsics", from_py_object)]
#[derive(Clone)]
struct PyCameraIntrinsics {
    inner: geo::CameraIntrinsics,
}

#[pymethods]
impl PyCameraIntrinsics {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> PyResult<Self> {
        Ok(Self {
            inner: geo::CameraIntrinsics::new(fx, fy, cx, cy, width, height).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn centered(f: f64, width: usize, height: usize) -> Self {
        Self {
            inner: geo::CameraIntrinsics::centered(f, width, height),
        }
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }
}

/// Indexed triangle mesh.
#[pyclass(name = "TriMesh", from_py_object)]
#[derive(Clone)]
struct PyTriMesh {
    inner: geo::TriMesh,
}

#[pymethods]
impl PyTriMesh {
    #[new]
    fn new(vertices: Vec<(f64, f64, f64)>, triangles: Vec<(usize, usize, usize)>) -> PyResult<Self> {
        let verts = vertices.into_iter().map(to_vec3).collect();
        let tris = triangles.into_iter().map(|t| [t.0, t.1, t.2]).collect();
        Ok(Self {
            inner: geo::TriMesh::new(verts, tris).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn load_ply(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: geo::TriMesh::load_ply(&path).map_err(io_err)?,
        })
    }

    fn save_ply(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.save_ply(&path).map_err(io_err)
    }

    fn vertex_count(&self) -> usize {
        self.inner.vertices().len()
    }

    fn triangle_count(&self) -> usize {
        self.inner.triangles().len()
    }

    fn vertices(&self) -> Vec<(f64, f64, f64)> {
        self.inner.vertices().iter().map(from_vec3).collect()
    }

    fn total_area(&self) -> f64 {
        self.inner.total_area()
    }

    /// Axis-aligned bounds as ((min...), (max...)).
    fn aabb(&self) -> PyResult<((f64, f64, f64), (f64, f64, f64))> {
        let (lo, hi) = self
            .inner
            .aabb()
            .ok_or_else(|| PyValueError::new_err("empty mesh"))?;
        Ok((from_vec3(&lo), from_vec3(&hi)))
    }
}

/// Occupancy voxel grid.
#[pyclass(name = "VoxelGrid", from_py_object)]
#[derive(Clone)]
struct PyVoxelGrid {
    inner: geo::VoxelGrid,
}

#[pymethods]
impl PyVoxelGrid {
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: geo::VoxelGrid::load(&path).map_err(io_err)?,
        })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(io_err)
    }

    fn resolution(&self) -> (usize, usize, usize) {
        let [x, y, z] = self.inner.resolution();
        (x, y, z)
    }

    fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.inner.get(x, y, z)
    }

    fn occupied_count(&self, threshold: f64) -> usize {
        self.inner.count_occupied(threshold)
    }

    fn iou(&self, other: &PyVoxelGrid, threshold: f64) -> f64 {
        self.inner.iou(&other.inner, threshold)
    }

    /// Boundary-face surface extraction.
    fn surface(&self, threshold: f64) -> PyResult<PyTriMesh> {
        Ok(PyTriMesh {
            inner: geo::voxel_surface(&self.inner, threshold).map_err(value_err)?,
        })
    }
}

/// Binary raster mask.
#[pyclass(name = "MaskImage", from_py_object)]
#[derive(Clone)]
struct PyMaskImage {
    inner: geo::MaskImage,
}

#[pymethods]
impl PyMaskImage {
    fn count(&self) -> usize {
        self.inner.count()
    }

    fn get(&self, x: usize, y: usize) -> bool {
        self.inner.get(x, y)
    }

    fn iou(&self, other: &PyMaskImage) -> f64 {
        self.inner.iou(&other.inner)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }
}

/// Per-pixel depth map.
#[pyclass(name = "DepthMap", from_py_object)]
#[derive(Clone)]
struct PyDepthMap {
    inner: geo::DepthMap,
}

#[pymethods]
impl PyDepthMap {
    fn get(&self, x: usize, y: usize) -> f64 {
        self.inner.get(x, y)
    }

    /// Minimum finite depth, or None when empty.
    fn min_depth(&self) -> Option<f64> {
        self.inner
            .pixels()
            .iter()
            .cloned()
            .filter(|d| d.is_finite())
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))))
    }
}

/// Timestamped pose sequence.
#[pyclass(name = "Trajectory", from_py_object)]
#[derive(Clone)]
struct PyTrajectory {
    inner: geo::Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[new]
    fn new(entries: Vec<(u64, PySE3Pose)>) -> PyResult<Self> {
        let entries = entries.into_iter().map(|(f, p)| (f, p.inner)).collect();
        Ok(Self {
            inner: geo::Trajectory::new(entries).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn load_tum(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: geo::Trajectory::load_tum(&path).map_err(io_err)?,
        })
    }

    fn save_tum(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.save_tum(&path).map_err(io_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn pose(&self, index: usize) -> PyResult<PySE3Pose> {
        self.inner
            .entries()
            .get(index)
            .map(|(_, p)| PySE3Pose { inner: *p })
            .ok_or_else(|| PyValueError::new_err("index out of range"))
    }
}

/// Projects a point; returns (u, v, depth).
#[pyfunction]
fn project(
    intr: &PyCameraIntrinsics,
    pose: &PySE3Pose,
    point: (f64, f64, f64),
) -> PyResult<(f64, f64, f64)> {
    let (px, depth) = geo::project(&intr.inner, &pose.inner, &to_vec3(point)).map_err(value_err)?;
    Ok((px.x, px.y, depth))
}

/// Lifts a pixel at a depth back to the world frame.
#[pyfunction]
fn unproject(
    intr: &PyCameraIntrinsics,
    pose: &PySE3Pose,
    pixel: (f64, f64),
    depth: f64,
) -> PyResult<(f64, f64, f64)> {
    let p = geo::unproject(&intr.inner, &pose.inner, &geo::Pixel::new(pixel.0, pixel.1), depth)
        .map_err(value_err)?;
    Ok(from_vec3(&p))
}

/// Z-buffer rasterization; returns (DepthMap, MaskImage).
#[pyfunction]
fn rasterize(
    mesh: &PyTriMesh,
    intr: &PyCameraIntrinsics,
    pose: &PySE3Pose,
) -> (PyDepthMap, PyMaskImage) {
    let (depth, mask) = geo::rasterize(&mesh.inner, &intr.inner, &pose.inner);
    (PyDepthMap { inner: depth }, PyMaskImage { inner: mask })
}

/// Nearest ray-mesh intersection; returns (t, point, triangle) or None.
#[pyfunction]
fn ray_intersect(
    mesh: &PyTriMesh,
    origin: (f64, f64, f64),
    direction: (f64, f64, f64),
) -> PyResult<Option<(f64, (f64, f64, f64), usize)>> {
    let hit = geo::ray_intersect(&mesh.inner, &to_vec3(origin), &to_vec3(direction))
        .map_err(value_err)?;
    Ok(hit.map(|h| (h.t, from_vec3(&h.point), h.triangle)))
}

/// Least-squares similarity (scale, quaternion wxyz, translation).
#[pyfunction]
fn umeyama_sim3(
    src: Vec<(f64, f64, f64)>,
    dst: Vec<(f64, f64, f64)>,
    with_scale: bool,
) -> PyResult<(f64, (f64, f64, f64, f64), (f64, f64, f64))> {
    let src: Vec<geo::Vec3> = src.into_iter().map(to_vec3).collect();
    let dst: Vec<geo::Vec3> = dst.into_iter().map(to_vec3).collect();
    let sim = geo::umeyama_sim3(&src, &dst, with_scale).map_err(value_err)?;
    let q = sim.rotation.quaternion();
    Ok((sim.scale, (q.w, q.i, q.j, q.k), from_vec3(&sim.translation)))
}

/// Deterministic camera poses on a sphere.
#[pyfunction]
fn fibonacci_sphere_views(
    n: usize,
    radius: f64,
    look_at: (f64, f64, f64),
    intr: &PyCameraIntrinsics,
) -> Vec<PySE3Pose> {
    geo::fibonacci_sphere_views(n, radius, &to_vec3(look_at), &intr.inner)
        .into_iter()
        .map(|p| PySE3Pose { inner: p })
        .collect()
}

/// Area-weighted surface sampling.
#[pyfunction]
fn sample_surface(mesh: &PyTriMesh, n: usize, seed: u64) -> PyResult<Vec<(f64, f64, f64)>> {
    Ok(metrics::sample_surface(&mesh.inner, n, seed)
        .map_err(value_err)?
        .iter()
        .map(from_vec3)
        .collect())
}

/// Symmetric Chamfer distance in centimeters.
#[pyfunction]
fn chamfer_cm(a: Vec<(f64, f64, f64)>, b: Vec<(f64, f64, f64)>) -> PyResult<f64> {
    let a: Vec<geo::Vec3> = a.into_iter().map(to_vec3).collect();
    let b: Vec<geo::Vec3> = b.into_iter().map(to_vec3).collect();
    metrics::chamfer_cm(&a, &b).map_err(value_err)
}

/// F-score (percent) at threshold tau meters.
#[pyfunction]
fn fscore(a: Vec<(f64, f64, f64)>, b: Vec<(f64, f64, f64)>, tau: f64) -> PyResult<f64> {
    let a: Vec<geo::Vec3> = a.into_iter().map(to_vec3).collect();
    let b: Vec<geo::Vec3> = b.into_iter().map(to_vec3).collect();
    metrics::fscore(&a, &b, tau).map_err(value_err)
}

/// Absolute trajectory error (meters) after rigid alignment.
#[pyfunction]
fn ate(est: &PyTrajectory, gt: &PyTrajectory, with_scale: bool) -> PyResult<f64> {
    metrics::ate(&est.inner, &gt.inner, with_scale).map_err(value_err)
}

/// Relative pose error as (rpe_t_cm, rpe_r_deg).
#[pyfunction]
fn rpe(est: &PyTrajectory, gt: &PyTrajectory, delta: usize) -> PyResult<(f64, f64)> {
    metrics::rpe(&est.inner, &gt.inner, delta).map_err(value_err)
}

/// Seeded primitive-union object; returns (VoxelGrid, TriMesh).
#[pyfunction]
fn gen_object(seed: u64, complexity: usize, resolution: usize) -> PyResult<(PyVoxelGrid, PyTriMesh)> {
    let (grid, mesh) = synth::gen_object(seed, complexity, resolution).map_err(value_err)?;
    Ok((PyVoxelGrid { inner: grid }, PyTriMesh { inner: mesh }))
}

/// Generates a full scene and writes it as a one-sequence dataset directory.
/// Returns (frame_count, mean_occlusion_ratio).
#[pyfunction]
#[pyo3(signature = (out_dir, seed, complexity=3, frame_count=8, image_size=64, voxel_resolution=16))]
fn generate_scene(
    out_dir: std::path::PathBuf,
    seed: u64,
    complexity: usize,
    frame_count: usize,
    image_size: usize,
    voxel_resolution: usize,
) -> PyResult<(usize, f64)> {
    let spec = synth::SceneSpec {
        seed,
        complexity,
        frame_count,
        image_size,
        voxel_resolution,
        ..Default::default()
    };
    let seq = synth::generate_sequence(&spec).map_err(value_err)?;
    let ratio = synth::occlusion_ratio(&seq);
    let frames = seq.frames.len();
    synth::write_dataset(
        &[("seq_0000".to_string(), seq, synth::SplitLabel::Test)],
        &out_dir,
    )
    .map_err(io_err)?;
    Ok((frames, ratio))
}

/// Flow-matching path point and target velocity for flat f64 vectors.
#[pyfunction]
fn interpolate_path(data: Vec<f64>, noise: Vec<f64>, t: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let n = data.len();
    let sample = hoirecon::flow::FlowSample::new(
        ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[n]), data).map_err(value_err)?,
        ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[n]), noise).map_err(value_err)?,
        t,
    )
    .map_err(value_err)?;
    let (x, v) = hoirecon::flow::interpolate_path(&sample);
    Ok((x.iter().cloned().collect(), v.iter().cloned().collect()))
}

/// Number of parameters of the completion model at a given width preset.
#[pyfunction]
fn model_parameter_count(tiny: bool) -> PyResult<usize> {
    let cfg = if tiny {
        model::ModelConfig::tiny()
    } else {
        model::ModelConfig::default()
    };
    let store = model::ParamStore::init(&cfg, 0).map_err(value_err)?;
    Ok(store.total_scalars())
}

#[pymodule]
fn hoirecon_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySE3Pose>()?;
    m.add_class::<PyCameraIntrinsics>()?;
    m.add_class::<PyTriMesh>()?;
    m.add_class::<PyVoxelGrid>()?;
    m.add_class::<PyMaskImage>()?;
    m.add_class::<PyDepthMap>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(unproject, m)?)?;
    m.add_function(wrap_pyfunction!(rasterize, m)?)?;
    m.add_function(wrap_pyfunction!(ray_intersect, m)?)?;
    m.add_function(wrap_pyfunction!(umeyama_sim3, m)?)?;
    m.add_function(wrap_pyfunction!(fibonacci_sphere_views, m)?)?;
    m.add_function(wrap_pyfunction!(sample_surface, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer_cm, m)?)?;
    m.add_function(wrap_pyfunction!(fscore, m)?)?;
    m.add_function(wrap_pyfunction!(ate, m)?)?;
    m.add_function(wrap_pyfunction!(rpe, m)?)?;
    m.add_function(wrap_pyfunction!(gen_object, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate_path, m)?)?;
    m.add_function(wrap_pyfunction!(model_parameter_count, m)?)?;
    Ok(())
}
