//! Python bindings: models, synthetic targets, registration and statistics.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use torsofit::energy::{EnergyWeights, LandmarkTargets, ParamVector, ScanLandmarks};
use torsofit::eval::{distance_stats, landmark_error, surface_error, transfer_patterns, DistanceStats};
use torsofit::geometry::{TriangleMesh, Vec3};
use torsofit::manifest::{load_model, save_model};
use torsofit::shape::DeformableModel;
use torsofit::solver::{initialize_from_landmarks, register as register_scan, SolverConfig};
use torsofit::spatial::{FilterConfig, ScanSurface};
use torsofit::synth::{evaluate_recovery, generate_target, generate_template, SyntheticTarget, TargetSpec, TorsoSpec};
use torsofit::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::NoOverlap(_) | Error::SolverStall(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type Point = (f64, f64, f64);

fn point(v: &Vec3) -> Point {
    (v.x, v.y, v.z)
}

fn stats_dict<'py>(py: Python<'py>, s: &DistanceStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mae", s.mae)?;
    d.set_item("sd", s.sd)?;
    d.set_item("max", s.max)?;
    d.set_item("min", s.min)?;
    d.set_item("n", s.n)?;
    Ok(d)
}

/// Articulated template with blendshapes, landmarks and pattern curves.
#[pyclass(name = "Model", module = "torsofit")]
pub struct PyModel {
    inner: DeformableModel,
}

#[pymethods]
impl PyModel {
    /// The procedural torso.
    #[staticmethod]
    #[pyo3(signature = (blendshapes = 55, seed = 0))]
    fn procedural(blendshapes: usize, seed: u64) -> PyResult<Self> {
        let spec = TorsoSpec {
            blendshape_count: blendshapes,
            seed,
            ..TorsoSpec::default()
        };
        Ok(Self {
            inner: generate_template(&spec).map_err(to_py)?,
        })
    }

    /// Load a model manifest.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_model(&path).map_err(to_py)?,
        })
    }

    /// Write the manifest and meshes into `directory`; returns the manifest path.
    fn save(&self, directory: PathBuf) -> PyResult<PathBuf> {
        save_model(&directory, &self.inner).map_err(to_py)
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn bone_names(&self) -> Vec<String> {
        self.inner.skeleton.bones().iter().map(|b| b.name.clone()).collect()
    }

    #[getter]
    fn shape_count(&self) -> usize {
        self.inner.shape_count()
    }

    #[getter]
    fn landmark_names(&self) -> Vec<String> {
        self.inner.landmarks.iter().map(|l| l.name.clone()).collect()
    }

    #[getter]
    fn triangles(&self) -> Vec<(usize, usize, usize)> {
        self.inner.template.triangles.iter().map(|t| (t[0], t[1], t[2])).collect()
    }

    /// Model vertices under `params` (rest when omitted).
    #[pyo3(signature = (params = None))]
    fn deform(&self, params: Option<&PyParams>) -> PyResult<Vec<Point>> {
        let rest = ParamVector::rest(&self.inner);
        let p = params.map_or(&rest, |p| &p.inner);
        let v = self.inner.deform_vertices(&p.pose, &p.shape).map_err(to_py)?;
        Ok(v.iter().map(point).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({} vertices, {} bones, {} blendshapes)",
            self.inner.vertex_count(),
            self.inner.bone_count(),
            self.inner.shape_count()
        )
    }
}

/// Per-bone rotation, scale and translation plus blendshape weights.
#[pyclass(name = "Params", module = "torsofit")]
pub struct PyParams {
    inner: ParamVector,
}

#[pymethods]
impl PyParams {
    #[staticmethod]
    fn rest(model: &PyModel) -> Self {
        Self {
            inner: ParamVector::rest(&model.inner),
        }
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.shape.alpha.clone()
    }

    #[setter]
    fn set_alpha(&mut self, alpha: Vec<f64>) -> PyResult<()> {
        if alpha.len() != self.inner.shape.alpha.len() {
            return Err(PyValueError::new_err(format!(
                "expected {} weights, got {}",
                self.inner.shape.alpha.len(),
                alpha.len()
            )));
        }
        self.inner.shape.alpha = alpha;
        Ok(())
    }

    /// Unit quaternions as `(w, x, y, z)`.
    #[getter]
    fn rotations(&self) -> Vec<(f64, f64, f64, f64)> {
        self.inner
            .pose
            .bones
            .iter()
            .map(|b| (b.rotation.w, b.rotation.i, b.rotation.j, b.rotation.k))
            .collect()
    }

    #[getter]
    fn scales(&self) -> Vec<Point> {
        self.inner.pose.bones.iter().map(|b| point(&b.scale)).collect()
    }

    #[getter]
    fn translations(&self) -> Vec<Point> {
        self.inner.pose.bones.iter().map(|b| point(&b.translation)).collect()
    }
}

/// A synthetic scan with known parameters.
#[pyclass(name = "Target", module = "torsofit")]
pub struct PyTarget {
    inner: SyntheticTarget,
}

#[pymethods]
impl PyTarget {
    #[getter]
    fn vertices(&self) -> Vec<Point> {
        self.inner.scan.vertices.iter().map(point).collect()
    }

    #[getter]
    fn triangles(&self) -> Vec<(usize, usize, usize)> {
        self.inner.scan.triangles.iter().map(|t| (t[0], t[1], t[2])).collect()
    }

    #[getter]
    fn landmarks(&self) -> Vec<(String, Point)> {
        let l = &self.inner.truth.landmarks;
        l.names.iter().cloned().zip(l.points.iter().map(point)).collect()
    }

    #[getter]
    fn truth(&self) -> PyParams {
        PyParams {
            inner: self.inner.truth.params.clone(),
        }
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.truth.seed
    }
}

#[pyfunction]
#[pyo3(signature = (model, seed = 0, noise_sigma = 0.0, hole_fraction = 0.0, max_joint_angle_deg = 20.0, root_rotation_deg = 20.0))]
fn synthesize(
    model: &PyModel,
    seed: u64,
    noise_sigma: f64,
    hole_fraction: f64,
    max_joint_angle_deg: f64,
    root_rotation_deg: f64,
) -> PyResult<PyTarget> {
    let spec = TargetSpec {
        seed,
        noise_sigma,
        hole_fraction,
        max_joint_angle_deg,
        root_rotation_deg,
        ..TargetSpec::default()
    };
    Ok(PyTarget {
        inner: generate_target(&model.inner, &spec).map_err(to_py)?,
    })
}

/// Outcome of a registration.
#[pyclass(name = "Registration", module = "torsofit")]
pub struct PyRegistration {
    params: ParamVector,
    scan: ScanSurface,
    correspondences: torsofit::spatial::CorrespondenceSet,
    landmarks: ScanLandmarks,
    filters: FilterConfig,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    time_s: f64,
    /// `(mean_distance, e_total)` per outer iteration.
    #[pyo3(get)]
    trace: Vec<(f64, f64)>,
}

#[pymethods]
impl PyRegistration {
    #[getter]
    fn params(&self) -> PyParams {
        PyParams {
            inner: self.params.clone(),
        }
    }

    /// Statistics of the retained correspondence distances.
    fn surface_error<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        stats_dict(py, &surface_error(&self.correspondences).map_err(to_py)?)
    }

    fn landmark_error<'py>(&self, py: Python<'py>, model: &PyModel) -> PyResult<Bound<'py, PyDict>> {
        let v = model
            .inner
            .deform_vertices(&self.params.pose, &self.params.shape)
            .map_err(to_py)?;
        stats_dict(py, &landmark_error(&model.inner, &v, &self.landmarks).map_err(to_py)?)
    }

    /// Pattern polylines projected onto the scan: `(name, points, max_residual, flagged)`.
    fn transfer_patterns(&self, model: &PyModel) -> PyResult<Vec<(String, Vec<Point>, f64, usize)>> {
        let patterns = transfer_patterns(&model.inner, &self.params, &self.scan, &self.filters).map_err(to_py)?;
        Ok(patterns
            .iter()
            .map(|p| (p.name.clone(), p.polyline().iter().map(point).collect(), p.max_residual(), p.flagged()))
            .collect())
    }

    /// Recovery errors against a synthetic target's ground truth.
    fn recovery<'py>(&self, py: Python<'py>, model: &PyModel, target: &PyTarget) -> PyResult<Bound<'py, PyDict>> {
        let r = evaluate_recovery(&model.inner, &self.params, &self.correspondences, &target.inner).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("surface", stats_dict(py, &r.surface)?)?;
        d.set_item("clean_surface", stats_dict(py, &r.clean_surface)?)?;
        d.set_item("landmarks", stats_dict(py, &r.landmarks)?)?;
        d.set_item("rotation_error_deg", r.rotation_error_deg.clone())?;
        d.set_item("translation_error", r.translation_error.clone())?;
        d.set_item("alpha_error", r.alpha_error.clone())?;
        Ok(d)
    }
}

/// Register `model` to a scan given as vertices and triangles. Landmarks are
/// `(name, (x, y, z))` pairs; with three or more the model is first aligned
/// rigidly to them.
#[pyfunction]
#[pyo3(signature = (
    model, vertices, triangles, landmarks = None, *,
    active_landmarks = 12, lambda_d = 1e-3, lambda_s = 1e-2, lambda_bs = 1e-3, lambda_j = 1e-2, lambda_l = 1e-4,
    convergence_threshold = 1e-2, max_outer_iterations = 100, max_time_s = None, pose_warmup = false
))]
#[allow(clippy::too_many_arguments)]
fn register(
    py: Python<'_>,
    model: &PyModel,
    vertices: Vec<Point>,
    triangles: Vec<(usize, usize, usize)>,
    landmarks: Option<Vec<(String, Point)>>,
    active_landmarks: usize,
    lambda_d: f64,
    lambda_s: f64,
    lambda_bs: f64,
    lambda_j: f64,
    lambda_l: f64,
    convergence_threshold: f64,
    max_outer_iterations: usize,
    max_time_s: Option<f64>,
    pose_warmup: bool,
) -> PyResult<PyRegistration> {
    let mesh = TriangleMesh::new(
        vertices.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect(),
        triangles.iter().map(|&(a, b, c)| [a, b, c]).collect(),
    )
    .map_err(to_py)?;
    let scan = ScanSurface::new(mesh).map_err(to_py)?;
    let landmarks = ScanLandmarks {
        names: landmarks.iter().flatten().map(|(n, _)| n.clone()).collect(),
        points: landmarks.iter().flatten().map(|(_, p)| Vec3::new(p.0, p.1, p.2)).collect(),
    };
    let weights = EnergyWeights {
        lambda_d,
        lambda_s,
        lambda_bs,
        lambda_j,
        lambda_l,
    };
    let config = SolverConfig {
        convergence_threshold,
        max_outer_iterations,
        max_time_s,
        pose_warmup,
        ..SolverConfig::default()
    };
    let filters = FilterConfig::default();
    let m = &model.inner;
    let matched = m.landmarks.iter().filter(|l| landmarks.get(&l.name).is_some()).count();
    let result = py
        .detach(|| {
            let initial = if matched >= 3 {
                Some(initialize_from_landmarks(m, &landmarks)?)
            } else {
                None
            };
            let active = LandmarkTargets::select(m, &landmarks, active_landmarks);
            register_scan(m, &scan, Some(&active), &weights, &filters, &config, initial.as_ref())
        })
        .map_err(to_py)?;
    Ok(PyRegistration {
        converged: result.converged,
        iterations: result.trace.len(),
        time_s: result.total_time_s,
        trace: result.trace.iter().map(|r| (r.mean_distance, r.e_total)).collect(),
        params: result.params,
        correspondences: result.correspondences,
        scan,
        landmarks,
        filters,
    })
}

/// Mean absolute value, population SD, max, min and count of `distances`.
#[pyfunction(name = "distance_stats")]
fn py_distance_stats<'py>(py: Python<'py>, distances: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    stats_dict(py, &distance_stats(&distances).map_err(to_py)?)
}

#[pymodule]
#[pyo3(name = "torsofit")]
pub fn torsofit_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyTarget>()?;
    m.add_class::<PyRegistration>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(py_distance_stats, m)?)?;
    Ok(())
}
