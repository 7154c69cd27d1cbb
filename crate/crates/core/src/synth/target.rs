use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::energy::{ParamVector, ScanLandmarks};
use crate::error::{Error, Result};
use crate::eval::{distance_stats, landmark_error, surface_error, DistanceStats};
use crate::geometry::{TriangleMesh, Vec3};
use crate::rig::{quat_exp, rest_relative_rotation, BonePose, PoseParams, Quat};
use crate::shape::{DeformableModel, ShapeParams};
use crate::spatial::{CorrespondenceSet, ScanSurface};

const MAX_HOLE_ATTEMPTS: u64 = 10;

/// Ground-truth sampling ranges and corruption settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    /// Bound on each joint's rotation away from its rest relative rotation.
    pub max_joint_angle_deg: f64,
    /// Bound on the global rotation of the root bone.
    pub root_rotation_deg: f64,
    pub scale_range: [f64; 2],
    /// α is drawn uniformly from `[-alpha_range, alpha_range]`.
    pub alpha_range: f64,
    /// Per-axis bound on the root displacement, mm.
    pub root_translation: f64,
    pub noise_sigma: f64,
    pub hole_fraction: f64,
    pub hole_patches: usize,
    /// Each model triangle becomes `refine²` scan triangles.
    pub refine: usize,
    /// Scan triangles within this distance of a landmark are never cut, mm.
    pub landmark_protection: f64,
    pub seed: u64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            max_joint_angle_deg: 20.0,
            root_rotation_deg: 20.0,
            scale_range: [0.9, 1.1],
            alpha_range: 1.0,
            root_translation: 50.0,
            noise_sigma: 0.0,
            hole_fraction: 0.0,
            hole_patches: 3,
            refine: 3,
            landmark_protection: 30.0,
            seed: 0,
        }
    }
}

impl TargetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        for (name, v) in [("max_joint_angle_deg", self.max_joint_angle_deg), ("root_rotation_deg", self.root_rotation_deg)] {
            if !(0.0..=45.0).contains(&v) {
                return bad(format!("{name} must be in [0, 45], got {v}"));
            }
        }
        let [lo, hi] = self.scale_range;
        if !(0.8 <= lo && lo <= hi && hi <= 1.25) {
            return bad(format!("scale_range must lie within [0.8, 1.25], got [{lo}, {hi}]"));
        }
        if !(0.0..=1.5).contains(&self.alpha_range) {
            return bad(format!("alpha_range must be in [0, 1.5], got {}", self.alpha_range));
        }
        if !(self.root_translation >= 0.0 && self.root_translation.is_finite()) {
            return bad("root_translation must be nonnegative".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be nonnegative".into());
        }
        if !(0.0..0.9).contains(&self.hole_fraction) {
            return bad(format!("hole_fraction must be in [0, 0.9), got {}", self.hole_fraction));
        }
        if self.hole_fraction > 0.0 && self.hole_patches == 0 {
            return bad("hole_patches must be positive when holes are requested".into());
        }
        if !(1..=8).contains(&self.refine) {
            return bad(format!("refine must be in 1..=8, got {}", self.refine));
        }
        if !(self.landmark_protection >= 0.0) {
            return bad("landmark_protection must be nonnegative".into());
        }
        Ok(())
    }
}

/// Parameters and landmarks a synthetic scan was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub params: ParamVector,
    /// Landmarks on the uncorrupted surface.
    pub landmarks: ScanLandmarks,
    pub noise_sigma: f64,
    pub hole_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticTarget {
    pub scan: TriangleMesh,
    /// The uncorrupted deformed model surface.
    pub clean: ScanSurface,
    pub truth: GroundTruth,
}

fn sample_truth(model: &DeformableModel, spec: &TargetSpec, rng: &mut ChaCha8Rng) -> ParamVector {
    let skel = &model.skeleton;
    let axis_angle = |rng: &mut ChaCha8Rng, max_deg: f64| {
        let dir = loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                break v / n;
            }
        };
        let angle = if max_deg > 0.0 { rng.random_range(0.0..=max_deg.to_radians()) } else { 0.0 };
        quat_exp(&(dir * angle))
    };
    let [lo, hi] = spec.scale_range;
    let scale = |rng: &mut ChaCha8Rng| {
        if hi > lo {
            Vec3::from_fn(|_, _| rng.random_range(lo..=hi))
        } else {
            Vec3::repeat(lo)
        }
    };
    let mut pose = PoseParams::rest(skel);
    let root = &skel.bones()[0];
    let shift = Vec3::from_fn(|_, _| {
        if spec.root_translation > 0.0 {
            rng.random_range(-spec.root_translation..=spec.root_translation)
        } else {
            0.0
        }
    });
    pose.bones[0] = BonePose {
        rotation: axis_angle(rng, spec.root_rotation_deg) * root.rest_rotation,
        scale: scale(rng),
        translation: root.rest_translation + shift,
    };
    // Parents precede children, so each child can be placed at its
    // parent's image of the joint anchor.
    for joint in skel.joints().to_vec() {
        let parent = pose.bones[joint.parent];
        let rotation = parent.rotation * rest_relative_rotation(skel, &joint) * axis_angle(rng, spec.max_joint_angle_deg);
        let translation = pose.transform_point(skel, joint.parent, &joint.anchor);
        pose.bones[joint.child] = BonePose {
            rotation,
            scale: scale(rng),
            translation,
        };
    }
    let alpha = (0..model.shape_count())
        .map(|_| {
            if spec.alpha_range > 0.0 {
                rng.random_range(-spec.alpha_range..=spec.alpha_range)
            } else {
                0.0
            }
        })
        .collect();
    ParamVector {
        pose,
        shape: ShapeParams { alpha },
    }
}

/// Grow `patches` seeded patches over the triangle adjacency until the
/// removed area reaches `fraction` of the total. Protected triangles are
/// never removed.
fn grow_holes(
    areas: &[f64],
    neighbors: &[Vec<usize>],
    protected: &[bool],
    fraction: f64,
    patches: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<bool>> {
    let total: f64 = areas.iter().sum();
    let goal = fraction * total;
    let mut removed = vec![false; areas.len()];
    let mut removed_area = 0.0;
    let candidates: Vec<usize> = (0..areas.len()).filter(|&t| !protected[t]).collect();
    for p in 0..patches {
        let patch_goal = goal * (p + 1) as f64 / patches as f64;
        let mut queue = VecDeque::new();
        while removed_area < patch_goal {
            let t = match queue.pop_front() {
                Some(t) => t,
                None => {
                    let free: Vec<usize> = candidates.iter().copied().filter(|&t| !removed[t]).collect();
                    if free.is_empty() {
                        return Err(Error::Spec("hole fraction exceeds the unprotected area".into()));
                    }
                    free[rng.random_range(0..free.len())]
                }
            };
            if removed[t] || protected[t] {
                continue;
            }
            removed[t] = true;
            removed_area += areas[t];
            queue.extend(neighbors[t].iter().copied().filter(|&n| !removed[n] && !protected[n]));
        }
    }
    Ok(removed)
}

/// True when every triangle in `required` is reachable from the first one
/// through kept triangles.
fn connected(neighbors: &[Vec<usize>], removed: &[bool], required: &[usize]) -> bool {
    let Some(&start) = required.first() else {
        return true;
    };
    let mut seen = vec![false; removed.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(t) = queue.pop_front() {
        for &n in &neighbors[t] {
            if !seen[n] && !removed[n] {
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    required.iter().all(|&t| seen[t])
}

fn generate_once(model: &DeformableModel, spec: &TargetSpec, seed: u64) -> Result<Option<SyntheticTarget>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = sample_truth(model, spec, &mut rng);
    let deformed = model.deform_vertices(&params.pose, &params.shape)?;
    let clean = model.template.with_vertices(deformed)?;
    let positions = model.landmark_positions(&clean.vertices)?;
    let landmarks = ScanLandmarks {
        names: model.landmarks.iter().map(|l| l.name.clone()).collect(),
        points: positions.clone(),
    };

    let refinement = clean.refine(spec.refine);
    let mut scan = refinement.mesh(&clean.vertices).with_normals();
    let areas: Vec<f64> = (0..scan.triangle_count()).map(|t| scan.triangle_area(t)).collect();
    let uncorrupted = scan.clone();

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Spec(e.to_string()))?;
        let normals = scan.vertex_normals.clone().expect("normals computed above");
        for (v, n) in scan.vertices.iter_mut().zip(&normals) {
            *v += n * normal.sample(&mut rng);
        }
    }

    if spec.hole_fraction > 0.0 {
        let neighbors = scan.triangle_neighbors();
        let protection = spec.landmark_protection;
        let near_landmark = |t: usize| {
            scan.triangles[t]
                .iter()
                .any(|&i| positions.iter().any(|p| (uncorrupted.vertices[i] - p).norm() <= protection))
        };
        let mut protected: Vec<bool> = (0..scan.triangle_count()).map(near_landmark).collect();
        // One triangle per landmark must survive and stay connected.
        let anchors: Vec<usize> = positions
            .iter()
            .map(|p| {
                (0..scan.triangle_count())
                    .min_by(|&a, &b| {
                        let da = triangle_center_distance(&uncorrupted, a, p);
                        let db = triangle_center_distance(&uncorrupted, b, p);
                        da.total_cmp(&db)
                    })
                    .expect("scan has triangles")
            })
            .collect();
        for t in corridor(&uncorrupted, &neighbors, &anchors) {
            protected[t] = true;
        }
        let removed = grow_holes(&areas, &neighbors, &protected, spec.hole_fraction, spec.hole_patches, &mut rng)?;
        if !connected(&neighbors, &removed, &anchors) {
            return Ok(None);
        }
        let mut keep = removed.iter().map(|r| !r);
        scan.triangles.retain(|_| keep.next().unwrap_or(true));
    }
    scan.compact();
    scan.compute_normals();

    Ok(Some(SyntheticTarget {
        scan,
        clean: ScanSurface::new(clean)?,
        truth: GroundTruth {
            params,
            landmarks,
            noise_sigma: spec.noise_sigma,
            hole_fraction: spec.hole_fraction,
            seed,
        },
    }))
}

/// Triangles on shortest centroid paths from the first anchor to the others.
fn corridor(mesh: &TriangleMesh, neighbors: &[Vec<usize>], anchors: &[usize]) -> Vec<usize> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let Some(&source) = anchors.first() else {
        return Vec::new();
    };
    let centroid = |t: usize| {
        let [a, b, c] = mesh.corners(t);
        (a + b + c) / 3.0
    };
    let n = mesh.triangle_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Reverse((OrdF64(0.0), source)));
    while let Some(Reverse((OrdF64(d), t))) = heap.pop() {
        if d > dist[t] {
            continue;
        }
        let ct = centroid(t);
        for &u in &neighbors[t] {
            let nd = d + (centroid(u) - ct).norm();
            if nd < dist[u] {
                dist[u] = nd;
                prev[u] = t;
                heap.push(Reverse((OrdF64(nd), u)));
            }
        }
    }
    let mut out = vec![source];
    for &a in &anchors[1..] {
        let mut t = a;
        while t != usize::MAX && t != source {
            out.push(t);
            t = prev[t];
        }
    }
    out
}

#[derive(PartialEq, PartialOrd)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn triangle_center_distance(mesh: &TriangleMesh, t: usize, p: &Vec3) -> f64 {
    let [a, b, c] = mesh.corners(t);
    ((a + b + c) / 3.0 - p).norm()
}

/// Deform the model with sampled ground truth, refine, then corrupt with
/// noise along the normals and region-grown holes. If the holes cut the
/// landmark regions apart, the whole target is redrawn with the next seed.
pub fn generate_target(model: &DeformableModel, spec: &TargetSpec) -> Result<SyntheticTarget> {
    spec.validate()?;
    for attempt in 0..MAX_HOLE_ATTEMPTS {
        let seed = spec.seed.wrapping_add(attempt);
        if let Some(target) = generate_once(model, spec, seed)? {
            return Ok(target);
        }
        log::debug!("seed {seed}: holes disconnected the landmarks, retrying");
    }
    Err(Error::Spec(format!(
        "holes disconnected the landmarks for {MAX_HOLE_ATTEMPTS} consecutive seeds from {}",
        spec.seed
    )))
}

/// Recovery of a registration against its synthetic ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Retained correspondence distances against the scan.
    pub surface: DistanceStats,
    /// Distances from the registered vertices to the uncorrupted surface.
    pub clean_surface: DistanceStats,
    pub landmarks: DistanceStats,
    pub rotation_error_deg: Vec<f64>,
    pub translation_error: Vec<f64>,
    pub scale_ratio: Vec<[f64; 3]>,
    /// Shapes absent from either side count as zero weight.
    pub alpha_error: Vec<f64>,
}

impl RecoveryReport {
    pub fn max_rotation_error_deg(&self) -> f64 {
        self.rotation_error_deg.iter().copied().fold(0.0, f64::max)
    }
}

pub fn evaluate_recovery(
    model: &DeformableModel,
    params: &ParamVector,
    correspondences: &CorrespondenceSet,
    target: &SyntheticTarget,
) -> Result<RecoveryReport> {
    params.validate(model)?;
    let truth = &target.truth.params;
    if truth.bone_count() != params.bone_count() {
        return Err(Error::Contract(format!(
            "ground truth has {} bones, result has {}",
            truth.bone_count(),
            params.bone_count()
        )));
    }
    let vertices = model.deform_vertices(&params.pose, &params.shape)?;
    let clean: Vec<f64> = vertices
        .iter()
        .map(|v| target.clean.project_exact(v).closest.distance)
        .collect();
    let pairs = params.pose.bones.iter().zip(&truth.pose.bones);
    let a = params.shape.alpha.len().max(truth.shape.alpha.len());
    let alpha = |p: &ParamVector, k: usize| p.shape.alpha.get(k).copied().unwrap_or(0.0);
    Ok(RecoveryReport {
        surface: surface_error(correspondences)?,
        clean_surface: distance_stats(&clean)?,
        landmarks: landmark_error(model, &vertices, &target.truth.landmarks)?,
        rotation_error_deg: pairs.clone().map(|(r, t)| r.rotation.angle_to(&t.rotation).to_degrees()).collect(),
        translation_error: pairs.clone().map(|(r, t)| (r.translation - t.translation).norm()).collect(),
        scale_ratio: pairs.map(|(r, t)| r.scale.component_div(&t.scale).into()).collect(),
        alpha_error: (0..a).map(|k| (alpha(params, k) - alpha(truth, k)).abs()).collect(),
    })
}

const SIDECAR_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    version: u32,
    seed: u64,
    noise_sigma: f64,
    hole_fraction: f64,
    alpha: Vec<f64>,
    bones: Vec<SidecarBone>,
    landmarks: Vec<SidecarLandmark>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarBone {
    name: String,
    /// `[w, x, y, z]`
    rotation: [f64; 4],
    scale: [f64; 3],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarLandmark {
    name: String,
    position: [f64; 3],
}

/// Write the ground-truth sidecar (TOML).
pub fn save_ground_truth(path: &Path, model: &DeformableModel, truth: &GroundTruth) -> Result<()> {
    truth.params.validate(model)?;
    let sidecar = Sidecar {
        version: SIDECAR_VERSION,
        seed: truth.seed,
        noise_sigma: truth.noise_sigma,
        hole_fraction: truth.hole_fraction,
        alpha: truth.params.shape.alpha.clone(),
        bones: sidecar_bones(model, &truth.params),
        landmarks: truth
            .landmarks
            .names
            .iter()
            .zip(&truth.landmarks.points)
            .map(|(n, p)| SidecarLandmark {
                name: n.clone(),
                position: (*p).into(),
            })
            .collect(),
    };
    let text = toml::to_string(&sidecar).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_ground_truth(path: &Path, model: &DeformableModel) -> Result<GroundTruth> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sidecar: Sidecar = toml::from_str(&text).map_err(|e| Error::format(path, 0, e.to_string()))?;
    if sidecar.version != SIDECAR_VERSION {
        return Err(Error::format(path, 0, format!("unsupported ground-truth version {}", sidecar.version)));
    }
    let params = params_from(path, model, &sidecar.bones, sidecar.alpha)?;
    Ok(GroundTruth {
        params,
        landmarks: ScanLandmarks {
            names: sidecar.landmarks.iter().map(|l| l.name.clone()).collect(),
            points: sidecar.landmarks.iter().map(|l| l.position.into()).collect(),
        },
        noise_sigma: sidecar.noise_sigma,
        hole_fraction: sidecar.hole_fraction,
        seed: sidecar.seed,
    })
}

fn sidecar_bones(model: &DeformableModel, params: &ParamVector) -> Vec<SidecarBone> {
    model
        .skeleton
        .bones()
        .iter()
        .zip(&params.pose.bones)
        .map(|(b, p)| SidecarBone {
            name: b.name.clone(),
            rotation: [p.rotation.w, p.rotation.i, p.rotation.j, p.rotation.k],
            scale: p.scale.into(),
            translation: p.translation.into(),
        })
        .collect()
}

fn params_from(path: &Path, model: &DeformableModel, bones: &[SidecarBone], alpha: Vec<f64>) -> Result<ParamVector> {
    let mut pose = PoseParams::rest(&model.skeleton);
    if bones.len() != model.bone_count() {
        return Err(Error::TopologyMismatch(format!(
            "{}: {} bones, model has {}",
            path.display(),
            bones.len(),
            model.bone_count()
        )));
    }
    for b in bones {
        let j = model
            .skeleton
            .bone_index(&b.name)
            .ok_or_else(|| Error::TopologyMismatch(format!("{}: unknown bone {:?}", path.display(), b.name)))?;
        let [w, x, y, z] = b.rotation;
        pose.bones[j] = BonePose {
            rotation: Quat::new_normalize(nalgebra::Quaternion::new(w, x, y, z)),
            scale: b.scale.into(),
            translation: b.translation.into(),
        };
    }
    let params = ParamVector {
        pose,
        shape: ShapeParams { alpha },
    };
    params.validate(model)?;
    Ok(params)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    version: u32,
    alpha: Vec<f64>,
    bones: Vec<SidecarBone>,
}

/// Registered parameters as TOML (the sidecar layout without the metadata).
pub fn save_params(path: &Path, model: &DeformableModel, params: &ParamVector) -> Result<()> {
    params.validate(model)?;
    let file = ParamsFile {
        version: SIDECAR_VERSION,
        alpha: params.shape.alpha.clone(),
        bones: sidecar_bones(model, params),
    };
    let text = toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path, model: &DeformableModel) -> Result<ParamVector> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ParamsFile = toml::from_str(&text).map_err(|e| Error::format(path, 0, e.to_string()))?;
    if file.version != SIDECAR_VERSION {
        return Err(Error::format(path, 0, format!("unsupported parameter file version {}", file.version)));
    }
    params_from(path, model, &file.bones, file.alpha)
}

impl SyntheticTarget {
    /// Rebuild a target from a loaded scan and its ground truth; the clean
    /// surface is the model deformed by the true parameters.
    pub fn from_parts(model: &DeformableModel, scan: TriangleMesh, truth: GroundTruth) -> Result<Self> {
        truth.params.validate(model)?;
        let clean = model
            .template
            .with_vertices(model.deform_vertices(&truth.params.pose, &truth.params.shape)?)?;
        Ok(Self {
            scan,
            clean: ScanSurface::new(clean)?,
            truth,
        })
    }
}
