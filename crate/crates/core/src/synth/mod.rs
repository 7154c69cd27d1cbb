//! Procedural torso model and ground-truth synthetic scans.
//!
//! The template is a star-shaped generalized cylinder (pelvis to head, z up,
//! +y anterior, +x the subject's left) carrying a 9-bone skeleton,
//! bump-function blendshapes, 12 anatomical landmarks and 4 pattern curves.

mod target;

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{anchor_point, PatternCurve, TriangleMesh, Vec3};
use crate::rig::{BlendWeights, Bone, Quat, Skeleton};
use crate::shape::{BlendshapeSet, DeformableModel, Landmark};

pub use target::{
    evaluate_recovery, generate_target, load_ground_truth, load_params, save_ground_truth, save_params, GroundTruth,
    RecoveryReport, SyntheticTarget, TargetSpec,
};

/// Landmark names in canonical order (also the landmark-sweep order).
pub const LANDMARK_NAMES: [&str; 12] = [
    "sternal_notch",
    "xiphoid",
    "acromion_r",
    "acromion_l",
    "mid_axillary_r",
    "mid_axillary_l",
    "pectoralis_insertion_r",
    "pectoralis_insertion_l",
    "nipple_r",
    "nipple_l",
    "lowest_breast_r",
    "lowest_breast_l",
];

pub const BONE_NAMES: [&str; 9] = [
    "pelvis",
    "spine_lower",
    "spine_upper",
    "neck",
    "head",
    "clavicle_l",
    "clavicle_r",
    "upper_arm_l",
    "upper_arm_r",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TorsoSpec {
    /// Vertex rings between the two poles.
    pub rings: usize,
    /// Vertices per ring.
    pub segments: usize,
    /// Pelvis floor to shoulder top, mm.
    pub torso_height: f64,
    pub hip_half_width: f64,
    pub waist_half_width: f64,
    pub shoulder_half_width: f64,
    pub chest_half_depth: f64,
    pub breast_protrusion: f64,
    pub breast_radius: f64,
    pub blendshape_count: usize,
    /// Exponent of the inverse-distance blend weights.
    pub weight_falloff: f64,
    /// Seeds the procedural part of the blendshape basis.
    pub seed: u64,
}

impl Default for TorsoSpec {
    fn default() -> Self {
        Self {
            rings: 40,
            segments: 55,
            torso_height: 500.0,
            hip_half_width: 165.0,
            waist_half_width: 140.0,
            shoulder_half_width: 185.0,
            chest_half_depth: 120.0,
            breast_protrusion: 30.0,
            breast_radius: 80.0,
            blendshape_count: 55,
            weight_falloff: 2.0,
            seed: 0,
        }
    }
}

impl TorsoSpec {
    pub fn vertex_count(&self) -> usize {
        self.rings * self.segments + 2
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertex_count();
        if self.rings < 8 || self.segments < 8 || !(500..=10_000).contains(&n) {
            return Err(Error::Spec(format!(
                "{} rings × {} segments gives {n} vertices; need 500..=10000 with at least 8 of each",
                self.rings, self.segments
            )));
        }
        let dims = [
            ("torso_height", self.torso_height),
            ("hip_half_width", self.hip_half_width),
            ("waist_half_width", self.waist_half_width),
            ("shoulder_half_width", self.shoulder_half_width),
            ("chest_half_depth", self.chest_half_depth),
            ("breast_radius", self.breast_radius),
            ("weight_falloff", self.weight_falloff),
        ];
        for (name, v) in dims {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Spec(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.breast_protrusion >= 0.0) {
            return Err(Error::Spec("breast_protrusion must be nonnegative".into()));
        }
        Ok(())
    }

    fn top(&self) -> f64 {
        self.torso_height + 255.0
    }

    /// Elliptic half-axes of the cross-section at height `z`.
    fn section(&self, z: f64) -> (f64, f64) {
        let h = self.torso_height / 500.0;
        let (hip, waist, sh, d) = (
            self.hip_half_width,
            self.waist_half_width,
            self.shoulder_half_width,
            self.chest_half_depth,
        );
        let chest = 0.5 * (waist + sh);
        let t = self.torso_height;
        let keys = [
            (0.0, 0.65 * hip, 0.6 * d),
            (25.0 * h, hip, 0.85 * d),
            (110.0 * h, hip, 0.85 * d),
            (220.0 * h, waist, 0.85 * d),
            (330.0 * h, chest, d),
            (430.0 * h, 0.95 * sh, 0.95 * d),
            (480.0 * h, 0.85 * sh, 0.8 * d),
            (t + 5.0, 0.45 * sh, 0.55 * d),
            (t + 30.0, 58.0, 55.0),
            (t + 70.0, 56.0, 56.0),
            (t + 100.0, 72.0, 82.0),
            (t + 160.0, 80.0, 95.0),
            (t + 220.0, 68.0, 80.0),
            (self.top(), 30.0, 34.0),
        ];
        if z <= keys[0].0 {
            return (keys[0].1, keys[0].2);
        }
        for w in keys.windows(2) {
            let (a, b) = (w[0], w[1]);
            if z <= b.0 {
                let s = smooth((z - a.0) / (b.0 - a.0));
                return (a.1 + (b.1 - a.1) * s, a.2 + (b.2 - a.2) * s);
            }
        }
        let last = keys[keys.len() - 1];
        (last.1, last.2)
    }

    fn breast_center(&self, side: f64) -> (f64, f64) {
        (side * 0.45 * 0.5 * (self.waist_half_width + self.shoulder_half_width), 0.70 * self.torso_height)
    }

    /// Distance from the vertical axis to the surface at angle `theta`, height `z`.
    fn radius(&self, theta: f64, z: f64) -> f64 {
        let (ax, ay) = self.section(z);
        let (c, s) = (theta.cos(), theta.sin());
        let mut r = ax * ay / ((ay * c).powi(2) + (ax * s).powi(2)).sqrt();
        let t = self.torso_height;
        // Shoulder caps over the upper arms.
        for lateral in [0.0, PI] {
            r += 35.0 * bump(angle_diff(theta, lateral) / 0.55) * bump((z - 0.86 * t) / 75.0);
        }
        // Breasts.
        if s > 0.0 {
            let (x, y_z) = (r * c, z);
            for side in [1.0, -1.0] {
                let (cx, cz) = self.breast_center(side);
                let d = ((x - cx).powi(2) + (y_z - cz).powi(2)).sqrt();
                r += self.breast_protrusion * bump(d / self.breast_radius) * s;
            }
        }
        // Nose, chin and occiput make the head orientation observable.
        r += 18.0 * bump(angle_diff(theta, FRAC_PI_2) / 0.25) * bump((z - (t + 150.0)) / 30.0);
        r += 10.0 * bump(angle_diff(theta, FRAC_PI_2) / 0.5) * bump((z - (t + 100.0)) / 25.0);
        r += 8.0 * bump(angle_diff(theta, -FRAC_PI_2) / 0.7) * bump((z - (t + 175.0)) / 40.0);
        r
    }

    fn surface_point(&self, theta: f64, z: f64) -> Vec3 {
        let r = self.radius(theta, z);
        Vec3::new(r * theta.cos(), r * theta.sin(), z)
    }

    /// Anterior surface point with the given `x` at height `z`.
    fn front_point(&self, x: f64, z: f64) -> Vec3 {
        self.point_with_x(x, z, 0.0, PI)
    }

    fn back_point(&self, x: f64, z: f64) -> Vec3 {
        self.point_with_x(x, z, -PI, 0.0)
    }

    /// Bisection on θ ∈ [lo, hi], over which the surface x is monotone.
    fn point_with_x(&self, x: f64, z: f64, mut lo: f64, mut hi: f64) -> Vec3 {
        let decreasing = self.surface_point(lo, z).x > self.surface_point(hi, z).x;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if (self.surface_point(mid, z).x > x) == decreasing {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.surface_point(0.5 * (lo + hi), z)
    }

    fn ring_height(&self, i: usize) -> f64 {
        self.top() * (i as f64 + 0.5) / self.rings as f64
    }
}

/// `(1 − u²)³` on `|u| < 1`, zero elsewhere.
fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - u * u).powi(3)
    }
}

fn smooth(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        d - 2.0 * PI
    } else {
        d
    }
}

fn build_mesh(spec: &TorsoSpec) -> Result<TriangleMesh> {
    let (rings, segs) = (spec.rings, spec.segments);
    let mut vertices = Vec::with_capacity(spec.vertex_count());
    vertices.push(Vec3::new(0.0, 0.0, -8.0));
    for i in 0..rings {
        let z = spec.ring_height(i);
        for s in 0..segs {
            let theta = 2.0 * PI * s as f64 / segs as f64;
            vertices.push(spec.surface_point(theta, z));
        }
    }
    vertices.push(Vec3::new(0.0, 0.0, spec.top() + 8.0));
    let top = vertices.len() - 1;
    let ring = |r: usize, s: usize| 1 + r * segs + s % segs;
    let mut triangles = Vec::with_capacity(2 * rings * segs);
    for s in 0..segs {
        triangles.push([0, ring(0, s + 1), ring(0, s)]);
    }
    for r in 0..rings - 1 {
        for s in 0..segs {
            triangles.push([ring(r, s), ring(r, s + 1), ring(r + 1, s + 1)]);
            triangles.push([ring(r, s), ring(r + 1, s + 1), ring(r + 1, s)]);
        }
    }
    for s in 0..segs {
        triangles.push([top, ring(rings - 1, s), ring(rings - 1, s + 1)]);
    }
    Ok(TriangleMesh::new(vertices, triangles)?.with_normals())
}

fn rest_rotation(dir: &Vec3) -> Quat {
    Quat::rotation_between(&Vec3::z(), dir)
        .unwrap_or_else(|| Quat::from_axis_angle(&Vec3::x_axis(), PI))
}

fn build_skeleton(spec: &TorsoSpec) -> Result<Skeleton> {
    let t = spec.torso_height;
    let h = t / 500.0;
    let sh = spec.shoulder_half_width;
    let axis = |z: f64| Vec3::new(0.0, 0.0, z);
    // (name, parent, head, tail)
    let mut layout: Vec<(&str, Option<usize>, Vec3, Vec3)> = vec![
        ("pelvis", None, axis(60.0 * h), axis(200.0 * h)),
        ("spine_lower", Some(0), axis(200.0 * h), axis(340.0 * h)),
        ("spine_upper", Some(1), axis(340.0 * h), axis(t - 10.0)),
        ("neck", Some(2), axis(t - 10.0), axis(t + 80.0)),
        ("head", Some(3), axis(t + 80.0), axis(t + 230.0)),
    ];
    for (name, side) in [("clavicle_l", 1.0), ("clavicle_r", -1.0)] {
        layout.push((name, Some(2), Vec3::new(side * 25.0, 10.0, t - 30.0), Vec3::new(side * (sh - 40.0), 0.0, t - 35.0)));
    }
    for (name, side, parent) in [("upper_arm_l", 1.0, 5), ("upper_arm_r", -1.0, 6)] {
        layout.push((name, Some(parent), Vec3::new(side * (sh - 40.0), 0.0, t - 35.0), Vec3::new(side * (sh + 10.0), 0.0, t - 140.0 * h)));
    }
    let bones = layout
        .into_iter()
        .map(|(name, parent, head, tail)| Bone {
            name: name.into(),
            parent,
            rest_rotation: rest_rotation(&(tail - head).normalize()),
            rest_translation: head,
            joint_anchor: head,
            tail: Some(tail),
        })
        .collect();
    Skeleton::new(bones)
}

/// A compact bump `amplitude · (1 − (d/radius)²)³` displacing along the
/// vertex normal or a fixed direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Bump {
    pub center: Vec3,
    pub radius: f64,
    pub amplitude: f64,
    pub direction: Option<Vec3>,
}

impl Bump {
    fn normal(center: Vec3, radius: f64, amplitude: f64) -> Self {
        Self {
            center,
            radius,
            amplitude,
            direction: None,
        }
    }

    fn along(center: Vec3, radius: f64, amplitude: f64, direction: Vec3) -> Self {
        Self {
            center,
            radius,
            amplitude,
            direction: Some(direction.normalize()),
        }
    }
}

pub(crate) fn shape_bumps(spec: &TorsoSpec, mesh: &TriangleMesh) -> Vec<(String, Vec<Bump>)> {
    let t = spec.torso_height;
    let nipple = |side: f64| {
        let (x, z) = spec.breast_center(side);
        spec.front_point(x, z)
    };
    let front = |x: f64, z: f64| spec.front_point(x, z);
    let lateral = |side: f64, z: f64| spec.surface_point(if side > 0.0 { 0.0 } else { PI }, z);
    let back = |x: f64, z: f64| spec.back_point(x, z);
    let both = |f: &dyn Fn(f64) -> Bump| vec![f(1.0), f(-1.0)];
    let mut out: Vec<(String, Vec<Bump>)> = vec![
        ("breast_size".into(), both(&|s| Bump::normal(nipple(s), 85.0, 30.0))),
        ("arm_size".into(), both(&|s| Bump::normal(lateral(s, 0.86 * t), 100.0, 20.0))),
    ];
    for (suffix, side) in [("r", -1.0), ("l", 1.0)] {
        let n = nipple(side);
        out.push((format!("breast_volume_{suffix}"), vec![Bump::normal(n, 80.0, 25.0)]));
        out.push((format!("breast_ptosis_{suffix}"), vec![Bump::along(n - Vec3::z() * 20.0, 75.0, 20.0, -Vec3::z())]));
        out.push((format!("nipple_{suffix}"), vec![Bump::normal(n, 22.0, 6.0)]));
        out.push((format!("areola_{suffix}"), vec![Bump::normal(n, 35.0, 3.0)]));
        out.push((format!("breast_lateral_{suffix}"), vec![Bump::along(n, 75.0, 15.0, Vec3::x() * side)]));
        out.push((format!("breast_upper_pole_{suffix}"), vec![Bump::normal(n + Vec3::z() * 40.0, 60.0, 15.0)]));
        out.push((format!("inframammary_{suffix}"), vec![Bump::along(n - Vec3::z() * 55.0, 50.0, 10.0, Vec3::z())]));
        out.push((format!("pectoral_{suffix}"), vec![Bump::normal(front(side * 110.0, 0.84 * t), 60.0, 12.0)]));
        out.push((format!("scapula_{suffix}"), vec![Bump::normal(back(side * 90.0, 0.84 * t), 70.0, 12.0)]));
        out.push((format!("axilla_{suffix}"), vec![Bump::along(lateral(side, 0.72 * t), 50.0, 10.0, Vec3::x() * side)]));
    }
    out.extend([
        ("shoulder_width".to_string(), both(&|s| Bump::along(lateral(s, 0.9 * t), 110.0, 15.0, Vec3::x() * s))),
        ("belly".into(), vec![Bump::normal(front(0.0, 0.36 * t), 140.0, 35.0)]),
        ("waist".into(), both(&|s| Bump::normal(lateral(s, 0.44 * t), 120.0, 20.0))),
        ("hips".into(), both(&|s| Bump::normal(lateral(s, 0.16 * t), 120.0, 20.0))),
        ("back_curve".into(), vec![Bump::normal(back(0.0, 0.76 * t), 150.0, 15.0)]),
        ("neck_thickness".into(), vec![Bump::normal(Vec3::new(0.0, 0.0, t + 50.0), 80.0, 10.0)]),
        ("head_size".into(), vec![Bump::normal(Vec3::new(0.0, 0.0, t + 160.0), 120.0, 12.0)]),
        ("chest_width".into(), both(&|s| Bump::normal(lateral(s, 0.7 * t), 100.0, 15.0))),
        ("cleavage".into(), vec![Bump::normal(front(0.0, 0.68 * t), 50.0, 12.0)]),
        ("clavicle_prominence".into(), both(&|s| Bump::normal(front(s * 60.0, 0.94 * t), 50.0, 8.0))),
        ("abdomen_upper".into(), vec![Bump::normal(front(0.0, 0.52 * t), 90.0, 15.0)]),
        ("lower_back".into(), vec![Bump::normal(back(0.0, 0.3 * t), 110.0, 15.0)]),
    ]);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_B1E7);
    let torso: Vec<usize> = (0..mesh.vertex_count())
        .filter(|&i| {
            let z = mesh.vertices[i].z;
            z > 0.1 * t && z < 0.95 * t
        })
        .collect();
    let mut k = 0;
    while out.len() < spec.blendshape_count {
        let v = torso[rng.random_range(0..torso.len())];
        let radius = rng.random_range(40.0..110.0);
        let amplitude = rng.random_range(5.0..25.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let bump = Bump::normal(mesh.vertices[v], radius, amplitude);
        out.push((format!("detail_{k:02}"), vec![bump]));
        k += 1;
    }
    out.truncate(spec.blendshape_count);
    out
}

pub(crate) fn render_bumps(mesh: &TriangleMesh, bumps: &[Bump]) -> Vec<Vec3> {
    let normals = mesh.vertex_normals.as_ref().expect("template has normals");
    mesh.vertices
        .iter()
        .zip(normals)
        .map(|(v, n)| {
            bumps.iter().fold(Vec3::zeros(), |acc, b| {
                let f = bump((v - b.center).norm() / b.radius);
                if f == 0.0 {
                    acc
                } else {
                    acc + b.direction.unwrap_or(*n) * (b.amplitude * f)
                }
            })
        })
        .collect()
}

fn landmark_points(spec: &TorsoSpec) -> Vec<Vec3> {
    let t = spec.torso_height;
    let nipple = |side: f64| {
        let (x, z) = spec.breast_center(side);
        spec.front_point(x, z)
    };
    let mut pts = vec![spec.front_point(0.0, t - 15.0), spec.front_point(0.0, 0.58 * t)];
    let lateral = |side: f64| if side > 0.0 { 0.0 } else { PI };
    for side in [-1.0, 1.0] {
        pts.push(spec.surface_point(lateral(side) + side * 0.25, 0.94 * t));
    }
    for side in [-1.0, 1.0] {
        pts.push(spec.surface_point(lateral(side), 0.6 * t));
    }
    for side in [-1.0, 1.0] {
        pts.push(spec.surface_point(if side > 0.0 { 0.7 } else { PI - 0.7 }, 0.8 * t));
    }
    for side in [-1.0, 1.0] {
        pts.push(nipple(side));
    }
    for side in [-1.0, 1.0] {
        let (x, _) = spec.breast_center(side);
        pts.push(spec.front_point(x, 0.70 * t - 0.8 * spec.breast_radius));
    }
    pts
}

fn pattern_curves(spec: &TorsoSpec, mesh: &TriangleMesh) -> Result<Vec<PatternCurve>> {
    let t = spec.torso_height;
    let line = |z0: f64, z1: f64, n: usize| -> Vec<Vec3> {
        (0..n).map(|i| spec.front_point(0.0, z0 + (z1 - z0) * i as f64 / (n - 1) as f64)).collect()
    };
    let mut curves = vec![
        ("sternum_upper", true, line(0.95 * t, 0.8 * t, 8)),
        ("sternum_lower", true, line(0.76 * t, 0.6 * t, 8)),
    ];
    for (name, side) in [("breast_curve_r", -1.0), ("breast_curve_l", 1.0)] {
        let (cx, cz) = spec.breast_center(side);
        let r = 0.8 * spec.breast_radius;
        // Lower and lateral arc around the breast.
        let pts = (0..16)
            .map(|i| {
                let a = -0.15 * PI - 0.85 * PI * i as f64 / 15.0;
                let (x, z) = (cx + side * r * a.cos(), cz + r * a.sin());
                spec.front_point(x, z)
            })
            .collect();
        curves.push((name, false, pts));
    }
    curves
        .into_iter()
        .map(|(name, arrow, pts)| {
            let anchors = pts.into_iter().map(|p| anchor_point(mesh, p)).collect::<Result<Vec<_>>>()?;
            Ok(PatternCurve {
                name: name.into(),
                arrow,
                anchors,
            })
        })
        .collect()
}

/// Build the procedural torso model.
pub fn generate_template(spec: &TorsoSpec) -> Result<DeformableModel> {
    spec.validate()?;
    let mesh = build_mesh(spec)?;
    let skeleton = build_skeleton(spec)?;
    let weights = BlendWeights::from_bone_segments(&skeleton, &mesh.vertices, spec.weight_falloff);
    let bumps = shape_bumps(spec, &mesh);
    let (names, fields): (Vec<String>, Vec<Vec<Vec3>>) =
        bumps.iter().map(|(name, b)| (name.clone(), render_bumps(&mesh, b))).unzip();
    let blendshapes = BlendshapeSet::new(mesh.vertex_count(), names, fields)?;
    let landmarks = LANDMARK_NAMES
        .iter()
        .zip(landmark_points(spec))
        .map(|(name, p)| {
            Ok(Landmark {
                name: (*name).into(),
                anchor: anchor_point(&mesh, p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let patterns = pattern_curves(spec, &mesh)?;
    DeformableModel::new(mesh, skeleton, weights, blendshapes, landmarks, patterns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::ParamVector;
    use crate::shape::deform;

    fn default_model() -> DeformableModel {
        generate_template(&TorsoSpec::default()).unwrap()
    }

    #[test]
    fn default_cardinalities() {
        let m = default_model();
        assert_eq!(m.bone_count(), 9);
        assert_eq!(m.shape_count(), 55);
        assert_eq!(m.landmarks.len(), 12);
        assert_eq!(m.patterns.len(), 4);
        assert_eq!(m.vertex_count(), 2202);
        let names: Vec<&str> = m.skeleton.bones().iter().map(|b| b.name.as_str()).collect();
        assert_eq!(names, BONE_NAMES);
        let lm: Vec<&str> = m.landmarks.iter().map(|l| l.name.as_str()).collect();
        assert_eq!(lm, LANDMARK_NAMES);
        assert_eq!(m.blendshapes.names()[0], "breast_size");
        assert_eq!(m.blendshapes.names()[1], "arm_size");
    }

    #[test]
    fn template_is_watertight_and_outward() {
        let m = default_model();
        let mesh = &m.template;
        let mut edges = std::collections::HashMap::new();
        for t in &mesh.triangles {
            for k in 0..3 {
                *edges.entry((t[k], t[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        for (&(a, b), &c) in &edges {
            assert_eq!(c, 1);
            assert_eq!(edges.get(&(b, a)), Some(&1), "edge {a}-{b} has no twin");
        }
        // Divergence theorem: positive enclosed volume means outward winding.
        let vol: f64 = mesh
            .triangles
            .iter()
            .map(|t| mesh.vertices[t[0]].dot(&mesh.vertices[t[1]].cross(&mesh.vertices[t[2]])) / 6.0)
            .sum();
        assert!(vol > 0.0);
        assert_eq!(mesh.clone().drop_degenerate(), 0);
    }

    #[test]
    fn deterministic() {
        let a = default_model();
        let b = default_model();
        assert_eq!(a.template.vertices, b.template.vertices);
        assert_eq!(a.blendshapes, b.blendshapes);
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.landmarks, b.landmarks);
        let other = generate_template(&TorsoSpec { seed: 9, ..TorsoSpec::default() }).unwrap();
        assert_ne!(other.blendshapes, a.blendshapes);
    }

    #[test]
    fn blendshapes_are_local_and_bounded() {
        let spec = TorsoSpec::default();
        let m = generate_template(&spec).unwrap();
        let bumps = shape_bumps(&spec, &m.template);
        for (k, (_, list)) in bumps.iter().enumerate() {
            let field = m.blendshapes.shape(k);
            let mut max: f64 = 0.0;
            for (i, d) in field.iter().enumerate() {
                let inside = list.iter().any(|b| (m.template.vertices[i] - b.center).norm() < b.radius);
                if !inside {
                    assert_eq!(*d, Vec3::zeros(), "shape {k} leaks to vertex {i}");
                }
                max = max.max(d.norm());
            }
            assert!(max <= 40.0 && max > 0.0, "shape {k} max displacement {max}");
        }
    }

    #[test]
    fn blendshapes_are_linearly_independent() {
        let m = default_model();
        let a = m.shape_count();
        let mut gram = nalgebra::DMatrix::zeros(a, a);
        for i in 0..a {
            for j in 0..=i {
                let g: f64 = m.blendshapes.shape(i).iter().zip(m.blendshapes.shape(j)).map(|(x, y)| x.dot(y)).sum();
                gram[(i, j)] = g;
                gram[(j, i)] = g;
            }
        }
        let eig = gram.symmetric_eigenvalues();
        assert!(eig.min() > 1e-8 * eig.max(), "Gram eigenvalues {} .. {}", eig.min(), eig.max());
    }

    #[test]
    fn landmarks_sit_where_named() {
        let m = default_model();
        let p = m.landmark_positions(&m.template.vertices).unwrap();
        let get = |name: &str| p[m.landmark_index(name).unwrap()];
        assert!(get("sternal_notch").z > get("xiphoid").z);
        assert!(get("nipple_l").x > 0.0 && get("nipple_r").x < 0.0);
        assert!(get("nipple_l").y > get("xiphoid").y);
        assert!(get("lowest_breast_l").z < get("nipple_l").z);
        assert!(get("acromion_r").z > get("nipple_r").z);
        assert!(get("mid_axillary_l").x > get("pectoralis_insertion_l").x);
        for (a, b) in [("nipple_r", "nipple_l"), ("acromion_r", "acromion_l")] {
            assert!((get(a).x + get(b).x).abs() < 5.0 && (get(a).z - get(b).z).abs() < 5.0);
        }
    }

    #[test]
    fn rest_deformation_is_template_and_joints_closed() {
        let m = default_model();
        let rest = ParamVector::rest(&m);
        let out = deform(&m, &rest.pose, &rest.shape).unwrap();
        for (a, b) in out.vertices.iter().zip(&m.template.vertices) {
            assert!((a - b).norm() < 1e-9);
        }
        for j in m.skeleton.joints() {
            assert!(crate::rig::joint_residual(&m.skeleton, &rest.pose, j).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_out_of_range_resolution() {
        assert!(matches!(generate_template(&TorsoSpec { rings: 5, ..TorsoSpec::default() }), Err(Error::Spec(_))));
        assert!(matches!(generate_template(&TorsoSpec { rings: 200, segments: 80, ..TorsoSpec::default() }), Err(Error::Spec(_))));
        assert!(generate_template(&TorsoSpec { torso_height: -1.0, ..TorsoSpec::default() }).is_err());
    }
}
