#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use torsofit::energy::ParamVector;
use torsofit::geometry::{SurfaceAnchor, TriangleMesh, Vec3};
use torsofit::rig::{quat_exp, BlendWeights, Bone, BonePose, PoseParams, Quat, Skeleton};
use torsofit::shape::{BlendshapeSet, DeformableModel, Landmark, ShapeParams};

pub fn uv_sphere(rings: usize, segments: usize, radius: f64) -> TriangleMesh {
    let mut vertices = vec![Vec3::new(0.0, 0.0, -radius)];
    for r in 1..rings {
        let theta = PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = std::f64::consts::TAU * s as f64 / segments as f64;
            vertices.push(Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), -theta.cos()) * radius);
        }
    }
    vertices.push(Vec3::new(0.0, 0.0, radius));
    let top = vertices.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + s % segments;
    let mut triangles = Vec::new();
    for s in 0..segments {
        triangles.push([0, ring(1, s + 1), ring(1, s)]);
        triangles.push([top, ring(rings - 1, s), ring(rings - 1, s + 1)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            triangles.push([ring(r, s), ring(r, s + 1), ring(r + 1, s + 1)]);
            triangles.push([ring(r, s), ring(r + 1, s + 1), ring(r + 1, s)]);
        }
    }
    TriangleMesh::new(vertices, triangles).unwrap()
}

pub fn random_quat(rng: &mut impl Rng, max_angle: f64) -> Quat {
    let axis = random_vec(rng, 1.0);
    quat_exp(&(axis.normalize() * rng.random_range(-max_angle..max_angle)))
}

pub fn random_vec(rng: &mut impl Rng, r: f64) -> Vec3 {
    Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

/// Sphere of radius 100 mm split between a chain of `bones` bones, with
/// `shapes` smooth bump shapes and three landmarks.
pub fn small_model(rng: &mut impl Rng, rings: usize, bones: usize, shapes: usize) -> DeformableModel {
    let mesh = uv_sphere(rings, rings + 2, 100.0);
    let mut list: Vec<Bone> = (0..bones)
        .map(|j| {
            let at = Vec3::new(0.0, 0.0, -60.0 + 120.0 * j as f64 / bones as f64);
            Bone {
                name: format!("b{j}"),
                parent: j.checked_sub(1),
                rest_rotation: random_quat(rng, PI),
                rest_translation: at,
                joint_anchor: at,
                tail: None,
            }
        })
        .collect();
    for j in 0..bones {
        let next = if j + 1 < bones { list[j + 1].rest_translation } else { Vec3::new(0.0, 0.0, 80.0) };
        list[j].tail = Some(next);
    }
    let skeleton = Skeleton::new(list).unwrap();
    let weights = BlendWeights::from_bone_segments(&skeleton, &mesh.vertices, 2.0);
    let fields = (0..shapes)
        .map(|_| {
            let c = random_vec(rng, 100.0);
            let dir = random_vec(rng, 1.0);
            let radius: f64 = rng.random_range(60.0..120.0);
            mesh.vertices
                .iter()
                .map(|v| {
                    let r = (v - c).norm() / radius;
                    if r < 1.0 { dir * 20.0 * (1.0 - r * r).powi(3) } else { Vec3::zeros() }
                })
                .collect()
        })
        .collect();
    let set = BlendshapeSet::new(mesh.vertex_count(), (0..shapes).map(|k| format!("s{k}")).collect(), fields).unwrap();
    let landmarks = (0..3)
        .map(|m| Landmark {
            name: format!("l{m}"),
            anchor: SurfaceAnchor::new(m * 7 % mesh.triangle_count(), [0.2, 0.3, 0.5]).unwrap(),
        })
        .collect();
    DeformableModel::new(mesh, skeleton, weights, set, landmarks, Vec::new()).unwrap()
}

pub fn random_params(rng: &mut impl Rng, model: &DeformableModel) -> ParamVector {
    ParamVector {
        pose: PoseParams {
            bones: (0..model.bone_count())
                .map(|_| BonePose {
                    rotation: random_quat(rng, PI),
                    scale: Vec3::new(rng.random_range(0.7..1.4), rng.random_range(0.7..1.4), rng.random_range(0.7..1.4)),
                    translation: random_vec(rng, 60.0),
                })
                .collect(),
        },
        shape: ShapeParams {
            alpha: (0..model.shape_count()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        },
    }
}

/// Central differences along every tangent direction of the parameters.
pub fn numeric_gradient(params: &ParamVector, f: &dyn Fn(&ParamVector) -> f64) -> DVector<f64> {
    let h = 1e-6;
    let n = params.dof_count();
    DVector::from_iterator(
        n,
        (0..n).map(|k| {
            let mut d = DVector::zeros(n);
            d[k] = h;
            let plus = f(&params.retract(&d, 0.0).unwrap());
            let minus = f(&params.retract(&-d, 0.0).unwrap());
            (plus - minus) / (2.0 * h)
        }),
    )
}

pub fn relative_error(analytic: &DVector<f64>, numeric: &DVector<f64>) -> f64 {
    (analytic - numeric).norm() / numeric.norm().max(1e-3)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
