//! Skeleton of rigid-scalable bones and linear blend skinning.
//!
//! Bone poses are absolute: rotation `q`, per-axis scale `s` and translation
//! `t`. A bone maps a point `v` as `R(q) diag(s) R(q*)ᵀ (v - T*) + t`, i.e.
//! the scale acts in the bone's rest frame and the rest pose
//! `(q*, 1, T*)` is the identity map. Each bone's rest translation `T*` is
//! the point where it attaches to its parent.

mod rotation;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub use rotation::{
    quat_exp, quat_log, quat_to_matrix, right_jacobian_inv, rotation_exp, rotation_log, skew, Quat,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Bone {
    pub name: String,
    pub parent: Option<usize>,
    pub rest_rotation: Quat,
    pub rest_translation: Vec3,
    /// Joint point shared with the parent, in rest world coordinates.
    pub joint_anchor: Vec3,
    /// End of the bone segment; used only to generate blend weights.
    pub tail: Option<Vec3>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint {
    pub parent: usize,
    pub child: usize,
    pub anchor: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    bones: Vec<Bone>,
    joints: Vec<Joint>,
}

impl Skeleton {
    /// Bones must be topologically sorted with a single root at index 0.
    pub fn new(bones: Vec<Bone>) -> Result<Self> {
        if bones.is_empty() {
            return Err(Error::Contract("skeleton needs at least one bone".into()));
        }
        let roots = bones.iter().filter(|b| b.parent.is_none()).count();
        if roots != 1 || bones[0].parent.is_some() {
            return Err(Error::Contract(format!(
                "skeleton must have exactly one root at index 0 (found {roots})"
            )));
        }
        let mut joints = Vec::new();
        for (j, bone) in bones.iter().enumerate() {
            if let Some(p) = bone.parent {
                if p >= j {
                    return Err(Error::Contract(format!(
                        "bone {j} ('{}') has parent {p}; parents must precede children",
                        bone.name
                    )));
                }
                joints.push(Joint {
                    parent: p,
                    child: j,
                    anchor: bone.joint_anchor,
                });
            }
        }
        Ok(Self { bones, joints })
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.bones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bones.is_empty()
    }

    pub fn bone_index(&self, name: &str) -> Option<usize> {
        self.bones.iter().position(|b| b.name == name)
    }

    /// Coordinates of a rest-space point in bone `j`'s rest frame.
    pub fn to_bone_local(&self, j: usize, v: &Vec3) -> Vec3 {
        let b = &self.bones[j];
        b.rest_rotation.inverse_transform_vector(&(v - b.rest_translation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BonePose {
    pub rotation: Quat,
    pub scale: Vec3,
    pub translation: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseParams {
    pub bones: Vec<BonePose>,
}

impl PoseParams {
    pub fn rest(skeleton: &Skeleton) -> Self {
        Self {
            bones: skeleton
                .bones()
                .iter()
                .map(|b| BonePose {
                    rotation: b.rest_rotation,
                    scale: Vec3::repeat(1.0),
                    translation: b.rest_translation,
                })
                .collect(),
        }
    }

    pub fn validate(&self, skeleton: &Skeleton) -> Result<()> {
        if self.bones.len() != skeleton.len() {
            return Err(Error::Contract(format!(
                "pose has {} bones, skeleton has {}",
                self.bones.len(),
                skeleton.len()
            )));
        }
        for (j, b) in self.bones.iter().enumerate() {
            if !(b.scale.min() > 0.0) || !b.translation.iter().all(|x| x.is_finite()) {
                return Err(Error::Contract(format!("bone {j} has invalid scale or translation")));
            }
        }
        Ok(())
    }

    /// Affine map of bone `j`: `v ↦ linear · v + offset`.
    pub fn bone_affine(&self, skeleton: &Skeleton, j: usize) -> (Matrix3<f64>, Vec3) {
        let rest = &skeleton.bones()[j];
        let pose = &self.bones[j];
        let linear = quat_to_matrix(&pose.rotation)
            * Matrix3::from_diagonal(&pose.scale)
            * quat_to_matrix(&rest.rest_rotation).transpose();
        let offset = pose.translation - linear * rest.rest_translation;
        (linear, offset)
    }

    pub fn transform_point(&self, skeleton: &Skeleton, j: usize, v: &Vec3) -> Vec3 {
        let (l, o) = self.bone_affine(skeleton, j);
        l * v + o
    }

    /// Apply the rigid motion `x ↦ R x + t` to every bone.
    pub fn rigidly_moved(&self, rotation: &Quat, translation: &Vec3) -> Self {
        Self {
            bones: self
                .bones
                .iter()
                .map(|b| BonePose {
                    rotation: rotation * b.rotation,
                    scale: b.scale,
                    translation: rotation * b.translation + translation,
                })
                .collect(),
        }
    }
}

/// Joint closure residual: the anchor under the parent's transform minus the
/// anchor under the child's. Zero iff the joint is closed.
pub fn joint_residual(skeleton: &Skeleton, pose: &PoseParams, joint: &Joint) -> Vec3 {
    pose.transform_point(skeleton, joint.parent, &joint.anchor)
        - pose.transform_point(skeleton, joint.child, &joint.anchor)
}

/// `q_parent⁻¹ ⊗ q_child`.
pub fn relative_joint_rotation(pose: &PoseParams, joint: &Joint) -> Quat {
    pose.bones[joint.parent].rotation.inverse() * pose.bones[joint.child].rotation
}

pub fn rest_relative_rotation(skeleton: &Skeleton, joint: &Joint) -> Quat {
    let b = skeleton.bones();
    b[joint.parent].rest_rotation.inverse() * b[joint.child].rest_rotation
}

/// Sparse K×N blend-weight matrix stored per vertex as `(bone, weight)` lists.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendWeights {
    bone_count: usize,
    per_vertex: Vec<Vec<(usize, f64)>>,
}

impl BlendWeights {
    pub fn from_per_vertex(bone_count: usize, per_vertex: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for (i, list) in per_vertex.iter().enumerate() {
            let mut sum = 0.0;
            for &(j, w) in list {
                if j >= bone_count {
                    return Err(Error::Contract(format!("vertex {i} weight on missing bone {j}")));
                }
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::Contract(format!("vertex {i} weight {w} outside [0, 1]")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Contract(format!("vertex {i} weights sum to {sum}, not 1")));
            }
        }
        let per_vertex = per_vertex
            .into_iter()
            .map(|mut l| {
                l.retain(|&(_, w)| w > 0.0);
                l.sort_by_key(|&(j, _)| j);
                l
            })
            .collect();
        Ok(Self {
            bone_count,
            per_vertex,
        })
    }

    /// Build from `(bone, vertex, weight)` triplets; repeated entries add up.
    pub fn from_triplets(bone_count: usize, vertex_count: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut per_vertex: Vec<Vec<(usize, f64)>> = vec![Vec::new(); vertex_count];
        for &(j, i, w) in triplets {
            let list = per_vertex
                .get_mut(i)
                .ok_or_else(|| Error::Contract(format!("weight triplet references vertex {i}")))?;
            match list.iter_mut().find(|(b, _)| *b == j) {
                Some(entry) => entry.1 += w,
                None => list.push((j, w)),
            }
        }
        Self::from_per_vertex(bone_count, per_vertex)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out: Vec<(usize, usize, f64)> = self
            .per_vertex
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().map(move |&(j, w)| (j, i, w)))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }

    pub fn bone_count(&self) -> usize {
        self.bone_count
    }

    pub fn vertex_count(&self) -> usize {
        self.per_vertex.len()
    }

    pub fn vertex(&self, i: usize) -> &[(usize, f64)] {
        &self.per_vertex[i]
    }

    pub fn weight(&self, bone: usize, vertex: usize) -> f64 {
        self.per_vertex[vertex]
            .iter()
            .find(|(j, _)| *j == bone)
            .map_or(0.0, |&(_, w)| w)
    }

    /// Inverse-distance weights over the two nearest bone segments
    /// (`w ∝ d^-falloff`), normalized per vertex.
    pub fn from_bone_segments(skeleton: &Skeleton, vertices: &[Vec3], falloff: f64) -> Self {
        let segments: Vec<(Vec3, Vec3)> = skeleton
            .bones()
            .iter()
            .map(|b| (b.rest_translation, b.tail.unwrap_or(b.rest_translation)))
            .collect();
        let per_vertex = vertices
            .iter()
            .map(|v| {
                let mut d: Vec<(f64, usize)> = segments
                    .iter()
                    .enumerate()
                    .map(|(j, (a, b))| (point_segment_distance(v, a, b), j))
                    .collect();
                d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                if d.len() == 1 || d[0].0 <= 1e-12 {
                    return vec![(d[0].1, 1.0)];
                }
                let w0 = d[0].0.powf(-falloff);
                let w1 = d[1].0.powf(-falloff);
                let mut list = vec![(d[0].1, w0 / (w0 + w1)), (d[1].1, w1 / (w0 + w1))];
                list.sort_by_key(|&(j, _)| j);
                list
            })
            .collect();
        Self {
            bone_count: skeleton.len(),
            per_vertex,
        }
    }
}

pub(crate) fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Linear blend skinning: `M_i = Σ_j w_ji (R_j S_j R*_jᵀ (v_i - T*_j) + t_j)`.
pub fn skin(
    vertices: &[Vec3],
    skeleton: &Skeleton,
    weights: &BlendWeights,
    pose: &PoseParams,
) -> Result<Vec<Vec3>> {
    if weights.vertex_count() != vertices.len() || weights.bone_count() != skeleton.len() {
        return Err(Error::Contract(format!(
            "weights are {}×{}, expected {}×{}",
            weights.bone_count(),
            weights.vertex_count(),
            skeleton.len(),
            vertices.len()
        )));
    }
    pose.validate(skeleton)?;
    let affine: Vec<(Matrix3<f64>, Vec3)> = (0..skeleton.len())
        .map(|j| pose.bone_affine(skeleton, j))
        .collect();
    Ok(vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            weights
                .vertex(i)
                .iter()
                .fold(Vec3::zeros(), |acc, &(j, w)| acc + (affine[j].0 * v + affine[j].1) * w)
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    pub(crate) fn bone(name: &str, parent: Option<usize>, rot: Quat, at: Vec3) -> Bone {
        Bone {
            name: name.into(),
            parent,
            rest_rotation: rot,
            rest_translation: at,
            joint_anchor: at,
            tail: None,
        }
    }

    fn single() -> (Skeleton, BlendWeights) {
        let s = Skeleton::new(vec![bone("root", None, Quat::identity(), Vec3::zeros())]).unwrap();
        let w = BlendWeights::from_per_vertex(1, vec![vec![(0, 1.0)]]).unwrap();
        (s, w)
    }

    pub(crate) fn random_quat(rng: &mut impl Rng, max_angle: f64) -> Quat {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        quat_exp(&(axis.normalize() * rng.random_range(-max_angle..max_angle)))
    }

    pub(crate) fn random_vec(rng: &mut impl Rng, r: f64) -> Vec3 {
        Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
    }

    /// Three-bone chain with non-trivial rest rotations.
    pub(crate) fn chain(rng: &mut impl Rng) -> Skeleton {
        Skeleton::new(vec![
            bone("a", None, random_quat(rng, PI), Vec3::new(0.0, 0.0, 0.0)),
            bone("b", Some(0), random_quat(rng, PI), Vec3::new(0.0, 0.0, 100.0)),
            bone("c", Some(1), random_quat(rng, PI), Vec3::new(30.0, 0.0, 180.0)),
        ])
        .unwrap()
    }

    pub(crate) fn random_pose(rng: &mut impl Rng, skeleton: &Skeleton) -> PoseParams {
        PoseParams {
            bones: (0..skeleton.len())
                .map(|_| BonePose {
                    rotation: random_quat(rng, PI),
                    scale: Vec3::new(rng.random_range(0.7..1.4), rng.random_range(0.7..1.4), rng.random_range(0.7..1.4)),
                    translation: random_vec(rng, 200.0),
                })
                .collect(),
        }
    }

    #[test]
    fn pure_translation() {
        let (s, w) = single();
        let pose = PoseParams {
            bones: vec![BonePose {
                rotation: Quat::identity(),
                scale: Vec3::repeat(1.0),
                translation: Vec3::x(),
            }],
        };
        assert_eq!(skin(&[Vec3::zeros()], &s, &w, &pose).unwrap(), vec![Vec3::x()]);
    }

    #[test]
    fn convex_blend_of_two_bones() {
        let s = Skeleton::new(vec![
            bone("a", None, Quat::identity(), Vec3::zeros()),
            bone("b", Some(0), Quat::identity(), Vec3::zeros()),
        ])
        .unwrap();
        let w = BlendWeights::from_per_vertex(2, vec![vec![(0, 0.5), (1, 0.5)]]).unwrap();
        let mut pose = PoseParams::rest(&s);
        pose.bones[1].translation = Vec3::new(2.0, 0.0, 0.0);
        assert_eq!(skin(&[Vec3::zeros()], &s, &w, &pose).unwrap(), vec![Vec3::x()]);
    }

    #[test]
    fn anisotropic_scale() {
        let (s, w) = single();
        let mut pose = PoseParams::rest(&s);
        pose.bones[0].scale = Vec3::new(2.0, 1.0, 1.0);
        assert_eq!(skin(&[Vec3::x()], &s, &w, &pose).unwrap(), vec![Vec3::new(2.0, 0.0, 0.0)]);
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let (s, w) = single();
        let err = skin(&[Vec3::zeros(), Vec3::x()], &s, &w, &PoseParams::rest(&s)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn weights_must_partition_unity() {
        assert!(BlendWeights::from_per_vertex(2, vec![vec![(0, 0.5), (1, 0.4)]]).is_err());
        assert!(BlendWeights::from_per_vertex(2, vec![vec![(0, 1.5)]]).is_err());
        let w = BlendWeights::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 0.25), (0, 1, 0.75)]).unwrap();
        assert_eq!(w.weight(1, 1), 0.25);
        assert_eq!(w.triplets(), vec![(0, 0, 1.0), (0, 1, 0.75), (1, 1, 0.25)]);
    }

    #[test]
    fn skeleton_validation() {
        let unsorted = vec![
            bone("a", None, Quat::identity(), Vec3::zeros()),
            bone("b", Some(2), Quat::identity(), Vec3::zeros()),
            bone("c", Some(0), Quat::identity(), Vec3::zeros()),
        ];
        assert!(Skeleton::new(unsorted).is_err());
        let two_roots = vec![
            bone("a", None, Quat::identity(), Vec3::zeros()),
            bone("b", None, Quat::identity(), Vec3::zeros()),
        ];
        assert!(Skeleton::new(two_roots).is_err());
    }

    #[test]
    fn rest_pose_reproduces_template() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = chain(&mut rng);
        let verts: Vec<Vec3> = (0..50).map(|_| random_vec(&mut rng, 300.0)).collect();
        let w = BlendWeights::from_bone_segments(&s, &verts, 2.0);
        let out = skin(&verts, &s, &w, &PoseParams::rest(&s)).unwrap();
        for (a, b) in out.iter().zip(&verts) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
        for joint in s.joints() {
            assert_relative_eq!(joint_residual(&s, &PoseParams::rest(&s), joint), Vec3::zeros(), epsilon = 1e-12);
        }
    }

    #[test]
    fn skin_is_linear_without_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = Skeleton::new(vec![
            bone("a", None, random_quat(&mut rng, PI), Vec3::zeros()),
            bone("b", Some(0), random_quat(&mut rng, PI), Vec3::zeros()),
        ])
        .unwrap();
        let mut pose = random_pose(&mut rng, &s);
        for b in &mut pose.bones {
            b.translation = Vec3::zeros();
        }
        let v1: Vec<Vec3> = (0..20).map(|_| random_vec(&mut rng, 100.0)).collect();
        let v2: Vec<Vec3> = (0..20).map(|_| random_vec(&mut rng, 100.0)).collect();
        let w = BlendWeights::from_bone_segments(&s, &v1, 2.0);
        let (a, b) = (0.3, -1.7);
        let mixed: Vec<Vec3> = v1.iter().zip(&v2).map(|(x, y)| x * a + y * b).collect();
        let lhs = skin(&mixed, &s, &w, &pose).unwrap();
        let s1 = skin(&v1, &s, &w, &pose).unwrap();
        let s2 = skin(&v2, &s, &w, &pose).unwrap();
        for i in 0..20 {
            assert_relative_eq!(lhs[i], s1[i] * a + s2[i] * b, epsilon = 1e-9);
        }
    }

    #[test]
    fn common_rigid_motion_moves_mesh_rigidly() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = chain(&mut rng);
        let verts: Vec<Vec3> = (0..40).map(|_| random_vec(&mut rng, 200.0)).collect();
        let w = BlendWeights::from_bone_segments(&s, &verts, 2.0);
        for _ in 0..10 {
            let pose = random_pose(&mut rng, &s);
            let (r, t) = (random_quat(&mut rng, PI), random_vec(&mut rng, 500.0));
            let before = skin(&verts, &s, &w, &pose).unwrap();
            let after = skin(&verts, &s, &w, &pose.rigidly_moved(&r, &t)).unwrap();
            for (a, b) in before.iter().zip(&after) {
                assert_relative_eq!(r * a + t, *b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn joint_residual_sign_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let s = chain(&mut rng);
        let mut pose = PoseParams::rest(&s);
        pose.bones[1].translation += Vec3::x();
        let r = joint_residual(&s, &pose, &s.joints()[0]);
        assert_relative_eq!(r, Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn joint_residual_invariant_under_common_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let s = chain(&mut rng);
        for _ in 0..20 {
            let pose = random_pose(&mut rng, &s);
            let (r, t) = (random_quat(&mut rng, PI), random_vec(&mut rng, 500.0));
            let moved = pose.rigidly_moved(&r, &t);
            for joint in s.joints() {
                let a = joint_residual(&s, &pose, joint);
                let b = joint_residual(&s, &moved, joint);
                // The residual is a difference of points, so it rotates with the motion.
                assert_relative_eq!(r * a, b, epsilon = 1e-9);
                assert_relative_eq!(a.norm(), b.norm(), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn relative_rotation_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let s = chain(&mut rng);
        let joint = s.joints()[0];
        let rest = PoseParams::rest(&s);
        assert_relative_eq!(
            relative_joint_rotation(&rest, &joint),
            rest_relative_rotation(&s, &joint),
            epsilon = 1e-12
        );
        let turn = Quat::from_axis_angle(&Vec3::z_axis(), 30f64.to_radians());
        let turned = rest.rigidly_moved(&turn, &Vec3::zeros());
        let q = relative_joint_rotation(&turned, &joint);
        assert!(q.angle_to(&rest_relative_rotation(&s, &joint)) < 1e-12);
        for _ in 0..20 {
            let pose = random_pose(&mut rng, &s);
            let q = relative_joint_rotation(&pose, &joint);
            let rp = quat_to_matrix(&pose.bones[0].rotation);
            let rc = quat_to_matrix(&pose.bones[1].rotation);
            assert_relative_eq!(quat_to_matrix(&q), rp.transpose() * rc, epsilon = 1e-12);
        }
    }

    #[test]
    fn segment_weights_are_partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut s = chain(&mut rng);
        let tails = [Vec3::new(0.0, 0.0, 100.0), Vec3::new(30.0, 0.0, 180.0), Vec3::new(60.0, 0.0, 260.0)];
        s.bones.iter_mut().zip(tails).for_each(|(b, t)| b.tail = Some(t));
        let verts: Vec<Vec3> = (0..100).map(|_| random_vec(&mut rng, 300.0)).collect();
        let w = BlendWeights::from_bone_segments(&s, &verts, 2.0);
        for i in 0..verts.len() {
            let sum: f64 = w.vertex(i).iter().map(|x| x.1).sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(w.vertex(i).len() <= 2);
        }
        assert!(BlendWeights::from_per_vertex(3, (0..verts.len()).map(|i| w.vertex(i).to_vec()).collect()).is_ok());
    }
}
