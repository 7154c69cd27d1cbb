//! Registration energies with analytic gradients and Gauss-Newton Hessians
//! over the packed parameter vector.
//!
//! Every squared term is written as `Σ w ‖r‖²` with a Jacobian of `r`; the
//! gradient is `2 Σ w Jᵀ r` and the Hessian approximation `2 Σ w JᵀJ`.
//! Rotation increments are left perturbations, `q ← exp(δ) ⊗ q`.

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rig::{
    quat_exp, quat_log, quat_to_matrix, right_jacobian_inv, rotation_log, skew, BonePose, PoseParams,
    Skeleton,
};
use crate::shape::{apply_blendshapes, DeformableModel, ShapeParams};
use crate::spatial::CorrespondenceSet;

/// DOFs per bone: rotation, scale and translation triples.
pub const BONE_DOFS: usize = 9;

/// Packed model parameters. The packed form stores each rotation as its
/// axis-angle vector; solver increments on that slot are tangent vectors
/// applied through [`ParamVector::retract`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub pose: PoseParams,
    pub shape: ShapeParams,
}

impl ParamVector {
    pub fn rest(model: &DeformableModel) -> Self {
        Self {
            pose: PoseParams::rest(&model.skeleton),
            shape: ShapeParams::zeros(model.shape_count()),
        }
    }

    pub fn bone_count(&self) -> usize {
        self.pose.bones.len()
    }

    pub fn dof_count(&self) -> usize {
        BONE_DOFS * self.bone_count() + self.shape.len()
    }

    pub fn alpha_offset(&self) -> usize {
        BONE_DOFS * self.bone_count()
    }

    pub fn pack(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dof_count());
        for (j, b) in self.pose.bones.iter().enumerate() {
            let base = BONE_DOFS * j;
            v.fixed_rows_mut::<3>(base).copy_from(&quat_log(&b.rotation));
            v.fixed_rows_mut::<3>(base + 3).copy_from(&b.scale);
            v.fixed_rows_mut::<3>(base + 6).copy_from(&b.translation);
        }
        let off = self.alpha_offset();
        for (k, a) in self.shape.alpha.iter().enumerate() {
            v[off + k] = *a;
        }
        v
    }

    pub fn unpack(bone_count: usize, packed: &DVector<f64>) -> Result<Self> {
        let base_len = BONE_DOFS * bone_count;
        if packed.len() < base_len {
            return Err(Error::Contract(format!(
                "packed vector of length {} is too short for {bone_count} bones",
                packed.len()
            )));
        }
        let bones = (0..bone_count)
            .map(|j| {
                let base = BONE_DOFS * j;
                BonePose {
                    rotation: quat_exp(&packed.fixed_rows::<3>(base).into_owned()),
                    scale: packed.fixed_rows::<3>(base + 3).into_owned(),
                    translation: packed.fixed_rows::<3>(base + 6).into_owned(),
                }
            })
            .collect();
        Ok(Self {
            pose: PoseParams { bones },
            shape: ShapeParams {
                alpha: packed.rows(base_len, packed.len() - base_len).iter().copied().collect(),
            },
        })
    }

    /// Apply a tangent increment. Scales are clamped to at least `scale_floor`.
    pub fn retract(&self, delta: &DVector<f64>, scale_floor: f64) -> Result<Self> {
        if delta.len() != self.dof_count() {
            return Err(Error::Contract(format!(
                "increment has {} entries, parameters have {}",
                delta.len(),
                self.dof_count()
            )));
        }
        let mut out = self.clone();
        for (j, b) in out.pose.bones.iter_mut().enumerate() {
            let base = BONE_DOFS * j;
            let rot = delta.fixed_rows::<3>(base).into_owned();
            let mut q = quat_exp(&rot) * b.rotation;
            q.renormalize();
            b.rotation = q;
            b.scale += delta.fixed_rows::<3>(base + 3);
            b.scale.iter_mut().for_each(|s| *s = s.max(scale_floor));
            b.translation += delta.fixed_rows::<3>(base + 6);
        }
        let off = self.alpha_offset();
        for (k, a) in out.shape.alpha.iter_mut().enumerate() {
            *a += delta[off + k];
        }
        Ok(out)
    }

    pub fn validate(&self, model: &DeformableModel) -> Result<()> {
        if self.shape.len() != model.shape_count() {
            return Err(Error::Contract(format!(
                "{} shape weights for a model with {} blendshapes",
                self.shape.len(),
                model.shape_count()
            )));
        }
        self.pose.validate(&model.skeleton)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyWeights {
    pub lambda_d: f64,
    pub lambda_s: f64,
    pub lambda_bs: f64,
    pub lambda_j: f64,
    pub lambda_l: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            lambda_d: 1e-3,
            lambda_s: 1e-2,
            lambda_bs: 1e-3,
            lambda_j: 1e-2,
            lambda_l: 1e-4,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_d", self.lambda_d),
            ("lambda_s", self.lambda_s),
            ("lambda_bs", self.lambda_bs),
            ("lambda_j", self.lambda_j),
            ("lambda_l", self.lambda_l),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which rotations and translations the joint term compares against rest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointRotation {
    /// Each bone's rotation and offset relative to its parent, read in the
    /// parent's frame (absolute for the root).
    #[default]
    Relative,
    /// Each bone's absolute rotation and translation.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyOptions {
    pub joint_rotation: JointRotation,
    /// Joint closure rows carry weight `1 / joint_compliance`.
    pub joint_compliance: f64,
    pub with_hessian: bool,
}

impl Default for EnergyOptions {
    fn default() -> Self {
        Self {
            joint_rotation: JointRotation::Relative,
            joint_compliance: 1e-6,
            with_hessian: true,
        }
    }
}

/// Named landmark positions marked on a scan.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanLandmarks {
    pub names: Vec<String>,
    pub points: Vec<Vec3>,
}

impl ScanLandmarks {
    pub fn get(&self, name: &str) -> Option<Vec3> {
        self.names.iter().position(|n| n == name).map(|i| self.points[i])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Scan landmark positions matched to model landmark indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LandmarkTargets {
    pub pairs: Vec<(usize, Vec3)>,
}

impl LandmarkTargets {
    /// The first `active_count` model landmarks (model order) that the scan marks.
    pub fn select(model: &DeformableModel, scan: &ScanLandmarks, active_count: usize) -> Self {
        let pairs = model
            .landmarks
            .iter()
            .take(active_count)
            .enumerate()
            .filter_map(|(m, l)| scan.get(&l.name).map(|p| (m, p)))
            .collect();
        Self { pairs }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// One energy term: value, gradient and Gauss-Newton Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBreakdown {
    pub e_data: f64,
    pub e_scale: f64,
    pub e_blendshape: f64,
    pub e_joint: f64,
    pub e_landmark: f64,
    /// Weighted sum of the five terms.
    pub e_total: f64,
    /// Compliance-weighted joint closure energy, kept out of `e_total`.
    pub e_constraint: f64,
    /// Gradient of `e_total + e_constraint`.
    pub gradient: DVector<f64>,
    pub gauss_newton_hessian: DMatrix<f64>,
}

impl EnergyBreakdown {
    /// The quantity the solver decreases.
    pub fn objective(&self) -> f64 {
        self.e_total + self.e_constraint
    }
}

struct Accumulator {
    value: f64,
    gradient: DVector<f64>,
    hessian: Option<DMatrix<f64>>,
}

impl Accumulator {
    fn new(dofs: usize, with_hessian: bool) -> Self {
        Self {
            value: 0.0,
            gradient: DVector::zeros(dofs),
            hessian: with_hessian.then(|| DMatrix::zeros(dofs, dofs)),
        }
    }

    /// Add `w ‖r‖²` where column `c` of the Jacobian of `r` is listed as `(c, ∂r/∂x_c)`.
    fn residual(&mut self, w: f64, r: &Vec3, cols: &[(usize, Vec3)]) {
        self.value += w * r.norm_squared();
        for (c, col) in cols {
            self.gradient[*c] += 2.0 * w * col.dot(r);
        }
        if let Some(h) = &mut self.hessian {
            for (a, ca) in cols {
                for (b, cb) in cols {
                    h[(*a, *b)] += 2.0 * w * ca.dot(cb);
                }
            }
        }
    }

    fn into_term(self) -> Term {
        let n = self.gradient.len();
        Term {
            value: self.value,
            gradient: self.gradient,
            hessian: self.hessian.unwrap_or_else(|| DMatrix::zeros(n, n)),
        }
    }
}

/// Cached quantities for linearizing the deformed model at one parameter set.
struct Linearization<'a> {
    model: &'a DeformableModel,
    shaped: Vec<Vec3>,
    rotations: Vec<Matrix3<f64>>,
    rest_rotations: Vec<Matrix3<f64>>,
    affine: Vec<(Matrix3<f64>, Vec3)>,
    alpha_offset: usize,
}

impl<'a> Linearization<'a> {
    fn new(model: &'a DeformableModel, params: &ParamVector) -> Result<Self> {
        params.validate(model)?;
        let shaped = apply_blendshapes(&model.template.vertices, &model.blendshapes, &params.shape)?;
        let skeleton = &model.skeleton;
        Ok(Self {
            model,
            shaped,
            rotations: params.pose.bones.iter().map(|b| quat_to_matrix(&b.rotation)).collect(),
            rest_rotations: skeleton.bones().iter().map(|b| quat_to_matrix(&b.rest_rotation)).collect(),
            affine: (0..skeleton.len()).map(|j| params.pose.bone_affine(skeleton, j)).collect(),
            alpha_offset: params.alpha_offset(),
        })
    }

    fn position(&self, i: usize) -> Vec3 {
        self.model
            .weights
            .vertex(i)
            .iter()
            .fold(Vec3::zeros(), |acc, &(j, w)| acc + (self.affine[j].0 * self.shaped[i] + self.affine[j].1) * w)
    }

    /// Append `scale · ∂M_i/∂x` columns.
    fn vertex_columns(&self, i: usize, scale: f64, out: &mut Vec<(usize, Vec3)>) {
        let b = self.shaped[i];
        let mut blended = Matrix3::zeros();
        for &(j, w) in self.model.weights.vertex(i) {
            let ws = w * scale;
            let rest_t = self.model.skeleton.bones()[j].rest_translation;
            let local = b - rest_t;
            let (linear, _) = &self.affine[j];
            let rot = skew(&(linear * local)) * -ws;
            let u = self.rest_rotations[j].transpose() * local;
            let base = BONE_DOFS * j;
            for c in 0..3 {
                out.push((base + c, rot.column(c).into_owned()));
            }
            for c in 0..3 {
                out.push((base + 3 + c, self.rotations[j].column(c) * (u[c] * ws)));
            }
            for c in 0..3 {
                let mut e = Vec3::zeros();
                e[c] = ws;
                out.push((base + 6 + c, e));
            }
            blended += linear * w;
        }
        for &k in self.model.blendshapes.vertex_shapes(i) {
            out.push((self.alpha_offset + k, blended * self.model.blendshapes.shape(k)[i] * scale));
        }
    }
}

fn add_data(lin: &Linearization, correspondences: &CorrespondenceSet, w: f64, acc: &mut Accumulator) -> Result<()> {
    let n = lin.model.vertex_count();
    let mut cols = Vec::new();
    for pair in &correspondences.pairs {
        if pair.source >= n {
            return Err(Error::Contract(format!(
                "correspondence source {} out of range ({n} vertices)",
                pair.source
            )));
        }
        let r = lin.position(pair.source) - pair.target.point;
        cols.clear();
        lin.vertex_columns(pair.source, 1.0, &mut cols);
        acc.residual(w, &r, &cols);
    }
    Ok(())
}

fn add_landmarks(lin: &Linearization, targets: &LandmarkTargets, w: f64, acc: &mut Accumulator) -> Result<()> {
    let mut cols = Vec::new();
    for &(m, target) in &targets.pairs {
        let landmark = lin.model.landmarks.get(m).ok_or_else(|| {
            Error::Contract(format!("landmark index {m} out of range"))
        })?;
        let tri = lin.model.template.triangles[landmark.anchor.triangle];
        cols.clear();
        let mut p = Vec3::zeros();
        for (&vi, &beta) in tri.iter().zip(&landmark.anchor.barycentric) {
            p += lin.position(vi) * beta;
            lin.vertex_columns(vi, beta, &mut cols);
        }
        acc.residual(w, &(p - target), &cols);
    }
    Ok(())
}

fn add_scale(params: &ParamVector, w: f64, acc: &mut Accumulator) {
    for (j, b) in params.pose.bones.iter().enumerate() {
        let r = b.scale - Vec3::repeat(1.0);
        let cols: Vec<(usize, Vec3)> = (0..3)
            .map(|c| {
                let mut e = Vec3::zeros();
                e[c] = 1.0;
                (BONE_DOFS * j + 3 + c, e)
            })
            .collect();
        acc.residual(w, &r, &cols);
    }
}

fn add_blendshape(params: &ParamVector, w: f64, acc: &mut Accumulator) {
    let norm = params.shape.alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
    acc.value += w * norm;
    let off = params.alpha_offset();
    if norm > 0.0 {
        for (k, a) in params.shape.alpha.iter().enumerate() {
            acc.gradient[off + k] += w * a / norm;
        }
    }
    if let Some(h) = &mut acc.hessian {
        let d = w / norm.max(1e-8);
        for k in 0..params.shape.len() {
            h[(off + k, off + k)] += d;
        }
    }
}

fn rest_deviation(skeleton: &Skeleton, params: &ParamVector, j: usize, mode: JointRotation) -> (Vec3, Matrix3<f64>, Option<(usize, Matrix3<f64>)>) {
    let bone = &skeleton.bones()[j];
    let r_j = quat_to_matrix(&params.pose.bones[j].rotation);
    let rest_j = quat_to_matrix(&bone.rest_rotation);
    match (mode, bone.parent) {
        (JointRotation::Relative, Some(p)) => {
            let r_p = quat_to_matrix(&params.pose.bones[p].rotation);
            let rest_p = quat_to_matrix(&skeleton.bones()[p].rest_rotation);
            let rel = r_p.transpose() * r_j;
            let rel_rest = rest_p.transpose() * rest_j;
            let phi = rotation_log(&(rel_rest * rel.transpose()));
            let jr = right_jacobian_inv(&phi) * r_p.transpose();
            (phi, -jr, Some((p, jr)))
        }
        _ => {
            let phi = rotation_log(&(rest_j * r_j.transpose()));
            (phi, -right_jacobian_inv(&phi), None)
        }
    }
}

fn add_joint(skeleton: &Skeleton, params: &ParamVector, mode: JointRotation, w: f64, acc: &mut Accumulator) {
    let mut cols = Vec::with_capacity(6);
    for j in 0..skeleton.len() {
        let (phi, jac_self, parent) = rest_deviation(skeleton, params, j, mode);
        cols.clear();
        for c in 0..3 {
            cols.push((BONE_DOFS * j + c, jac_self.column(c).into_owned()));
        }
        if let Some((p, jac_p)) = parent {
            for c in 0..3 {
                cols.push((BONE_DOFS * p + c, jac_p.column(c).into_owned()));
            }
        }
        acc.residual(w, &phi, &cols);

        let bone = &skeleton.bones()[j];
        let t = params.pose.bones[j].translation;
        cols.clear();
        match (mode, bone.parent) {
            (JointRotation::Relative, Some(p)) => {
                // Offset from the parent, read in the parent's frame.
                let r_p = quat_to_matrix(&params.pose.bones[p].rotation);
                let rest_p = &skeleton.bones()[p];
                let v = t - params.pose.bones[p].translation;
                let rest_offset = rest_p.rest_rotation.inverse_transform_vector(&(bone.rest_translation - rest_p.rest_translation));
                let r = r_p.transpose() * v - rest_offset;
                let d_rot = r_p.transpose() * skew(&v);
                for c in 0..3 {
                    cols.push((BONE_DOFS * p + c, d_rot.column(c).into_owned()));
                    cols.push((BONE_DOFS * j + 6 + c, r_p.row(c).transpose()));
                    cols.push((BONE_DOFS * p + 6 + c, -r_p.row(c).transpose()));
                }
                acc.residual(w, &r, &cols);
            }
            _ => {
                for c in 0..3 {
                    let mut e = Vec3::zeros();
                    e[c] = 1.0;
                    cols.push((BONE_DOFS * j + 6 + c, e));
                }
                acc.residual(w, &(t - bone.rest_translation), &cols);
            }
        }
    }
}

/// Columns of `∂X_j(a)/∂x` for bone `j`, multiplied by `sign`.
fn bone_point_columns(skeleton: &Skeleton, params: &ParamVector, j: usize, a: &Vec3, sign: f64, out: &mut Vec<(usize, Vec3)>) {
    let bone = &skeleton.bones()[j];
    let pose = &params.pose.bones[j];
    let r = quat_to_matrix(&pose.rotation);
    let local = a - bone.rest_translation;
    let u = bone.rest_rotation.inverse_transform_vector(&local);
    let moved = r * u.component_mul(&pose.scale);
    let rot = skew(&moved) * -sign;
    let base = BONE_DOFS * j;
    for c in 0..3 {
        out.push((base + c, rot.column(c).into_owned()));
    }
    for c in 0..3 {
        out.push((base + 3 + c, r.column(c) * (u[c] * sign)));
    }
    for c in 0..3 {
        let mut e = Vec3::zeros();
        e[c] = sign;
        out.push((base + 6 + c, e));
    }
}

fn add_closure(skeleton: &Skeleton, params: &ParamVector, w: f64, acc: &mut Accumulator) {
    let mut cols = Vec::with_capacity(18);
    for joint in skeleton.joints() {
        let r = crate::rig::joint_residual(skeleton, &params.pose, joint);
        cols.clear();
        bone_point_columns(skeleton, params, joint.parent, &joint.anchor, 1.0, &mut cols);
        bone_point_columns(skeleton, params, joint.child, &joint.anchor, -1.0, &mut cols);
        acc.residual(w, &r, &cols);
    }
}

/// `Σ ‖M_i − V_j‖²` over retained pairs, targets held fixed.
pub fn e_data(model: &DeformableModel, params: &ParamVector, correspondences: &CorrespondenceSet) -> Result<Term> {
    if correspondences.is_empty() {
        return Err(Error::NoOverlap("no retained correspondence pairs".into()));
    }
    let lin = Linearization::new(model, params)?;
    let mut acc = Accumulator::new(params.dof_count(), true);
    add_data(&lin, correspondences, 1.0, &mut acc)?;
    Ok(acc.into_term())
}

/// `Σ_j ‖s_j − 1‖²`.
pub fn e_scale(params: &ParamVector) -> Term {
    let mut acc = Accumulator::new(params.dof_count(), true);
    add_scale(params, 1.0, &mut acc);
    acc.into_term()
}

/// `‖α‖` (not squared).
pub fn e_blendshape(params: &ParamVector) -> Term {
    let mut acc = Accumulator::new(params.dof_count(), true);
    add_blendshape(params, 1.0, &mut acc);
    acc.into_term()
}

/// `Σ_j ‖log(rest rotation · current rotationᵀ)‖² + ‖translation deviation‖²`,
/// each read as selected by `mode`.
pub fn e_joint(skeleton: &Skeleton, params: &ParamVector, mode: JointRotation) -> Term {
    let mut acc = Accumulator::new(params.dof_count(), true);
    add_joint(skeleton, params, mode, 1.0, &mut acc);
    acc.into_term()
}

/// `Σ ‖anchor on deformed model − scan landmark‖²` over the selected landmarks.
pub fn e_landmark(model: &DeformableModel, params: &ParamVector, targets: &LandmarkTargets) -> Result<Term> {
    let lin = Linearization::new(model, params)?;
    let mut acc = Accumulator::new(params.dof_count(), true);
    add_landmarks(&lin, targets, 1.0, &mut acc)?;
    Ok(acc.into_term())
}

/// Unweighted joint closure energy `Σ ‖X_parent(a) − X_child(a)‖²`.
pub fn e_closure(skeleton: &Skeleton, params: &ParamVector) -> Term {
    let mut acc = Accumulator::new(params.dof_count(), true);
    add_closure(skeleton, params, 1.0, &mut acc);
    acc.into_term()
}

/// Weighted total energy with gradient and Gauss-Newton Hessian. The data
/// term is skipped when `correspondences` is empty.
pub fn e_total(
    model: &DeformableModel,
    params: &ParamVector,
    correspondences: &CorrespondenceSet,
    landmarks: Option<&LandmarkTargets>,
    weights: &EnergyWeights,
    options: &EnergyOptions,
) -> Result<EnergyBreakdown> {
    let lin = Linearization::new(model, params)?;
    let dofs = params.dof_count();
    let mut acc = Accumulator::new(dofs, options.with_hessian);
    let w_d = 1.0 / weights.lambda_d;
    let w_s = 1.0 / weights.lambda_s;
    let w_bs = 1.0 / weights.lambda_bs;
    let w_j = 1.0 / weights.lambda_j;
    let w_l = 1.0 / weights.lambda_l;
    let increment = |acc: &mut Accumulator| std::mem::take(&mut acc.value);
    add_data(&lin, correspondences, w_d, &mut acc)?;
    let d = increment(&mut acc);
    add_scale(params, w_s, &mut acc);
    let s = increment(&mut acc);
    add_blendshape(params, w_bs, &mut acc);
    let bs = increment(&mut acc);
    add_joint(&model.skeleton, params, options.joint_rotation, w_j, &mut acc);
    let j = increment(&mut acc);
    if let Some(t) = landmarks {
        add_landmarks(&lin, t, w_l, &mut acc)?;
    }
    let l = increment(&mut acc);
    add_closure(&model.skeleton, params, 1.0 / options.joint_compliance, &mut acc);
    let c = increment(&mut acc);
    let breakdown = EnergyBreakdown {
        e_data: d / w_d,
        e_scale: s / w_s,
        e_blendshape: bs / w_bs,
        e_joint: j / w_j,
        e_landmark: l / w_l,
        e_total: d + s + bs + j + l,
        e_constraint: c,
        gradient: acc.gradient,
        gauss_newton_hessian: acc.hessian.unwrap_or_else(|| DMatrix::zeros(0, 0)),
    };
    Ok(breakdown)
}
