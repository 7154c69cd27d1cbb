//! Outer closest-point loop around damped Gauss-Newton steps.

mod anderson;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::energy::{
    e_total, EnergyBreakdown, EnergyOptions, EnergyWeights, JointRotation, LandmarkTargets, ParamVector,
    ScanLandmarks,
};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rig::Quat;
use crate::shape::DeformableModel;
use crate::spatial::{find_correspondences, CorrespondenceSet, FilterConfig, ScanSurface};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    /// Initial Levenberg-Marquardt damping.
    pub newton_regularization: f64,
    /// Stop once the mean correspondence distance changes by less than this (mm).
    pub convergence_threshold: f64,
    pub joint_compliance: f64,
    pub max_damping_escalations: usize,
    pub scale_floor: f64,
    pub joint_rotation: JointRotation,
    /// Wall-clock budget; the outer loop stops once it is spent.
    pub max_time_s: Option<f64>,
    /// History length for accelerating the outer loop; 0 disables it.
    pub anderson_depth: usize,
    /// A blendshape weight is held fixed for a step unless at least this
    /// fraction of its squared displacement lies on matched vertices.
    pub min_shape_coverage: f64,
    /// Run a pose-only pass, blendshape weights held at their initial values,
    /// before the full solve.
    pub pose_warmup: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iterations: 100,
            max_inner_iterations: 5,
            newton_regularization: 1e-6,
            convergence_threshold: 1e-2,
            joint_compliance: 1e-6,
            max_damping_escalations: 10,
            scale_floor: 1e-3,
            joint_rotation: JointRotation::Relative,
            max_time_s: None,
            anderson_depth: 5,
            min_shape_coverage: 0.5,
            pose_warmup: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iterations == 0 || self.max_inner_iterations == 0 {
            return Err(Error::Config("iteration caps must be at least 1".into()));
        }
        let positive = [
            ("convergence_threshold", self.convergence_threshold),
            ("joint_compliance", self.joint_compliance),
            ("scale_floor", self.scale_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.min_shape_coverage) {
            return Err(Error::Config(format!(
                "min_shape_coverage must be in [0, 1], got {}",
                self.min_shape_coverage
            )));
        }
        if !(self.newton_regularization >= 0.0 && self.newton_regularization.is_finite()) {
            return Err(Error::Config("newton_regularization must be nonnegative".into()));
        }
        if let Some(t) = self.max_time_s {
            if !(t > 0.0) {
                return Err(Error::Config(format!("max_time_s must be positive, got {t}")));
            }
        }
        Ok(())
    }

    pub fn energy_options(&self) -> EnergyOptions {
        EnergyOptions {
            joint_rotation: self.joint_rotation,
            joint_compliance: self.joint_compliance,
            with_hessian: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub params: ParamVector,
    pub step_norm: f64,
    pub objective_before: f64,
    pub objective_after: f64,
    pub accepted: bool,
    /// Damping to start the next step with.
    pub damping: f64,
}

/// One damped Gauss-Newton step `(H + μ diag(H)) δ = −g`. The damping grows
/// tenfold after each rejected trial and shrinks tenfold on acceptance.
#[allow(clippy::too_many_arguments)]
pub fn newton_step(
    model: &DeformableModel,
    params: &ParamVector,
    correspondences: &CorrespondenceSet,
    landmarks: Option<&LandmarkTargets>,
    weights: &EnergyWeights,
    options: &EnergyOptions,
    damping: f64,
    config: &SolverConfig,
) -> Result<StepResult> {
    let with_h = EnergyOptions {
        with_hessian: true,
        ..*options
    };
    let before = e_total(model, params, correspondences, landmarks, weights, &with_h)?;
    newton_step_from(model, params, &before, correspondences, landmarks, weights, options, damping, config, false)
}

#[allow(clippy::too_many_arguments)]
fn newton_step_from(
    model: &DeformableModel,
    params: &ParamVector,
    before: &EnergyBreakdown,
    correspondences: &CorrespondenceSet,
    landmarks: Option<&LandmarkTargets>,
    weights: &EnergyWeights,
    options: &EnergyOptions,
    damping: f64,
    config: &SolverConfig,
    freeze_shapes: bool,
) -> Result<StepResult> {
    let f0 = before.objective();
    let unchanged = |damping| StepResult {
        params: params.clone(),
        step_norm: 0.0,
        objective_before: f0,
        objective_after: f0,
        accepted: false,
        damping,
    };
    if !f0.is_finite() || !before.gradient.iter().all(|g| g.is_finite()) {
        return Err(Error::SolverStall(format!("non-finite energy {f0} at step start")));
    }
    if before.gradient.amax() == 0.0 {
        return Ok(unchanged(damping));
    }
    let h = &before.gauss_newton_hessian;
    let n = h.nrows();
    let diag_floor = 1e-12 * h.diagonal().amax().max(1e-300);
    let scaling: DVector<f64> = h.diagonal().map(|d| d.max(diag_floor));
    let eval_options = EnergyOptions {
        with_hessian: false,
        ..*options
    };

    let frozen: Vec<usize> = if freeze_shapes {
        (params.alpha_offset()..n).collect()
    } else {
        poorly_observed_shapes(model, params, correspondences, config.min_shape_coverage)
    };
    let mut rhs = -&before.gradient;
    for &k in &frozen {
        rhs[k] = 0.0;
    }

    let mut mu = damping;
    let mut factorized = false;
    for _ in 0..=config.max_damping_escalations {
        let mut a: DMatrix<f64> = h.clone();
        for k in 0..n {
            a[(k, k)] += mu * scaling[k];
        }
        for &k in &frozen {
            a.row_mut(k).fill(0.0);
            a.column_mut(k).fill(0.0);
            a[(k, k)] = 1.0;
        }
        if let Some(chol) = a.cholesky() {
            factorized = true;
            let delta = chol.solve(&rhs);
            if delta.iter().all(|d| d.is_finite()) {
                let candidate = params.retract(&delta, config.scale_floor)?;
                let after = e_total(model, &candidate, correspondences, landmarks, weights, &eval_options)?;
                let f1 = after.objective();
                if f1.is_finite() && f1 <= f0 {
                    return Ok(StepResult {
                        params: candidate,
                        step_norm: delta.norm(),
                        objective_before: f0,
                        objective_after: f1,
                        accepted: true,
                        damping: mu / 10.0,
                    });
                }
            }
        }
        mu = if mu > 0.0 { mu * 10.0 } else { 1e-6 };
    }
    if !factorized {
        return Err(Error::SolverStall(format!(
            "normal equations stayed singular after {} damping escalations (damping {mu:e})",
            config.max_damping_escalations
        )));
    }
    Ok(unchanged(damping))
}

/// Packed indices of blendshape weights whose displacement falls mostly on
/// vertices without a correspondence.
fn poorly_observed_shapes(
    model: &DeformableModel,
    params: &ParamVector,
    correspondences: &CorrespondenceSet,
    min_coverage: f64,
) -> Vec<usize> {
    if min_coverage <= 0.0 {
        return Vec::new();
    }
    let mut matched = vec![false; model.vertex_count()];
    for p in &correspondences.pairs {
        if let Some(m) = matched.get_mut(p.source) {
            *m = true;
        }
    }
    let off = params.alpha_offset();
    (0..model.shape_count())
        .filter(|&k| {
            let field = model.blendshapes.shape(k);
            let (mut seen, mut total) = (0.0, 0.0);
            for &i in model.blendshapes.support(k) {
                let e = field[i].norm_squared();
                total += e;
                if matched[i] {
                    seen += e;
                }
            }
            total > 0.0 && seen < min_coverage * total
        })
        .map(|k| off + k)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    IterationCap,
    TimeBudget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub e_data: f64,
    pub e_scale: f64,
    pub e_blendshape: f64,
    pub e_joint: f64,
    pub e_landmark: f64,
    pub e_total: f64,
    pub mean_distance: f64,
    pub pairs: usize,
    /// Milliseconds since the registration started.
    pub millis: f64,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub params: ParamVector,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub total_time_s: f64,
    /// Correspondences at the final parameters.
    pub correspondences: CorrespondenceSet,
}

/// Correspondences from the model deformed by `params`.
pub fn correspondences_at(
    model: &DeformableModel,
    params: &ParamVector,
    scan: &ScanSurface,
    filters: &FilterConfig,
) -> Result<CorrespondenceSet> {
    let mesh = model.template.with_vertices(model.deform_vertices(&params.pose, &params.shape)?)?;
    let normals = mesh.vertex_normals.as_ref().expect("with_vertices computes normals");
    Ok(find_correspondences(&mesh.vertices, normals, scan, filters))
}

/// Alternate correspondence search on the deformed model with up to
/// `max_inner_iterations` Gauss-Newton steps against frozen targets.
#[allow(clippy::too_many_arguments)]
pub fn register(
    model: &DeformableModel,
    scan: &ScanSurface,
    landmarks: Option<&LandmarkTargets>,
    weights: &EnergyWeights,
    filters: &FilterConfig,
    config: &SolverConfig,
    initial: Option<&ParamVector>,
) -> Result<RegistrationResult> {
    weights.validate()?;
    filters.validate()?;
    config.validate()?;
    let params = match initial {
        Some(p) => {
            p.validate(model)?;
            p.clone()
        }
        None => ParamVector::rest(model),
    };
    let mut run = Run {
        model,
        scan,
        landmarks: landmarks.filter(|l| !l.is_empty()),
        weights,
        filters,
        config,
        start: Instant::now(),
        params,
        trace: Vec::new(),
        damping: config.newton_regularization,
    };
    if config.pose_warmup && model.shape_count() > 0 {
        let (reason, _) = run.outer_loop(true, config.convergence_threshold.max(WARMUP_THRESHOLD))?;
        if reason == StopReason::TimeBudget {
            let correspondences = correspondences_at(model, &run.params, scan, filters)?;
            return Ok(run.finish(reason, correspondences));
        }
    }
    let (stop_reason, last_corr) = run.outer_loop(false, config.convergence_threshold)?;
    let correspondences = match last_corr {
        Some(c) => c,
        None => correspondences_at(model, &run.params, scan, filters)?,
    };
    Ok(run.finish(stop_reason, correspondences))
}

/// Convergence threshold (mm) of the pose-only pass; it only has to reach
/// the right basin.
const WARMUP_THRESHOLD: f64 = 1e-2;

struct Run<'a> {
    model: &'a DeformableModel,
    scan: &'a ScanSurface,
    landmarks: Option<&'a LandmarkTargets>,
    weights: &'a EnergyWeights,
    filters: &'a FilterConfig,
    config: &'a SolverConfig,
    start: Instant,
    params: ParamVector,
    trace: Vec<IterationRecord>,
    damping: f64,
}

impl Run<'_> {
    fn breakdown(&self, corr: &CorrespondenceSet) -> Result<Option<EnergyBreakdown>> {
        if corr.is_empty() {
            return Ok(None);
        }
        let options = EnergyOptions {
            with_hessian: false,
            ..self.config.energy_options()
        };
        e_total(self.model, &self.params, corr, self.landmarks, self.weights, &options).map(Some)
    }

    fn correspondences(&self) -> Result<CorrespondenceSet> {
        correspondences_at(self.model, &self.params, self.scan, self.filters)
    }

    /// Returns the stop reason and, when still valid, the correspondences at
    /// the final parameters.
    fn outer_loop(&mut self, freeze_shapes: bool, threshold: f64) -> Result<(StopReason, Option<CorrespondenceSet>)> {
        let config = self.config;
        let options = config.energy_options();
        let mut previous_mean: Option<f64> = None;
        let mut previous_objective = f64::INFINITY;
        let mut stop_reason = StopReason::IterationCap;
        let mut last_corr = None;
        let mut accel = anderson::Anderson::new(config.anderson_depth);
        // Plain iterate to fall back on when `params` is an extrapolated guess.
        let mut fallback: Option<ParamVector> = None;

        for _ in 0..config.max_outer_iterations {
            let iteration = self.trace.len();
            let mut corr = self.correspondences()?;
            let mut b = self.breakdown(&corr)?;
            if let Some(plain) = fallback.take() {
                let improved = b.as_ref().is_some_and(|b| b.objective() < previous_objective);
                if !improved {
                    self.params = plain;
                    accel.reset();
                    corr = self.correspondences()?;
                    b = self.breakdown(&corr)?;
                }
            }
            let Some(b) = b else {
                if iteration == 0 {
                    return Err(Error::NoOverlap(
                        "no model vertex found a scan match within the filters; \
                         initialize from landmarks or relax the filters"
                            .into(),
                    ));
                }
                log::warn!("iteration {iteration}: every correspondence was rejected");
                break;
            };
            previous_objective = b.objective();
            let mean = corr.mean_distance().unwrap_or(0.0);
            self.trace.push(IterationRecord {
                iteration,
                e_data: b.e_data,
                e_scale: b.e_scale,
                e_blendshape: b.e_blendshape,
                e_joint: b.e_joint,
                e_landmark: b.e_landmark,
                e_total: b.e_total,
                mean_distance: mean,
                pairs: corr.len(),
                millis: self.start.elapsed().as_secs_f64() * 1e3,
            });
            log::debug!(
                "iteration {iteration}: mean distance {mean:.6} mm, {} pairs (rejected {} distance, {} normal, {} boundary), E_total {:.6e}",
                corr.len(),
                corr.rejected_count_distance,
                corr.rejected_count_normal,
                corr.rejected_count_boundary,
                b.e_total
            );
            if previous_mean.is_some_and(|p| (mean - p).abs() < threshold) {
                stop_reason = StopReason::Converged;
                last_corr = Some(corr);
                break;
            }
            previous_mean = Some(mean);
            if config.max_time_s.is_some_and(|t| self.start.elapsed().as_secs_f64() > t) {
                stop_reason = StopReason::TimeBudget;
                last_corr = Some(corr);
                break;
            }
            let x = self.params.clone();
            for _ in 0..config.max_inner_iterations {
                let with_h = EnergyOptions {
                    with_hessian: true,
                    ..options
                };
                let before = e_total(self.model, &self.params, &corr, self.landmarks, self.weights, &with_h)?;
                let step = newton_step_from(
                    self.model,
                    &self.params,
                    &before,
                    &corr,
                    self.landmarks,
                    self.weights,
                    &options,
                    self.damping,
                    config,
                    freeze_shapes,
                )?;
                self.damping = step.damping;
                if !step.accepted {
                    break;
                }
                self.params = step.params;
                if step.objective_before - step.objective_after <= 1e-12 * step.objective_before {
                    break;
                }
            }
            accel.push(x, self.params.clone());
            if let Some(guess) = accel.propose(config.scale_floor) {
                fallback = Some(std::mem::replace(&mut self.params, guess));
            }
        }
        if let Some(plain) = fallback {
            self.params = plain;
            last_corr = None;
        }
        Ok((stop_reason, last_corr))
    }

    fn finish(self, stop_reason: StopReason, correspondences: CorrespondenceSet) -> RegistrationResult {
        RegistrationResult {
            params: self.params,
            trace: self.trace,
            converged: stop_reason == StopReason::Converged,
            stop_reason,
            total_time_s: self.start.elapsed().as_secs_f64(),
            correspondences,
        }
    }
}

/// Rigid initialization: the rotation and translation that best map the
/// model's rest landmarks onto the scan landmarks (orthogonal Procrustes).
pub fn initialize_from_landmarks(model: &DeformableModel, scan_landmarks: &ScanLandmarks) -> Result<ParamVector> {
    let rest = model.landmark_positions(&model.template.vertices)?;
    let (src, dst): (Vec<Vec3>, Vec<Vec3>) = model
        .landmarks
        .iter()
        .zip(&rest)
        .filter_map(|(l, p)| scan_landmarks.get(&l.name).map(|q| (*p, q)))
        .unzip();
    let (rotation, translation) = rigid_fit(&src, &dst)?;
    let mut params = ParamVector::rest(model);
    params.pose = params.pose.rigidly_moved(&rotation, &translation);
    Ok(params)
}

/// Least-squares `R, t` minimizing `Σ ‖R p_i + t − q_i‖²`.
pub fn rigid_fit(src: &[Vec3], dst: &[Vec3]) -> Result<(Quat, Vec3)> {
    if src.len() != dst.len() {
        return Err(Error::Contract(format!("{} source and {} target points", src.len(), dst.len())));
    }
    if src.len() < 3 {
        return Err(Error::Initialization(format!(
            "need at least 3 matched landmarks, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (p, q) in src.iter().zip(dst) {
        cov += (p - cs) * (q - cd).transpose();
        spread += (p - cs) * (p - cs).transpose();
    }
    let sv = spread.symmetric_eigenvalues();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[1] > 1e-10 * sorted[0].max(1e-300)) {
        return Err(Error::Initialization("landmarks are collinear or coincident".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let rotation = Quat::from_matrix(&r);
    Ok((rotation, cd - rotation * cs))
}

pub const TRACE_HEADER: [&str; 10] = [
    "iteration", "E_D", "E_S", "E_BS", "E_J", "E_L", "E_total", "mean_dist", "pairs", "millis",
];

/// Write the iteration trace as CSV. With `timing` off the millis column is 0
/// so outputs of repeated runs compare byte for byte.
pub fn write_trace_csv<W: Write>(out: W, trace: &[IterationRecord], timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::io("trace", std::io::Error::other(e));
    w.write_record(TRACE_HEADER).map_err(wrap)?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            r.e_data.to_string(),
            r.e_scale.to_string(),
            r.e_blendshape.to_string(),
            r.e_joint.to_string(),
            r.e_landmark.to_string(),
            r.e_total.to_string(),
            r.mean_distance.to_string(),
            r.pairs.to_string(),
            if timing { format!("{:.3}", r.millis) } else { "0".into() },
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("trace", e))?;
    Ok(())
}

pub fn save_trace_csv(path: &Path, trace: &[IterationRecord], timing: bool) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_csv(std::io::BufWriter::new(file), trace, timing).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}
