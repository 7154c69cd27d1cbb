//! Anderson acceleration of the outer closest-point iteration, viewed as a
//! fixed-point map `x ↦ G(x)` on the parameters.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::energy::{ParamVector, BONE_DOFS};
use crate::rig::quat_log;

/// Coordinate weights that bring rotations, scales and shape weights to
/// roughly millimetre magnitude.
const ROTATION_WEIGHT: f64 = 100.0;
const SCALE_WEIGHT: f64 = 100.0;
const ALPHA_WEIGHT: f64 = 10.0;

#[derive(Debug, Clone)]
pub(crate) struct Anderson {
    depth: usize,
    /// `(x_k, G(x_k))` pairs, oldest first.
    history: VecDeque<(ParamVector, ParamVector)>,
}

impl Anderson {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            history: VecDeque::with_capacity(depth + 1),
        }
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }

    pub fn push(&mut self, x: ParamVector, g: ParamVector) {
        if self.depth == 0 {
            return;
        }
        self.history.push_back((x, g));
        while self.history.len() > self.depth + 1 {
            self.history.pop_front();
        }
    }

    /// Extrapolated iterate from the stored history, in a chart centred on
    /// the latest `G(x_k)`.
    pub fn propose(&self, scale_floor: f64) -> Option<ParamVector> {
        let m = self.history.len().checked_sub(1).filter(|&m| m > 0)?;
        let reference = &self.history.back()?.1;
        let chart = |p: &ParamVector| -> DVector<f64> {
            let mut v = DVector::zeros(p.dof_count());
            for (j, (b, r)) in p.pose.bones.iter().zip(&reference.pose.bones).enumerate() {
                let base = BONE_DOFS * j;
                v.fixed_rows_mut::<3>(base).copy_from(&(quat_log(&(b.rotation * r.rotation.inverse())) * ROTATION_WEIGHT));
                v.fixed_rows_mut::<3>(base + 3).copy_from(&(b.scale * SCALE_WEIGHT));
                v.fixed_rows_mut::<3>(base + 6).copy_from(&b.translation);
            }
            let off = p.alpha_offset();
            for (k, a) in p.shape.alpha.iter().enumerate() {
                v[off + k] = a * ALPHA_WEIGHT;
            }
            v
        };
        let gs: Vec<DVector<f64>> = self.history.iter().map(|(_, g)| chart(g)).collect();
        let fs: Vec<DVector<f64>> = self.history.iter().zip(&gs).map(|((x, _), g)| g - chart(x)).collect();
        let n = gs[0].len();
        let mut df = DMatrix::zeros(n, m);
        let mut dg = DMatrix::zeros(n, m);
        for i in 0..m {
            df.set_column(i, &(&fs[i + 1] - &fs[i]));
            dg.set_column(i, &(&gs[i + 1] - &gs[i]));
        }
        let svd = df.svd(true, true);
        let tol = 1e-10 * svd.singular_values.max();
        let gamma = svd.solve(&fs[m], tol).ok()?;
        if !gamma.iter().all(|g| g.is_finite()) {
            return None;
        }
        let target = &gs[m] - dg * gamma;
        // Undo the coordinate weights and express as an increment on the reference.
        let mut delta = target - chart(reference);
        for j in 0..reference.bone_count() {
            let base = BONE_DOFS * j;
            for c in 0..3 {
                delta[base + c] /= ROTATION_WEIGHT;
                delta[base + 3 + c] /= SCALE_WEIGHT;
            }
        }
        let off = reference.alpha_offset();
        for k in off..delta.len() {
            delta[k] /= ALPHA_WEIGHT;
        }
        reference.retract(&delta, scale_floor).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::tests::random_quat;
    use crate::shape::tests::small_model;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn needs_two_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = small_model(&mut rng, 4, 2, 3);
        let p = ParamVector::rest(&model);
        let mut aa = Anderson::new(3);
        assert!(aa.propose(1e-3).is_none());
        aa.push(p.clone(), p.clone());
        assert!(aa.propose(1e-3).is_none());
        let mut zero = Anderson::new(0);
        zero.push(p.clone(), p.clone());
        zero.push(p.clone(), p);
        assert!(zero.propose(1e-3).is_none());
    }

    #[test]
    fn solves_an_affine_contraction_in_one_extrapolation() {
        // G(x) = x* + c (x − x*) on translations and α: with two history
        // pairs the extrapolation lands on the fixed point x*.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = small_model(&mut rng, 4, 2, 3);
        let mut fixed = ParamVector::rest(&model);
        fixed.shape.alpha = vec![0.3, -0.2, 0.1];
        fixed.pose.bones[1].rotation = random_quat(&mut rng, 0.3) * fixed.pose.bones[1].rotation;
        let c = 0.8;
        let g = |x: &ParamVector| {
            let mut out = x.clone();
            for (o, f) in out.pose.bones.iter_mut().zip(&fixed.pose.bones) {
                o.translation = f.translation + (o.translation - f.translation) * c;
                o.rotation = f.rotation;
            }
            for (o, f) in out.shape.alpha.iter_mut().zip(&fixed.shape.alpha) {
                *o = f + (*o - f) * c;
            }
            out
        };
        let mut x0 = fixed.clone();
        x0.pose.bones[0].translation.x += 10.0;
        x0.shape.alpha[2] -= 1.0;
        let x1 = g(&x0);
        let x2 = g(&x1);
        let mut aa = Anderson::new(2);
        aa.push(x0.clone(), x1.clone());
        aa.push(x1, x2);
        let p = aa.propose(1e-3).unwrap();
        for (a, b) in p.pose.bones.iter().zip(&fixed.pose.bones) {
            assert_relative_eq!(a.translation, b.translation, epsilon = 1e-9);
            assert!(a.rotation.angle_to(&b.rotation) < 1e-12);
        }
        for (a, b) in p.shape.alpha.iter().zip(&fixed.shape.alpha) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }
}
