use nalgebra::{Rotation3, Vector3};

use super::TripletHypothesis;

/// Angle of `R_estᵀ R_gt` in degrees.
///
/// Computed with `atan2` from both the symmetric and skew parts so that tiny
/// angles keep full precision.
pub fn rotation_error_deg(est: &Rotation3<f64>, gt: &Rotation3<f64>) -> f64 {
    let d = est.matrix().transpose() * gt.matrix();
    let cos = 0.5 * (d.trace() - 1.0);
    let axis = Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]);
    let sin = 0.5 * axis.norm();
    sin.atan2(cos).to_degrees()
}

/// Unsigned angle between two translation directions, in `[0°, 180°]`.
pub fn translation_angle_error_deg(est: &Vector3<f64>, gt: &Vector3<f64>) -> f64 {
    est.cross(gt).norm().atan2(est.dot(gt)).to_degrees()
}

/// Per-pair errors (degrees) of a triplet estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseErrors {
    pub rot12: f64,
    pub rot13: f64,
    pub t12: f64,
    pub t13: f64,
}

impl PoseErrors {
    pub fn between(h: &TripletHypothesis, gt: &TripletHypothesis) -> Self {
        Self {
            rot12: rotation_error_deg(&h.pose12.rotation, &gt.pose12.rotation),
            rot13: rotation_error_deg(&h.pose13.rotation, &gt.pose13.rotation),
            t12: translation_angle_error_deg(&h.pose12.t(), &gt.pose12.t()),
            t13: translation_angle_error_deg(&h.pose13.t(), &gt.pose13.t()),
        }
    }

    /// `max(avg(eR₁₂, eR₁₃), avg(et₁₂, et₁₃))`.
    pub fn pose_error(&self) -> f64 {
        (0.5 * (self.rot12 + self.rot13)).max(0.5 * (self.t12 + self.t13))
    }
}

pub fn triplet_pose_error(h: &TripletHypothesis, gt: &TripletHypothesis) -> f64 {
    PoseErrors::between(h, gt).pose_error()
}

/// Area under the recall curve up to `threshold`, as a percentage.
///
/// Recall is the step function `r(θ) = #{e ≤ θ} / n`, integrated exactly.
pub fn auc(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() || !(threshold > 0.0) {
        return 0.0;
    }
    let n = errors.len() as f64;
    let area: f64 = errors
        .iter()
        .filter(|e| **e <= threshold)
        .map(|e| threshold - e.max(0.0))
        .sum();
    100.0 * area / (n * threshold)
}
