//! Normalized linear estimate of `E` from eight or more correspondences.

use nalgebra::{DMatrix, Matrix3};

use super::{epipolar_row, SolverError};
use crate::geometry::{EssentialMatrix, ImagePoint};

/// Similarity that moves the centroid to the origin and sets the mean distance to √2.
fn conditioning(points: impl Iterator<Item = ImagePoint> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let c = points.clone().fold(nalgebra::Vector2::zeros(), |a, p| a + p.coords) / n;
    let mean = points.map(|p| (p.coords - c).norm()).sum::<f64>() / n;
    let s = if mean > 0.0 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn apply(t: &Matrix3<f64>, p: &ImagePoint) -> ImagePoint {
    ImagePoint::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

/// Least-squares `E`, projected onto the essential manifold.
pub fn solve_8pt(corr: &[(ImagePoint, ImagePoint)]) -> Result<EssentialMatrix, SolverError> {
    let e = solve_8pt_linear(corr)?;
    let out = EssentialMatrix::from_matrix_projected(&e).normalized();
    if out.0.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(SolverError::DegenerateSample)
    }
}

/// The unconstrained linear estimate with `x₂ᵀ·M·x₁ = 0`, before any
/// projection (a fundamental matrix for uncalibrated input).
pub fn solve_8pt_linear(corr: &[(ImagePoint, ImagePoint)]) -> Result<Matrix3<f64>, SolverError> {
    if corr.len() < 8 {
        return Err(SolverError::NotEnoughPoints { needed: 8, got: corr.len() });
    }
    let t1 = conditioning(corr.iter().map(|c| c.0));
    let t2 = conditioning(corr.iter().map(|c| c.1));
    let rows = corr.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (x1, x2)) in corr.iter().enumerate() {
        let r = epipolar_row(&apply(&t1, x1), &apply(&t2, x2));
        for c in 0..9 {
            a[(i, c)] = r[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(SolverError::DegenerateSample)?;
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap_or(std::cmp::Ordering::Equal));
    if !(s[order[7]] > 1e-12 * s[order[0]]) {
        return Err(SolverError::DegenerateSample);
    }
    let v = v_t.row(order[8]);
    let e = Matrix3::from_fn(|r, c| v[3 * r + c]);
    let e = t2.transpose() * e * t1;
    let n = e.norm();
    if n.is_finite() && n > 0.0 { Ok(e / n) } else { Err(SolverError::DegenerateSample) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{essential_from_pose, project, RelativePose};
    use nalgebra::{Point3, Rotation3, Vector3};

    #[test]
    fn exact_on_noise_free_data() {
        let pose = RelativePose::new(Rotation3::new(Vector3::new(0.1, -0.2, 0.05)), Vector3::new(1.0, 0.2, 0.1)).unwrap();
        let corr: Vec<_> = (0..20)
            .map(|i| {
                let f = i as f64;
                let x = Point3::new((f * 0.7).sin() * 2.0, (f * 1.3).cos() * 2.0, 5.0 + (f * 0.4).sin());
                (project(&x), project(&pose.transform(&x)))
            })
            .collect();
        let e = solve_8pt(&corr).unwrap();
        let gt = essential_from_pose(&pose).normalized();
        assert!((e.0 - gt.0).norm().min((e.0 + gt.0).norm()) < 1e-9);
        assert!(solve_8pt(&corr[..7]).is_err());
    }
}
