//! Foundational two- and three-view geometry.
//!
//! All image points are calibrated (normalized) coordinates whose homogeneous
//! lift is `(x, y, 1)`. A [`RelativePose`] maps points from the first camera
//! frame into the second: `X₂ = R·X₁ + t`.

mod config;
mod metrics;

pub use config::{check_minimal_configuration, CameraConfiguration, ConfigurationStatus};
pub use metrics::{
    auc, rotation_error_deg, translation_angle_error_deg, triplet_pose_error, PoseErrors,
};

use nalgebra::{Matrix3, Matrix4, Point2, Point3, Rotation3, Unit, Vector3};
use thiserror::Error;

/// Calibrated image coordinate.
pub type ImagePoint = Point2<f64>;
/// Scene point, expressed in whatever frame the producing operation documents.
pub type WorldPoint = Point3<f64>;

/// Rays closer than this (radians) are treated as parallel.
pub const PARALLEL_RAY_EPS: f64 = 1e-6;

/// Denominators below this make an epipolar residual undefined.
const RESIDUAL_DENOM_EPS: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate triangulation: rays are (nearly) parallel")]
    DegenerateTriangulation,
    #[error("cheirality failure: no candidate places any support in front of both cameras")]
    CheiralityFailure,
    #[error("translation has zero length")]
    ZeroTranslation,
    #[error("at least one support correspondence is required")]
    NoSupports,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("invalid camera configuration: {0}")]
    InvalidConfiguration(String),
}

/// Homogeneous lift `(x, y, 1)`.
#[inline]
pub fn lift(p: &ImagePoint) -> Vector3<f64> {
    Vector3::new(p.x, p.y, 1.0)
}

/// Checked constructor for image points read from untrusted input.
pub fn image_point(x: f64, y: f64) -> Result<ImagePoint, GeometryError> {
    if x.is_finite() && y.is_finite() {
        Ok(ImagePoint::new(x, y))
    } else {
        Err(GeometryError::NonFinite)
    }
}

/// Perspective division of a camera-frame point.
#[inline]
pub fn project(x: &Point3<f64>) -> ImagePoint {
    ImagePoint::new(x.x / x.z, x.y / x.z)
}

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Closest rotation (Frobenius sense) to an arbitrary 3×3 matrix.
pub fn project_to_rotation(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Rotation3::from_matrix_unchecked(u * d * v_t)
}

/// Rotation plus unit-norm translation between two cameras.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Rotation3<f64>,
    pub translation: Unit<Vector3<f64>>,
}

impl RelativePose {
    /// Normalizes `translation`; fails when it has no direction.
    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let n = translation.norm();
        if !(n > 1e-300) || !n.is_finite() {
            return Err(GeometryError::ZeroTranslation);
        }
        Ok(Self {
            rotation,
            translation: Unit::new_unchecked(translation / n),
        })
    }

    /// Like [`RelativePose::new`] but re-orthonormalizes the rotation first.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        Self::new(project_to_rotation(rotation), translation)
    }

    /// Pose of camera `b` relative to camera `a`, given both world-to-camera poses.
    pub fn between(
        a: (&Rotation3<f64>, &Vector3<f64>),
        b: (&Rotation3<f64>, &Vector3<f64>),
    ) -> Result<Self, GeometryError> {
        let r = b.0 * a.0.inverse();
        let t = b.1 - r * a.1;
        Self::new(r, t)
    }

    #[inline]
    pub fn t(&self) -> Vector3<f64> {
        self.translation.into_inner()
    }

    /// Maps a point from the first camera frame into the second.
    #[inline]
    pub fn transform(&self, x: &Point3<f64>) -> Point3<f64> {
        self.rotation * x + self.t()
    }

    pub fn essential(&self) -> EssentialMatrix {
        essential_from_pose(self)
    }
}

/// Rank-2 matrix of the epipolar constraint `x₂ᵀ E x₁ = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(pub Matrix3<f64>);

impl EssentialMatrix {
    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Scales to unit Frobenius norm.
    pub fn normalized(&self) -> Self {
        let n = self.0.norm();
        if n > 0.0 {
            Self(self.0 / n)
        } else {
            *self
        }
    }

    /// Rank-2 with two equal nonzero singular values, up to the given relative tolerances.
    pub fn satisfies_invariants(&self, rank_tol: f64, equal_tol: f64) -> bool {
        let mut s = self.0.singular_values();
        s.as_mut_slice().sort_by(|a, b| b.partial_cmp(a).unwrap());
        s[0] > 0.0 && s[2] <= rank_tol * s[0] && (s[0] - s[1]) <= equal_tol * s[0]
    }

    /// `‖2EEᵀE − tr(EEᵀ)E‖ / ‖E‖³`.
    pub fn trace_constraint_residual(&self) -> f64 {
        let e = &self.0;
        let eet = e * e.transpose();
        let r = 2.0 * eet * e - eet.trace() * e;
        let n = e.norm();
        r.norm() / (n * n * n)
    }

    /// Projects onto the essential manifold (two equal singular values, third zero).
    pub fn from_matrix_projected(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd requested u");
        let v_t = svd.v_t.expect("svd requested v_t");
        let mut s = svd.singular_values;
        // nalgebra's svd is sorted in decreasing order
        let mean = 0.5 * (s[0] + s[1]);
        s[0] = mean;
        s[1] = mean;
        s[2] = 0.0;
        Self(u * Matrix3::from_diagonal(&s) * v_t)
    }
}

/// `E = [t]ₓ R`.
pub fn essential_from_pose(pose: &RelativePose) -> EssentialMatrix {
    EssentialMatrix(skew(&pose.t()) * pose.rotation.matrix())
}

/// First-order geometric error of a correspondence w.r.t. `E`.
///
/// Returns `f64::INFINITY` when the epipolar lines are undefined.
pub fn sampson_error(e: &EssentialMatrix, x1: &ImagePoint, x2: &ImagePoint) -> f64 {
    let h1 = lift(x1);
    let h2 = lift(x2);
    let l2 = e.0 * h1;
    let l1 = e.0.transpose() * h2;
    let denom = (l2.x * l2.x + l2.y * l2.y + l1.x * l1.x + l1.y * l1.y).sqrt();
    if !(denom >= RESIDUAL_DENOM_EPS) {
        return f64::INFINITY;
    }
    h2.dot(&l2).abs() / denom
}

/// Distance from `p` to the line `l·(x, y, 1) = 0`; infinite for a degenerate line.
pub fn point_line_distance(l: &Vector3<f64>, p: &ImagePoint) -> f64 {
    let n = (l.x * l.x + l.y * l.y).sqrt();
    if !(n >= RESIDUAL_DENOM_EPS) {
        return f64::INFINITY;
    }
    l.dot(&lift(p)).abs() / n
}

/// Mean of the point-to-epipolar-line distances in both images.
pub fn symmetric_epipolar_error(e: &EssentialMatrix, x1: &ImagePoint, x2: &ImagePoint) -> f64 {
    let d2 = point_line_distance(&(e.0 * lift(x1)), x2);
    let d1 = point_line_distance(&(e.0.transpose() * lift(x2)), x1);
    0.5 * (d1 + d2)
}

/// Signed depths `(λ₁, λ₂)` of the least-squares intersection of the two rays.
///
/// `None` for (nearly) parallel rays.
pub fn ray_depths(pose: &RelativePose, x1: &ImagePoint, x2: &ImagePoint) -> Option<(f64, f64)> {
    let a = pose.rotation * lift(x1);
    let b = lift(x2);
    let t = pose.t();
    let aa = a.dot(&a);
    let bb = b.dot(&b);
    let ab = a.dot(&b);
    let det = aa * bb - ab * ab;
    if det <= (PARALLEL_RAY_EPS * PARALLEL_RAY_EPS) * aa * bb {
        return None;
    }
    let at = a.dot(&t);
    let bt = b.dot(&t);
    let l1 = (-at * bb + ab * bt) / det;
    let l2 = (aa * bt - ab * at) / det;
    Some((l1, l2))
}

/// Two-view triangulation in the first camera's frame.
///
/// Linear (DLT) estimate followed by one Gauss–Newton step on the reprojection
/// error in both images. Points behind the cameras are returned as-is; callers
/// inspect the depth.
pub fn triangulate(
    pose: &RelativePose,
    x1: &ImagePoint,
    x2: &ImagePoint,
) -> Result<WorldPoint, GeometryError> {
    let h1 = lift(x1);
    let h2 = lift(x2);
    let back = pose.rotation.inverse() * h2;
    let sin = h1.cross(&back).norm() / (h1.norm() * back.norm());
    if !(sin >= PARALLEL_RAY_EPS) {
        return Err(GeometryError::DegenerateTriangulation);
    }

    let r = pose.rotation.matrix();
    let t = pose.t();
    let mut a = Matrix4::zeros();
    // P1 = [I | 0]
    a.set_row(0, &nalgebra::RowVector4::new(-1.0, 0.0, x1.x, 0.0));
    a.set_row(1, &nalgebra::RowVector4::new(0.0, -1.0, x1.y, 0.0));
    // P2 = [R | t]
    for (row, (coord, k)) in [(x2.x, 0usize), (x2.y, 1usize)].into_iter().enumerate() {
        let mut v = nalgebra::RowVector4::zeros();
        for c in 0..3 {
            v[c] = coord * r[(2, c)] - r[(k, c)];
        }
        v[3] = coord * t.z - t[k];
        a.set_row(2 + row, &v);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateTriangulation)?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .ok_or(GeometryError::DegenerateTriangulation)?;
    let hx = v_t.row(min_idx);
    if hx[3].abs() < 1e-300 {
        return Err(GeometryError::DegenerateTriangulation);
    }
    let mut x = Vector3::new(hx[0] / hx[3], hx[1] / hx[3], hx[2] / hx[3]);
    if !x.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::DegenerateTriangulation);
    }

    // One Gauss-Newton step on the stacked reprojection residual.
    let y = r * x + t;
    if x.z.abs() > 1e-12 && y.z.abs() > 1e-12 {
        let jp = |p: &Vector3<f64>| {
            nalgebra::Matrix2x3::new(
                1.0 / p.z,
                0.0,
                -p.x / (p.z * p.z),
                0.0,
                1.0 / p.z,
                -p.y / (p.z * p.z),
            )
        };
        let j1 = jp(&x);
        let j2 = jp(&y) * r;
        let r1 = nalgebra::Vector2::new(x.x / x.z - x1.x, x.y / x.z - x1.y);
        let r2 = nalgebra::Vector2::new(y.x / y.z - x2.x, y.y / y.z - x2.y);
        let jtj = j1.transpose() * j1 + j2.transpose() * j2;
        let jtr = j1.transpose() * r1 + j2.transpose() * r2;
        if let Some(inv) = jtj.try_inverse() {
            let step = inv * jtr;
            if step.iter().all(|v| v.is_finite()) {
                x -= step;
            }
        }
    }
    Ok(WorldPoint::from(x))
}

/// The four `(R, t)` factorizations of `E`, in the order
/// `(R₁, +t), (R₁, −t), (R₂, +t), (R₂, −t)`.
pub fn essential_pose_candidates(e: &EssentialMatrix) -> [RelativePose; 4] {
    let svd = e.0.svd(true, true);
    let mut u = svd.u.expect("svd requested u");
    let mut v_t = svd.v_t.expect("svd requested v_t");
    // The null direction is the column paired with the smallest singular value.
    let s = svd.singular_values;
    let k = (0..3)
        .min_by(|&a, &b| s[a].partial_cmp(&s[b]).unwrap())
        .unwrap();
    if k != 2 {
        u.swap_columns(k, 2);
        v_t.swap_rows(k, 2);
    }
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = project_to_rotation(&(u * w * v_t));
    let r2 = project_to_rotation(&(u * w.transpose() * v_t));
    let t = Unit::new_normalize(u.column(2).into_owned());
    let neg = Unit::new_unchecked(-t.into_inner());
    [
        RelativePose { rotation: r1, translation: t },
        RelativePose { rotation: r1, translation: neg },
        RelativePose { rotation: r2, translation: t },
        RelativePose { rotation: r2, translation: neg },
    ]
}

/// Number of supports with positive depth in both cameras.
pub fn cheirality_count(pose: &RelativePose, supports: &[(ImagePoint, ImagePoint)]) -> usize {
    supports
        .iter()
        .filter(|(a, b)| matches!(ray_depths(pose, a, b), Some((d1, d2)) if d1 > 0.0 && d2 > 0.0))
        .count()
}

/// Selects the candidate factorization of `E` placing the most supports in front
/// of both cameras. Ties go to the earlier candidate.
pub fn decompose_essential(
    e: &EssentialMatrix,
    supports: &[(ImagePoint, ImagePoint)],
) -> Result<RelativePose, GeometryError> {
    if supports.is_empty() {
        return Err(GeometryError::NoSupports);
    }
    let mut best: Option<(usize, RelativePose)> = None;
    for cand in essential_pose_candidates(e) {
        let c = cheirality_count(&cand, supports);
        if c > 0 && best.map_or(true, |(bc, _)| c > bc) {
            best = Some((c, cand));
        }
    }
    best.map(|(_, p)| p).ok_or(GeometryError::CheiralityFailure)
}

/// One triplet model: poses of views 2 and 3 relative to view 1, plus the shared
/// focal length for the uncalibrated family (in the input coordinate units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletHypothesis {
    pub pose12: RelativePose,
    pub pose13: RelativePose,
    pub focal: Option<f64>,
}

impl TripletHypothesis {
    pub fn calibrated(pose12: RelativePose, pose13: RelativePose) -> Self {
        Self { pose12, pose13, focal: None }
    }
}
