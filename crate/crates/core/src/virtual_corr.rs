//! Virtual correspondences synthesized from the coordinates of real ones.

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{essential_from_pose, lift, ImagePoint, RelativePose};

/// Bounding boxes at or below this extent are treated as a single point.
pub const DEGENERATE_EXTENT: f64 = 1e-12;
/// Triangles whose area is below this fraction of the squared bbox extent are collinear.
pub const COLLINEAR_RATIO: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VirtualError {
    #[error("degenerate triangle")]
    DegenerateTriangle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle2D {
    pub vertices: [ImagePoint; 3],
}

impl Triangle2D {
    pub fn new(a: ImagePoint, b: ImagePoint, c: ImagePoint) -> Self {
        Self { vertices: [a, b, c] }
    }

    /// Bounding-box width and height.
    pub fn extent(&self) -> (f64, f64) {
        let v = &self.vertices;
        let (mut lo, mut hi) = (v[0], v[0]);
        for p in &v[1..] {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (hi.x - lo.x, hi.y - lo.y)
    }

    pub fn longest_side(&self) -> f64 {
        let (w, h) = self.extent();
        w.max(h)
    }

    pub fn area(&self) -> f64 {
        let [a, b, c] = self.vertices;
        0.5 * ((b - a).perp(&(c - a))).abs()
    }

    /// Zero extent or (numerically) collinear vertices.
    pub fn is_degenerate(&self) -> bool {
        let l = self.longest_side();
        !(l > DEGENERATE_EXTENT) || !(self.area() > COLLINEAR_RATIO * l * l)
    }

    pub fn contains(&self, p: &ImagePoint) -> bool {
        let [a, b, c] = self.vertices;
        let d1 = (b - a).perp(&(p - a));
        let d2 = (c - b).perp(&(p - b));
        let d3 = (a - c).perp(&(p - c));
        let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
        let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
        !(neg && pos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Mean,
    DeltaPlus,
    DeltaMinus,
    Oracle,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualCorrespondence {
    pub p1: ImagePoint,
    pub p2: ImagePoint,
    pub provenance: Provenance,
}

impl VirtualCorrespondence {
    pub fn pair(&self) -> (ImagePoint, ImagePoint) {
        (self.p1, self.p2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barycentric {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Barycentric {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b, c: 1.0 - a - b }
    }
}

pub fn mean_point(tri: &Triangle2D) -> ImagePoint {
    let [a, b, c] = tri.vertices;
    ImagePoint::from((a.coords + b.coords + c.coords) / 3.0)
}

pub fn mean_correspondence(view1: &Triangle2D, view2: &Triangle2D) -> VirtualCorrespondence {
    VirtualCorrespondence { p1: mean_point(view1), p2: mean_point(view2), provenance: Provenance::Mean }
}

/// `m² ± δ` along the longer bounding-box axis of `tri2` (x on ties), with
/// `δ = factor · longest side`. Returns `[plus, minus]`.
pub fn delta_shifts(m2: &ImagePoint, tri2: &Triangle2D, factor: f64) -> Result<[ImagePoint; 2], VirtualError> {
    let (w, h) = tri2.extent();
    let longest = w.max(h);
    if !(longest > DEGENERATE_EXTENT) {
        return Err(VirtualError::DegenerateTriangle);
    }
    let d = factor * longest;
    let step = if w >= h { nalgebra::Vector2::new(d, 0.0) } else { nalgebra::Vector2::new(0.0, d) };
    Ok([m2 + step, m2 - step])
}

/// Orthogonal projection of `p` onto the line `l = (a, b, c)`.
pub fn project_onto_line(l: &Vector3<f64>, p: &ImagePoint) -> ImagePoint {
    let n2 = l.x * l.x + l.y * l.y;
    let s = (l.x * p.x + l.y * p.y + l.z) / n2;
    ImagePoint::new(p.x - s * l.x, p.y - s * l.y)
}

/// View-2 point on the ground-truth epipolar line of `m1`, closest to the
/// view-2 mean point.
pub fn oracle_correspondence(gt_pose12: &RelativePose, m1: &ImagePoint, tri2: &Triangle2D) -> VirtualCorrespondence {
    let line = essential_from_pose(gt_pose12).0 * lift(m1);
    VirtualCorrespondence { p1: *m1, p2: project_onto_line(&line, &mean_point(tri2)), provenance: Provenance::Oracle }
}

pub fn barycentric_point(tri: &Triangle2D, bc: &Barycentric) -> ImagePoint {
    let [a, b, c] = tri.vertices;
    ImagePoint::from(a.coords * bc.a + b.coords * bc.b + c.coords * bc.c)
}

/// `a = i/(n−1)`, `b = j/(n−1)` for `i + j ≤ n − 1`, in `(i, j)` row-major order.
pub fn barycentric_grid(n: usize) -> Vec<Barycentric> {
    if n < 2 {
        return vec![Barycentric::new(0.0, 0.0)];
    }
    let step = (n - 1) as f64;
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..n - i {
            let a = i as f64 / step;
            let b = j as f64 / step;
            // keep c exactly zero on the hypotenuse
            let c = if i + j == n - 1 { 0.0 } else { 1.0 - a - b };
            out.push(Barycentric { a, b, c });
        }
    }
    out
}

/// Euclidean distance between the line `l` and the closed triangle; zero when
/// they intersect.
pub fn line_triangle_distance(l: &Vector3<f64>, tri: &Triangle2D) -> f64 {
    let n = (l.x * l.x + l.y * l.y).sqrt();
    let d = tri.vertices.map(|p| (l.x * p.x + l.y * p.y + l.z) / n);
    let (lo, hi) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo <= 0.0 && hi >= 0.0 {
        0.0
    } else {
        lo.abs().min(hi.abs())
    }
}

pub fn max_vertex_distance(p: &ImagePoint, tri: &Triangle2D) -> f64 {
    tri.vertices.iter().map(|v| (v - p).norm()).fold(0.0, f64::max)
}

/// Index triplets of a four-point sample, in fallback order.
pub const TRIPLETS: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];

/// How a four-point sample's triplet for a mean point is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TripletChoice {
    /// `{1,2,3}`, falling back to `{1,2,4}` when the view-2 triangle is degenerate.
    #[default]
    Fixed,
    /// The non-degenerate triplet with the largest view-2 triangle.
    MaxArea,
}

/// Triangle of `points` at the given indices.
pub fn triangle_of(points: &[ImagePoint], idx: [usize; 3]) -> Triangle2D {
    Triangle2D::new(points[idx[0]], points[idx[1]], points[idx[2]])
}

/// Usable triplets of a four-point sample, in preference order.
pub fn usable_triplets(view1: &[ImagePoint; 4], view2: &[ImagePoint; 4], choice: TripletChoice) -> Vec<[usize; 3]> {
    let ok = |t: &[usize; 3]| !triangle_of(view1, *t).is_degenerate() && !triangle_of(view2, *t).is_degenerate();
    match choice {
        TripletChoice::Fixed => TRIPLETS.iter().filter(|t| ok(t)).copied().collect(),
        TripletChoice::MaxArea => {
            let mut v: Vec<[usize; 3]> = TRIPLETS.iter().filter(|t| ok(t)).copied().collect();
            // stable sort keeps the fixed order among equal areas
            v.sort_by(|a, b| triangle_of(view2, *b).area().partial_cmp(&triangle_of(view2, *a).area()).unwrap());
            v
        }
    }
}
