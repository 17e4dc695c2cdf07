//! Absolute pose from three 2D–3D correspondences (Lambda Twist).

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};

use super::SolverError;
use crate::geometry::{lift, project_to_rotation, ImagePoint, WorldPoint};

/// World-to-camera transform `X_c = R·X_w + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsolutePose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl AbsolutePose {
    pub fn transform(&self, x: &WorldPoint) -> Point3<f64> {
        Point3::from(self.rotation * x.coords + self.translation)
    }
}

const GAUSS_NEWTON_ITERS: usize = 5;

/// All real poses (at most four) placing the three points in front of the camera.
pub fn solve_p3p(world: &[WorldPoint; 3], image: &[ImagePoint; 3]) -> Result<Vec<AbsolutePose>, SolverError> {
    let y: [Vector3<f64>; 3] = std::array::from_fn(|i| lift(&image[i]).normalize());
    let x: [Vector3<f64>; 3] = std::array::from_fn(|i| world[i].coords);

    let b12 = -2.0 * y[0].dot(&y[1]);
    let b13 = -2.0 * y[0].dot(&y[2]);
    let b23 = -2.0 * y[1].dot(&y[2]);

    let d12 = x[0] - x[1];
    let d13 = x[0] - x[2];
    let d23 = x[1] - x[2];
    let n = d12.cross(&d13);
    let a12 = d12.norm_squared();
    let a13 = d13.norm_squared();
    let a23 = d23.norm_squared();
    if !(n.norm_squared() > 1e-20 * (a12 * a13)) {
        return Err(SolverError::DegenerateWorldPoints);
    }

    // Cubic in the pencil parameter that makes the conic pair degenerate.
    let (c12, c13, c23) = (-0.5 * b12, -0.5 * b13, -0.5 * b23);
    let blob = c12 * c23 * c13 - 1.0;
    let s13 = 1.0 - c13 * c13;
    let s23 = 1.0 - c23 * c23;
    let s12 = 1.0 - c12 * c12;
    let p3 = a13 * (a23 * s13 - a13 * s23);
    let p2 = 2.0 * blob * a23 * a13 + a13 * (2.0 * a12 + a13) * s23 + a23 * (a23 - a12) * s13;
    let p1 = a23 * (a13 - a23) * s12 - a12 * a12 * s23 - 2.0 * a12 * (blob * a23 + a13 * s23);
    let p0 = a12 * (a12 * s23 - a23 * s12);
    if p3 == 0.0 {
        return Err(SolverError::DegenerateWorldPoints);
    }
    let g = cubic_root(p2 / p3, p1 / p3, p0 / p3);

    let d0 = Matrix3::new(
        a23 * (1.0 - g),
        0.5 * a23 * b12,
        -0.5 * a23 * b13 * g,
        0.5 * a23 * b12,
        a23 - a12 + a13 * g,
        0.5 * b23 * (a13 * g - a12),
        -0.5 * a23 * b13 * g,
        0.5 * b23 * (a13 * g - a12),
        g * (a13 - a23) - a12,
    );
    let eig = d0.symmetric_eigen();
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| eig.eigenvalues[j].abs().partial_cmp(&eig.eigenvalues[i].abs()).unwrap());
    let (e0, e1) = (eig.eigenvalues[idx[0]], eig.eigenvalues[idx[1]]);
    if e0 == 0.0 {
        return Err(SolverError::DegenerateWorldPoints);
    }
    let v0 = eig.eigenvectors.column(idx[0]).into_owned();
    let v1 = eig.eigenvectors.column(idx[1]).into_owned();
    let v = (-e1 / e0).max(0.0).sqrt();

    let mut depths: Vec<Vector3<f64>> = Vec::with_capacity(4);
    for s in [v, -v] {
        let u = v0 - s * v1;
        let (u1, u2, u3) = (u[0], u[1], u[2]);
        if u1.abs() < u2.abs() {
            let a = (a23 - a12) * u3 * u3 - a12 * u2 * u2 + a12 * b23 * u2 * u3;
            let b = (2.0 * a23 * u1 * u3 - 2.0 * a12 * u1 * u3 + a12 * b23 * u1 * u2 - a23 * b12 * u2 * u3) / a;
            let c = (a23 * u1 * u1 - a12 * u1 * u1 + a23 * u2 * u2 - a23 * b12 * u1 * u2) / a;
            for tau in quadratic_roots(b, c) {
                if !(tau > 0.0) {
                    continue;
                }
                let l1 = (a13 / (tau * (tau + b13) + 1.0)).sqrt();
                let l3 = tau * l1;
                let l2 = -(u1 * l1 + u3 * l3) / u2;
                if l2 > 0.0 && l1.is_finite() {
                    depths.push(Vector3::new(l1, l2, l3));
                }
            }
        } else {
            let w2 = -1.0 / u1;
            let w0 = u2 * w2;
            let w1 = u3 * w2;
            let a = 1.0 / ((a13 - a12) * w1 * w1 - a12 * b13 * w1 - a12);
            let b = (a13 * b12 * w1 - a12 * b13 * w0 - 2.0 * w0 * w1 * (a12 - a13)) * a;
            let c = ((a13 - a12) * w0 * w0 + a13 * b12 * w0 + a13) * a;
            for tau in quadratic_roots(b, c) {
                if !(tau > 0.0) {
                    continue;
                }
                let l2 = (a23 / (tau * (b23 + tau) + 1.0)).sqrt();
                let l3 = tau * l2;
                let l1 = w0 * l2 + w1 * l3;
                if l1 > 0.0 && l2.is_finite() {
                    depths.push(Vector3::new(l1, l2, l3));
                }
            }
        }
    }

    let xinv = match Matrix3::from_columns(&[d12, d13, n]).try_inverse() {
        Some(m) => m,
        None => return Err(SolverError::DegenerateWorldPoints),
    };
    let mut out: Vec<AbsolutePose> = Vec::with_capacity(depths.len());
    for mut l in depths {
        refine_depths(&mut l, [a12, a13, a23], [b12, b13, b23]);
        let p: [Vector3<f64>; 3] = std::array::from_fn(|i| y[i] * l[i]);
        let e1 = p[0] - p[1];
        let e2 = p[0] - p[2];
        let ym = Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]);
        let r = project_to_rotation(&(ym * xinv));
        let t = p[0] - r * x[0];
        if !t.iter().all(|v| v.is_finite()) {
            continue;
        }
        let cand = AbsolutePose { rotation: r, translation: t };
        let dup = out.iter().any(|o| {
            (o.rotation.matrix() - r.matrix()).norm() < 1e-9 && (o.translation - t).norm() < 1e-9 * (1.0 + t.norm())
        });
        if !dup {
            out.push(cand);
        }
    }
    Ok(out)
}

/// Real roots of `t² + b·t + c`, computed without cancellation. A slightly
/// negative discriminant is treated as a double root.
fn quadratic_roots(b: f64, c: f64) -> Vec<f64> {
    let disc = b * b - 4.0 * c;
    if !disc.is_finite() {
        return Vec::new();
    }
    if disc <= 0.0 {
        return if disc.abs() < 1e-10 { vec![-0.5 * b] } else { Vec::new() };
    }
    let y = disc.sqrt();
    if b < 0.0 {
        vec![0.5 * (-b + y), 2.0 * c / (-b + y)]
    } else {
        vec![2.0 * c / (-b - y), 0.5 * (-b - y)]
    }
}

/// One real root of `t³ + b·t² + c·t + d` by safeguarded Newton iteration.
fn cubic_root(b: f64, c: f64, d: f64) -> f64 {
    let f = |t: f64| ((t + b) * t + c) * t + d;
    let mut r = if b * b >= 3.0 * c {
        let v = (b * b - 3.0 * c).sqrt();
        let t1 = (-b - v) / 3.0;
        let k = f(t1);
        if k > 0.0 {
            t1 - (-k / (3.0 * t1 + b)).sqrt()
        } else {
            let t2 = (-b + v) / 3.0;
            t2 + (-f(t2) / (3.0 * t2 + b)).sqrt()
        }
    } else {
        let r0 = -b / 3.0;
        if ((3.0 * r0 + 2.0 * b) * r0 + c).abs() < 1e-4 {
            r0 + 1.0
        } else {
            r0
        }
    };
    if !r.is_finite() {
        r = -b / 3.0;
    }
    for _ in 0..100 {
        let fx = f(r);
        let fpx = (3.0 * r + 2.0 * b) * r + c;
        if fx == 0.0 || fpx == 0.0 {
            break;
        }
        let step = fx / fpx;
        r -= step;
        if step.abs() <= 1e-15 * r.abs().max(1.0) {
            break;
        }
    }
    r
}

/// Gauss–Newton on the three law-of-cosines residuals.
fn refine_depths(l: &mut Vector3<f64>, a: [f64; 3], b: [f64; 3]) {
    let residual = |l: &Vector3<f64>| {
        Vector3::new(
            l[0] * l[0] + l[1] * l[1] + b[0] * l[0] * l[1] - a[0],
            l[0] * l[0] + l[2] * l[2] + b[1] * l[0] * l[2] - a[1],
            l[1] * l[1] + l[2] * l[2] + b[2] * l[1] * l[2] - a[2],
        )
    };
    let mut r = residual(l);
    for _ in 0..GAUSS_NEWTON_ITERS {
        if r.abs().sum() < 1e-15 * (a[0] + a[1] + a[2]) {
            break;
        }
        let j = Matrix3::new(
            2.0 * l[0] + b[0] * l[1],
            2.0 * l[1] + b[0] * l[0],
            0.0,
            2.0 * l[0] + b[1] * l[2],
            0.0,
            2.0 * l[2] + b[1] * l[0],
            0.0,
            2.0 * l[1] + b[2] * l[2],
            2.0 * l[2] + b[2] * l[1],
        );
        let Some(step) = j.lu().solve(&r) else { break };
        let next = *l - step;
        let rn = residual(&next);
        if !(rn.abs().sum() < r.abs().sum()) {
            break;
        }
        *l = next;
        r = rn;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, rotation_error_deg};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng) -> (AbsolutePose, [WorldPoint; 3], [ImagePoint; 3]) {
        let axis = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let rotation = Rotation3::new(axis);
        let cam: [Point3<f64>; 3] = std::array::from_fn(|_| {
            Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..6.0))
        });
        let translation = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let pose = AbsolutePose { rotation, translation };
        let world = cam.map(|c| Point3::from(rotation.inverse() * (c.coords - translation)));
        (pose, world, cam.map(|c| project(&c)))
    }

    #[test]
    fn recovers_ground_truth_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (gt, world, image) = random_instance(&mut rng);
            let sols = solve_p3p(&world, &image).unwrap();
            assert!(sols.len() <= 4);
            let best = sols
                .iter()
                .map(|p| rotation_error_deg(&p.rotation, &gt.rotation).max((p.translation - gt.translation).norm()))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "best {best}, {} solutions", sols.len());
            for p in &sols {
                // angles between bearings are reproduced by every candidate
                let cam: [Vector3<f64>; 3] = std::array::from_fn(|i| p.transform(&world[i]).coords);
                for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                    let expect = lift(&image[i]).normalize().dot(&lift(&image[j]).normalize());
                    let got = cam[i].normalize().dot(&cam[j].normalize());
                    assert!((expect - got).abs() < 1e-8);
                }
                assert!(cam.iter().all(|c| c.z > 0.0));
            }
        }
    }

    #[test]
    fn collinear_points_are_rejected() {
        let world = [Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0), Point3::new(2.0, 2.0, 2.0)];
        let image = [ImagePoint::new(0.0, 0.0), ImagePoint::new(0.1, 0.0), ImagePoint::new(0.0, 0.1)];
        assert_eq!(solve_p3p(&world, &image), Err(SolverError::DegenerateWorldPoints));
    }
}
