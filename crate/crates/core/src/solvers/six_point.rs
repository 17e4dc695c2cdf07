//! Relative pose with one unknown focal length shared by both views, from six
//! correspondences.
//!
//! With `F = xF₁ + yF₂ + F₃` over the null space and `w = 1/f²`, the rank
//! constraint and the trace constraint of `E = KFK` are ten equations in the
//! ten monomials of `(x, y)` up to degree three, with coefficients quadratic in
//! `w`. The values of `w` that make this 10×10 system singular are the
//! eigenvalues of a quadratic matrix pencil.

use nalgebra::{DMatrix, Matrix3, SMatrix};

use super::{epipolar_row, null_space, SolverError};
use crate::geometry::{EssentialMatrix, ImagePoint};
use crate::poly::IMAG_TOL;

pub const MAX_SOLUTIONS: usize = 15;

/// Accepted relative residual of the essential constraints at a root.
const CONSTRAINT_TOL: f64 = 1e-5;

/// An essential matrix together with the focal length that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalEssential {
    pub essential: EssentialMatrix,
    /// Focal length in the units of the input coordinates.
    pub focal: f64,
}

/// `(x, y)` monomials of degree ≤ 3.
const XY_MONOMIALS: [[u8; 2]; 10] = [[3, 0], [2, 1], [1, 2], [0, 3], [2, 0], [1, 1], [0, 2], [1, 0], [0, 1], [0, 0]];

fn xy_index(a: u8, b: u8) -> usize {
    XY_MONOMIALS.iter().position(|m| *m == [a, b]).expect("monomial of degree ≤ 3")
}

/// Polynomial in `(x, y)` of degree ≤ 3 whose coefficients are quadratics in `w`.
#[derive(Clone, Copy)]
struct XyW([[f64; 3]; 10]);

impl XyW {
    const ZERO: Self = XyW([[0.0; 3]; 10]);

    fn linear(a: f64, b: f64, c: f64) -> Self {
        let mut p = Self::ZERO;
        p.0[7][0] = a;
        p.0[8][0] = b;
        p.0[9][0] = c;
        p
    }

    fn mul(&self, o: &Self) -> Self {
        let mut out = Self::ZERO;
        for (i, ci) in self.0.iter().enumerate() {
            for (j, cj) in o.0.iter().enumerate() {
                if ci.iter().all(|v| *v == 0.0) || cj.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let (mi, mj) = (XY_MONOMIALS[i], XY_MONOMIALS[j]);
                let k = xy_index(mi[0] + mj[0], mi[1] + mj[1]);
                for (p, a) in ci.iter().enumerate() {
                    for (q, b) in cj.iter().enumerate() {
                        if *a != 0.0 && *b != 0.0 {
                            out.0[k][p + q] += a * b;
                        }
                    }
                }
            }
        }
        out
    }

    fn add(&self, o: &Self) -> Self {
        let mut out = *self;
        for (r, s) in out.0.iter_mut().zip(o.0.iter()) {
            for (a, b) in r.iter_mut().zip(s.iter()) {
                *a += b;
            }
        }
        out
    }

    fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        out.0.iter_mut().flatten().for_each(|v| *v *= s);
        out
    }

    fn times_w(&self) -> Self {
        let mut out = Self::ZERO;
        for (r, s) in out.0.iter_mut().zip(self.0.iter()) {
            debug_assert!(s[2] == 0.0);
            r[1] = s[0];
            r[2] = s[1];
        }
        out
    }
}

type M10 = SMatrix<f64, 10, 10>;

struct Pencil {
    m: [M10; 3],
}

impl Pencil {
    fn at(&self, w: f64) -> M10 {
        self.m[0] + self.m[1] * w + self.m[2] * (w * w)
    }

    fn derivative(&self, w: f64) -> M10 {
        self.m[1] + self.m[2] * (2.0 * w)
    }
}

/// Up to fifteen `(E, f)` pairs consistent with six correspondences whose two
/// cameras share an unknown focal length and have the principal point at the
/// origin.
pub fn solve_6pt(corr: &[(ImagePoint, ImagePoint); 6]) -> Result<Vec<FocalEssential>, SolverError> {
    let rows: Vec<[f64; 9]> = corr.iter().map(|(a, b)| epipolar_row(a, b)).collect();
    let [f1, f2, f3] = null_space::<3>(&rows)?;

    let mut f = [[XyW::ZERO; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let k = 3 * r + c;
            f[r][c] = XyW::linear(f1[k], f2[k], f3[k]);
        }
    }
    let pencil = build_pencil(&f);

    let roots = pencil_roots(&pencil);
    let mut out = Vec::new();
    for w in roots {
        let Some(w) = polish(&pencil, w) else { continue };
        if !(w > 0.0) {
            continue;
        }
        let Some((x, y)) = monomial_solution(&pencil.at(w)) else { continue };
        let mut fm = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                let k = 3 * r + c;
                fm[(r, c)] = x * f1[k] + y * f2[k] + f3[k];
            }
        }
        let focal = 1.0 / w.sqrt();
        let k = Matrix3::from_diagonal(&nalgebra::Vector3::new(focal, focal, 1.0));
        let e = EssentialMatrix(k * fm * k).normalized();
        if !e.0.iter().all(|v| v.is_finite()) {
            continue;
        }
        if e.trace_constraint_residual() > CONSTRAINT_TOL || e.0.determinant().abs() > CONSTRAINT_TOL {
            continue;
        }
        out.push(FocalEssential { essential: e, focal });
        if out.len() == MAX_SOLUTIONS {
            break;
        }
    }
    if out.is_empty() {
        return Err(SolverError::NoRealFocal);
    }
    Ok(out)
}

fn build_pencil(f: &[[XyW; 3]; 3]) -> Pencil {
    let minor = |r1: usize, r2: usize, c1: usize, c2: usize| f[r1][c1].mul(&f[r2][c2]).add(&f[r1][c2].mul(&f[r2][c1]).scale(-1.0));
    let det = f[0][0]
        .mul(&minor(1, 2, 1, 2))
        .add(&f[0][1].mul(&minor(1, 2, 0, 2)).scale(-1.0))
        .add(&f[0][2].mul(&minor(1, 2, 0, 1)));

    // G = F·Q·Fᵀ with Q = diag(1, 1, w)
    let mut g = [[XyW::ZERO; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = f[i][0].mul(&f[j][0]).add(&f[i][1].mul(&f[j][1])).add(&f[i][2].mul(&f[j][2]).times_w());
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    let trace = g[0][0].add(&g[1][1]).add(&g[2][2].times_w());

    let mut eqs = [XyW::ZERO; 10];
    eqs[0] = det;
    for i in 0..3 {
        for j in 0..3 {
            let gqf = g[i][0].mul(&f[0][j]).add(&g[i][1].mul(&f[1][j])).add(&g[i][2].mul(&f[2][j]).times_w());
            eqs[1 + 3 * i + j] = gqf.scale(2.0).add(&trace.mul(&f[i][j]).scale(-1.0));
        }
    }

    let mut m = [M10::zeros(); 3];
    for (r, eq) in eqs.iter().enumerate() {
        let norm = eq.0.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        let s = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        for c in 0..10 {
            for p in 0..3 {
                m[p][(r, c)] = eq.0[c][p] * s;
            }
        }
    }
    Pencil { m }
}

/// Real finite roots of `det(M₀ + wM₁ + w²M₂) = 0`.
///
/// The pencil is shifted to `w = w₀ + 1/μ` so that the eigenvalue problem in
/// `μ` only needs `M(w₀)` to be invertible; roots at infinity map to `μ = 0`.
fn pencil_roots(p: &Pencil) -> Vec<f64> {
    for w0 in [-1.0, -2.7183, -0.3679, -7.389] {
        let a0 = p.at(w0);
        let Some(a0inv) = a0.try_inverse() else { continue };
        if !a0inv.iter().all(|v| v.is_finite()) {
            continue;
        }
        let a1 = p.derivative(w0);
        let a2 = p.m[2];
        let mut c = DMatrix::<f64>::zeros(20, 20);
        for i in 0..10 {
            c[(i, 10 + i)] = 1.0;
        }
        let lower_left = -(a0inv * a2);
        let lower_right = -(a0inv * a1);
        c.view_mut((10, 0), (10, 10)).copy_from(&lower_left);
        c.view_mut((10, 10), (10, 10)).copy_from(&lower_right);
        let eig = c.complex_eigenvalues();
        let scale = eig.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let mut out = Vec::new();
        for z in eig.iter() {
            if z.norm() <= 1e-10 * scale {
                continue;
            }
            // accept nearly-real μ; the Newton polish tightens it
            if z.im.abs() <= 1e3 * IMAG_TOL * z.re.abs() {
                out.push(w0 + 1.0 / z.re);
            }
        }
        return out;
    }
    Vec::new()
}

/// Newton steps on `log det M(w)`.
fn polish(p: &Pencil, mut w: f64) -> Option<f64> {
    for _ in 0..3 {
        let m = p.at(w);
        let lu = m.lu();
        let Some(inv) = lu.try_inverse() else { return Some(w) };
        let tr = (inv * p.derivative(w)).trace();
        if !(tr.is_finite()) || tr == 0.0 {
            return Some(w);
        }
        let step = 1.0 / tr;
        if !(step.abs() <= 0.1 * w.abs().max(1e-6)) {
            // a large step means Newton is not in its basin; keep the eigenvalue
            return Some(w);
        }
        w -= step;
        if step.abs() <= 1e-15 * w.abs() {
            break;
        }
    }
    w.is_finite().then_some(w)
}

/// `(x, y)` from the null vector of `M(w)`.
fn monomial_solution(m: &M10) -> Option<(f64, f64)> {
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let (i, _) = svd.singular_values.iter().enumerate().min_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
    let v = v_t.row(i);
    if !(v[9].abs() > 1e-12 * v.norm()) {
        return None;
    }
    Some((v[7] / v[9], v[8] / v[9]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{decompose_essential, project, rotation_error_deg, translation_angle_error_deg, RelativePose};
    use nalgebra::{Point3, Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Six correspondences in pixel-like units divided by the image size.
    fn instance(rng: &mut ChaCha8Rng) -> (RelativePose, f64, [(ImagePoint, ImagePoint); 6]) {
        let axis = Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
        let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5));
        let pose = RelativePose::new(Rotation3::new(axis), t).unwrap();
        let focal = rng.random_range(0.3..1.5);
        let mut corr = [(ImagePoint::origin(), ImagePoint::origin()); 6];
        for c in corr.iter_mut() {
            let x = Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(4.0..8.0));
            let a = project(&x);
            let b = project(&pose.transform(&x));
            *c = (ImagePoint::from(a.coords * focal), ImagePoint::from(b.coords * focal));
        }
        (pose, focal, corr)
    }

    #[test]
    fn recovers_pose_and_focal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = 0;
        let trials = 200;
        for _ in 0..trials {
            let (pose, focal, corr) = instance(&mut rng);
            let sols = solve_6pt(&corr).unwrap();
            assert!(sols.len() <= MAX_SOLUTIONS);
            let found = sols.iter().any(|s| {
                if (s.focal - focal).abs() > 1e-6 * focal {
                    return false;
                }
                let norm: Vec<_> = corr
                    .iter()
                    .map(|(a, b)| (ImagePoint::from(a.coords / s.focal), ImagePoint::from(b.coords / s.focal)))
                    .collect();
                decompose_essential(&s.essential, &norm).is_ok_and(|p| {
                    rotation_error_deg(&p.rotation, &pose.rotation) < 1e-5 && translation_angle_error_deg(&p.t(), &pose.t()) < 1e-5
                })
            });
            hits += found as usize;
        }
        assert!(hits >= trials * 99 / 100, "{hits}/{trials}");
    }

    #[test]
    fn rank_deficient_sample() {
        let p = ImagePoint::new(0.1, 0.2);
        let corr = [(p, p); 6];
        assert_eq!(solve_6pt(&corr), Err(SolverError::DegenerateSample));
    }
}
