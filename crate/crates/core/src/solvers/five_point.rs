//! Calibrated relative pose from five correspondences.
//!
//! The essential matrix is written as `E = xX + yY + zZ + W` over the null
//! space of the epipolar constraints. The cubic trace constraint and the
//! determinant give ten cubic equations in `(x, y, z)`; Gauss–Jordan
//! elimination followed by a hidden-variable resultant yields a degree-10
//! polynomial in `z`.

use nalgebra::{Matrix3, SMatrix, Vector3};

use super::{epipolar_row, null_space, SolverError};
use crate::geometry::{EssentialMatrix, ImagePoint};
use crate::poly::{self, Cubic3};

pub const MAX_SOLUTIONS: usize = 10;

/// Up to ten essential matrices consistent with five calibrated correspondences.
pub fn solve_5pt(corr: &[(ImagePoint, ImagePoint); 5]) -> Result<Vec<EssentialMatrix>, SolverError> {
    let rows: Vec<[f64; 9]> = corr.iter().map(|(a, b)| epipolar_row(a, b)).collect();
    let basis = null_space::<4>(&rows)?;
    let [bx, by, bz, bw] = basis;

    let mut e = [[Cubic3::ZERO; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let k = 3 * r + c;
            e[r][c] = Cubic3::linear(bx[k], by[k], bz[k], bw[k]);
        }
    }
    let constraints = essential_constraints(&e);

    let mut a = SMatrix::<f64, 10, 10>::zeros();
    let mut b = SMatrix::<f64, 10, 10>::zeros();
    for (i, p) in constraints.iter().enumerate() {
        let norm = p.0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let s = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        for j in 0..10 {
            a[(i, j)] = p.0[j] * s;
            b[(i, j)] = p.0[10 + j] * s;
        }
    }
    let reduced = a.lu().solve(&b).ok_or(SolverError::DegenerateSample)?;
    if !reduced.iter().all(|v| v.is_finite()) {
        return Err(SolverError::DegenerateSample);
    }

    // Rows 4..=9 of the reduced system eliminate x²z, x², y²z, y², xyz, xy.
    let resultant_row = |hi: usize, lo: usize| -> [Vec<f64>; 3] {
        let e = reduced.row(hi);
        let f = reduced.row(lo);
        [
            vec![e[2], e[1] - f[2], e[0] - f[1], -f[0]],
            vec![e[5], e[4] - f[5], e[3] - f[4], -f[3]],
            vec![e[9], e[8] - f[9], e[7] - f[8], e[6] - f[7], -f[6]],
        ]
    };
    let k = resultant_row(4, 5);
    let l = resultant_row(6, 7);
    let m = resultant_row(8, 9);

    let minor = |a: &[f64], b: &[f64], c: &[f64], d: &[f64]| poly::sub(&poly::mul(a, b), &poly::mul(c, d));
    let det = poly::add(
        &poly::sub(
            &poly::mul(&k[0], &minor(&l[1], &m[2], &l[2], &m[1])),
            &poly::mul(&k[1], &minor(&l[0], &m[2], &l[2], &m[0])),
        ),
        &poly::mul(&k[2], &minor(&l[0], &m[1], &l[1], &m[0])),
    );

    let mut out = Vec::with_capacity(MAX_SOLUTIONS);
    for z in poly::real_roots(&det) {
        let row = |p: &[Vec<f64>; 3]| Vector3::new(poly::eval(&p[0], z), poly::eval(&p[1], z), poly::eval(&p[2], z));
        let (r0, r1, r2) = (row(&k), row(&l), row(&m));
        let v = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)]
            .into_iter()
            .max_by(|a, b| a.norm_squared().partial_cmp(&b.norm_squared()).unwrap())
            .unwrap();
        if !(v.z.abs() > 1e-300) {
            continue;
        }
        let (x, y) = (v.x / v.z, v.y / v.z);
        let mut em = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                let i = 3 * r + c;
                em[(r, c)] = x * bx[i] + y * by[i] + z * bz[i] + bw[i];
            }
        }
        if em.iter().all(|v| v.is_finite()) {
            out.push(EssentialMatrix(em).normalized());
        }
        if out.len() == MAX_SOLUTIONS {
            break;
        }
    }
    Ok(out)
}

/// `det(E)` followed by the nine entries of `2EEᵀE − tr(EEᵀ)E`.
fn essential_constraints(e: &[[Cubic3; 3]; 3]) -> [Cubic3; 10] {
    let mut out = [Cubic3::ZERO; 10];
    let minor = |r1: usize, r2: usize, c1: usize, c2: usize| {
        e[r1][c1].mul(&e[r2][c2]).add(&e[r1][c2].mul(&e[r2][c1]).scale(-1.0))
    };
    out[0] = e[0][0]
        .mul(&minor(1, 2, 1, 2))
        .add(&e[0][1].mul(&minor(1, 2, 0, 2)).scale(-1.0))
        .add(&e[0][2].mul(&minor(1, 2, 0, 1)));

    let mut eet = [[Cubic3::ZERO; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let mut acc = Cubic3::ZERO;
            for k in 0..3 {
                acc = acc.add(&e[i][k].mul(&e[j][k]));
            }
            eet[i][j] = acc;
            eet[j][i] = acc;
        }
    }
    let trace = eet[0][0].add(&eet[1][1]).add(&eet[2][2]);
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = Cubic3::ZERO;
            for k in 0..3 {
                acc = acc.add(&eet[i][k].mul(&e[k][j]));
            }
            out[1 + 3 * i + j] = acc.scale(2.0).add(&trace.mul(&e[i][j]).scale(-1.0));
        }
    }
    out
}
