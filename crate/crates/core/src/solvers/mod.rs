//! Minimal and linear solvers.

mod eight_point;
mod five_point;
mod p3p;
mod six_point;

pub use eight_point::{solve_8pt, solve_8pt_linear};
pub use five_point::{solve_5pt, MAX_SOLUTIONS as MAX_5PT_SOLUTIONS};
pub use p3p::{solve_p3p, AbsolutePose};
pub use six_point::{solve_6pt, FocalEssential, MAX_SOLUTIONS as MAX_6PT_SOLUTIONS};

use nalgebra::SMatrix;
use thiserror::Error;

use crate::geometry::{lift, ImagePoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("degenerate sample: the constraints are rank deficient")]
    DegenerateSample,
    #[error("degenerate world points: collinear or coincident")]
    DegenerateWorldPoints,
    #[error("no real positive focal length")]
    NoRealFocal,
    #[error("not enough correspondences: need {needed}, got {got}")]
    NotEnoughPoints { needed: usize, got: usize },
}

/// Row of the linear epipolar system `x₂ᵀ E x₁ = 0` for row-major `E`.
pub(crate) fn epipolar_row(x1: &ImagePoint, x2: &ImagePoint) -> [f64; 9] {
    let a = lift(x1);
    let b = lift(x2);
    let mut row = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            row[3 * r + c] = b[r] * a[c];
        }
    }
    row
}

/// Basis of the `K`-dimensional right null space of `rows` (at most 9 rows).
///
/// Fails when the rows do not have full rank `9 − K`.
pub(crate) fn null_space<const K: usize>(rows: &[[f64; 9]]) -> Result<[[f64; 9]; K], SolverError> {
    let rank = 9 - K;
    debug_assert!(rows.len() >= rank && rows.len() <= 9);
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for (r, row) in rows.iter().enumerate() {
        for c in 0..9 {
            a[(r, c)] = row[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(SolverError::DegenerateSample)?;
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap_or(std::cmp::Ordering::Equal));
    if !(s[order[rank - 1]] > 1e-10 * s[order[0]]) {
        return Err(SolverError::DegenerateSample);
    }
    let mut out = [[0.0; 9]; K];
    for (k, &i) in order[rank..].iter().enumerate() {
        for c in 0..9 {
            out[k][c] = v_t[(i, c)];
        }
    }
    Ok(out)
}
