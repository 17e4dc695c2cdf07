//! Small polynomial toolkit for the minimal solvers.
//!
//! Univariate polynomials are coefficient slices in ascending order
//! (`p[k]` multiplies `z^k`). [`Cubic3`] is a dense polynomial of total degree
//! at most three in three unknowns, used to expand the essential-matrix
//! constraints.

use nalgebra::DMatrix;
use std::sync::OnceLock;

/// Roots whose imaginary part is at most this fraction of the real part are
/// accepted as real.
pub const IMAG_TOL: f64 = 1e-8;

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += y;
    }
    out
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = b.iter().map(|v| -v).collect();
    add(a, &neg)
}

/// Horner evaluation of `p` and `p'` at `z`.
pub fn eval_with_derivative(p: &[f64], z: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for &c in p.iter().rev() {
        d = d * z + v;
        v = v * z + c;
    }
    (v, d)
}

pub fn eval(p: &[f64], z: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, &c| acc * z + c)
}

/// Real roots via the eigenvalues of the companion matrix, each polished with
/// one Newton step. Output is sorted ascending.
pub fn real_roots(p: &[f64]) -> Vec<f64> {
    let scale = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return Vec::new();
    }
    // drop negligible leading terms
    let mut deg = p.len() - 1;
    while deg > 0 && p[deg].abs() <= 1e-14 * scale {
        deg -= 1;
    }
    if deg == 0 {
        return Vec::new();
    }
    // factor out exact roots at zero
    let mut low = 0;
    while low < deg && p[low] == 0.0 {
        low += 1;
    }
    let mut roots = Vec::with_capacity(deg);
    if low > 0 {
        roots.push(0.0);
    }
    let q = &p[low..=deg];
    let n = q.len() - 1;
    if n >= 1 {
        // balance by substituting z = s·u so |q0| and |qn| match
        let s = (q[0].abs() / q[n].abs()).powf(1.0 / n as f64);
        let s = if s.is_finite() && s > 0.0 { s } else { 1.0 };
        let mut c = vec![0.0; n + 1];
        let mut sk = 1.0;
        for k in 0..=n {
            c[k] = q[k] * sk;
            sk *= s;
        }
        let lead = c[n];
        let mut comp = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            comp[(0, k)] = -c[n - 1 - k] / lead;
        }
        for k in 1..n {
            comp[(k, k - 1)] = 1.0;
        }
        for ev in comp.complex_eigenvalues().iter() {
            if ev.im.abs() <= IMAG_TOL * ev.re.abs() {
                roots.push(ev.re * s);
            }
        }
    }
    let poly = &p[..=deg];
    for r in roots.iter_mut() {
        let (v, d) = eval_with_derivative(poly, *r);
        if d != 0.0 {
            let step = v / d;
            if step.is_finite() {
                *r -= step;
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots
}

/// Monomials `x^a y^b z^c` with `a + b + c ≤ 3`, in the elimination order used
/// by the five-point solver: the ten columns that get eliminated first, then
/// `xz², xz, x, yz², yz, y, z³, z², z, 1`.
pub const CUBIC_MONOMIALS: [[u8; 3]; 20] = [
    [3, 0, 0],
    [0, 3, 0],
    [2, 1, 0],
    [1, 2, 0],
    [2, 0, 1],
    [2, 0, 0],
    [0, 2, 1],
    [0, 2, 0],
    [1, 1, 1],
    [1, 1, 0],
    [1, 0, 2],
    [1, 0, 1],
    [1, 0, 0],
    [0, 1, 2],
    [0, 1, 1],
    [0, 1, 0],
    [0, 0, 3],
    [0, 0, 2],
    [0, 0, 1],
    [0, 0, 0],
];

fn monomial_index(e: [u8; 3]) -> Option<usize> {
    CUBIC_MONOMIALS.iter().position(|m| *m == e)
}

/// `PRODUCT[i][j]` is the index of monomial i × monomial j, if still cubic.
fn product_table() -> &'static [[Option<u8>; 20]; 20] {
    static TABLE: OnceLock<[[Option<u8>; 20]; 20]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[None; 20]; 20];
        for (i, a) in CUBIC_MONOMIALS.iter().enumerate() {
            for (j, b) in CUBIC_MONOMIALS.iter().enumerate() {
                let e = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
                if e.iter().map(|&v| v as u32).sum::<u32>() <= 3 {
                    t[i][j] = monomial_index(e).map(|k| k as u8);
                }
            }
        }
        t
    })
}

/// Dense polynomial of total degree ≤ 3 in `(x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cubic3(pub [f64; 20]);

impl Cubic3 {
    pub const ZERO: Self = Cubic3([0.0; 20]);

    /// `a·x + b·y + c·z + d`.
    pub fn linear(a: f64, b: f64, c: f64, d: f64) -> Self {
        let mut p = Self::ZERO;
        p.0[12] = a;
        p.0[15] = b;
        p.0[18] = c;
        p.0[19] = d;
        p
    }

    /// Product; the caller guarantees the result stays cubic.
    pub fn mul(&self, other: &Self) -> Self {
        let table = product_table();
        let mut out = Self::ZERO;
        for (i, &a) in self.0.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.0.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                match table[i][j] {
                    Some(k) => out.0[k as usize] += a * b,
                    None => debug_assert!(false, "cubic product overflow"),
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = *self;
        for (o, b) in out.0.iter_mut().zip(other.0.iter()) {
            *o += b;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        out.0.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn eval(&self, x: f64, y: f64, z: f64) -> f64 {
        CUBIC_MONOMIALS
            .iter()
            .zip(self.0.iter())
            .map(|(m, c)| c * x.powi(m[0] as i32) * y.powi(m[1] as i32) * z.powi(m[2] as i32))
            .sum()
    }
}
