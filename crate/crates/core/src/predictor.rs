//! Inference for the learned virtual-correspondence predictor.
//!
//! The network sees four correspondences across three views, each view
//! expressed in its own rigid frame, and predicts a shift of the view-2 mean
//! point. It is a shared per-row MLP with max-pool aggregation, so its output
//! does not depend on the row order.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SMatrix, Vector2};
use rand::Rng;
use thiserror::Error;

use crate::geometry::ImagePoint;
use crate::virtual_corr::{mean_point, Provenance, Triangle2D, VirtualCorrespondence};

pub const MAGIC: [u8; 4] = *b"TFPW";
pub const FORMAT_VERSION: u32 = 1;
const LEAKY_SLOPE: f64 = 0.01;

/// Fraction of the view-2 triangle extent covered by a unit network output.
pub const DEFAULT_SHIFT_RANGE: f64 = 0.5;

/// `(name, in, out)` of every dense layer, in evaluation order.
pub const ARCHITECTURE: [(&str, usize, usize); 9] = [
    ("a0", 6, 32),
    ("a1", 32, 32),
    ("a2", 32, 32),
    ("b0", 64, 64),
    ("b1", 64, 64),
    ("b2", 64, 64),
    ("h0", 64, 64),
    ("h1", 64, 32),
    ("h2", 32, 2),
];

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed weights file: {0}")]
    Format(String),
    #[error("layer {layer}: expected shape {expected:?}, found {found:?}")]
    Shape { layer: String, expected: (usize, usize), found: (usize, usize) },
    #[error("layer {0} is missing")]
    MissingLayer(String),
    #[error("layer {0} has non-finite entries")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(out, in)`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weight * x + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorWeights {
    pub layers: Vec<Dense>,
}

fn leaky(v: DVector<f64>) -> DVector<f64> {
    v.map(|x| if x >= 0.0 { x } else { LEAKY_SLOPE * x })
}

fn relu(v: DVector<f64>) -> DVector<f64> {
    v.map(|x| x.max(0.0))
}

fn max_pool(rows: &[DVector<f64>]) -> DVector<f64> {
    let mut out = rows[0].clone();
    for r in &rows[1..] {
        out.zip_apply(r, |a, b| *a = a.max(b));
    }
    out
}

impl PredictorWeights {
    pub fn zeros() -> Self {
        Self::from_fn(|_, _, _| 0.0)
    }

    /// Entries drawn uniformly from `±1/√fan_in`.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(ARCHITECTURE.len());
        for (_, fan_in, out) in ARCHITECTURE {
            let k = 1.0 / (fan_in as f64).sqrt();
            let weight = DMatrix::from_fn(out, fan_in, |_, _| rng.random_range(-k..k));
            let bias = DVector::from_fn(out, |_, _| rng.random_range(-k..k));
            layers.push(Dense { weight, bias });
        }
        Self { layers }
    }

    /// `f(layer, row, col)` fills the weights; biases use `col = fan_in`.
    pub fn from_fn(mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let layers = ARCHITECTURE
            .iter()
            .enumerate()
            .map(|(l, &(_, fan_in, out))| Dense {
                weight: DMatrix::from_fn(out, fan_in, |r, c| f(l, r, c)),
                bias: DVector::from_fn(out, |r, _| f(l, r, fan_in)),
            })
            .collect();
        Self { layers }
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        if self.layers.len() != ARCHITECTURE.len() {
            let name = ARCHITECTURE.get(self.layers.len()).map_or("extra", |a| a.0);
            return Err(PredictorError::MissingLayer(name.to_string()));
        }
        for (layer, &(name, fan_in, out)) in self.layers.iter().zip(ARCHITECTURE.iter()) {
            if layer.weight.shape() != (out, fan_in) {
                return Err(PredictorError::Shape {
                    layer: format!("{name}.weight"),
                    expected: (out, fan_in),
                    found: layer.weight.shape(),
                });
            }
            if layer.bias.len() != out {
                return Err(PredictorError::Shape {
                    layer: format!("{name}.bias"),
                    expected: (out, 1),
                    found: (layer.bias.len(), 1),
                });
            }
            if !layer.weight.iter().chain(layer.bias.iter()).all(|v| v.is_finite()) {
                return Err(PredictorError::NonFinite(name.to_string()));
            }
        }
        Ok(())
    }

    /// Network output for a normalized 4×6 input, in `(−1, 1)²`.
    pub fn forward(&self, input: &SMatrix<f64, 4, 6>) -> Vector2<f64> {
        let l = &self.layers;
        let block = |x: DVector<f64>, k: usize| relu(l[k + 2].apply(&leaky(l[k + 1].apply(&leaky(l[k].apply(&x))))));
        let a: Vec<DVector<f64>> = (0..4).map(|r| block(DVector::from_iterator(6, input.row(r).iter().copied()), 0)).collect();
        let pooled = max_pool(&a);
        let b: Vec<DVector<f64>> = a
            .iter()
            .map(|f| block(DVector::from_iterator(64, f.iter().chain(pooled.iter()).copied()), 3))
            .collect();
        let g = max_pool(&b);
        let h = l[8].apply(&leaky(l[7].apply(&leaky(l[6].apply(&g)))));
        Vector2::new(h[0].tanh(), h[1].tanh())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(2 * self.layers.len() as u32).to_le_bytes());
        for (i, layer) in self.layers.iter().enumerate() {
            let name = ARCHITECTURE.get(i).map_or_else(|| format!("extra{i}"), |a| a.0.to_string());
            let (r, c) = layer.weight.shape();
            write_tensor(&mut out, &format!("{name}.weight"), r, c, |i, j| layer.weight[(i, j)]);
            write_tensor(&mut out, &format!("{name}.bias"), layer.bias.len(), 1, |i, _| layer.bias[i]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PredictorError> {
        let mut cur = Cursor { data: bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(PredictorError::Format("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(PredictorError::Format(format!("unsupported version {version}")));
        }
        let count = cur.u32()? as usize;
        let mut tensors: Vec<(String, usize, usize, Vec<f64>)> = Vec::with_capacity(count);
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(len)?.to_vec()).map_err(|_| PredictorError::Format("tensor name is not UTF-8".into()))?;
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let n = rows.checked_mul(cols).ok_or_else(|| PredictorError::Format(format!("{name}: size overflow")))?;
            let raw = cur.take(n.checked_mul(8).ok_or_else(|| PredictorError::Format(format!("{name}: size overflow")))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((name, rows, cols, data));
        }
        if cur.pos != bytes.len() {
            return Err(PredictorError::Format(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }

        let mut layers = Vec::with_capacity(ARCHITECTURE.len());
        for &(name, fan_in, out) in ARCHITECTURE.iter() {
            let find = |suffix: &str| {
                let full = format!("{name}.{suffix}");
                tensors.iter().find(|t| t.0 == full).ok_or(PredictorError::MissingLayer(full))
            };
            let w = find("weight")?;
            if (w.1, w.2) != (out, fan_in) {
                return Err(PredictorError::Shape { layer: w.0.clone(), expected: (out, fan_in), found: (w.1, w.2) });
            }
            let b = find("bias")?;
            if (b.1, b.2) != (out, 1) {
                return Err(PredictorError::Shape { layer: b.0.clone(), expected: (out, 1), found: (b.1, b.2) });
            }
            layers.push(Dense {
                weight: DMatrix::from_row_slice(out, fan_in, &w.3),
                bias: DVector::from_column_slice(&b.3),
            });
        }
        let weights = Self { layers };
        weights.validate()?;
        Ok(weights)
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictorError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PredictorError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn write_tensor(out: &mut Vec<u8>, name: &str, rows: usize, cols: usize, at: impl Fn(usize, usize) -> f64) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for i in 0..rows {
        for j in 0..cols {
            out.extend_from_slice(&at(i, j).to_le_bytes());
        }
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PredictorError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| {
            PredictorError::Format(format!("truncated: needed {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PredictorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Rigid per-view frame: `q = R(angle)·(p − origin)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationFrame {
    pub origin: ImagePoint,
    pub angle: f64,
    /// Set when point 4 coincides with the origin and the rotation is undefined.
    pub degenerate: bool,
}

impl NormalizationFrame {
    pub fn identity() -> Self {
        Self { origin: ImagePoint::origin(), angle: 0.0, degenerate: false }
    }

    pub fn apply(&self, p: &ImagePoint) -> ImagePoint {
        ImagePoint::from(self.rotate(&(p - self.origin)))
    }

    pub fn invert(&self, q: &ImagePoint) -> ImagePoint {
        self.origin + self.unrotate(&q.coords)
    }

    pub fn rotate(&self, v: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.angle.sin_cos();
        Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    pub fn unrotate(&self, v: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.angle.sin_cos();
        Vector2::new(c * v.x + s * v.y, -s * v.x + c * v.y)
    }

    /// Frame with the given origin that places `p4` on the +y axis.
    pub fn towards(origin: ImagePoint, p4: &ImagePoint) -> Self {
        let v = p4 - origin;
        let scale = origin.coords.norm().max(p4.coords.norm()).max(1.0);
        if !(v.norm() > 1e-12 * scale) {
            return Self { origin, angle: 0.0, degenerate: true };
        }
        Self { origin, angle: std::f64::consts::FRAC_PI_2 - v.y.atan2(v.x), degenerate: false }
    }
}

/// Four correspondences across three views: `points[view][row]`.
pub type FourPointSample = [[ImagePoint; 4]; 3];

/// Normalized 4×6 network input and the per-view frames.
///
/// `view2_origin` overrides the view-2 frame origin, which is otherwise the
/// mean of rows 1–3 as in the other views.
pub fn normalize_instance(points: &FourPointSample, view2_origin: Option<ImagePoint>) -> (SMatrix<f64, 4, 6>, [NormalizationFrame; 3]) {
    let frames: [NormalizationFrame; 3] = std::array::from_fn(|v| {
        let origin = match (v, view2_origin) {
            (1, Some(o)) => o,
            _ => mean_point(&Triangle2D::new(points[v][0], points[v][1], points[v][2])),
        };
        NormalizationFrame::towards(origin, &points[v][3])
    });
    let mut m = SMatrix::<f64, 4, 6>::zeros();
    for (v, frame) in frames.iter().enumerate() {
        for r in 0..4 {
            let q = frame.apply(&points[v][r]);
            m[(r, 2 * v)] = q.x;
            m[(r, 2 * v + 1)] = q.y;
        }
    }
    (m, frames)
}

/// Learned virtual correspondence for rows 1–3 of `points`.
///
/// The view-2 point starts at `init` (the view-2 mean point when `None`) and
/// moves by the network output times `shift_range ×` the longest bbox side of
/// the view-2 triangle in the normalized frame.
pub fn predict_virtual_point(
    weights: &PredictorWeights,
    points: &FourPointSample,
    init: Option<ImagePoint>,
    shift_range: f64,
) -> VirtualCorrespondence {
    let (input, frames) = normalize_instance(points, init);
    let out = weights.forward(&input);
    let tri2 = Triangle2D::new(
        ImagePoint::new(input[(0, 2)], input[(0, 3)]),
        ImagePoint::new(input[(1, 2)], input[(1, 3)]),
        ImagePoint::new(input[(2, 2)], input[(2, 3)]),
    );
    let s = shift_range * tri2.longest_side();
    let p1 = mean_point(&Triangle2D::new(points[0][0], points[0][1], points[0][2]));
    let p2 = frames[1].origin + frames[1].unrotate(&(out * s));
    VirtualCorrespondence { p1, p2, provenance: Provenance::Learned }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(rng: &mut ChaCha8Rng) -> FourPointSample {
        std::array::from_fn(|_| std::array::from_fn(|_| ImagePoint::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))))
    }

    /// Straight-line reimplementation with plain arrays.
    fn oracle_forward(w: &PredictorWeights, input: &SMatrix<f64, 4, 6>) -> [f64; 2] {
        fn dense(w: &Dense, x: &[f64]) -> Vec<f64> {
            let mut y = vec![0.0; w.weight.nrows()];
            for (o, yo) in y.iter_mut().enumerate() {
                let mut acc = w.bias[o];
                for (i, xi) in x.iter().enumerate() {
                    acc += w.weight[(o, i)] * xi;
                }
                *yo = acc;
            }
            y
        }
        let lrelu = |v: Vec<f64>| v.into_iter().map(|x| if x < 0.0 { 0.01 * x } else { x }).collect::<Vec<_>>();
        let relu = |v: Vec<f64>| v.into_iter().map(|x| if x < 0.0 { 0.0 } else { x }).collect::<Vec<_>>();
        let l = &w.layers;
        let mut feats = Vec::new();
        for r in 0..4 {
            let x: Vec<f64> = (0..6).map(|c| input[(r, c)]).collect();
            feats.push(relu(dense(&l[2], &lrelu(dense(&l[1], &lrelu(dense(&l[0], &x)))))));
        }
        let mut pool = vec![f64::NEG_INFINITY; 32];
        for f in &feats {
            for k in 0..32 {
                pool[k] = pool[k].max(f[k]);
            }
        }
        let mut glob = vec![f64::NEG_INFINITY; 64];
        for f in &feats {
            let x: Vec<f64> = f.iter().chain(pool.iter()).copied().collect();
            let g = relu(dense(&l[5], &lrelu(dense(&l[4], &lrelu(dense(&l[3], &x))))));
            for k in 0..64 {
                glob[k] = glob[k].max(g[k]);
            }
        }
        let h = dense(&l[8], &lrelu(dense(&l[7], &lrelu(dense(&l[6], &glob)))));
        [h[0].tanh(), h[1].tanh()]
    }

    #[test]
    fn forward_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = PredictorWeights::random(&mut rng);
        for _ in 0..20 {
            let (input, _) = normalize_instance(&sample(&mut rng), None);
            let got = w.forward(&input);
            let want = oracle_forward(&w, &input);
            assert!((got.x - want[0]).abs() <= 1e-12 && (got.y - want[1]).abs() <= 1e-12);
            assert!(got.x.abs() < 1.0 && got.y.abs() < 1.0);
        }
    }

    #[test]
    fn zero_weights_give_mean_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = sample(&mut rng);
        let w = PredictorWeights::zeros();
        let (input, _) = normalize_instance(&s, None);
        assert_eq!(w.forward(&input), Vector2::zeros());
        let v = predict_virtual_point(&w, &s, None, DEFAULT_SHIFT_RANGE);
        let m2 = mean_point(&Triangle2D::new(s[1][0], s[1][1], s[1][2]));
        assert_eq!(v.p2, m2);
        assert_eq!(v.provenance, Provenance::Learned);
    }

    #[test]
    fn unit_output_moves_along_frame_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = sample(&mut rng);
        // only the x output's final bias is nonzero and saturates tanh
        let w = PredictorWeights::from_fn(|l, r, c| if l == 8 && r == 0 && c == 32 { 50.0 } else { 0.0 });
        let v = predict_virtual_point(&w, &s, None, 0.5);
        let (input, frames) = normalize_instance(&s, None);
        let tri2 = Triangle2D::new(
            ImagePoint::new(input[(0, 2)], input[(0, 3)]),
            ImagePoint::new(input[(1, 2)], input[(1, 3)]),
            ImagePoint::new(input[(2, 2)], input[(2, 3)]),
        );
        let expected = frames[1].invert(&ImagePoint::new(0.5 * tri2.longest_side(), 0.0));
        assert!((v.p2 - expected).norm() < 1e-12);
    }

    #[test]
    fn permutation_invariant_over_all_orders() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = PredictorWeights::random(&mut rng);
        let (input, _) = normalize_instance(&sample(&mut rng), None);
        let base = w.forward(&input);
        let mut perms = Vec::new();
        permutations(&mut [0, 1, 2, 3], 0, &mut perms);
        assert_eq!(perms.len(), 24);
        for p in perms {
            let permuted = SMatrix::<f64, 4, 6>::from_fn(|r, c| input[(p[r], c)]);
            let out = w.forward(&permuted);
            assert!((out - base).norm() <= 1e-12);
        }
    }

    fn permutations(a: &mut [usize; 4], k: usize, out: &mut Vec<[usize; 4]>) {
        if k == a.len() {
            out.push(*a);
            return;
        }
        for i in k..a.len() {
            a.swap(k, i);
            permutations(a, k + 1, out);
            a.swap(k, i);
        }
    }

    #[test]
    fn normalization_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let s = sample(&mut rng);
            let (input, frames) = normalize_instance(&s, None);
            for v in 0..3 {
                let mx = (input[(0, 2 * v)] + input[(1, 2 * v)] + input[(2, 2 * v)]) / 3.0;
                let my = (input[(0, 2 * v + 1)] + input[(1, 2 * v + 1)] + input[(2, 2 * v + 1)]) / 3.0;
                assert!(mx.abs() <= 1e-12 && my.abs() <= 1e-12);
                assert!(input[(3, 2 * v)].abs() <= 1e-12 && input[(3, 2 * v + 1)] > 0.0);
                for r in 0..4 {
                    let back = frames[v].invert(&ImagePoint::new(input[(r, 2 * v)], input[(r, 2 * v + 1)]));
                    assert!((back - s[v][r]).norm() <= 1e-12);
                }
            }
        }
        let mut canonical = [[ImagePoint::origin(); 4]; 3];
        for view in canonical.iter_mut() {
            *view = [ImagePoint::new(-1.0, 0.0), ImagePoint::new(1.0, 0.0), ImagePoint::new(0.0, 0.0), ImagePoint::new(0.0, 2.0)];
        }
        let (_, frames) = normalize_instance(&canonical, None);
        for f in frames {
            assert_eq!(f.origin, ImagePoint::origin());
            assert_eq!(f.angle, 0.0);
        }
        let mut degenerate = canonical;
        degenerate[2][3] = ImagePoint::origin();
        let (_, frames) = normalize_instance(&degenerate, None);
        assert!(frames[2].degenerate && frames[2].angle == 0.0);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let w = PredictorWeights::random(&mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        w.save(&path).unwrap();
        let back = PredictorWeights::load(&path).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_bytes(), w.to_bytes());

        let bytes = w.to_bytes();
        assert!(matches!(PredictorWeights::from_bytes(&bytes[..bytes.len() - 3]), Err(PredictorError::Format(_))));
        assert!(matches!(PredictorWeights::from_bytes(&bytes[..10]), Err(PredictorError::Format(_))));

        let mut wrong = w.clone();
        wrong.layers[4].weight = DMatrix::zeros(64, 63);
        match PredictorWeights::from_bytes(&wrong.to_bytes()) {
            Err(PredictorError::Shape { layer, .. }) => assert_eq!(layer, "b1.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
