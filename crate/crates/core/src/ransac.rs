//! Plain RANSAC over three-view tracks with an optional eight-point refit.
//!
//! Each iteration draws its sample from its own ChaCha8 stream, so the result
//! does not depend on how iterations are scheduled. Iterations run in chunks;
//! hypotheses that cannot reach the best score known at the start of their
//! chunk are abandoned early, which never changes the outcome.

use std::cmp::Ordering;

use nalgebra::{Matrix3, Vector3};
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{decompose_essential, essential_from_pose, sampson_error, EssentialMatrix, ImagePoint, TripletHypothesis};
use crate::par::{map_indexed, Execution};
use crate::pipelines::Track3;
use crate::solvers::{solve_8pt, solve_8pt_linear};
use crate::synth::{IMAGE_SIZE_PX, NOMINAL_FOCAL_PX};
use crate::triplet_solver::{SolverSetupError, TripletSolver};

/// Default inlier threshold in pixels.
pub const DEFAULT_THRESHOLD_PX: f64 = 3.0;
const CHUNK: usize = 32;
const REFIT_PASSES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// In residual units (calibrated coordinates).
    pub inlier_threshold: f64,
    pub seed: u64,
    pub refit: bool,
    pub execution: Execution,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            inlier_threshold: threshold_from_px(DEFAULT_THRESHOLD_PX, NOMINAL_FOCAL_PX),
            seed: 0,
            refit: false,
            execution: Execution::default(),
        }
    }
}

/// Converts a pixel threshold to calibrated units.
pub fn threshold_from_px(px: f64, focal_px: f64) -> f64 {
    px / focal_px
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RansacError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Setup(#[from] SolverSetupError),
    #[error("estimation failed: no hypothesis in {0} iterations")]
    EstimationFailed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub best: TripletHypothesis,
    pub inlier_mask: Vec<bool>,
    pub score: usize,
    /// Sum of the residuals of the inliers.
    pub residual_sum: f64,
    pub iterations_run: usize,
    /// Whether the returned model comes from the inlier refit.
    pub refit_applied: bool,
    pub wall_time: Duration,
}

/// Best-so-far state after a given number of iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iterations: usize,
    pub best: Option<TripletHypothesis>,
    pub score: usize,
}

/// Mean of the view 1–2 and view 1–3 Sampson errors.
///
/// When the hypothesis carries a focal length the points are divided by it
/// first and the error is scaled back to input units and then to nominal
/// calibrated units (see [`focal_residual_scale`]). Otherwise hypotheses with a
/// large focal would shrink every residual and win by default.
pub fn triplet_residual(h: &TripletHypothesis, track: &Track3) -> f64 {
    let (e12, e13) = (essential_from_pose(&h.pose12), essential_from_pose(&h.pose13));
    let t = calibrate(track, h.focal);
    0.5 * (sampson_error(&e12, &t[0], &t[1]) + sampson_error(&e13, &t[0], &t[2])) * focal_residual_scale(h.focal)
}

/// Input units of the focal family are pixels / [`IMAGE_SIZE_PX`]; residuals
/// are reported as pixels / [`NOMINAL_FOCAL_PX`] like the calibrated family.
pub fn focal_residual_scale(focal: Option<f64>) -> f64 {
    match focal {
        Some(f) => f * IMAGE_SIZE_PX / NOMINAL_FOCAL_PX,
        None => 1.0,
    }
}

fn calibrate(track: &Track3, focal: Option<f64>) -> Track3 {
    match focal {
        Some(f) => track.map(|p| ImagePoint::from(p.coords / f)),
        None => *track,
    }
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    hypothesis: TripletHypothesis,
    score: usize,
    residual_sum: f64,
    iteration: usize,
    order: usize,
}

/// Total order: higher score, then lower residual sum, then earlier draw.
fn better(a: &Scored, b: &Scored) -> bool {
    match a.score.cmp(&b.score) {
        Ordering::Greater => return true,
        Ordering::Less => return false,
        Ordering::Equal => {}
    }
    match a.residual_sum.total_cmp(&b.residual_sum) {
        Ordering::Less => return true,
        Ordering::Greater => return false,
        Ordering::Equal => {}
    }
    (a.iteration, a.order) < (b.iteration, b.order)
}

/// Scores hypotheses against the data, reusing view 1–2 terms across
/// hypotheses that share `pose12` and focal.
struct Scorer<'a> {
    data: &'a [Track3],
    threshold: f64,
    key: Option<(crate::geometry::RelativePose, Option<f64>)>,
    cache12: Vec<f64>,
}

impl<'a> Scorer<'a> {
    fn new(data: &'a [Track3], threshold: f64) -> Self {
        Self { data, threshold, key: None, cache12: vec![f64::NAN; data.len()] }
    }

    /// `(score, residual_sum)`, or `None` once the score is certain to stay
    /// below `bound`.
    fn score(&mut self, h: &TripletHypothesis, bound: usize) -> Option<(usize, f64)> {
        let key = (h.pose12, h.focal);
        if self.key != Some(key) {
            self.key = Some(key);
            self.cache12.fill(f64::NAN);
        }
        let e12 = essential_from_pose(&h.pose12);
        let e13 = essential_from_pose(&h.pose13);
        let scale = focal_residual_scale(h.focal);
        let n = self.data.len();
        let max_misses = n.saturating_sub(bound);
        let (mut score, mut misses, mut sum) = (0usize, 0usize, 0.0);
        for (i, track) in self.data.iter().enumerate() {
            let t = calibrate(track, h.focal);
            let mut s12 = self.cache12[i];
            if s12.is_nan() {
                s12 = sampson_error(&e12, &t[0], &t[1]);
                self.cache12[i] = s12;
            }
            let r = 0.5 * (s12 + sampson_error(&e13, &t[0], &t[2])) * scale;
            if r <= self.threshold {
                score += 1;
                sum += r;
            } else {
                misses += 1;
                if misses > max_misses {
                    return None;
                }
            }
        }
        Some((score, sum))
    }
}

fn validate(data: &[Track3], solver: &TripletSolver, cfg: &RansacConfig) -> Result<(), RansacError> {
    if cfg.max_iterations == 0 {
        return Err(RansacError::Config("max_iterations must be at least 1".into()));
    }
    if !(cfg.inlier_threshold > 0.0) || !cfg.inlier_threshold.is_finite() {
        return Err(RansacError::Config("inlier threshold must be positive".into()));
    }
    if data.len() < solver.sample_size() {
        return Err(RansacError::Config(format!(
            "{} needs at least {} correspondences, got {}",
            solver.kind(),
            solver.sample_size(),
            data.len()
        )));
    }
    solver.check_ready()?;
    Ok(())
}

/// The sample drawn at `iteration`.
pub fn draw_sample(seed: u64, iteration: usize, n: usize, k: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    index::sample(&mut rng, n, k).into_vec()
}

fn run_iteration(data: &[Track3], solver: &TripletSolver, cfg: &RansacConfig, iteration: usize, bound: usize) -> Option<Scored> {
    let ids = draw_sample(cfg.seed, iteration, data.len(), solver.sample_size());
    let sample: Vec<Track3> = ids.iter().map(|&i| data[i]).collect();
    let hyps = solver.solve(&sample).ok()?;
    let mut scorer = Scorer::new(data, cfg.inlier_threshold);
    let mut best: Option<Scored> = None;
    for (order, h) in hyps.into_iter().enumerate() {
        let b = best.map_or(bound, |s| s.score.max(bound));
        let Some((score, residual_sum)) = scorer.score(&h, b) else { continue };
        let cand = Scored { hypothesis: h, score, residual_sum, iteration, order };
        if best.as_ref().map_or(true, |b| better(&cand, b)) {
            best = Some(cand);
        }
    }
    best
}

/// Runs RANSAC and records the best-so-far state after each of `checkpoints`
/// iterations (values above `max_iterations` are clamped). Checkpoints are
/// taken before the refit.
pub fn run_ransac_traced(
    data: &[Track3],
    solver: &TripletSolver,
    cfg: &RansacConfig,
    checkpoints: &[usize],
) -> Result<(RansacResult, Vec<Checkpoint>), RansacError> {
    validate(data, solver, cfg)?;
    let start = Instant::now();
    let mut marks: Vec<usize> = checkpoints.iter().map(|&c| c.clamp(1, cfg.max_iterations)).collect();
    marks.sort_unstable();
    marks.dedup();
    let mut trace = Vec::with_capacity(marks.len());
    let mut next_mark = marks.iter().peekable();

    let mut best: Option<Scored> = None;
    let mut done = 0;
    while done < cfg.max_iterations {
        let len = CHUNK.min(cfg.max_iterations - done);
        let bound = best.map_or(0, |b| b.score);
        let results = map_indexed(cfg.execution, len, |j| run_iteration(data, solver, cfg, done + j, bound));
        for (j, r) in results.into_iter().enumerate() {
            if let Some(c) = r {
                if best.as_ref().map_or(true, |b| better(&c, b)) {
                    best = Some(c);
                }
            }
            let it = done + j + 1;
            while next_mark.peek().is_some_and(|&&m| m == it) {
                next_mark.next();
                trace.push(Checkpoint { iterations: it, best: best.map(|b| b.hypothesis), score: best.map_or(0, |b| b.score) });
            }
        }
        done += len;
    }

    let Some(mut best) = best else { return Err(RansacError::EstimationFailed(cfg.max_iterations)) };
    let mut refit_applied = false;
    if cfg.refit {
        for _ in 0..REFIT_PASSES {
            let mask = inlier_mask(data, &best.hypothesis, cfg.inlier_threshold);
            let Some(h) = refit(data, &mask, &best.hypothesis) else { break };
            let Some((score, residual_sum)) = Scorer::new(data, cfg.inlier_threshold).score(&h, 0) else { break };
            let cand = Scored { hypothesis: h, score, residual_sum, iteration: 0, order: 0 };
            if score > best.score || (score == best.score && residual_sum < best.residual_sum) {
                best = cand;
                refit_applied = true;
            } else {
                break;
            }
        }
    }
    let inlier_mask = inlier_mask(data, &best.hypothesis, cfg.inlier_threshold);
    debug_assert_eq!(inlier_mask.iter().filter(|m| **m).count(), best.score);
    let result = RansacResult {
        best: best.hypothesis,
        score: best.score,
        residual_sum: best.residual_sum,
        inlier_mask,
        iterations_run: cfg.max_iterations,
        refit_applied,
        wall_time: start.elapsed(),
    };
    Ok((result, trace))
}

pub fn run_ransac(data: &[Track3], solver: &TripletSolver, cfg: &RansacConfig) -> Result<RansacResult, RansacError> {
    run_ransac_traced(data, solver, cfg, &[]).map(|(r, _)| r)
}

pub fn inlier_mask(data: &[Track3], h: &TripletHypothesis, threshold: f64) -> Vec<bool> {
    data.iter().map(|t| triplet_residual(h, t) <= threshold).collect()
}

/// Re-estimates both essential matrices from the inliers with the normalized
/// eight-point method. For focal hypotheses the focal length is re-estimated
/// as well, as the value that makes `K·F·K` closest to essential for both
/// view pairs.
pub fn refit(data: &[Track3], mask: &[bool], h: &TripletHypothesis) -> Option<TripletHypothesis> {
    let inl: Vec<Track3> = data.iter().zip(mask).filter(|(_, m)| **m).map(|(t, _)| *t).collect();
    if inl.len() < 8 {
        return None;
    }
    let pairs = |v: usize, f: f64| -> Vec<(ImagePoint, ImagePoint)> {
        inl.iter().map(|t| (ImagePoint::from(t[0].coords / f), ImagePoint::from(t[v].coords / f))).collect()
    };
    let focal = match h.focal {
        None => None,
        Some(f0) => {
            let f12 = solve_8pt_linear(&pairs(1, 1.0)).ok()?;
            let f13 = solve_8pt_linear(&pairs(2, 1.0)).ok()?;
            Some(estimate_focal(&[f12, f13], f0))
        }
    };
    let f = focal.unwrap_or(1.0);
    let pose = |v: usize| {
        let p = pairs(v, f);
        let e: EssentialMatrix = solve_8pt(&p).ok()?;
        decompose_essential(&e, &p).ok()
    };
    Some(TripletHypothesis { pose12: pose(1)?, pose13: pose(2)?, focal })
}

/// Singular-value gap of `diag(f,f,1)·F·diag(f,f,1)`, zero for an essential matrix.
fn essential_gap(fm: &Matrix3<f64>, f: f64) -> f64 {
    let k = Matrix3::from_diagonal(&Vector3::new(f, f, 1.0));
    let s = (k * fm * k).singular_values();
    let mut s = [s[0], s[1], s[2]];
    s.sort_by(|a, b| b.total_cmp(a));
    if s[0] > 0.0 { (s[0] - s[1]) / s[0] } else { f64::INFINITY }
}

/// Focal within a factor of four of `initial` minimizing the summed gap.
fn estimate_focal(fms: &[Matrix3<f64>], initial: f64) -> f64 {
    let cost = |lf: f64| fms.iter().map(|m| essential_gap(m, lf.exp())).sum::<f64>();
    let span = 4f64.ln();
    let (lo, hi) = (initial.ln() - span, initial.ln() + span);
    const GRID: usize = 64;
    let step = (hi - lo) / GRID as f64;
    let best = (0..=GRID).map(|i| lo + step * i as f64).min_by(|a, b| cost(*a).total_cmp(&cost(*b))).unwrap();
    // golden-section polish within the neighbouring grid cells
    let (mut a, mut b) = (best - step, best + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..40 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        if cost(c) < cost(d) { b = d } else { a = c }
    }
    (0.5 * (a + b)).exp()
}
