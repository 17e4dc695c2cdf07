//! Synthetic experiment drivers: barycentric sweep, noise, outliers, timing.
//!
//! Instances are derived from `(seed, index)` only, so every solver sees the
//! same data and the outputs (timings aside) are reproducible.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::geometry::{essential_from_pose, symmetric_epipolar_error, triplet_pose_error, PoseErrors, TripletHypothesis};
use crate::par::{map_indexed, Execution};
use crate::ransac::{run_ransac_traced, threshold_from_px, RansacConfig, RansacError, DEFAULT_THRESHOLD_PX};
use crate::synth::{
    derive_seed, generate_scene, ground_truth, make_triplet_instance, rng_for, sample_viewable, Instance, InstanceConfig,
    Scene, SceneConfig, SynthError, NOMINAL_FOCAL_PX,
};
use crate::triplet_solver::TripletSolver;
use crate::virtual_corr::{barycentric_grid, barycentric_point, mean_point, Barycentric, Triangle2D};

/// Pose error assigned when a solver returns no hypothesis.
pub const FAILURE_ERROR_DEG: f64 = 180.0;
/// Focal length range (pixels) of the unknown-focal instances.
pub const FOCAL_RANGE_PX: (f64, f64) = (600.0, 1400.0);
/// Noise used in the outlier experiment.
pub const OUTLIER_NOISE_PX: f64 = 1.0;

const STREAM_SCENE: u64 = 0x5ce7e;
const STREAM_INSTANCE: u64 = 0x1a57;
const STREAM_RANSAC: u64 = 0x7a2c;

fn scene_for(seed: u64) -> Result<Scene, SynthError> {
    generate_scene(&SceneConfig { seed: derive_seed(seed, STREAM_SCENE), ..Default::default() })
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub bc: Barycentric,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    /// Mean of the Gaussian fitted to the error surface, `(a, b)`.
    pub gaussian_mean: Option<(f64, f64)>,
    pub argmin: Barycentric,
}

/// Mean symmetric epipolar error of `(m¹, p(a, b))` over random two-view
/// scenes, where `m¹` is the view-1 mean point and `p` moves over the view-2
/// triangle.
pub fn barycentric_sweep(n_scenes: usize, grid_n: usize, seed: u64, exec: Execution) -> Result<SweepResult, SynthError> {
    if n_scenes == 0 || grid_n < 2 {
        return Err(SynthError::Config("need at least one scene and grid_n ≥ 2".into()));
    }
    let scene = scene_for(seed)?;
    let grid = barycentric_grid(grid_n);
    let per_scene = map_indexed(exec, n_scenes, |i| -> Result<Vec<f64>, SynthError> {
        let mut rng = rng_for(seed, i as u64);
        let (cams, ids) = sample_viewable(&scene, 3, &mut rng)?;
        let gt = ground_truth(&cams);
        let e = essential_from_pose(&gt.pose12);
        let proj = |c: usize| -> Triangle2D {
            let v = [0, 1, 2].map(|k| {
                let y = cams[c].to_camera(&scene.points[ids[k]]);
                crate::geometry::ImagePoint::new(y.x / y.z, y.y / y.z)
            });
            Triangle2D::new(v[0], v[1], v[2])
        };
        let (t1, t2) = (proj(0), proj(1));
        let m1 = mean_point(&t1);
        Ok(grid.iter().map(|bc| symmetric_epipolar_error(&e, &m1, &barycentric_point(&t2, bc))).collect())
    });
    let mut sums = vec![0.0; grid.len()];
    for r in per_scene {
        for (s, v) in sums.iter_mut().zip(r?) {
            *s += v;
        }
    }
    let cells: Vec<SweepCell> =
        grid.iter().zip(&sums).map(|(bc, s)| SweepCell { bc: *bc, mean_error: s / n_scenes as f64 }).collect();
    let argmin = cells.iter().min_by(|x, y| x.mean_error.total_cmp(&y.mean_error)).unwrap().bc;
    Ok(SweepResult { gaussian_mean: fit_gaussian_mean(&cells), cells, argmin })
}

/// Fits `exp(−err)` with a 2D Gaussian by least squares in the log domain,
/// i.e. `err ≈ quadratic(a, b)`, and returns its center. `None` when the fit
/// is not a proper (convex) bowl.
pub fn fit_gaussian_mean(cells: &[SweepCell]) -> Option<(f64, f64)> {
    if cells.len() < 6 {
        return None;
    }
    let a = DMatrix::from_fn(cells.len(), 6, |r, c| {
        let (x, y) = (cells[r].bc.a, cells[r].bc.b);
        [1.0, x, y, x * x, x * y, y * y][c]
    });
    let rhs = DVector::from_iterator(cells.len(), cells.iter().map(|c| c.mean_error));
    let q = a.svd(true, true).solve(&rhs, 1e-12).ok()?;
    // gradient zero: [2q3 q4; q4 2q5]·(x, y) = −(q1, q2)
    let (h11, h12, h22) = (2.0 * q[3], q[4], 2.0 * q[5]);
    let det = h11 * h22 - h12 * h12;
    if !(det > 0.0 && h11 > 0.0) {
        return None;
    }
    let x = (-q[1] * h22 + q[2] * h12) / det;
    let y = (-q[2] * h11 + q[1] * h12) / det;
    Some((x, y))
}

// ---------------------------------------------------------------- noise

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub experiment: &'static str,
    pub solver: String,
    pub seed: u64,
    pub instance: usize,
    pub noise_sigma_px: f64,
    pub inlier_ratio: f64,
    pub iterations: usize,
    pub errors: PoseErrors,
    pub pose_error_deg: f64,
    pub focal_error_rel: Option<f64>,
    pub n_hypotheses: usize,
    pub inlier_fraction: Option<f64>,
    pub solver_time_us: f64,
    pub ransac_time_ms: f64,
}

fn failure_errors() -> PoseErrors {
    PoseErrors { rot12: FAILURE_ERROR_DEG, rot13: FAILURE_ERROR_DEG, t12: FAILURE_ERROR_DEG, t13: FAILURE_ERROR_DEG }
}

fn focal_error(h: &TripletHypothesis, gt: &TripletHypothesis) -> Option<f64> {
    Some((h.focal? / gt.focal? - 1.0).abs())
}

/// Instance `index` of a benchmark; focal solvers get an unknown focal drawn
/// from [`FOCAL_RANGE_PX`].
pub fn benchmark_instance(
    scene: &Scene,
    seed: u64,
    index: usize,
    focal: bool,
    n: usize,
    sigma_px: f64,
    inlier_ratio: f64,
) -> Result<Instance, SynthError> {
    let mut rng = rng_for(derive_seed(seed, STREAM_INSTANCE), index as u64);
    let focal_px = rng.random_range(FOCAL_RANGE_PX.0..FOCAL_RANGE_PX.1);
    let cfg = InstanceConfig {
        noise_sigma_px: sigma_px,
        inlier_ratio,
        n_correspondences: Some(n),
        focal_px: focal.then_some(focal_px),
        ..Default::default()
    };
    make_triplet_instance(scene, &cfg, &mut rng)
}

/// Runs each bare solver once per instance and keeps the hypothesis closest
/// to the ground truth. Records are ordered by solver, sigma, instance.
pub fn noise_benchmark(
    solvers: &[TripletSolver],
    sigmas: &[f64],
    n_instances: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<ExperimentRecord>, SynthError> {
    let scene = scene_for(seed)?;
    let mut out = Vec::with_capacity(solvers.len() * sigmas.len() * n_instances);
    for solver in solvers {
        for &sigma in sigmas {
            // the six-track instance is shared by all solvers of a family
            let rows = map_indexed(exec, n_instances, |i| -> Result<ExperimentRecord, SynthError> {
                let inst = benchmark_instance(&scene, seed, i, solver.kind().is_focal(), 6, sigma, 1.0)?;
                let s = solver.clone().with_ground_truth(inst.gt);
                let start = Instant::now();
                let hyps = s.solve(&inst.tracks).unwrap_or_default();
                let elapsed = start.elapsed();
                let best = hyps.iter().min_by(|a, b| triplet_pose_error(a, &inst.gt).total_cmp(&triplet_pose_error(b, &inst.gt)));
                let (errors, focal_error_rel) = match best {
                    Some(h) => (PoseErrors::between(h, &inst.gt), focal_error(h, &inst.gt)),
                    None => (failure_errors(), inst.gt.focal.map(|_| 1.0)),
                };
                Ok(ExperimentRecord {
                    experiment: "noise",
                    solver: solver.kind().to_string(),
                    seed,
                    instance: i,
                    noise_sigma_px: sigma,
                    inlier_ratio: 1.0,
                    iterations: 0,
                    pose_error_deg: errors.pose_error(),
                    errors,
                    focal_error_rel,
                    n_hypotheses: hyps.len(),
                    inlier_fraction: None,
                    solver_time_us: elapsed.as_secs_f64() * 1e6,
                    ransac_time_ms: 0.0,
                })
            });
            for r in rows {
                out.push(r?);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- outliers

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierRow {
    pub solver: String,
    pub inlier_ratio: f64,
    pub iterations: usize,
    pub mean_pose_error_deg: f64,
    pub mean_inlier_fraction: f64,
    pub n_triplets: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierConfig {
    pub inlier_ratios: Vec<f64>,
    pub checkpoints: Vec<usize>,
    pub n_triplets: usize,
    pub n_correspondences: usize,
    pub threshold_px: f64,
    pub noise_sigma_px: f64,
    pub seed: u64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            inlier_ratios: vec![0.1, 0.4, 1.0],
            checkpoints: vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000],
            n_triplets: 200,
            n_correspondences: 500,
            threshold_px: DEFAULT_THRESHOLD_PX,
            noise_sigma_px: OUTLIER_NOISE_PX,
            seed: 0,
        }
    }
}

/// Best-so-far pose error and inlier fraction at each checkpoint, averaged
/// over triplets. Rows are ordered by solver, ratio, checkpoint.
pub fn outlier_benchmark(solvers: &[TripletSolver], cfg: &OutlierConfig, exec: Execution) -> Result<Vec<OutlierRow>, RansacError> {
    let scene = scene_for(cfg.seed).map_err(|e| RansacError::Config(e.to_string()))?;
    let max_iter = cfg.checkpoints.iter().copied().max().unwrap_or(1).max(1);
    let mut marks = cfg.checkpoints.clone();
    marks.sort_unstable();
    marks.dedup();
    let mut out = Vec::new();
    for solver in solvers {
        for (ri, &ratio) in cfg.inlier_ratios.iter().enumerate() {
            let iseed = derive_seed(cfg.seed, ri as u64);
            let per = map_indexed(exec, cfg.n_triplets, |i| -> Result<Vec<(f64, f64)>, RansacError> {
                let inst = benchmark_instance(
                    &scene,
                    iseed,
                    i,
                    solver.kind().is_focal(),
                    cfg.n_correspondences,
                    cfg.noise_sigma_px,
                    ratio,
                )
                .map_err(|e| RansacError::Config(e.to_string()))?;
                let rcfg = RansacConfig {
                    max_iterations: max_iter,
                    inlier_threshold: threshold_from_px(cfg.threshold_px, NOMINAL_FOCAL_PX),
                    seed: derive_seed(derive_seed(iseed, STREAM_RANSAC), i as u64),
                    refit: false,
                    execution: Execution::Sequential,
                };
                let s = solver.clone().with_ground_truth(inst.gt);
                let trace = match run_ransac_traced(&inst.tracks, &s, &rcfg, &marks) {
                    Ok((_, t)) => t,
                    Err(RansacError::EstimationFailed(_)) => Vec::new(),
                    Err(e) => return Err(e),
                };
                let n = inst.tracks.len() as f64;
                Ok(marks
                    .iter()
                    .map(|&m| match trace.iter().find(|c| c.iterations == m).and_then(|c| c.best.map(|b| (b, c.score))) {
                        Some((b, score)) => (triplet_pose_error(&b, &inst.gt), score as f64 / n),
                        None => (FAILURE_ERROR_DEG, 0.0),
                    })
                    .collect())
            });
            let per: Vec<Vec<(f64, f64)>> = per.into_iter().collect::<Result<_, _>>()?;
            for (k, &m) in marks.iter().enumerate() {
                let n = per.len().max(1) as f64;
                out.push(OutlierRow {
                    solver: solver.kind().to_string(),
                    inlier_ratio: ratio,
                    iterations: m,
                    mean_pose_error_deg: per.iter().map(|v| v[k].0).sum::<f64>() / n,
                    mean_inlier_fraction: per.iter().map(|v| v[k].1).sum::<f64>() / n,
                    n_triplets: per.len(),
                });
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- timing

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub solver: String,
    pub n_trials: usize,
    pub mean_us: f64,
    pub median_us: f64,
}

/// Per-call wall time. Solvers are interleaved per trial so that drift
/// affects them equally; always sequential.
pub fn timing_benchmark(solvers: &[TripletSolver], n_trials: usize, seed: u64) -> Result<Vec<TimingRow>, SynthError> {
    let scene = scene_for(seed)?;
    let instances: Vec<[Instance; 2]> = (0..n_trials)
        .map(|i| Ok([benchmark_instance(&scene, seed, i, false, 6, 0.0, 1.0)?, benchmark_instance(&scene, seed, i, true, 6, 0.0, 1.0)?]))
        .collect::<Result<_, SynthError>>()?;
    let prepared: Vec<Vec<TripletSolver>> = instances
        .iter()
        .map(|pair| solvers.iter().map(|s| s.clone().with_ground_truth(pair[s.kind().is_focal() as usize].gt)).collect())
        .collect();
    // warm-up
    for (inst, ss) in instances.iter().zip(&prepared).take(n_trials.min(50)) {
        for s in ss {
            std::hint::black_box(s.solve(&inst[s.kind().is_focal() as usize].tracks).ok());
        }
    }
    let mut times = vec![Vec::with_capacity(n_trials); solvers.len()];
    for (inst, ss) in instances.iter().zip(&prepared) {
        for (k, s) in ss.iter().enumerate() {
            let tracks = &inst[s.kind().is_focal() as usize].tracks;
            let start = Instant::now();
            std::hint::black_box(s.solve(std::hint::black_box(tracks)).ok());
            times[k].push(start.elapsed().as_secs_f64() * 1e6);
        }
    }
    Ok(solvers
        .iter()
        .zip(times)
        .map(|(s, mut t)| {
            let mean = t.iter().sum::<f64>() / t.len().max(1) as f64;
            t.sort_by(f64::total_cmp);
            let median = if t.is_empty() { 0.0 } else { t[t.len() / 2] };
            TimingRow { solver: s.kind().to_string(), n_trials, mean_us: mean, median_us: median }
        })
        .collect())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triplet_solver::{SolverKind, VirtualKind};

    #[test]
    fn gaussian_fit_recovers_a_known_bowl() {
        let cells: Vec<SweepCell> = barycentric_grid(11)
            .into_iter()
            .map(|bc| SweepCell { bc, mean_error: 2.0 * (bc.a - 0.3).powi(2) + (bc.b - 0.35).powi(2) + 0.5 * (bc.a - 0.3) * (bc.b - 0.35) })
            .collect();
        let (x, y) = fit_gaussian_mean(&cells).unwrap();
        assert!((x - 0.3).abs() < 1e-9 && (y - 0.35).abs() < 1e-9);
        let flat: Vec<SweepCell> = cells.iter().map(|c| SweepCell { mean_error: -c.mean_error, ..*c }).collect();
        assert!(fit_gaussian_mean(&flat).is_none());
    }

    #[test]
    fn small_sweep_shape_and_determinism() {
        let a = barycentric_sweep(50, 2, 1, Execution::Parallel).unwrap();
        assert_eq!(a.cells.len(), 3);
        let b = barycentric_sweep(50, 7, 1, Execution::Parallel).unwrap();
        assert_eq!(b, barycentric_sweep(50, 7, 1, Execution::Sequential).unwrap());
        assert_eq!(b.cells.len(), 28);
    }

    #[test]
    fn noise_records_are_deterministic_and_exact_at_zero_noise() {
        let solvers = [
            TripletSolver::new(SolverKind::FivePointP3P, None).unwrap(),
            TripletSolver::new(SolverKind::FourPointFocal(VirtualKind::Oracle), None).unwrap(),
        ];
        let strip = |mut v: Vec<ExperimentRecord>| {
            v.iter_mut().for_each(|r| r.solver_time_us = 0.0);
            v
        };
        let a = strip(noise_benchmark(&solvers, &[0.0], 20, 3, Execution::Parallel).unwrap());
        let b = strip(noise_benchmark(&solvers, &[0.0], 20, 3, Execution::Sequential).unwrap());
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.pose_error_deg < 1e-5));
        assert!(a[20..].iter().all(|r| r.focal_error_rel.unwrap() < 1e-6));
    }

    #[test]
    fn outlier_rows_are_monotone() {
        let solvers = [TripletSolver::new(SolverKind::FourPoint(VirtualKind::Mean), None).unwrap()];
        let cfg = OutlierConfig { inlier_ratios: vec![1.0, 0.5], checkpoints: vec![1, 5, 10], n_triplets: 4, n_correspondences: 60, ..Default::default() };
        let rows = outlier_benchmark(&solvers, &cfg, Execution::Parallel).unwrap();
        assert_eq!(rows.len(), 6);
        for w in rows.chunks(3) {
            assert!(w.windows(2).all(|p| p[1].mean_inlier_fraction >= p[0].mean_inlier_fraction));
        }
        assert_eq!(rows, outlier_benchmark(&solvers, &cfg, Execution::Sequential).unwrap());
    }

    #[test]
    fn timing_rows_cover_all_solvers() {
        let solvers = [
            TripletSolver::new(SolverKind::FivePointP3P, None).unwrap(),
            TripletSolver::new(SolverKind::SixPointP3P, None).unwrap(),
        ];
        let rows = timing_benchmark(&solvers, 5, 0).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.mean_us > 0.0 && r.n_trials == 5));
    }
}
