//! `trifocal`: synthetic benchmarks and RANSAC solving for the four-point
//! three-view solvers.

mod corr_file;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use corr_file::CorrespondenceFile;
use trifocal_core::experiments::{
    barycentric_sweep, noise_benchmark, outlier_benchmark, timing_benchmark, OutlierConfig, OUTLIER_NOISE_PX,
};
use trifocal_core::geometry::{PoseErrors, RelativePose, TripletHypothesis};
use trifocal_core::par::Execution;
use trifocal_core::predictor::PredictorWeights;
use trifocal_core::ransac::{run_ransac, threshold_from_px, RansacConfig, RansacError, DEFAULT_THRESHOLD_PX};
use trifocal_core::synth::{
    generate_scene, make_triplet_instance, rng_for, InstanceConfig, SceneConfig, Variant, DEFAULT_VIEW_SPREAD_DEG,
    IMAGE_SIZE_PX, NOMINAL_FOCAL_PX,
};
use trifocal_core::triplet_solver::{SolverKind, TripletSolver};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "trifocal", version, about = "Three-view relative pose from four points")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mean epipolar error over barycentric positions in the view-2 triangle.
    SweepBarycentric {
        #[arg(long, default_value_t = 10_000)]
        n_scenes: usize,
        #[arg(long, default_value_t = 19)]
        grid_n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV output; the Gaussian fit is written next to it as `<out>.fit.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bare-solver pose errors for increasing image noise.
    BenchNoise {
        #[arg(long, value_delimiter = ',', default_value = "5pt+p3p,4p3v-m,4p3v-md,6pt+p3p,4p3vf-m,4p3vf-md")]
        solvers: Vec<String>,
        /// Noise levels in pixels.
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2,3,4")]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        n_instances: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Best-so-far RANSAC error at iteration checkpoints for several inlier ratios.
    BenchOutliers {
        #[arg(long, value_delimiter = ',', default_value = "5pt+p3p,4p3v-m,4p3v-md")]
        solvers: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.4,1")]
        inlier_ratios: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20,50,100,200,500,1000")]
        checkpoints: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        n_triplets: usize,
        #[arg(long, default_value_t = 500)]
        n_correspondences: usize,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD_PX)]
        threshold_px: f64,
        #[arg(long, default_value_t = OUTLIER_NOISE_PX)]
        noise_px: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Mean and median per-call solver time.
    BenchTiming {
        #[arg(long, value_delimiter = ',', default_value = "5pt+p3p,4p3v-m,4p3v-md,6pt+p3p,4p3vf-m,4p3vf-md")]
        solvers: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        n_trials: usize,
        #[command(flatten)]
        common: Common,
    },
    /// RANSAC on a correspondence file.
    Solve {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        solver: String,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD_PX)]
        threshold_px: f64,
        /// Re-estimate the model from its inliers (eight-point) after sampling.
        #[arg(long)]
        refit: bool,
        /// Ground-truth sidecar; required by oracle solvers, enables error reporting.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Writes a synthetic correspondence file and its ground-truth sidecar.
    Synth {
        #[arg(long, value_enum, default_value_t = VariantArg::Full4)]
        variant: VariantArg,
        /// Number of rows; defaults to the variant's sample size.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        noise_px: f64,
        #[arg(long, default_value_t = 1.0)]
        inlier_ratio: f64,
        /// Unknown focal length in pixels; writes an uncalibrated file.
        #[arg(long)]
        focal_px: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_VIEW_SPREAD_DEG)]
        view_spread_deg: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; the ground truth goes to `<out>.gt.json`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Predictor weights for the learned solvers.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// δ as a fraction of the longest triangle side (default 0.15 for mean, 0.1 for learned modes).
    #[arg(long)]
    delta_factor: Option<f64>,
    /// Leave timing fields empty so that outputs are byte-reproducible.
    #[arg(long)]
    omit_timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full4,
    Mixed5,
    Mixed6,
    Twoview4,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full4 => Variant::Full4,
            VariantArg::Mixed5 => Variant::Mixed5,
            VariantArg::Mixed6 => Variant::Mixed6,
            VariantArg::Twoview4 => Variant::TwoView4,
        }
    }
}

/// Error with its exit code: 2 for configuration, 3 for failed estimation.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure { code: 2, error: e.into() }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match run(cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command, exec: Execution) -> CmdResult {
    match cmd {
        Command::SweepBarycentric { n_scenes, grid_n, seed, out } => cmd_sweep(n_scenes, grid_n, seed, out, exec),
        Command::BenchNoise { solvers, sigmas, n_instances, common } => cmd_noise(&solvers, &sigmas, n_instances, &common, exec),
        Command::BenchOutliers { solvers, inlier_ratios, checkpoints, n_triplets, n_correspondences, threshold_px, noise_px, common } => {
            let cfg = OutlierConfig {
                inlier_ratios,
                checkpoints,
                n_triplets,
                n_correspondences,
                threshold_px,
                noise_sigma_px: noise_px,
                seed: common.seed,
            };
            cmd_outliers(&solvers, cfg, &common, exec)
        }
        Command::BenchTiming { solvers, n_trials, common } => cmd_timing(&solvers, n_trials, &common),
        Command::Solve { input, solver, iters, threshold_px, refit, gt, common } => {
            cmd_solve(&input, &solver, iters, threshold_px, refit, gt.as_deref(), &common, exec)
        }
        Command::Synth { variant, n, noise_px, inlier_ratio, focal_px, view_spread_deg, seed, out } => {
            cmd_synth(variant.into(), n, noise_px, inlier_ratio, focal_px, view_spread_deg, seed, &out)
        }
    }
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => std::io::stdout().write_all(bytes).context("writing to stdout"),
    }
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn build_solvers(names: &[String], common: &Common) -> std::result::Result<Vec<TripletSolver>, Failure> {
    let weights = match &common.weights {
        Some(p) => Some(Arc::new(PredictorWeights::load(p).with_context(|| format!("loading weights {}", p.display())).map_err(config)?)),
        None => None,
    };
    if let Some(d) = common.delta_factor {
        if !(d > 0.0 && d.is_finite()) {
            return Err(config(anyhow!("--delta-factor must be positive")));
        }
    }
    names
        .iter()
        .map(|n| {
            let kind: SolverKind = n.parse().map_err(config)?;
            let s = TripletSolver::new(kind, weights.clone()).map_err(config)?;
            Ok(match common.delta_factor {
                Some(d) => s.with_options(|o| o.delta_factor = d),
                None => s,
            })
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow!("{e}"))?)
}

fn cmd_sweep(n_scenes: usize, grid_n: usize, seed: u64, out: Option<PathBuf>, exec: Execution) -> CmdResult {
    let r = barycentric_sweep(n_scenes, grid_n, seed, exec).map_err(config)?;
    let rows = r.cells.iter().map(|c| {
        vec![SCHEMA_VERSION.to_string(), c.bc.a.to_string(), c.bc.b.to_string(), c.bc.c.to_string(), c.mean_error.to_string()]
    });
    let bytes = csv_bytes(&["schema_version", "a", "b", "c", "mean_symmetric_epipolar_error"], rows).map_err(config)?;
    write_output(out.as_deref(), &bytes).map_err(config)?;
    let fit = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "n_scenes": n_scenes,
        "grid_n": grid_n,
        "seed": seed,
        "argmin": [r.argmin.a, r.argmin.b],
        "gaussian_mean": r.gaussian_mean.map(|(a, b)| [a, b]),
    });
    let text = serde_json::to_string_pretty(&fit).map_err(config)? + "\n";
    match out {
        Some(p) => std::fs::write(sidecar(&p, ".fit.json"), text).map_err(config)?,
        None => eprint!("{text}"),
    }
    Ok(())
}

fn cmd_noise(names: &[String], sigmas: &[f64], n: usize, common: &Common, exec: Execution) -> CmdResult {
    if sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(config(anyhow!("noise levels must be non-negative")));
    }
    let solvers = build_solvers(names, common)?;
    let recs = noise_benchmark(&solvers, sigmas, n, common.seed, exec).map_err(config)?;
    let header = [
        "schema_version", "experiment", "solver", "seed", "instance", "noise_sigma_px", "inlier_ratio", "iterations",
        "pose_error_deg", "rot12_deg", "rot13_deg", "t12_deg", "t13_deg", "focal_error_rel", "n_hypotheses",
        "solver_time_us", "ransac_time_ms",
    ];
    let rows = recs.iter().map(|r| {
        vec![
            SCHEMA_VERSION.to_string(),
            r.experiment.to_string(),
            r.solver.clone(),
            r.seed.to_string(),
            r.instance.to_string(),
            r.noise_sigma_px.to_string(),
            r.inlier_ratio.to_string(),
            r.iterations.to_string(),
            r.pose_error_deg.to_string(),
            r.errors.rot12.to_string(),
            r.errors.rot13.to_string(),
            r.errors.t12.to_string(),
            r.errors.t13.to_string(),
            fmt_opt(r.focal_error_rel),
            r.n_hypotheses.to_string(),
            if common.omit_timing { String::new() } else { r.solver_time_us.to_string() },
            String::new(),
        ]
    });
    let bytes = csv_bytes(&header, rows).map_err(config)?;
    write_output(common.out.as_deref(), &bytes).map_err(config)
}

fn cmd_outliers(names: &[String], cfg: OutlierConfig, common: &Common, exec: Execution) -> CmdResult {
    if cfg.inlier_ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
        return Err(config(anyhow!("inlier ratios must be in (0, 1]")));
    }
    if cfg.checkpoints.is_empty() || cfg.checkpoints.contains(&0) {
        return Err(config(anyhow!("checkpoints must be positive")));
    }
    if !(cfg.threshold_px > 0.0) {
        return Err(config(anyhow!("--threshold-px must be positive")));
    }
    let solvers = build_solvers(names, common)?;
    if let Some(s) = solvers.iter().find(|s| s.sample_size() > cfg.n_correspondences) {
        return Err(config(anyhow!("{} needs at least {} correspondences", s.kind(), s.sample_size())));
    }
    let rows = outlier_benchmark(&solvers, &cfg, exec).map_err(config)?;
    let header = ["schema_version", "solver", "seed", "inlier_ratio", "iterations", "mean_pose_error_deg", "mean_inlier_fraction", "n_triplets"];
    let rows = rows.iter().map(|r| {
        vec![
            SCHEMA_VERSION.to_string(),
            r.solver.clone(),
            cfg.seed.to_string(),
            r.inlier_ratio.to_string(),
            r.iterations.to_string(),
            r.mean_pose_error_deg.to_string(),
            r.mean_inlier_fraction.to_string(),
            r.n_triplets.to_string(),
        ]
    });
    let bytes = csv_bytes(&header, rows).map_err(config)?;
    write_output(common.out.as_deref(), &bytes).map_err(config)
}

fn cmd_timing(names: &[String], n_trials: usize, common: &Common) -> CmdResult {
    if n_trials == 0 {
        return Err(config(anyhow!("--n-trials must be positive")));
    }
    let solvers = build_solvers(names, common)?;
    let rows = timing_benchmark(&solvers, n_trials, common.seed).map_err(config)?;
    let rows = rows.iter().map(|r| {
        let t = |v: f64| if common.omit_timing { String::new() } else { v.to_string() };
        vec![SCHEMA_VERSION.to_string(), r.solver.clone(), common.seed.to_string(), r.n_trials.to_string(), t(r.mean_us), t(r.median_us)]
    });
    let bytes = csv_bytes(&["schema_version", "solver", "seed", "n_trials", "mean_us", "median_us"], rows).map_err(config)?;
    write_output(common.out.as_deref(), &bytes).map_err(config)
}

// ---------------------------------------------------------------- poses

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct PoseJson {
    /// Unit quaternion `(w, x, y, z)` with `w ≥ 0`.
    quaternion_wxyz: [f64; 4],
    /// Unit translation.
    translation: [f64; 3],
}

impl PoseJson {
    fn from_pose(p: &RelativePose) -> Self {
        let q = UnitQuaternion::from_rotation_matrix(&p.rotation);
        let c = q.into_inner().coords; // (x, y, z, w)
        let s = if c.w < 0.0 { -1.0 } else { 1.0 };
        let t = p.t();
        Self { quaternion_wxyz: [s * c.w, s * c.x, s * c.y, s * c.z], translation: [t.x, t.y, t.z] }
    }

    fn to_pose(&self) -> Result<RelativePose> {
        let [w, x, y, z] = self.quaternion_wxyz;
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        let r: Rotation3<f64> = q.to_rotation_matrix();
        RelativePose::new(r, nalgebra::Vector3::from(self.translation)).map_err(|e| anyhow!("{e}"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct GroundTruthJson {
    schema_version: u32,
    pose12: PoseJson,
    pose13: PoseJson,
    /// Focal length in pixels for uncalibrated files.
    focal_px: Option<f64>,
    inlier_mask: Vec<bool>,
}

impl GroundTruthJson {
    fn hypothesis(&self) -> Result<TripletHypothesis> {
        Ok(TripletHypothesis {
            pose12: self.pose12.to_pose()?,
            pose13: self.pose13.to_pose()?,
            focal: self.focal_px.map(|f| f / IMAGE_SIZE_PX),
        })
    }
}

#[derive(Debug, Serialize)]
struct GtErrorsJson {
    pose_error_deg: f64,
    rot12_deg: f64,
    rot13_deg: f64,
    t12_deg: f64,
    t13_deg: f64,
    focal_error_rel: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SolveJson {
    schema_version: u32,
    solver: String,
    /// "ransac", or "ransac+refit" when the refit produced the model.
    estimator: &'static str,
    seed: u64,
    iterations: usize,
    threshold_px: f64,
    n_rows: usize,
    n_tracks: usize,
    score: usize,
    /// Per input row; rows not visible in all views are `false`.
    inlier_mask: Vec<bool>,
    pose12: PoseJson,
    pose13: PoseJson,
    focal_px: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gt_errors: Option<GtErrorsJson>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_solve(
    input: &Path,
    solver_name: &str,
    iters: usize,
    threshold_px: f64,
    refit: bool,
    gt_path: Option<&Path>,
    common: &Common,
    exec: Execution,
) -> CmdResult {
    let file = CorrespondenceFile::read(input).map_err(config)?;
    let mut solver = build_solvers(&[solver_name.to_string()], common)?.remove(0);
    if solver.kind().is_focal() == file.calibrated {
        return Err(config(anyhow!(
            "solver {} expects a{} file",
            solver.kind(),
            if solver.kind().is_focal() { "n uncalibrated" } else { " calibrated" }
        )));
    }
    let gt = match gt_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(config)?;
            let g: GroundTruthJson = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display())).map_err(config)?;
            Some(g.hypothesis().map_err(config)?)
        }
        None => None,
    };
    if let Some(g) = gt {
        solver = solver.with_ground_truth(g);
    }
    let (tracks, ids) = file.tracks();
    let cfg = RansacConfig {
        max_iterations: iters,
        inlier_threshold: threshold_from_px(threshold_px, NOMINAL_FOCAL_PX),
        seed: common.seed,
        refit,
        execution: exec,
    };
    let r = run_ransac(&tracks, &solver, &cfg).map_err(|e| match e {
        RansacError::EstimationFailed(_) => Failure { code: 3, error: e.into() },
        e => config(e),
    })?;
    let mut mask = vec![false; file.rows.len()];
    for (k, &i) in ids.iter().enumerate() {
        mask[i] = r.inlier_mask[k];
    }
    let gt_errors = gt.map(|g| {
        let e = PoseErrors::between(&r.best, &g);
        GtErrorsJson {
            pose_error_deg: e.pose_error(),
            rot12_deg: e.rot12,
            rot13_deg: e.rot13,
            t12_deg: e.t12,
            t13_deg: e.t13,
            focal_error_rel: r.best.focal.zip(g.focal).map(|(a, b)| (a / b - 1.0).abs()),
        }
    });
    let out = SolveJson {
        schema_version: SCHEMA_VERSION,
        solver: solver.kind().to_string(),
        estimator: if r.refit_applied { "ransac+refit" } else { "ransac" },
        seed: common.seed,
        iterations: r.iterations_run,
        threshold_px,
        n_rows: file.rows.len(),
        n_tracks: tracks.len(),
        score: r.score,
        inlier_mask: mask,
        pose12: PoseJson::from_pose(&r.best.pose12),
        pose13: PoseJson::from_pose(&r.best.pose13),
        focal_px: r.best.focal.map(|f| f * IMAGE_SIZE_PX),
        wall_time_ms: (!common.omit_timing).then(|| r.wall_time.as_secs_f64() * 1e3),
        gt_errors,
    };
    let text = serde_json::to_string_pretty(&out).map_err(config)? + "\n";
    write_output(common.out.as_deref(), text.as_bytes()).map_err(config)
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    variant: Variant,
    n: Option<usize>,
    noise_px: f64,
    inlier_ratio: f64,
    focal_px: Option<f64>,
    view_spread_deg: f64,
    seed: u64,
    out: &Path,
) -> CmdResult {
    let n = n.unwrap_or(variant.n_points());
    if n < variant.n_points() {
        return Err(config(anyhow!("variant needs at least {} points", variant.n_points())));
    }
    let scene = generate_scene(&SceneConfig { seed, view_spread_deg, ..Default::default() }).map_err(config)?;
    let cfg = InstanceConfig { variant, noise_sigma_px: noise_px, inlier_ratio, n_correspondences: Some(n), focal_px };
    let inst = make_triplet_instance(&scene, &cfg, &mut rng_for(seed, 0)).map_err(config)?;
    let full_rows = match variant {
        Variant::Full4 => n,
        Variant::Mixed5 | Variant::Mixed6 => 3,
        Variant::TwoView4 => 0,
    };
    let to_file = |p: &trifocal_core::geometry::ImagePoint| match focal_px {
        Some(_) => (p.x * IMAGE_SIZE_PX, p.y * IMAGE_SIZE_PX),
        None => (p.x, p.y),
    };
    let rows = inst
        .tracks
        .iter()
        .enumerate()
        .map(|(i, t)| [Some(to_file(&t[0])), Some(to_file(&t[1])), (i < full_rows).then(|| to_file(&t[2]))])
        .collect();
    let file = CorrespondenceFile { calibrated: focal_px.is_none(), intrinsics: None, principal_point: None, rows };
    std::fs::write(out, file.to_text()).with_context(|| format!("writing {}", out.display())).map_err(config)?;
    let gt = GroundTruthJson {
        schema_version: SCHEMA_VERSION,
        pose12: PoseJson::from_pose(&inst.gt.pose12),
        pose13: PoseJson::from_pose(&inst.gt.pose13),
        focal_px,
        inlier_mask: inst.inlier_mask.clone(),
    };
    let text = serde_json::to_string_pretty(&gt).map_err(config)? + "\n";
    std::fs::write(sidecar(out, ".gt.json"), text).map_err(config)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quaternions_are_canonical() {
        for angle in [0.1, 3.0, -3.0] {
            let pose = RelativePose::new(Rotation3::from_euler_angles(angle, 0.3, -0.2), nalgebra::Vector3::new(0.0, 1.0, 0.0)).unwrap();
            let j = PoseJson::from_pose(&pose);
            assert!(j.quaternion_wxyz[0] >= 0.0);
            let back = j.to_pose().unwrap();
            assert!((back.rotation.matrix() - pose.rotation.matrix()).norm() < 1e-12);
        }
    }
}
