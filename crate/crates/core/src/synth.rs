//! Seeded synthetic scenes, camera triplets and correspondences.

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::geometry::{ImagePoint, RelativePose, TripletHypothesis, WorldPoint};
use crate::pipelines::Track3;

/// Focal length (pixels) used to convert pixel noise and thresholds.
pub const NOMINAL_FOCAL_PX: f64 = 1000.0;
/// Side of the square virtual image, in pixels.
pub const IMAGE_SIZE_PX: f64 = 2000.0;
/// Maximum tilt of the optical axis away from the scene center.
pub const MAX_AXIS_PERTURBATION_DEG: f64 = 5.0;
/// Default half-angle of the cone holding cameras 2 and 3.
pub const DEFAULT_VIEW_SPREAD_DEG: f64 = 30.0;
const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no viewable instance after {0} attempts")]
    Unviewable(usize),
}

/// SplitMix64 finalizer; derives independent seeds from `(seed, index)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub n_points: usize,
    pub cube_side: f64,
    pub camera_distance: (f64, f64),
    /// Half-angle (degrees) of the cone around the first camera's viewing
    /// direction in which the other two cameras are placed; 180 places every
    /// camera uniformly on the sphere.
    pub view_spread_deg: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { n_points: 10_000, cube_side: 10.0, camera_distance: (20.0, 50.0), view_spread_deg: DEFAULT_VIEW_SPREAD_DEG, seed: 0 }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_points < 4 {
            return Err(SynthError::Config("n_points must be at least 4".into()));
        }
        if !(self.cube_side > 0.0) {
            return Err(SynthError::Config("cube_side must be positive".into()));
        }
        let (lo, hi) = self.camera_distance;
        if !(lo > 0.0 && hi >= lo) {
            return Err(SynthError::Config("camera distance range must be positive and ordered".into()));
        }
        if !(self.view_spread_deg > 0.0 && self.view_spread_deg <= 180.0) {
            return Err(SynthError::Config("view spread must be in (0, 180] degrees".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub points: Vec<WorldPoint>,
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene, SynthError> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, u64::MAX);
    let h = 0.5 * cfg.cube_side;
    let points = (0..cfg.n_points)
        .map(|_| Point3::new(rng.random_range(-h..=h), rng.random_range(-h..=h), rng.random_range(-h..=h)))
        .collect();
    Ok(Scene { config: cfg.clone(), points })
}

/// World-to-camera transform `X_c = R·X_w + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn to_camera(&self, x: &WorldPoint) -> Point3<f64> {
        Point3::from(self.rotation * x.coords + self.translation)
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }
}

fn unit_sphere<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Camera at a uniform distance in `range` along a uniform direction, looking
/// at the origin with a uniform roll and a small random tilt of the axis.
pub fn random_camera<R: Rng>(rng: &mut R, range: (f64, f64)) -> Camera {
    let dir = unit_sphere(rng);
    camera_along(rng, dir, range)
}

/// Uniform direction within `half_angle` (radians) of `axis`.
fn direction_in_cone<R: Rng>(rng: &mut R, axis: &Vector3<f64>, half_angle: f64) -> Vector3<f64> {
    let cos_max = half_angle.cos();
    let z: f64 = rng.random_range(cos_max..=1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    let helper = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = helper.cross(axis).normalize();
    let v = axis.cross(&u);
    (u * (r * phi.cos()) + v * (r * phi.sin()) + axis * z).normalize()
}

/// Like [`random_camera`] but along the given direction from the origin.
pub fn camera_along<R: Rng>(rng: &mut R, dir: Vector3<f64>, range: (f64, f64)) -> Camera {
    let dist = if range.1 > range.0 { rng.random_range(range.0..range.1) } else { range.0 };
    let center = dir * dist;
    let z = -dir;
    let helper = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let x0 = helper.cross(&z).normalize();
    let y0 = z.cross(&x0);
    let roll: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (s, c) = roll.sin_cos();
    let x = x0 * c + y0 * s;
    let y = z.cross(&x);
    let look = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]));
    // tilt about an axis in the image plane
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let tilt = rng.random_range(0.0..=MAX_AXIS_PERTURBATION_DEG.to_radians());
    let axis = Unit::new_normalize(Vector3::new(phi.cos(), phi.sin(), 0.0));
    let rotation = Rotation3::from_axis_angle(&axis, tilt) * look;
    Camera { rotation, translation: -(rotation * center) }
}

/// Which observations an instance provides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full4,
    Mixed5,
    Mixed6,
    TwoView4,
}

impl Variant {
    pub fn n_points(self) -> usize {
        match self {
            Variant::Full4 | Variant::TwoView4 => 4,
            Variant::Mixed5 => 5,
            Variant::Mixed6 => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceConfig {
    pub variant: Variant,
    pub noise_sigma_px: f64,
    pub inlier_ratio: f64,
    /// Number of tracks; defaults to the variant's sample size when `None`.
    pub n_correspondences: Option<usize>,
    /// Shared focal length in pixels; `None` produces calibrated coordinates.
    pub focal_px: Option<f64>,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self { variant: Variant::Full4, noise_sigma_px: 0.0, inlier_ratio: 1.0, n_correspondences: None, focal_px: None }
    }
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.noise_sigma_px >= 0.0) {
            return Err(SynthError::Config("noise sigma must be non-negative".into()));
        }
        if !(self.inlier_ratio > 0.0 && self.inlier_ratio <= 1.0) {
            return Err(SynthError::Config("inlier ratio must be in (0, 1]".into()));
        }
        if matches!(self.focal_px, Some(f) if !(f > 0.0)) {
            return Err(SynthError::Config("focal must be positive".into()));
        }
        Ok(())
    }
}

/// One generated triplet dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub cameras: [Camera; 3],
    /// Ground truth; `focal` is in the units of `tracks` when present.
    pub gt: TripletHypothesis,
    /// Observations in solver input units: calibrated, or pixels divided by
    /// [`IMAGE_SIZE_PX`] for the focal family.
    pub tracks: Vec<Track3>,
    pub inlier_mask: Vec<bool>,
    /// Indices of the scene points behind `tracks`.
    pub point_ids: Vec<usize>,
}

impl Instance {
    /// Multiplier from calibrated to input units.
    pub fn unit_scale(&self) -> f64 {
        self.gt.focal.unwrap_or(1.0)
    }
}

/// Half-width of the image in calibrated units for a focal length in pixels.
pub fn image_half_extent(focal_px: f64) -> f64 {
    0.5 * IMAGE_SIZE_PX / focal_px
}

/// Three cameras and `n` scene points that project inside all three images
/// at the nominal focal.
pub fn sample_viewable<R: Rng>(scene: &Scene, n: usize, rng: &mut R) -> Result<([Camera; 3], Vec<usize>), SynthError> {
    sample_viewable_with(scene, n, image_half_extent(NOMINAL_FOCAL_PX), rng)
}

fn sample_viewable_with<R: Rng>(
    scene: &Scene,
    n: usize,
    half: f64,
    rng: &mut R,
) -> Result<([Camera; 3], Vec<usize>), SynthError> {
    if n > scene.points.len() {
        return Err(SynthError::Config(format!("{n} points requested from a scene of {}", scene.points.len())));
    }
    for _ in 0..MAX_ATTEMPTS {
        let range = scene.config.camera_distance;
        let first = random_camera(rng, range);
        let axis = first.center().normalize();
        let spread = scene.config.view_spread_deg.to_radians();
        let mut other = || {
            let d = direction_in_cone(rng, &axis, spread);
            camera_along(rng, d, range)
        };
        let cams = [first, other(), other()];
        let ids = index::sample(rng, scene.points.len(), n).into_vec();
        let visible = ids.iter().all(|&i| {
            cams.iter().all(|c| {
                let y = c.to_camera(&scene.points[i]);
                y.z > 1e-6 && (y.x / y.z).abs() <= half && (y.y / y.z).abs() <= half
            })
        });
        if visible {
            return Ok((cams, ids));
        }
    }
    Err(SynthError::Unviewable(MAX_ATTEMPTS))
}

pub fn ground_truth(cams: &[Camera; 3]) -> TripletHypothesis {
    let rel = |b: &Camera| {
        RelativePose::between((&cams[0].rotation, &cams[0].translation), (&b.rotation, &b.translation))
            .expect("distinct camera centers")
    };
    TripletHypothesis::calibrated(rel(&cams[1]), rel(&cams[2]))
}

/// Builds a noisy, possibly contaminated instance. The RNG is consumed in a
/// fixed order: cameras and points, noise, outliers.
pub fn make_triplet_instance<R: Rng>(scene: &Scene, cfg: &InstanceConfig, rng: &mut R) -> Result<Instance, SynthError> {
    cfg.validate()?;
    let n = cfg.n_correspondences.unwrap_or(cfg.variant.n_points());
    let focal_px = cfg.focal_px.unwrap_or(NOMINAL_FOCAL_PX);
    let half = image_half_extent(focal_px);
    let (cams, ids) = sample_viewable_with(scene, n, half, rng)?;
    let mut gt = ground_truth(&cams);
    let mut tracks: Vec<Track3> = ids
        .iter()
        .map(|&i| cams.map(|c| {
            let y = c.to_camera(&scene.points[i]);
            ImagePoint::new(y.x / y.z, y.y / y.z)
        }))
        .collect();
    add_noise(&mut tracks, cfg.noise_sigma_px, focal_px, rng);
    let mask = inject_outliers(&mut tracks, cfg.inlier_ratio, (-half, half, -half, half), rng);
    if let Some(f) = cfg.focal_px {
        // calibrated → pixels → input units
        let s = f / IMAGE_SIZE_PX;
        for t in tracks.iter_mut() {
            for p in t.iter_mut() {
                *p = ImagePoint::from(p.coords * s);
            }
        }
        gt.focal = Some(s);
    }
    Ok(Instance { cameras: cams, gt, tracks, inlier_mask: mask, point_ids: ids })
}

/// Adds i.i.d. Gaussian noise of `sigma_px / nominal_focal` to every coordinate.
pub fn add_noise<R: Rng>(tracks: &mut [Track3], sigma_px: f64, nominal_focal: f64, rng: &mut R) {
    if sigma_px == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma_px / nominal_focal).expect("finite sigma");
    for t in tracks.iter_mut() {
        for p in t.iter_mut() {
            p.x += normal.sample(rng);
            p.y += normal.sample(rng);
        }
    }
}

/// Replaces views 2 and 3 of `round((1 − ratio)·n)` uniformly chosen tracks by
/// uniform points in `bounds = (xmin, xmax, ymin, ymax)`. Returns the inlier mask.
pub fn inject_outliers<R: Rng>(tracks: &mut [Track3], inlier_ratio: f64, bounds: (f64, f64, f64, f64), rng: &mut R) -> Vec<bool> {
    let n = tracks.len();
    let n_out = (((1.0 - inlier_ratio) * n as f64).round() as usize).min(n);
    let mut mask = vec![true; n];
    if n_out == 0 {
        return mask;
    }
    let mut chosen = index::sample(rng, n, n_out).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        mask[i] = false;
        for v in 1..3 {
            tracks[i][v] = ImagePoint::new(rng.random_range(bounds.0..bounds.1), rng.random_range(bounds.2..bounds.3));
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ransac::triplet_residual;

    fn small_scene(seed: u64) -> Scene {
        generate_scene(&SceneConfig { n_points: 2000, seed, ..Default::default() }).unwrap()
    }

    #[test]
    fn scene_is_seeded_and_bounded() {
        let a = generate_scene(&SceneConfig { seed: 4, ..Default::default() }).unwrap();
        let b = generate_scene(&SceneConfig { seed: 4, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points.len(), 10_000);
        assert!(a.points.iter().all(|p| p.iter().all(|v| (-5.0..=5.0).contains(v))));
        // uniform on [-5, 5]: σ = 10/√12
        let tol = 3.0 * (10.0 / 12f64.sqrt()) / (a.points.len() as f64).sqrt();
        for k in 0..3 {
            let mean = a.points.iter().map(|p| p[k]).sum::<f64>() / a.points.len() as f64;
            assert!(mean.abs() <= tol, "axis {k} mean {mean}");
        }
        assert!(generate_scene(&SceneConfig { n_points: 3, ..Default::default() }).is_err());
    }

    #[test]
    fn cameras_look_at_the_scene() {
        let mut rng = rng_for(1, 0);
        for _ in 0..200 {
            let c = random_camera(&mut rng, (20.0, 50.0));
            let d = c.center().norm();
            assert!((20.0..=50.0).contains(&d));
            let axis = c.rotation.inverse() * Vector3::z();
            let to_origin = -c.center() / d;
            assert!(axis.dot(&to_origin).acos().to_degrees() <= MAX_AXIS_PERTURBATION_DEG + 1e-9);
            assert!((c.rotation.matrix().determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cameras_stay_within_the_view_spread() {
        for spread in [10.0, 30.0, 180.0] {
            let scene = generate_scene(&SceneConfig { n_points: 500, view_spread_deg: spread, ..Default::default() }).unwrap();
            let mut rng = rng_for(6, 0);
            for _ in 0..50 {
                let (cams, _) = sample_viewable(&scene, 4, &mut rng).unwrap();
                let a = cams[0].center().normalize();
                for c in &cams[1..] {
                    assert!(a.dot(&c.center().normalize()).clamp(-1.0, 1.0).acos().to_degrees() <= spread + 1e-9);
                }
            }
        }
        assert!(generate_scene(&SceneConfig { view_spread_deg: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn noiseless_instances_are_consistent() {
        let scene = small_scene(2);
        let mut rng = rng_for(2, 1);
        for variant in [Variant::Full4, Variant::Mixed5, Variant::Mixed6] {
            let inst = make_triplet_instance(&scene, &InstanceConfig { variant, ..Default::default() }, &mut rng).unwrap();
            assert_eq!(inst.tracks.len(), variant.n_points());
            for t in &inst.tracks {
                assert!(triplet_residual(&inst.gt, t) <= 1e-10);
            }
        }
        let inst = make_triplet_instance(
            &scene,
            &InstanceConfig { focal_px: Some(1200.0), n_correspondences: Some(50), ..Default::default() },
            &mut rng,
        )
        .unwrap();
        assert_eq!(inst.gt.focal, Some(0.6));
        for t in &inst.tracks {
            assert!(triplet_residual(&inst.gt, t) <= 1e-10);
        }
    }

    #[test]
    fn instances_are_deterministic() {
        let scene = small_scene(3);
        let cfg = InstanceConfig { noise_sigma_px: 1.0, inlier_ratio: 0.5, n_correspondences: Some(40), ..Default::default() };
        let a = make_triplet_instance(&scene, &cfg, &mut rng_for(9, 9)).unwrap();
        let b = make_triplet_instance(&scene, &cfg, &mut rng_for(9, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_statistics() {
        let mut tracks = vec![[ImagePoint::origin(); 3]; 100_000 / 6 + 1];
        add_noise(&mut tracks, 2.0, 1000.0, &mut rng_for(5, 0));
        let vals: Vec<f64> = tracks.iter().flat_map(|t| t.iter().flat_map(|p| [p.x, p.y])).collect();
        let sd = (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((sd / 0.002 - 1.0).abs() <= 0.02, "sd {sd}");
        let mut same = vec![[ImagePoint::new(0.3, 0.1); 3]; 5];
        add_noise(&mut same, 0.0, 1000.0, &mut rng_for(5, 0));
        assert!(same.iter().all(|t| t[0] == ImagePoint::new(0.3, 0.1)));
    }

    #[test]
    fn outlier_counts_and_contamination() {
        let scene = small_scene(4);
        let cfg = InstanceConfig { n_correspondences: Some(100), ..Default::default() };
        let mut inst = make_triplet_instance(&scene, &cfg, &mut rng_for(4, 4)).unwrap();
        let clean = inst.tracks.clone();
        let mask = inject_outliers(&mut inst.tracks.clone(), 1.0, (-1.0, 1.0, -1.0, 1.0), &mut rng_for(0, 0));
        assert!(mask.iter().all(|m| *m));
        let mask = inject_outliers(&mut inst.tracks, 0.1, (-1.0, 1.0, -1.0, 1.0), &mut rng_for(0, 1));
        assert_eq!(mask.iter().filter(|m| !**m).count(), 90);
        let mut res: Vec<f64> = inst.tracks.iter().zip(&mask).filter(|(_, m)| !**m).map(|(t, _)| triplet_residual(&inst.gt, t)).collect();
        res.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(res[res.len() / 2] > 10.0 * 3.0 / NOMINAL_FOCAL_PX);
        for (t, (c, m)) in inst.tracks.iter().zip(clean.iter().zip(&mask)) {
            assert_eq!(t[0], c[0]);
            if *m {
                assert_eq!(t, c);
            }
        }
    }
}
