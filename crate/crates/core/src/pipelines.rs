//! Three-view solvers composed from the minimal solvers.
//!
//! Every pipeline turns one minimal sample into a list of triplet hypotheses.
//! Views 1–2 are solved first (5pt or 6pt), the points seen in all three views
//! are triangulated with each decomposed pose, and view 3 is registered with
//! P3P. All candidates are emitted; scoring is left to the caller.

use std::sync::Arc;

use crate::geometry::{
    decompose_essential, essential_from_pose, project, triangulate, EssentialMatrix, ImagePoint, RelativePose,
    TripletHypothesis,
};
use crate::predictor::{predict_virtual_point, FourPointSample, PredictorWeights, DEFAULT_SHIFT_RANGE};
use crate::solvers::{solve_5pt, solve_6pt, solve_p3p, AbsolutePose};
use crate::virtual_corr::{
    delta_shifts, mean_point, oracle_correspondence, triangle_of, usable_triplets, TripletChoice, VirtualCorrespondence,
    TRIPLETS,
};

/// One point observed in views 1, 2 and 3.
pub type Track3 = [ImagePoint; 3];

/// Four points observed in all three views, `points[view][row]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Full4 {
    pub points: FourPointSample,
}

/// Three points seen in all views plus `P` more seen in views 1 and 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedSample<const P: usize> {
    /// `triple[view][row]`.
    pub triple: [[ImagePoint; 3]; 3],
    pub pair: [(ImagePoint, ImagePoint); P],
}

pub type Mixed5 = MixedSample<2>;
pub type Mixed6 = MixedSample<3>;

/// Source of the virtual correspondence(s).
#[derive(Debug, Clone, PartialEq)]
pub enum VirtualMode {
    /// Mean points.
    Mean,
    /// Mean point plus its two δ-shifted copies.
    MeanDelta,
    /// Network prediction started from the mean point.
    Learned,
    /// Network prediction plus its two δ-shifted copies.
    LearnedDelta,
    /// The network run from the mean point and from both δ-shifted copies.
    LearnedDeltaInit,
    /// Ground-truth-consistent points; the hypothesis carries the true focal
    /// for the focal family (in input units).
    Oracle(TripletHypothesis),
}

impl VirtualMode {
    pub fn uses_delta(&self) -> bool {
        matches!(self, Self::MeanDelta | Self::LearnedDelta | Self::LearnedDeltaInit)
    }

    pub fn uses_network(&self) -> bool {
        matches!(self, Self::Learned | Self::LearnedDelta | Self::LearnedDeltaInit)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    /// δ as a fraction of the longest bbox side of the view-2 triangle.
    pub delta_factor: f64,
    pub weights: Option<Arc<PredictorWeights>>,
    pub shift_range: f64,
    pub triplet_choice: TripletChoice,
    /// Keep only the P3P candidate that best reprojects the fourth point.
    pub p3p_select: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { delta_factor: 0.15, weights: None, shift_range: DEFAULT_SHIFT_RANGE, triplet_choice: TripletChoice::Fixed, p3p_select: false }
    }
}

fn scale_point(p: &ImagePoint, s: f64) -> ImagePoint {
    ImagePoint::from(p.coords * s)
}

/// Registers view 3 given `pose12`. `triple[view][k]` are the points used for
/// P3P; `extra` is an optional `(x1, x2, x3)` used to pick a single P3P
/// candidate.
fn register_third_view(
    pose12: &RelativePose,
    triple: [[ImagePoint; 3]; 3],
    extra: Option<[ImagePoint; 3]>,
    select: bool,
) -> Vec<RelativePose> {
    let mut world = [crate::geometry::WorldPoint::origin(); 3];
    for k in 0..3 {
        match triangulate(pose12, &triple[0][k], &triple[1][k]) {
            Ok(x) => world[k] = x,
            Err(_) => return Vec::new(),
        }
    }
    let Ok(cands) = solve_p3p(&world, &triple[2]) else { return Vec::new() };
    let poses: Vec<RelativePose> = cands
        .iter()
        .filter_map(|AbsolutePose { rotation, translation }| RelativePose::new(*rotation, *translation).ok())
        .collect();
    if !select || poses.len() < 2 {
        return poses;
    }
    let Some([x1, x2, x3]) = extra else { return poses };
    let Ok(x) = triangulate(pose12, &x1, &x2) else { return poses };
    let best = cands
        .iter()
        .zip(poses.iter())
        .map(|(abs, rel)| {
            let y = abs.rotation * x.coords + abs.translation;
            let err = if y.z > 0.0 { (project(&y.into()) - x3).norm() } else { f64::INFINITY };
            (err, *rel)
        })
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    best.map(|(_, p)| vec![p]).unwrap_or(poses)
}

/// Calibrated two-view stage followed by P3P.
fn five_point_stage(
    five: &[(ImagePoint, ImagePoint); 5],
    supports: &[(ImagePoint, ImagePoint)],
    triple: [[ImagePoint; 3]; 3],
    extra: Option<[ImagePoint; 3]>,
    select: bool,
    out: &mut Vec<TripletHypothesis>,
) {
    let Ok(es) = solve_5pt(five) else { return };
    for e in es {
        let Ok(pose12) = decompose_essential(&e, supports) else { continue };
        for pose13 in register_third_view(&pose12, triple, extra, select) {
            out.push(TripletHypothesis::calibrated(pose12, pose13));
        }
    }
}

/// Shared-focal two-view stage followed by P3P. Inputs are in the caller's
/// units; the focal of each hypothesis is in those units.
fn six_point_stage(
    six: &[(ImagePoint, ImagePoint); 6],
    supports: &[(ImagePoint, ImagePoint)],
    triple: [[ImagePoint; 3]; 3],
    extra: Option<[ImagePoint; 3]>,
    select: bool,
    out: &mut Vec<TripletHypothesis>,
) {
    let Ok(cands) = solve_6pt(six) else { return };
    for c in cands {
        let inv = 1.0 / c.focal;
        let sup: Vec<(ImagePoint, ImagePoint)> = supports.iter().map(|(a, b)| (scale_point(a, inv), scale_point(b, inv))).collect();
        let Ok(pose12) = decompose_essential(&c.essential, &sup) else { continue };
        let tri = triple.map(|v| v.map(|p| scale_point(&p, inv)));
        let ext = extra.map(|v| v.map(|p| scale_point(&p, inv)));
        for pose13 in register_third_view(&pose12, tri, ext, select) {
            out.push(TripletHypothesis { pose12, pose13, focal: Some(c.focal) });
        }
    }
}

pub fn five_plus_p3p(sample: &Mixed5) -> Vec<TripletHypothesis> {
    let t = &sample.triple;
    let five = [
        (t[0][0], t[1][0]),
        (t[0][1], t[1][1]),
        (t[0][2], t[1][2]),
        sample.pair[0],
        sample.pair[1],
    ];
    let mut out = Vec::new();
    five_point_stage(&five, &five, *t, None, false, &mut out);
    out
}

pub fn six_plus_p3p(sample: &Mixed6) -> Vec<TripletHypothesis> {
    let t = &sample.triple;
    let six = [
        (t[0][0], t[1][0]),
        (t[0][1], t[1][1]),
        (t[0][2], t[1][2]),
        sample.pair[0],
        sample.pair[1],
        sample.pair[2],
    ];
    let mut out = Vec::new();
    six_point_stage(&six, &six, *t, None, false, &mut out);
    out
}

/// Sample rows reordered so that `tri` comes first and the remaining point last.
fn reorder(points: &FourPointSample, tri: [usize; 3]) -> FourPointSample {
    let rest = (0..4).find(|i| !tri.contains(i)).unwrap();
    let order = [tri[0], tri[1], tri[2], rest];
    points.map(|v| order.map(|i| v[i]))
}

fn remaining(tri: [usize; 3]) -> usize {
    (0..4).find(|i| !tri.contains(i)).unwrap()
}

/// Virtual correspondences for one triplet. `delta` controls whether the
/// δ-variants are generated (the caller decides for which triplet).
fn virtual_points(
    points: &FourPointSample,
    tri: [usize; 3],
    mode: &VirtualMode,
    delta: bool,
    opts: &PipelineOptions,
    oracle_focal_scale: f64,
) -> Vec<VirtualCorrespondence> {
    let t1 = triangle_of(&points[0], tri);
    let t2 = triangle_of(&points[1], tri);
    let m1 = mean_point(&t1);
    let m2 = mean_point(&t2);
    let shifts = |c: &ImagePoint| delta_shifts(c, &t2, opts.delta_factor).ok();
    let learned = |init: Option<ImagePoint>| {
        let w = opts.weights.as_ref()?;
        Some(predict_virtual_point(w, &reorder(points, tri), init, opts.shift_range))
    };
    let mean = VirtualCorrespondence { p1: m1, p2: m2, provenance: crate::virtual_corr::Provenance::Mean };
    let with_shifts = |base: VirtualCorrespondence| -> Vec<VirtualCorrespondence> {
        let mut v = vec![base];
        if delta {
            if let Some([plus, minus]) = shifts(&base.p2) {
                v.push(VirtualCorrespondence { p2: plus, provenance: crate::virtual_corr::Provenance::DeltaPlus, ..base });
                v.push(VirtualCorrespondence { p2: minus, provenance: crate::virtual_corr::Provenance::DeltaMinus, ..base });
            }
        }
        v
    };
    match mode {
        VirtualMode::Mean => vec![mean],
        VirtualMode::MeanDelta => with_shifts(mean),
        VirtualMode::Learned => learned(None).into_iter().collect(),
        VirtualMode::LearnedDelta => learned(None).map(with_shifts).unwrap_or_default(),
        VirtualMode::LearnedDeltaInit => {
            let mut inits = vec![None];
            if delta {
                if let Some([plus, minus]) = shifts(&m2) {
                    inits.push(Some(plus));
                    inits.push(Some(minus));
                }
            }
            inits.into_iter().filter_map(learned).collect()
        }
        VirtualMode::Oracle(gt) => {
            // the ground-truth line is defined in calibrated coordinates
            let s = oracle_focal_scale;
            let t2n = crate::virtual_corr::Triangle2D { vertices: t2.vertices.map(|p| scale_point(&p, 1.0 / s)) };
            let mut o = oracle_correspondence(&gt.pose12, &scale_point(&m1, 1.0 / s), &t2n);
            o.p1 = m1;
            o.p2 = scale_point(&o.p2, s);
            vec![o]
        }
    }
}

/// Calibrated four-point three-view solver.
pub fn solve_4p3v(sample: &Full4, mode: &VirtualMode, opts: &PipelineOptions) -> Vec<TripletHypothesis> {
    let p = &sample.points;
    let mut triplets = usable_triplets(&p[0], &p[1], opts.triplet_choice);
    if opts.triplet_choice == TripletChoice::Fixed {
        triplets.retain(|t| *t == TRIPLETS[0] || *t == TRIPLETS[1]);
    }
    let Some(&tri) = triplets.first() else { return Vec::new() };
    let rest = remaining(tri);
    let real: [(ImagePoint, ImagePoint); 4] = std::array::from_fn(|i| (p[0][i], p[1][i]));
    let triple = [0, 1, 2].map(|v| tri.map(|i| p[v][i]));
    let extra = Some([p[0][rest], p[1][rest], p[2][rest]]);

    let mut out = Vec::new();
    for v in virtual_points(p, tri, mode, mode.uses_delta(), opts, 1.0) {
        let five = [real[0], real[1], real[2], real[3], v.pair()];
        five_point_stage(&five, &real, triple, extra, opts.p3p_select, &mut out);
    }
    out
}

/// Four-point three-view solver with a shared unknown focal length. Inputs
/// are pixel coordinates (principal point at the origin) divided by a nominal
/// scale.
pub fn solve_4p3vf(sample: &Full4, mode: &VirtualMode, opts: &PipelineOptions) -> Vec<TripletHypothesis> {
    let p = &sample.points;
    let triplets = usable_triplets(&p[0], &p[1], opts.triplet_choice);
    if triplets.len() < 2 {
        return Vec::new();
    }
    let (ta, tb) = (triplets[0], triplets[1]);
    let rest = remaining(ta);
    let real: [(ImagePoint, ImagePoint); 4] = std::array::from_fn(|i| (p[0][i], p[1][i]));
    let triple = [0, 1, 2].map(|v| ta.map(|i| p[v][i]));
    let extra = Some([p[0][rest], p[1][rest], p[2][rest]]);
    let focal = match mode {
        VirtualMode::Oracle(gt) => gt.focal.unwrap_or(1.0),
        _ => 1.0,
    };

    let first = virtual_points(p, ta, mode, mode.uses_delta(), opts, focal);
    let second_mode = match mode {
        VirtualMode::MeanDelta => VirtualMode::Mean,
        VirtualMode::LearnedDelta | VirtualMode::LearnedDeltaInit => VirtualMode::Learned,
        m => m.clone(),
    };
    let Some(second) = virtual_points(p, tb, &second_mode, false, opts, focal).first().copied() else { return Vec::new() };

    let mut out = Vec::new();
    for v in first {
        let six = [real[0], real[1], real[2], real[3], v.pair(), second.pair()];
        six_point_stage(&six, &real, triple, extra, opts.p3p_select, &mut out);
    }
    out
}

/// Source of the fifth correspondence for the two-view solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TwoViewMode {
    Mean,
    MeanDelta(f64),
    Oracle(RelativePose),
}

/// Two-view relative pose from four correspondences plus one virtual one.
pub fn solve_4p_twoview(pairs: &[(ImagePoint, ImagePoint); 4], mode: TwoViewMode) -> Vec<RelativePose> {
    let v1 = pairs.map(|c| c.0);
    let v2 = pairs.map(|c| c.1);
    let Some(&tri) = usable_triplets(&v1, &v2, TripletChoice::Fixed).iter().find(|t| **t == TRIPLETS[0] || **t == TRIPLETS[1])
    else {
        return Vec::new();
    };
    let t1 = triangle_of(&v1, tri);
    let t2 = triangle_of(&v2, tri);
    let m1 = mean_point(&t1);
    let m2 = mean_point(&t2);
    let virtuals: Vec<ImagePoint> = match mode {
        TwoViewMode::Mean => vec![m2],
        TwoViewMode::MeanDelta(f) => {
            let mut v = vec![m2];
            if let Ok(s) = delta_shifts(&m2, &t2, f) {
                v.extend(s);
            }
            v
        }
        TwoViewMode::Oracle(gt) => vec![oracle_correspondence(&gt, &m1, &t2).p2],
    };
    let mut out = Vec::new();
    for q in virtuals {
        let five = [pairs[0], pairs[1], pairs[2], pairs[3], (m1, q)];
        let Ok(es) = solve_5pt(&five) else { continue };
        for e in es {
            if let Ok(pose) = decompose_essential(&e, pairs) {
                out.push(pose);
            }
        }
    }
    out
}

/// Essential matrix of view pair (1, 3) for a hypothesis.
pub fn hypothesis_essentials(h: &TripletHypothesis) -> (EssentialMatrix, EssentialMatrix) {
    (essential_from_pose(&h.pose12), essential_from_pose(&h.pose13))
}
