//! Named three-view solvers over tracks, as used by RANSAC and the CLI.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::TripletHypothesis;
use crate::pipelines::{
    five_plus_p3p, six_plus_p3p, solve_4p3v, solve_4p3vf, Full4, MixedSample, PipelineOptions, Track3, VirtualMode,
};
use crate::predictor::PredictorWeights;

/// δ factor used with mean-point modes.
pub const MEAN_DELTA_FACTOR: f64 = 0.15;
/// δ factor used with learned modes.
pub const LEARNED_DELTA_FACTOR: f64 = 0.1;

/// Virtual-correspondence strategy of the four-point solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VirtualKind {
    Mean,
    MeanDelta,
    Learned,
    LearnedDelta,
    LearnedDeltaInit,
    Oracle,
}

impl VirtualKind {
    pub const ALL: [VirtualKind; 6] = [
        VirtualKind::Mean,
        VirtualKind::MeanDelta,
        VirtualKind::Learned,
        VirtualKind::LearnedDelta,
        VirtualKind::LearnedDeltaInit,
        VirtualKind::Oracle,
    ];

    fn suffix(self) -> &'static str {
        match self {
            VirtualKind::Mean => "m",
            VirtualKind::MeanDelta => "md",
            VirtualKind::Learned => "l",
            VirtualKind::LearnedDelta => "ld",
            VirtualKind::LearnedDeltaInit => "ldinit",
            VirtualKind::Oracle => "o",
        }
    }

    pub fn uses_network(self) -> bool {
        matches!(self, VirtualKind::Learned | VirtualKind::LearnedDelta | VirtualKind::LearnedDeltaInit)
    }

    pub fn default_delta_factor(self) -> f64 {
        if self.uses_network() { LEARNED_DELTA_FACTOR } else { MEAN_DELTA_FACTOR }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    FivePointP3P,
    SixPointP3P,
    FourPoint(VirtualKind),
    FourPointFocal(VirtualKind),
}

impl SolverKind {
    pub fn all() -> Vec<SolverKind> {
        let mut v = vec![SolverKind::FivePointP3P, SolverKind::SixPointP3P];
        v.extend(VirtualKind::ALL.map(SolverKind::FourPoint));
        v.extend(VirtualKind::ALL.map(SolverKind::FourPointFocal));
        v
    }

    /// Number of tracks consumed per sample.
    pub fn sample_size(self) -> usize {
        match self {
            SolverKind::FivePointP3P => 5,
            SolverKind::SixPointP3P => 6,
            SolverKind::FourPoint(_) | SolverKind::FourPointFocal(_) => 4,
        }
    }

    /// Whether hypotheses carry a focal length.
    pub fn is_focal(self) -> bool {
        matches!(self, SolverKind::SixPointP3P | SolverKind::FourPointFocal(_))
    }

    pub fn virtual_kind(self) -> Option<VirtualKind> {
        match self {
            SolverKind::FourPoint(v) | SolverKind::FourPointFocal(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverKind::FivePointP3P => f.write_str("5pt+p3p"),
            SolverKind::SixPointP3P => f.write_str("6pt+p3p"),
            SolverKind::FourPoint(v) => write!(f, "4p3v-{}", v.suffix()),
            SolverKind::FourPointFocal(v) => write!(f, "4p3vf-{}", v.suffix()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolverSetupError {
    #[error("unknown solver '{0}'")]
    Unknown(String),
    #[error("solver {0} needs predictor weights")]
    MissingWeights(SolverKind),
    #[error("solver {0} needs a ground-truth hypothesis")]
    MissingGroundTruth(SolverKind),
    #[error("need {needed} tracks, got {got}")]
    SampleSize { needed: usize, got: usize },
}

impl FromStr for SolverKind {
    type Err = SolverSetupError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        SolverKind::all()
            .into_iter()
            .find(|k| k.to_string() == lower)
            .ok_or_else(|| SolverSetupError::Unknown(s.to_string()))
    }
}

/// A configured solver. Oracle variants hold the ground truth they cheat with.
#[derive(Debug, Clone)]
pub struct TripletSolver {
    kind: SolverKind,
    options: PipelineOptions,
    ground_truth: Option<TripletHypothesis>,
}

impl TripletSolver {
    /// Solver with the default δ factor for its mode. Learned modes need
    /// `weights`; oracle modes must be given a ground truth via
    /// [`TripletSolver::with_ground_truth`].
    pub fn new(kind: SolverKind, weights: Option<Arc<PredictorWeights>>) -> Result<Self, SolverSetupError> {
        let vk = kind.virtual_kind();
        if vk.is_some_and(VirtualKind::uses_network) && weights.is_none() {
            return Err(SolverSetupError::MissingWeights(kind));
        }
        let options = PipelineOptions {
            delta_factor: vk.map_or(MEAN_DELTA_FACTOR, VirtualKind::default_delta_factor),
            weights,
            ..Default::default()
        };
        Ok(Self { kind, options, ground_truth: None })
    }

    pub fn with_options(mut self, f: impl FnOnce(&mut PipelineOptions)) -> Self {
        f(&mut self.options);
        self
    }

    pub fn with_ground_truth(mut self, gt: TripletHypothesis) -> Self {
        self.ground_truth = Some(gt);
        self
    }

    pub fn kind(&self) -> SolverKind {
        self.kind
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.options
    }

    pub fn sample_size(&self) -> usize {
        self.kind.sample_size()
    }

    /// Fails when the solver cannot run at all (oracle without ground truth).
    pub fn check_ready(&self) -> Result<(), SolverSetupError> {
        if self.kind.virtual_kind() == Some(VirtualKind::Oracle) && self.ground_truth.is_none() {
            return Err(SolverSetupError::MissingGroundTruth(self.kind));
        }
        Ok(())
    }

    fn mode(&self) -> Result<VirtualMode, SolverSetupError> {
        Ok(match self.kind.virtual_kind() {
            Some(VirtualKind::Mean) | None => VirtualMode::Mean,
            Some(VirtualKind::MeanDelta) => VirtualMode::MeanDelta,
            Some(VirtualKind::Learned) => VirtualMode::Learned,
            Some(VirtualKind::LearnedDelta) => VirtualMode::LearnedDelta,
            Some(VirtualKind::LearnedDeltaInit) => VirtualMode::LearnedDeltaInit,
            Some(VirtualKind::Oracle) => {
                VirtualMode::Oracle(self.ground_truth.ok_or(SolverSetupError::MissingGroundTruth(self.kind))?)
            }
        })
    }

    /// Hypotheses from the first `sample_size` tracks. For the mixed solvers
    /// the first three tracks are the triple-view points and the view-3
    /// observations of the remaining ones are ignored.
    pub fn solve(&self, tracks: &[Track3]) -> Result<Vec<TripletHypothesis>, SolverSetupError> {
        let n = self.sample_size();
        if tracks.len() < n {
            return Err(SolverSetupError::SampleSize { needed: n, got: tracks.len() });
        }
        let triple = || [0, 1, 2].map(|v| [0, 1, 2].map(|i| tracks[i][v]));
        Ok(match self.kind {
            SolverKind::FivePointP3P => {
                five_plus_p3p(&MixedSample { triple: triple(), pair: [3, 4].map(|i| (tracks[i][0], tracks[i][1])) })
            }
            SolverKind::SixPointP3P => {
                six_plus_p3p(&MixedSample { triple: triple(), pair: [3, 4, 5].map(|i| (tracks[i][0], tracks[i][1])) })
            }
            SolverKind::FourPoint(_) => solve_4p3v(&full4(tracks), &self.mode()?, &self.options),
            SolverKind::FourPointFocal(_) => solve_4p3vf(&full4(tracks), &self.mode()?, &self.options),
        })
    }
}

fn full4(tracks: &[Track3]) -> Full4 {
    Full4 { points: [0, 1, 2].map(|v| [0, 1, 2, 3].map(|i| tracks[i][v])) }
}
