use super::GeometryError;

/// How many cameras observe each point of a relative-pose problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CameraConfiguration {
    pub n_cameras: usize,
    /// Per-point camera counts `C_P`.
    pub visibility: Vec<usize>,
}

impl CameraConfiguration {
    pub fn new(n_cameras: usize, visibility: Vec<usize>) -> Result<Self, GeometryError> {
        if n_cameras < 2 {
            return Err(GeometryError::InvalidConfiguration(format!(
                "need at least 2 cameras, got {n_cameras}"
            )));
        }
        if let Some(c) = visibility.iter().find(|&&c| c < 2 || c > n_cameras) {
            return Err(GeometryError::InvalidConfiguration(format!(
                "point seen by {c} cameras; must be in 2..={n_cameras}"
            )));
        }
        Ok(Self { n_cameras, visibility })
    }

    /// `n` points that are all seen by `cameras` views.
    pub fn uniform(n_cameras: usize, points: usize, cameras: usize) -> Result<Self, GeometryError> {
        Self::new(n_cameras, vec![cameras; points])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigurationStatus {
    /// Fewer constraints than degrees of freedom, by the given amount.
    Under(usize),
    Minimal,
    /// More constraints than degrees of freedom, by the given amount.
    Over(usize),
}

/// Compares the constraint count `Σ (2·C_P − 3)` with the degrees of freedom
/// `6N − 7`, or `6N − 6` when the cameras share one unknown focal length.
pub fn check_minimal_configuration(cfg: &CameraConfiguration, unknown_focal: bool) -> ConfigurationStatus {
    let constraints: usize = cfg.visibility.iter().map(|&c| 2 * c - 3).sum();
    let dof = 6 * cfg.n_cameras - if unknown_focal { 6 } else { 7 };
    match constraints.cmp(&dof) {
        std::cmp::Ordering::Less => ConfigurationStatus::Under(dof - constraints),
        std::cmp::Ordering::Equal => ConfigurationStatus::Minimal,
        std::cmp::Ordering::Greater => ConfigurationStatus::Over(constraints - dof),
    }
}
