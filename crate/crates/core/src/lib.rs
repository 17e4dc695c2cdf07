//! Three-view relative pose from four points via virtual correspondences.

pub mod geometry;
pub mod poly;
pub mod solvers;
pub mod predictor;
pub mod virtual_corr;
pub mod pipelines;
pub mod triplet_solver;
pub mod par;
pub mod synth;
pub mod ransac;
pub mod experiments;
