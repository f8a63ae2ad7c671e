//! Frame-to-frame stereo odometry and trajectory evaluation.

mod eval;
mod pipeline;
mod plot;
mod trajectory;

pub use eval::{align_umeyama, ape, evaluate, match_stats, stats_table, Alignment, ApeReport, Evaluation, MatchStats};
pub use pipeline::{build_correspondences, track, TrackConfig, TrackOutput};
pub use plot::{ape_svg, line_plot_svg, trajectory_svg};
pub use trajectory::Trajectory;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VoError {
    #[error("frame ids must increase strictly ({0} then {1})")]
    NonIncreasingFrameIds(u64, u64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("trajectories do not share frame ids")]
    FrameMismatch,
    #[error("positions are degenerate (collinear or coincident)")]
    DegenerateGeometry,
    #[error("need at least two frames")]
    EmptySequence,
}

/// Per frame-pair record of the odometry run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairLog {
    pub frame_a: u64,
    pub frame_b: u64,
    pub point_detections: usize,
    pub point_matches: usize,
    pub line_detections: usize,
    pub line_matches: usize,
    pub inliers: usize,
    pub residual_rms: f64,
    pub stationary: bool,
    /// Set when the relative pose fell back to constant velocity.
    pub fallback: bool,
    pub error: Option<String>,
}
