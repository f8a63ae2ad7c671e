//! Synthetic ground truth: a world of point and line landmarks, camera
//! trajectories through it, and detector output under degradation.

mod gt;
mod motion;
mod profiles;
mod render;
mod world;

pub use gt::{ground_truth_matches, GroundTruth, LineCorrespondences};
pub use motion::{bounds_around, generate_trajectory, PathKind, Stop, TrajectoryConfig};
pub use profiles::{builtin_profiles, DegradationProfile};
pub use render::{render_frame, RenderConfig};
pub use world::{anchor_id, generate_world, Bounds, LineAnchor, LineLandmark, PointLandmark, RepetitiveConfig, World, WorldConfig};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthError {
    #[error("frame {0} carries no landmark labels")]
    MissingLabels(u64),
}
