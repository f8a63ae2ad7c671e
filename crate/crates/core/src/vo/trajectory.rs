use crate::geometry::SE3Pose;

use super::VoError;

/// Camera-to-world poses keyed by strictly increasing frame id.
///
/// Estimated trajectories start at the identity by convention.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    entries: Vec<(u64, SE3Pose)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(u64, SE3Pose)>) -> Result<Self, VoError> {
        if let Some(w) = entries.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(VoError::NonIncreasingFrameIds(w[0].0, w[1].0));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &SE3Pose)> {
        self.entries.iter().map(|(id, p)| (*id, p))
    }

    pub fn frame_ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn poses(&self) -> impl Iterator<Item = &SE3Pose> {
        self.entries.iter().map(|e| &e.1)
    }

    pub fn last(&self) -> Option<&(u64, SE3Pose)> {
        self.entries.last()
    }

    /// Same trajectory with every pose premultiplied by `t`.
    pub fn transformed(&self, t: &SE3Pose) -> Trajectory {
        Trajectory { entries: self.entries.iter().map(|(id, p)| (*id, t.compose(p))).collect() }
    }
}
