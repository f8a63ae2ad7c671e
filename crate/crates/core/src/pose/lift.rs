use nalgebra::Vector3;

use crate::geometry::{CameraRig, FrameFeatures, GeometryError};

/// Frame features lifted into the left camera frame. `None` marks a
/// feature without a usable depth cue.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LiftedFrame {
    pub ppoints: Vec<Option<Vector3<f64>>>,
    pub lpoints: Vec<Option<Vector3<f64>>>,
    /// 3D segment per line, spanning its outermost lifted L-points.
    pub lines: Vec<Option<(Vector3<f64>, Vector3<f64>)>>,
    /// P-points and L-points skipped for lack of depth.
    pub skipped: usize,
}

/// Lifts every feature of `frame` that carries a depth cue.
///
/// A line is lifted through the first and last of its L-points that have
/// depth; lines with fewer than two such L-points stay `None`.
pub fn lift_frame(frame: &FrameFeatures, camera: &CameraRig) -> Result<LiftedFrame, GeometryError> {
    let Some(depth) = &frame.depth else {
        let n = frame.ppoints.len() + frame.lpoints.len();
        return Ok(LiftedFrame {
            ppoints: vec![None; frame.ppoints.len()],
            lpoints: vec![None; frame.lpoints.len()],
            lines: vec![None; frame.lines.len()],
            skipped: n,
        });
    };
    if depth.ppoints.len() != frame.ppoints.len() || depth.lpoints.len() != frame.lpoints.len() {
        return Err(GeometryError::InvalidFrame("depth count does not match feature count".into()));
    }
    let mut skipped = 0;
    let mut lift = |kps: &[crate::geometry::Keypoint], cues: &[Option<crate::geometry::DepthCue>]| {
        kps.iter()
            .zip(cues)
            .map(|(k, cue)| match cue {
                Some(c) => c.lift(camera, k.u, k.v).map(Some),
                None => {
                    skipped += 1;
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let ppoints = lift(&frame.ppoints, &depth.ppoints)?;
    let lpoints = lift(&frame.lpoints, &depth.lpoints)?;
    let lines = frame
        .lines
        .iter()
        .map(|line| {
            let mut lifted = line.lpoint_indices.iter().filter_map(|&q| lpoints[q]);
            let first = lifted.next()?;
            let last = lifted.next_back()?;
            Some((first, last))
        })
        .collect();
    Ok(LiftedFrame { ppoints, lpoints, lines, skipped })
}
