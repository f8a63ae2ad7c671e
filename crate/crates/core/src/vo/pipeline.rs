use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{match_stats, MatchStats, PairLog, Trajectory, VoError};
use crate::codec::{apply_mask, MaskImage};
use crate::geometry::{CameraRig, FrameFeatures, SE3Pose};
use crate::matcher::{FrameMatcher, FrameMatches};
use crate::pose::{lift_frame, ransac_pose, Correspondence, LiftedFrame, PoseError, RansacConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackConfig {
    pub ransac: RansacConfig,
    /// Median point displacement (px) below which a pair counts as stationary.
    pub stationary_px: f64,
    pub use_points: bool,
    pub use_lines: bool,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self { ransac: RansacConfig::default(), stationary_px: 0.3, use_points: true, use_lines: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub trajectory: Trajectory,
    pub stats: MatchStats,
    pub logs: Vec<PairLog>,
}

/// 2D–3D correspondences from the lifted frame A to the observations in B.
pub fn build_correspondences(
    lifted_a: &LiftedFrame,
    b: &FrameFeatures,
    a: &FrameFeatures,
    matches: &FrameMatches,
    use_points: bool,
    use_lines: bool,
) -> Vec<Correspondence> {
    let mut out = Vec::new();
    if use_points {
        for m in &matches.points.pairs {
            if let Some(world) = lifted_a.ppoints[m.i] {
                out.push(Correspondence::Point { world, observed: b.ppoints[m.j].position() });
            }
        }
    }
    if use_lines {
        for lm in &matches.lines {
            let ia = a.lines.iter().position(|l| l.id == lm.line_id_a);
            let lb = b.lines.iter().find(|l| l.id == lm.line_id_b);
            if let (Some(ia), Some(lb)) = (ia, lb) {
                if let Some((p, q)) = lifted_a.lines[ia] {
                    out.push(Correspondence::Line { a: p, b: q, observed_a: lb.a, observed_b: lb.b });
                }
            }
        }
    }
    out
}

/// Median pixel displacement of the matched P-points, if any.
fn median_displacement(a: &FrameFeatures, b: &FrameFeatures, matches: &FrameMatches) -> Option<f64> {
    let mut d: Vec<f64> = matches.points.pairs.iter().map(|m| (b.ppoints[m.j].position() - a.ppoints[m.i].position()).norm()).collect();
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    Some(if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) })
}

struct Prepared {
    log: PairLog,
    correspondences: Vec<Correspondence>,
    stationary: bool,
}

fn prepare(
    a: &Result<FrameFeatures, String>,
    b: &Result<FrameFeatures, String>,
    camera: &CameraRig,
    matcher: &FrameMatcher,
    cfg: &TrackConfig,
    log: PairLog,
) -> Result<Prepared, (PairLog, String)> {
    let (a, b) = match (a, b) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Err((log, e.clone())),
    };
    let mut log = log;
    log.point_detections = a.ppoints.len();
    log.line_detections = a.lines.len();
    let matches = match matcher.match_frames(a, b) {
        Ok(m) => m,
        Err(e) => return Err((log, e.to_string())),
    };
    log.point_matches = matches.points.pairs.len();
    log.line_matches = matches.lines.len();
    let lifted = match lift_frame(a, camera) {
        Ok(l) => l,
        Err(e) => return Err((log, e.to_string())),
    };
    let stationary = median_displacement(a, b, &matches).is_some_and(|d| d < cfg.stationary_px);
    let correspondences = build_correspondences(&lifted, b, a, &matches, cfg.use_points, cfg.use_lines);
    Ok(Prepared { log, correspondences, stationary })
}

/// Frame-to-frame odometry over `frames`.
///
/// Matching and lifting run in parallel over pairs; pose solving and
/// composition follow frame order. A pair whose pose cannot be solved
/// reuses the previous relative pose and is flagged in its log.
pub fn track(
    frames: &[FrameFeatures],
    masks: Option<&[MaskImage]>,
    camera: &CameraRig,
    matcher: &FrameMatcher,
    cfg: &TrackConfig,
) -> Result<TrackOutput, VoError> {
    if frames.len() < 2 {
        return Err(VoError::EmptySequence);
    }
    if let Some(w) = frames.windows(2).find(|w| w[1].frame_id <= w[0].frame_id) {
        return Err(VoError::NonIncreasingFrameIds(w[0].frame_id, w[1].frame_id));
    }
    if let Some(m) = masks {
        if m.len() != frames.len() {
            return Err(VoError::LengthMismatch(m.len(), frames.len()));
        }
    }
    let masked: Vec<Result<FrameFeatures, String>> = frames
        .iter()
        .enumerate()
        .map(|(k, f)| match masks {
            Some(m) => apply_mask(f, &m[k]).map_err(|e| format!("frame {}: {e}", f.frame_id)),
            None => Ok(f.clone()),
        })
        .collect();
    let prepared: Vec<Result<Prepared, (PairLog, String)>> = (0..frames.len() - 1)
        .into_par_iter()
        .map(|k| {
            let log = PairLog { frame_a: frames[k].frame_id, frame_b: frames[k + 1].frame_id, ..Default::default() };
            prepare(&masked[k], &masked[k + 1], camera, matcher, cfg, log)
        })
        .collect();

    let mut poses = vec![(frames[0].frame_id, SE3Pose::identity())];
    let mut logs = Vec::with_capacity(prepared.len());
    let mut velocity = SE3Pose::identity();
    for (k, item) in prepared.into_iter().enumerate() {
        let (relative, log) = match item {
            Ok(p) if p.stationary => {
                let mut log = p.log;
                log.stationary = true;
                (SE3Pose::identity(), log)
            }
            Ok(p) => {
                let mut log = p.log;
                let ransac = RansacConfig { seed: cfg.ransac.seed.wrapping_add(k as u64), ..cfg.ransac };
                match ransac_pose(&p.correspondences, camera, &velocity, &ransac) {
                    Ok(est) => {
                        log.inliers = est.inliers.len();
                        log.residual_rms = est.residual_rms;
                        velocity = est.pose;
                        (est.pose, log)
                    }
                    Err(e) => {
                        log.fallback = true;
                        log.error = Some(pose_message(&e));
                        (velocity, log)
                    }
                }
            }
            Err((mut log, message)) => {
                log.fallback = true;
                log.error = Some(message);
                (velocity, log)
            }
        };
        let last = poses.last().expect("seeded with the first frame").1;
        poses.push((frames[k + 1].frame_id, last.compose(&relative.inverse())));
        logs.push(log);
    }
    Ok(TrackOutput { trajectory: Trajectory::new(poses)?, stats: match_stats(&logs), logs })
}

fn pose_message(e: &PoseError) -> String {
    format!("pose: {e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, EncoderWeights};
    use crate::matcher::MatcherConfig;
    use crate::synth::{bounds_around, generate_trajectory, generate_world, render_frame, DegradationProfile, PathKind, RenderConfig, TrajectoryConfig, WorldConfig};

    fn matcher() -> FrameMatcher {
        let cfg = EncoderConfig { layers: 0, position_encoding: false, metric_noise: 0.0, ..Default::default() };
        let w = EncoderWeights::init(cfg).unwrap();
        FrameMatcher::new(w.clone(), w, MatcherConfig::default()).unwrap()
    }

    fn run(path: PathKind, frames: usize) -> (Vec<FrameFeatures>, Vec<SE3Pose>) {
        let poses = generate_trajectory(&TrajectoryConfig { path, frames, ..Default::default() });
        let bounds = bounds_around(&poses, 30.0, 4.0);
        let world = generate_world(21, &WorldConfig { bounds, n_points: 400, n_lines: 60, ..Default::default() });
        let cam = CameraRig::default_vga();
        let feats = poses
            .iter()
            .enumerate()
            .map(|(k, p)| render_frame(&world, &p.inverse(), &cam, &DegradationProfile::noise_free(), &RenderConfig::default(), k as u64, k as u64))
            .collect();
        (feats, poses)
    }

    #[test]
    fn static_sequence_stays_at_identity() {
        let (frames, _) = run(PathKind::Straight, 1);
        let repeated: Vec<FrameFeatures> = (0..4).map(|k| FrameFeatures { frame_id: k, ..frames[0].clone() }).collect();
        let out = track(&repeated, None, &CameraRig::default_vga(), &matcher(), &TrackConfig::default()).unwrap();
        assert_eq!(out.trajectory.len(), 4);
        for p in out.trajectory.poses() {
            assert!((p.to_homogeneous() - SE3Pose::identity().to_homogeneous()).abs().max() < 1e-9);
        }
        assert!(out.logs.iter().all(|l| l.stationary));
    }

    #[test]
    fn noise_free_straight_run_is_exact() {
        let (frames, truth) = run(PathKind::Straight, 12);
        let out = track(&frames, None, &CameraRig::default_vga(), &matcher(), &TrackConfig::default()).unwrap();
        assert!(out.logs.iter().all(|l| !l.fallback), "{:?}", out.logs);
        let last = out.trajectory.last().unwrap().1;
        assert!((last.translation() - truth.last().unwrap().translation()).norm() < 1e-6);
    }

    #[test]
    fn failures_fall_back_without_aborting() {
        let (mut frames, _) = run(PathKind::Straight, 4);
        let cam = CameraRig::default_vga();
        frames[2].ppoints.clear();
        frames[2].lines.clear();
        frames[2].lpoints.clear();
        frames[2].depth = None;
        frames[2].labels = None;
        let out = track(&frames, None, &cam, &matcher(), &TrackConfig::default()).unwrap();
        assert_eq!(out.trajectory.len(), frames.len());
        assert!(out.logs[1].fallback && out.logs[2].fallback);
        assert!(out.logs[1].error.is_some());
        // The fallback repeats the previous relative motion.
        let p: Vec<&SE3Pose> = out.trajectory.poses().collect();
        let step0 = p[0].inverse().compose(p[1]);
        let step1 = p[1].inverse().compose(p[2]);
        assert!((step0.to_homogeneous() - step1.to_homogeneous()).abs().max() < 1e-9);
    }

    #[test]
    fn masks_remove_features_and_mismatched_lengths_fail() {
        let (frames, _) = run(PathKind::Straight, 3);
        let cam = CameraRig::default_vga();
        let masks = vec![MaskImage::filled(640, 480, false); 3];
        let out = track(&frames, Some(&masks), &cam, &matcher(), &TrackConfig::default()).unwrap();
        assert!(out.logs.iter().all(|l| l.point_detections == 0 && l.fallback));
        assert_eq!(track(&frames, Some(&masks[..2]), &cam, &matcher(), &TrackConfig::default()), Err(VoError::LengthMismatch(2, 3)));
        assert_eq!(track(&frames[..1], None, &cam, &matcher(), &TrackConfig::default()), Err(VoError::EmptySequence));
    }
}
