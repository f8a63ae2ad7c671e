use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::SE3Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathKind {
    Straight,
    /// Constant right turn of the given radius (m).
    Arc { radius: f64 },
    /// Lemniscate spanning `width` across and `length` along the start heading (m).
    FigureEight { width: f64, length: f64 },
}

/// A full stop of `frames` frames beginning at frame `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stop {
    pub start: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub path: PathKind,
    pub frames: usize,
    /// Distance travelled per frame (m).
    pub speed: f64,
    pub stops: Vec<Stop>,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self { path: PathKind::Straight, frames: 50, speed: 0.5, stops: vec![] }
    }
}

impl TrajectoryConfig {
    fn stopped(&self, k: usize) -> bool {
        self.stops.iter().any(|s| k >= s.start && k < s.start + s.frames)
    }
}

/// Position and heading (yaw about the camera's y axis) at parameter `s`.
fn sample(path: PathKind, s: f64) -> (Vector3<f64>, f64) {
    match path {
        PathKind::Straight => (Vector3::new(0.0, 0.0, s), 0.0),
        PathKind::Arc { radius } => {
            let th = s / radius;
            (Vector3::new(radius * (1.0 - th.cos()), 0.0, radius * th.sin()), th)
        }
        PathKind::FigureEight { width, length } => {
            let (x, z) = (0.5 * width * (2.0 * s).sin(), length * s.sin());
            let (dx, dz) = (width * (2.0 * s).cos(), length * s.cos());
            (Vector3::new(x, 0.0, z), dx.atan2(dz))
        }
    }
}

fn speed_scale(path: PathKind, s: f64) -> f64 {
    match path {
        PathKind::Straight | PathKind::Arc { .. } => 1.0,
        PathKind::FigureEight { width, length } => {
            let (dx, dz) = (width * (2.0 * s).cos(), length * s.cos());
            (dx * dx + dz * dz).sqrt().max(1e-9)
        }
    }
}

/// Camera-to-world poses, one per frame, starting at the identity. The
/// camera looks along its direction of travel (+z) with y pointing down.
pub fn generate_trajectory(cfg: &TrajectoryConfig) -> Vec<SE3Pose> {
    let mut s = 0.0;
    let mut raw = Vec::with_capacity(cfg.frames);
    for k in 0..cfg.frames {
        let (p, yaw) = sample(cfg.path, s);
        raw.push(SE3Pose::from_axis_angle(Vector3::new(0.0, yaw, 0.0), p));
        if !cfg.stopped(k) {
            s += cfg.speed / speed_scale(cfg.path, s);
        }
    }
    let Some(first) = raw.first().map(SE3Pose::inverse) else { return raw };
    raw.iter().map(|p| first.compose(p)).collect()
}

/// A box around the camera positions, extended by `ahead` metres in every
/// horizontal direction and by `vertical` above and below.
pub fn bounds_around(poses: &[SE3Pose], ahead: f64, vertical: f64) -> super::Bounds {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for p in poses {
        for k in 0..3 {
            min[k] = min[k].min(p.translation()[k]);
            max[k] = max[k].max(p.translation()[k]);
        }
    }
    if poses.is_empty() {
        min = [0.0; 3];
        max = [0.0; 3];
    }
    super::Bounds::new([min[0] - ahead, min[1] - vertical, min[2] - ahead], [max[0] + ahead, max[1] + vertical, max[2] + ahead])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_path_advances_along_z() {
        let poses = generate_trajectory(&TrajectoryConfig { frames: 5, speed: 0.5, ..Default::default() });
        assert_eq!(poses.len(), 5);
        for (k, p) in poses.iter().enumerate() {
            assert!((p.translation() - Vector3::new(0.0, 0.0, 0.5 * k as f64)).norm() < 1e-12);
            assert!(p.rotation_angle() < 1e-12);
        }
    }

    #[test]
    fn stops_hold_position() {
        let cfg = TrajectoryConfig { frames: 8, stops: vec![Stop { start: 2, frames: 3 }], ..Default::default() };
        let poses = generate_trajectory(&cfg);
        for k in 3..=5 {
            assert_eq!(poses[k], poses[2]);
        }
        assert!((poses[6].translation() - poses[5].translation()).norm() > 0.49);
    }

    #[test]
    fn arc_heading_follows_tangent() {
        let poses = generate_trajectory(&TrajectoryConfig { path: PathKind::Arc { radius: 20.0 }, frames: 30, speed: 1.0, stops: vec![] });
        for w in poses.windows(2) {
            let step = w[1].translation() - w[0].translation();
            let forward = w[0].rotation() * Vector3::z();
            // Chord direction is within half a step angle of the heading.
            assert!(step.normalize().dot(&forward) > (0.5f64 / 20.0).cos() - 1e-9);
            assert!((step.norm() - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn figure_eight_starts_at_identity_and_keeps_speed() {
        let cfg = TrajectoryConfig { path: PathKind::FigureEight { width: 20.0, length: 30.0 }, frames: 100, speed: 0.5, stops: vec![] };
        let poses = generate_trajectory(&cfg);
        assert!((poses[0].to_homogeneous() - SE3Pose::identity().to_homogeneous()).abs().max() < 1e-12);
        for w in poses.windows(2) {
            let d = (w[1].translation() - w[0].translation()).norm();
            assert!((d - 0.5).abs() < 0.05, "step {d}");
        }
    }

    #[test]
    fn empty_trajectory() {
        assert!(generate_trajectory(&TrajectoryConfig { frames: 0, ..Default::default() }).is_empty());
    }
}
