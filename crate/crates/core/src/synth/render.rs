use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::profiles::DegradationProfile;
use super::world::World;
use crate::geometry::{CameraRig, DepthCue, FeatureDepths, FrameFeatures, Keypoint, LandmarkLabels, LineSegment, SE3Pose};
use crate::lines::{sample_line_points, SamplingConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub sampling: SamplingConfig,
    /// Landmarks closer than this (m) are not detected.
    pub near: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { sampling: SamplingConfig::default(), near: 0.1 }
    }
}

// Independent random streams so that changing one degradation knob does
// not reshuffle the draws of the others.
const DROP_POINTS: u64 = 1;
const DROP_LINES: u64 = 2;
const PIXEL_NOISE: u64 = 3;
const DESC_NOISE: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Noise {
    pixel: ChaCha8Rng,
    desc: ChaCha8Rng,
    pixel_sigma: f64,
    desc_sigma: f64,
    confidence_scale: f64,
}

impl Noise {
    fn keypoint(&mut self, uv: Vector2<f64>, confidence: f64, latent: &[f64]) -> Keypoint {
        let (mut u, mut v) = (uv.x, uv.y);
        if self.pixel_sigma > 0.0 {
            u += self.pixel_sigma * self.pixel.sample::<f64, _>(StandardNormal);
            v += self.pixel_sigma * self.pixel.sample::<f64, _>(StandardNormal);
        }
        let c = (confidence * self.confidence_scale).clamp(0.0, 1.0);
        if self.desc_sigma > 0.0 {
            let d = latent.iter().map(|x| x + self.desc_sigma * self.desc.sample::<f64, _>(StandardNormal)).collect();
            // Non-zero with probability one; fall back to the latent otherwise.
            Keypoint::new(u, v, c, d).unwrap_or_else(|_| Keypoint::from_normalized(u, v, c, latent.to_vec()).expect("latent is unit norm"))
        } else {
            Keypoint::from_normalized(u, v, c, latent.to_vec()).expect("latent is unit norm")
        }
    }
}

/// Image-space fraction interval of segment `a`→`b` inside the image
/// (Liang–Barsky clipping).
fn clip_to_image(a: Vector2<f64>, b: Vector2<f64>, camera: &CameraRig) -> Option<(f64, f64)> {
    let d = b - a;
    let (w, h) = (camera.width as f64, camera.height as f64);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-d.x, a.x), (d.x, w - a.x), (-d.y, a.y), (d.y, h - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 < t1).then_some((t0, t1))
}

/// Detected features of `world` seen from `world_to_camera`.
///
/// P-points are landmarks in front of the camera that project inside the
/// image. Each visible line is clipped to the image and sampled; every
/// sample snaps to the nearest anchor of the line landmark, and each
/// anchor seen this way becomes one L-point at its exact projection.
/// Lines with fewer than two in-image L-points are not detected. Dropout,
/// pixel noise and descriptor noise follow `profile`.
pub fn render_frame(
    world: &World,
    world_to_camera: &SE3Pose,
    camera: &CameraRig,
    profile: &DegradationProfile,
    cfg: &RenderConfig,
    frame_id: u64,
    seed: u64,
) -> FrameFeatures {
    let mut frame = FrameFeatures::empty(frame_id, camera.width, camera.height);
    let mut depths = FeatureDepths::default();
    let mut labels = LandmarkLabels::default();
    let mut drop_points = stream(seed, DROP_POINTS);
    let mut drop_lines = stream(seed, DROP_LINES);
    let mut noise = Noise {
        pixel: stream(seed, PIXEL_NOISE),
        desc: stream(seed, DESC_NOISE),
        pixel_sigma: profile.pixel_noise_sigma,
        desc_sigma: profile.descriptor_noise_sigma,
        confidence_scale: profile.confidence_scale,
    };

    let visible = |pc: &Vector3<f64>| -> Option<Vector2<f64>> {
        if pc.z <= cfg.near {
            return None;
        }
        let uv = camera.project_camera_point(pc).ok()?;
        camera.in_image(uv.x, uv.y).then_some(uv)
    };

    for lm in &world.points {
        let pc = world_to_camera.transform_point(&lm.position);
        let Some(uv) = visible(&pc) else { continue };
        if drop_points.random::<f64>() < profile.point_dropout {
            continue;
        }
        frame.ppoints.push(noise.keypoint(uv, lm.confidence, &lm.descriptor));
        depths.ppoints.push(Some(DepthCue::Depth(pc.z)));
        labels.ppoints.push(lm.id);
    }

    for line in &world.lines {
        let (ca, cb) = (world_to_camera.transform_point(&line.a), world_to_camera.transform_point(&line.b));
        if ca.z <= cfg.near || cb.z <= cfg.near {
            continue;
        }
        let (Ok(pa), Ok(pb)) = (camera.project_camera_point(&ca), camera.project_camera_point(&cb)) else { continue };
        let Some((f0, f1)) = clip_to_image(pa, pb, camera) else { continue };
        let (ea, eb) = (pa + (pb - pa) * f0, pa + (pb - pa) * f1);
        let Ok(samples) = sample_line_points(ea, eb, &cfg.sampling) else { continue };
        let count = line.anchors.len();
        let half_step = 0.5 / (count - 1) as f64;
        // Best sample per anchor: (distance in t, anchor index).
        let mut best: Vec<Option<f64>> = vec![None; count];
        let last = (samples.len() - 1) as f64;
        for k in 0..samples.len() {
            let f = f0 + (f1 - f0) * k as f64 / last;
            // Image fraction to segment parameter under perspective.
            let t = f * ca.z / (f * ca.z + (1.0 - f) * cb.z);
            let j = (t * (count - 1) as f64).round() as usize;
            let dt = (line.anchors[j].t - t).abs();
            if dt <= half_step + 1e-12 && best[j].is_none_or(|b| dt < b) {
                best[j] = Some(dt);
            }
        }
        let mut picked = Vec::new();
        for (j, anchor) in line.anchors.iter().enumerate() {
            if best[j].is_none() {
                continue;
            }
            let pc = world_to_camera.transform_point(&line.point_at(anchor.t));
            if let Some(uv) = visible(&pc) {
                picked.push((anchor, uv, pc.z));
            }
        }
        if picked.len() < 2 {
            continue;
        }
        if drop_lines.random::<f64>() < profile.line_dropout {
            continue;
        }
        let first = frame.lpoints.len();
        for (anchor, uv, z) in &picked {
            frame.lpoints.push(noise.keypoint(*uv, line.confidence, &anchor.descriptor));
            depths.lpoints.push(Some(DepthCue::Depth(*z)));
            labels.lpoints.push(anchor.id);
        }
        frame.lines.push(LineSegment {
            id: frame.lines.len() as u32 + 1,
            a: ea,
            b: eb,
            lpoint_indices: (first..frame.lpoints.len()).collect(),
        });
        labels.lines.push(line.id);
    }

    frame.depth = Some(depths);
    frame.labels = Some(labels);
    frame
}
