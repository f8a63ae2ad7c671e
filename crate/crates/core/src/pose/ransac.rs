use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate_pose_gn, rms, Correspondence, GnConfig, PoseError, PoseEstimate};
use crate::geometry::{CameraRig, SE3Pose};

const MINIMAL_SAMPLE: usize = 4;
const REFINE_ROUNDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier threshold on a correspondence's residual norm (px).
    pub threshold: f64,
    pub seed: u64,
    /// Iteration cap for the per-hypothesis fits.
    pub hypothesis_iters: usize,
    pub huber_delta: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        let gn = GnConfig::default();
        Self { iterations: 200, threshold: 3.0, seed: 0, hypothesis_iters: 20, huber_delta: gn.huber_delta, max_iters: gn.max_iters, tol: gn.tol }
    }
}

impl RansacConfig {
    pub fn gn(&self) -> GnConfig {
        GnConfig { huber_delta: self.huber_delta, max_iters: self.max_iters, tol: self.tol }
    }
}

fn inliers_of(pose: &SE3Pose, corr: &[Correspondence], camera: &CameraRig, threshold: f64) -> Vec<usize> {
    (0..corr.len())
        .filter(|&i| corr[i].residual(pose, camera).is_ok_and(|r| r.norm() < threshold))
        .collect()
}

/// Minimal-sample consensus over Gauss–Newton fits started at `init`.
///
/// Hypotheses run in parallel, each drawing from its own random stream, so
/// the result depends only on the seed. The best hypothesis is the one
/// with the most inliers, then the lowest inlier RMS, then the lowest
/// index.
pub fn ransac_pose(correspondences: &[Correspondence], camera: &CameraRig, init: &SE3Pose, cfg: &RansacConfig) -> Result<PoseEstimate, PoseError> {
    let n = correspondences.len();
    if n < MINIMAL_SAMPLE {
        return Err(PoseError::InsufficientCorrespondences { needed: MINIMAL_SAMPLE, got: n });
    }
    let hypothesis_cfg = GnConfig { max_iters: cfg.hypothesis_iters, ..cfg.gn() };
    let best = (0..cfg.iterations)
        .into_par_iter()
        .filter_map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k as u64);
            let subset: Vec<Correspondence> = sample(&mut rng, n, MINIMAL_SAMPLE).into_iter().map(|i| correspondences[i]).collect();
            let fit = estimate_pose_gn(&subset, camera, init, &hypothesis_cfg).ok()?;
            let inliers = inliers_of(&fit.pose, correspondences, camera, cfg.threshold);
            let chosen: Vec<Correspondence> = inliers.iter().map(|&i| correspondences[i]).collect();
            Some((inliers.len(), rms(&fit.pose, &chosen, camera), k, fit.pose))
        })
        .min_by(|a, b| b.0.cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    let Some((count, _, _, mut pose)) = best else {
        return Err(PoseError::NoConsensus(0));
    };
    if count < MINIMAL_SAMPLE {
        return Err(PoseError::NoConsensus(count));
    }
    let mut inliers = inliers_of(&pose, correspondences, camera, cfg.threshold);
    let mut estimate = None;
    for _ in 0..REFINE_ROUNDS {
        let chosen: Vec<Correspondence> = inliers.iter().map(|&i| correspondences[i]).collect();
        let fit = estimate_pose_gn(&chosen, camera, &pose, &cfg.gn())?;
        pose = fit.pose;
        let next = inliers_of(&pose, correspondences, camera, cfg.threshold);
        let stable = next == inliers;
        estimate = Some(fit);
        if stable || next.len() < MINIMAL_SAMPLE {
            break;
        }
        inliers = next;
    }
    let mut estimate = estimate.expect("at least one refinement round");
    let chosen: Vec<Correspondence> = inliers.iter().map(|&i| correspondences[i]).collect();
    estimate.residual_rms = rms(&estimate.pose, &chosen, camera);
    estimate.inliers = inliers;
    Ok(estimate)
}
