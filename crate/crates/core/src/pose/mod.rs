//! Stereo lifting and robust 3D-to-2D pose estimation from point and
//! line correspondences.

mod lift;
mod ransac;

pub use lift::{lift_frame, LiftedFrame};
pub use ransac::{ransac_pose, RansacConfig};

use nalgebra::{SMatrix, SVector, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{CameraRig, GeometryError, SE3Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    #[error("normal equations are singular even with damping")]
    SingularNormalEquations,
    #[error("no consensus: best hypothesis has {0} inliers")]
    NoConsensus(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A 3D feature from frame i and its observation in frame i+1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correspondence {
    Point { world: Vector3<f64>, observed: Vector2<f64> },
    /// 3D segment endpoints and two pixels spanning the observed 2D line.
    Line { a: Vector3<f64>, b: Vector3<f64>, observed_a: Vector2<f64>, observed_b: Vector2<f64> },
}

impl Correspondence {
    pub fn is_point(&self) -> bool {
        matches!(self, Correspondence::Point { .. })
    }

    /// Two residual components in pixels: observed minus projected for
    /// points, signed distances of both projected endpoints to the
    /// observed infinite line for lines.
    pub fn residual(&self, pose: &SE3Pose, camera: &CameraRig) -> Result<Vector2<f64>, GeometryError> {
        match self {
            Correspondence::Point { world, observed } => Ok(observed - crate::geometry::project(camera, pose, world)?),
            Correspondence::Line { a, b, observed_a, observed_b } => {
                let pa = crate::geometry::project(camera, pose, a)?;
                let pb = crate::geometry::project(camera, pose, b)?;
                let d = observed_b - observed_a;
                let len = d.norm();
                if len == 0.0 {
                    return Err(GeometryError::InvalidFrame("observed line has coincident endpoints".into()));
                }
                let normal = Vector2::new(-d.y, d.x) / len;
                Ok(Vector2::new(normal.dot(&(pa - observed_a)), normal.dot(&(pb - observed_a))))
            }
        }
    }
}

/// Stacked residuals of every correspondence.
pub fn pose_residuals(pose: &SE3Pose, correspondences: &[Correspondence], camera: &CameraRig) -> Result<Vec<f64>, PoseError> {
    let mut out = Vec::with_capacity(2 * correspondences.len());
    for c in correspondences {
        let r = c.residual(pose, camera)?;
        out.extend([r.x, r.y]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnConfig {
    /// Huber threshold on each correspondence's residual norm (px).
    pub huber_delta: f64,
    pub max_iters: usize,
    /// Stop once the tangent step norm falls below this.
    pub tol: f64,
}

impl Default for GnConfig {
    fn default() -> Self {
        Self { huber_delta: 2.0, max_iters: 50, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    /// Frame i → frame i+1.
    pub pose: SE3Pose,
    pub inliers: Vec<usize>,
    /// RMS of the scalar residuals of the inliers (px).
    pub residual_rms: f64,
    pub iterations: usize,
    /// Robust cost before the first and after every accepted iteration.
    pub cost_history: Vec<f64>,
}

fn huber(norm: f64, delta: f64) -> f64 {
    if norm <= delta {
        0.5 * norm * norm
    } else {
        delta * (norm - 0.5 * delta)
    }
}

/// Robust cost, or `None` if a feature falls behind the camera.
fn robust_cost(pose: &SE3Pose, corr: &[Correspondence], camera: &CameraRig, delta: f64) -> Option<f64> {
    corr.iter().map(|c| c.residual(pose, camera).ok().map(|r| huber(r.norm(), delta))).sum()
}

pub(crate) fn rms(pose: &SE3Pose, corr: &[Correspondence], camera: &CameraRig) -> f64 {
    if corr.is_empty() {
        return 0.0;
    }
    let sq: f64 = corr.iter().map(|c| c.residual(pose, camera).map_or(f64::INFINITY, |r| r.norm_squared())).sum();
    (sq / (2 * corr.len()) as f64).sqrt()
}

const JACOBIAN_STEP: f64 = 1e-6;
/// Normal equations whose eigenvalue ratio falls below this are singular.
const CONDITION_LIMIT: f64 = 1e-10;
const DAMPING: f64 = 1e-6;

/// Central-difference Jacobian of one correspondence's residual with
/// respect to the left tangent perturbation.
fn numeric_jacobian(c: &Correspondence, pose: &SE3Pose, camera: &CameraRig) -> Result<SMatrix<f64, 2, 6>, GeometryError> {
    let mut j = SMatrix::<f64, 2, 6>::zeros();
    for k in 0..6 {
        let mut xi = [0.0; 6];
        xi[k] = JACOBIAN_STEP;
        let plus = c.residual(&pose.retract(&xi), camera)?;
        xi[k] = -JACOBIAN_STEP;
        let minus = c.residual(&pose.retract(&xi), camera)?;
        j.set_column(k, &((plus - minus) / (2.0 * JACOBIAN_STEP)));
    }
    Ok(j)
}

fn solve(h: &SMatrix<f64, 6, 6>, g: &SVector<f64, 6>) -> Result<SVector<f64, 6>, PoseError> {
    let well_posed = |m: &SMatrix<f64, 6, 6>| {
        let eig = m.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        hi > 0.0 && lo > CONDITION_LIMIT * hi
    };
    let mut m = *h;
    if !well_posed(&m) {
        m += SMatrix::<f64, 6, 6>::identity() * DAMPING;
        if !well_posed(&m) {
            return Err(PoseError::SingularNormalEquations);
        }
    }
    m.cholesky().map(|c| c.solve(g)).ok_or(PoseError::SingularNormalEquations)
}

/// Gauss–Newton with Huber IRLS weights on the SE3 tangent at the
/// current estimate. Steps that would raise the robust cost are halved
/// until they do not; if none helps, the estimate has converged.
pub fn estimate_pose_gn(correspondences: &[Correspondence], camera: &CameraRig, init: &SE3Pose, cfg: &GnConfig) -> Result<PoseEstimate, PoseError> {
    if correspondences.len() < 3 {
        return Err(PoseError::InsufficientCorrespondences { needed: 3, got: correspondences.len() });
    }
    let mut pose = *init;
    let mut cost = robust_cost(&pose, correspondences, camera, cfg.huber_delta)
        .ok_or(GeometryError::NonPositiveDepth(0.0))?;
    let mut history = vec![cost];
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut h = SMatrix::<f64, 6, 6>::zeros();
        let mut g = SVector::<f64, 6>::zeros();
        for c in correspondences {
            let r = c.residual(&pose, camera)?;
            let norm = r.norm();
            let w = if norm <= cfg.huber_delta { 1.0 } else { cfg.huber_delta / norm };
            let j = numeric_jacobian(c, &pose, camera)?;
            h += j.transpose() * j * w;
            g -= j.transpose() * r * w;
        }
        let step = solve(&h, &g)?;
        if step.norm() < cfg.tol {
            break;
        }
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let xi: [f64; 6] = (step * scale).into();
            let candidate = pose.retract(&xi);
            if let Some(c) = robust_cost(&candidate, correspondences, camera, cfg.huber_delta) {
                if c <= cost {
                    pose = candidate;
                    cost = c;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        history.push(cost);
        if step.norm() * scale < cfg.tol {
            break;
        }
    }
    Ok(PoseEstimate {
        pose,
        inliers: (0..correspondences.len()).collect(),
        residual_rms: rms(&pose, correspondences, camera),
        iterations,
        cost_history: history,
    })
}

/// Translation error (m) and rotation error (rad) of `est` against `truth`.
pub fn pose_error(est: &SE3Pose, truth: &SE3Pose) -> (f64, f64) {
    let diff = est.compose(&truth.inverse());
    ((est.translation() - truth.translation()).norm(), diff.rotation_angle())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn scene(rng: &mut ChaCha8Rng, n_points: usize, n_lines: usize, truth: &SE3Pose, noise: f64) -> Vec<Correspondence> {
        let cam = CameraRig::default_vga();
        let mut out = Vec::new();
        let sample = |rng: &mut ChaCha8Rng| loop {
            let p = Vector3::new(rng.random_range(-6.0..6.0), rng.random_range(-4.0..4.0), rng.random_range(4.0..20.0));
            let q = truth.transform_point(&p);
            if q.z > 1.0 && crate::geometry::project(&cam, truth, &p).is_ok_and(|uv| cam.in_image(uv.x, uv.y)) {
                return p;
            }
        };
        let jitter = |rng: &mut ChaCha8Rng| Vector2::new(rng.random_range(-noise..=noise), rng.random_range(-noise..=noise));
        for _ in 0..n_points {
            let p = sample(rng);
            out.push(Correspondence::Point { world: p, observed: crate::geometry::project(&cam, truth, &p).unwrap() + jitter(rng) });
        }
        for _ in 0..n_lines {
            let (a, b) = (sample(rng), sample(rng));
            let (pa, pb) = (crate::geometry::project(&cam, truth, &a).unwrap(), crate::geometry::project(&cam, truth, &b).unwrap());
            // Observed endpoints slide along the line: only the line itself is measured.
            let (oa, ob) = (pa + (pb - pa) * 0.1, pa + (pb - pa) * 0.8);
            out.push(Correspondence::Line { a, b, observed_a: oa + jitter(rng), observed_b: ob + jitter(rng) });
        }
        out
    }

    fn motion() -> SE3Pose {
        SE3Pose::from_axis_angle(Vector3::new(0.0, 5f64.to_radians(), 0.0), Vector3::new(0.3, 0.0, 0.4))
    }

    #[test]
    fn residual_examples() {
        let cam = CameraRig::new(1.0, 1.0, 320.0, 240.0, 0.5, 640, 480).unwrap();
        let c = Correspondence::Point { world: Vector3::new(0.0, 0.0, 1.0), observed: Vector2::new(325.0, 240.0) };
        assert_eq!(c.residual(&SE3Pose::identity(), &cam).unwrap(), Vector2::new(5.0, 0.0));
        let behind = Correspondence::Point { world: Vector3::new(0.0, 0.0, -1.0), observed: Vector2::zeros() };
        assert!(matches!(pose_residuals(&SE3Pose::identity(), &[behind], &cam), Err(PoseError::Geometry(GeometryError::NonPositiveDepth(_)))));
        let line = Correspondence::Line {
            a: Vector3::new(0.0, 0.0, 1.0),
            b: Vector3::new(1.0, 0.0, 1.0),
            observed_a: Vector2::new(0.0, 243.0),
            observed_b: Vector2::new(10.0, 243.0),
        };
        let r = line.residual(&SE3Pose::identity(), &cam).unwrap();
        assert!((r.x.abs() - 3.0).abs() < 1e-12 && (r.y.abs() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn residuals_match_projection_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = motion();
        let corr = scene(&mut rng, 10, 0, &truth, 0.0);
        let perturbed = truth.retract(&[0.01, -0.02, 0.005, 0.1, 0.0, -0.05]);
        let r = pose_residuals(&perturbed, &corr, &CameraRig::default_vga()).unwrap();
        let (rm, t) = (perturbed.rotation(), perturbed.translation());
        for (k, c) in corr.iter().enumerate() {
            let Correspondence::Point { world, observed } = c else { unreachable!() };
            let x = rm[(0, 0)] * world.x + rm[(0, 1)] * world.y + rm[(0, 2)] * world.z + t.x;
            let y = rm[(1, 0)] * world.x + rm[(1, 1)] * world.y + rm[(1, 2)] * world.z + t.y;
            let z = rm[(2, 0)] * world.x + rm[(2, 1)] * world.y + rm[(2, 2)] * world.z + t.z;
            assert!((r[2 * k] - (observed.x - (400.0 * x / z + 320.0))).abs() < 1e-9);
            assert!((r[2 * k + 1] - (observed.y - (400.0 * y / z + 240.0))).abs() < 1e-9);
        }
    }

    #[test]
    fn ground_truth_residuals_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = motion();
        let corr = scene(&mut rng, 10, 10, &truth, 0.0);
        let r = pose_residuals(&truth, &corr, &CameraRig::default_vga()).unwrap();
        assert!(r.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn numeric_jacobian_matches_analytic_for_points() {
        let cam = CameraRig::default_vga();
        let pose = motion();
        let world = Vector3::new(1.0, -0.5, 8.0);
        let c = Correspondence::Point { world, observed: Vector2::new(300.0, 200.0) };
        let p = pose.transform_point(&world);
        // d(observed − π(p'))/dξ with p' ≈ p + ω×p + v.
        let dproj = SMatrix::<f64, 2, 3>::new(cam.fx / p.z, 0.0, -cam.fx * p.x / (p.z * p.z), 0.0, cam.fy / p.z, -cam.fy * p.y / (p.z * p.z));
        let skew = Matrix3::new(0.0, -p.z, p.y, p.z, 0.0, -p.x, -p.y, p.x, 0.0);
        let mut analytic = SMatrix::<f64, 2, 6>::zeros();
        analytic.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-dproj * -skew));
        analytic.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-dproj));
        let numeric = numeric_jacobian(&c, &pose, &cam).unwrap();
        assert!((numeric - analytic).abs().max() < 1e-5, "{numeric}\n{analytic}");
    }

    #[test]
    fn ground_truth_init_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = motion();
        let corr = scene(&mut rng, 20, 5, &truth, 0.0);
        let est = estimate_pose_gn(&corr, &CameraRig::default_vga(), &truth, &GnConfig::default()).unwrap();
        assert!(est.iterations <= 1);
        assert!((est.pose.to_homogeneous() - truth.to_homogeneous()).abs().max() < 1e-10);
    }

    #[test]
    fn recovers_motion_from_identity() {
        let cam = CameraRig::default_vga();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = motion();
            let corr = scene(&mut rng, 15, 8, &truth, 0.0);
            let est = estimate_pose_gn(&corr, &cam, &SE3Pose::identity(), &GnConfig::default()).unwrap();
            let (dt, dr) = pose_error(&est.pose, &truth);
            assert!(dt < 1e-6 && dr < 1e-6, "seed {seed}: {dt} {dr}");
            assert!(est.cost_history.windows(2).all(|w| w[1] <= w[0]));
            // Lines alone also pin the pose down.
            let lines: Vec<_> = corr.iter().filter(|c| !c.is_point()).copied().collect();
            let est = estimate_pose_gn(&lines, &cam, &SE3Pose::identity(), &GnConfig::default()).unwrap();
            let (dt, dr) = pose_error(&est.pose, &truth);
            assert!(dt < 1e-6 && dr < 1e-6, "lines, seed {seed}: {dt} {dr}");
        }
    }

    #[test]
    fn robust_cost_never_increases_with_outliers() {
        let cam = CameraRig::default_vga();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = motion();
        let mut corr = scene(&mut rng, 30, 5, &truth, 1.0);
        for c in corr.iter_mut().take(5) {
            if let Correspondence::Point { observed, .. } = c {
                *observed += Vector2::new(40.0, -25.0);
            }
        }
        let est = estimate_pose_gn(&corr, &cam, &SE3Pose::identity(), &GnConfig::default()).unwrap();
        assert!(est.cost_history.len() > 1);
        assert!(est.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn forward_and_backward_estimates_are_inverse() {
        let cam = CameraRig::default_vga();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = motion();
        let fwd_corr = scene(&mut rng, 25, 0, &truth, 0.0);
        // Lift the observations in frame i+1 to build the reverse problem.
        let back_corr: Vec<Correspondence> = fwd_corr
            .iter()
            .map(|c| {
                let Correspondence::Point { world, .. } = c else { unreachable!() };
                let q = truth.transform_point(world);
                Correspondence::Point { world: q, observed: crate::geometry::project(&cam, &SE3Pose::identity(), world).unwrap() }
            })
            .collect();
        let fwd = estimate_pose_gn(&fwd_corr, &cam, &SE3Pose::identity(), &GnConfig::default()).unwrap();
        let back = estimate_pose_gn(&back_corr, &cam, &SE3Pose::identity(), &GnConfig::default()).unwrap();
        let loop_pose = fwd.pose.compose(&back.pose);
        assert!((loop_pose.to_homogeneous() - SE3Pose::identity().to_homogeneous()).abs().max() < 1e-6);
    }

    #[test]
    fn error_shrinks_with_correspondence_count() {
        // Exact data drives every count to round-off, so this uses
        // half-pixel noise averaged over seeds.
        let cam = CameraRig::default_vga();
        let truth = motion();
        let mean_error = |n: usize| {
            (0..20u64)
                .map(|seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
                    let corr = scene(&mut rng, n, 0, &truth, 0.5);
                    let est = estimate_pose_gn(&corr, &cam, &SE3Pose::identity(), &GnConfig::default()).unwrap();
                    pose_error(&est.pose, &truth).0
                })
                .sum::<f64>()
                / 20.0
        };
        let errors: Vec<f64> = [5, 10, 20, 50].into_iter().map(mean_error).collect();
        assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    }

    #[test]
    fn too_few_and_degenerate() {
        let cam = CameraRig::default_vga();
        let p = Correspondence::Point { world: Vector3::new(0.0, 0.0, 5.0), observed: Vector2::new(320.0, 240.0) };
        assert!(matches!(
            estimate_pose_gn(&[p, p], &cam, &SE3Pose::identity(), &GnConfig::default()),
            Err(PoseError::InsufficientCorrespondences { needed: 3, got: 2 })
        ));
        let same = vec![Correspondence::Point { world: Vector3::new(0.5, 0.2, 5.0), observed: Vector2::new(330.0, 250.0) }; 10];
        assert_eq!(estimate_pose_gn(&same, &cam, &SE3Pose::identity(), &GnConfig::default()), Err(PoseError::SingularNormalEquations));
    }
}
