//! Trajectory alignment, absolute pose error and match statistics.

use nalgebra::{Matrix3, Vector3};

use super::{PairLog, Trajectory, VoError};
use crate::geometry::SE3Pose;

/// Similarity transform `p ↦ s·R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Alignment {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros(), scale: 1.0 }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// Applies the alignment to every pose of `traj`.
    pub fn apply_trajectory(&self, traj: &Trajectory) -> Trajectory {
        let entries = traj
            .iter()
            .map(|(id, p)| {
                let rot = self.rotation * p.rotation();
                let pose = SE3Pose::new(rot, self.apply(p.translation())).unwrap_or_else(|_| {
                    // Re-orthonormalize accumulated rounding.
                    let svd = rot.svd(true, true);
                    SE3Pose::new(svd.u.unwrap() * svd.v_t.unwrap(), self.apply(p.translation())).expect("orthonormalized rotation")
                });
                (id, pose)
            })
            .collect();
        Trajectory::new(entries).expect("ids unchanged")
    }
}

fn check_pairing(traj: &Trajectory, gt: &Trajectory) -> Result<(), VoError> {
    if traj.len() != gt.len() {
        return Err(VoError::LengthMismatch(traj.len(), gt.len()));
    }
    if traj.frame_ids() != gt.frame_ids() {
        return Err(VoError::FrameMismatch);
    }
    Ok(())
}

/// Closed-form least-squares alignment of the positions of `traj` onto
/// those of `gt` (Umeyama). Without `with_scale` the scale is fixed to 1.
pub fn align_umeyama(traj: &Trajectory, gt: &Trajectory, with_scale: bool) -> Result<(Trajectory, Alignment), VoError> {
    check_pairing(traj, gt)?;
    let n = traj.len();
    if n < 3 {
        return Err(VoError::LengthMismatch(n, 3));
    }
    let src: Vec<Vector3<f64>> = traj.poses().map(|p| *p.translation()).collect();
    let dst: Vec<Vector3<f64>> = gt.poses().map(|p| *p.translation()).collect();
    let nf = n as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / nf;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    let mut src_cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(&dst) {
        let (cs, cd) = (s - mu_s, d - mu_d);
        cov += cd * cs.transpose();
        src_cov += cs * cs.transpose();
        var_s += cs.norm_squared();
    }
    cov /= nf;
    var_s /= nf;

    let sv = src_cov.singular_values();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted[0] <= 1e-18 || sorted[1] <= 1e-10 * sorted[0] {
        return Err(VoError::DegenerateGeometry);
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = if with_scale {
        let d = svd.singular_values;
        (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_s
    } else {
        1.0
    };
    let translation = mu_d - scale * rotation * mu_s;
    let alignment = Alignment { rotation, translation, scale };
    Ok((alignment.apply_trajectory(traj), alignment))
}

/// Per-frame absolute position error and its summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ApeReport {
    pub series: Vec<(u64, f64)>,
    /// Relative rotation angle per frame (radians); logged, not summarized.
    pub rotation_series: Vec<(u64, f64)>,
    pub rmse: f64,
    pub mean: f64,
    pub max: f64,
}

/// `APE_k = ‖t̂_k − t_k‖` over already-aligned trajectories.
pub fn ape(traj: &Trajectory, gt: &Trajectory) -> Result<ApeReport, VoError> {
    check_pairing(traj, gt)?;
    let mut series = Vec::with_capacity(traj.len());
    let mut rotation_series = Vec::with_capacity(traj.len());
    for ((id, est), (_, truth)) in traj.iter().zip(gt.iter()) {
        series.push((id, (est.translation() - truth.translation()).norm()));
        rotation_series.push((id, truth.inverse().compose(est).rotation_angle()));
    }
    let n = series.len().max(1) as f64;
    let rmse = (series.iter().map(|(_, e)| e * e).sum::<f64>() / n).sqrt();
    let mean = series.iter().map(|(_, e)| e).sum::<f64>() / n;
    let max = series.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(ApeReport { series, rotation_series, rmse, mean, max })
}

/// APE both in the raw world frame and after Umeyama alignment; the
/// aligned report is `None` when the positions are degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub raw: ApeReport,
    pub aligned: Option<(ApeReport, Alignment)>,
}

pub fn evaluate(traj: &Trajectory, gt: &Trajectory, with_scale: bool) -> Result<Evaluation, VoError> {
    let raw = ape(traj, gt)?;
    let aligned = match align_umeyama(traj, gt, with_scale) {
        Ok((aligned, t)) => Some((ape(&aligned, gt)?, t)),
        Err(VoError::DegenerateGeometry) | Err(VoError::LengthMismatch(_, 3)) => None,
        Err(e) => return Err(e),
    };
    Ok(Evaluation { raw, aligned })
}

/// Detection and match totals over a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatchStats {
    pub point_detections: usize,
    pub point_matches: usize,
    pub point_match_pct: f64,
    pub line_detections: usize,
    pub line_matches: usize,
    pub line_match_pct: f64,
    /// Set when a percentage had no detections to divide by.
    pub point_pct_undefined: bool,
    pub line_pct_undefined: bool,
}

fn pct(matches: usize, detections: usize) -> (f64, bool) {
    if detections == 0 {
        (0.0, true)
    } else {
        (100.0 * matches as f64 / detections as f64, false)
    }
}

pub fn match_stats(logs: &[PairLog]) -> MatchStats {
    let point_detections = logs.iter().map(|l| l.point_detections).sum();
    let point_matches = logs.iter().map(|l| l.point_matches).sum();
    let line_detections = logs.iter().map(|l| l.line_detections).sum();
    let line_matches = logs.iter().map(|l| l.line_matches).sum();
    let (point_match_pct, point_pct_undefined) = pct(point_matches, point_detections);
    let (line_match_pct, line_pct_undefined) = pct(line_matches, line_detections);
    MatchStats {
        point_detections,
        point_matches,
        point_match_pct,
        line_detections,
        line_matches,
        line_match_pct,
        point_pct_undefined,
        line_pct_undefined,
    }
}

impl MatchStats {
    pub const CSV_HEADER: &'static str = "label,point_detections,point_matches,point_match_pct,line_detections,line_matches,line_match_pct";

    pub fn csv_row(&self, label: &str) -> String {
        format!(
            "{label},{},{},{:.2},{},{},{:.2}",
            self.point_detections, self.point_matches, self.point_match_pct, self.line_detections, self.line_matches, self.line_match_pct
        )
    }
}

/// Fixed-width plain-text table of labelled stats rows.
pub fn stats_table(rows: &[(String, MatchStats)]) -> String {
    let headers = ["run", "P det", "P match", "P %", "L det", "L match", "L %"];
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|(label, s)| {
            let p = |v: f64, undefined: bool| if undefined { "n/a".to_string() } else { format!("{v:.2}") };
            [
                label.clone(),
                s.point_detections.to_string(),
                s.point_matches.to_string(),
                p(s.point_match_pct, s.point_pct_undefined),
                s.line_detections.to_string(),
                s.line_matches.to_string(),
                p(s.line_match_pct, s.line_pct_undefined),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..7).map(|c| cells.iter().map(|r| r[c].len()).chain([headers[c].len()]).max().unwrap_or(0)).collect();
    let mut out = String::new();
    let fmt_row = |out: &mut String, row: &[&str]| {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    };
    fmt_row(&mut out, &headers);
    for r in &cells {
        fmt_row(&mut out, &r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}
