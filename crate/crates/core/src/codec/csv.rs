use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{write_atomic, CodecError};
use crate::geometry::SE3Pose;
use crate::vo::{PairLog, Trajectory};

pub const TRAJECTORY_HEADER: &str = "frame_id,tx,ty,tz,qx,qy,qz,qw";
pub const MATCH_HEADER: &str = "frame_a,frame_b,kind,idx_a,idx_b,score";
pub const LOSS_HEADER: &str = "step,loss";
pub const APE_HEADER: &str = "frame_id,ape_m";
pub const PAIR_LOG_HEADER: &str =
    "frame_a,frame_b,point_detections,point_matches,line_detections,line_matches,inliers,residual_rms,stationary,fallback,error";

fn read(path: &Path) -> Result<String, CodecError> {
    std::fs::read_to_string(path).map_err(|e| CodecError::io(path, e))
}

/// Data rows after checking the header; yields `(line number, fields)`.
fn rows<'a>(text: &'a str, header: &str) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>, CodecError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) => return Err(CodecError::Format { line: 1, message: format!("expected header `{header}`, got `{h}`") }),
        None => return Err(CodecError::Format { line: 0, message: format!("missing header `{header}`") }),
    }
    Ok(lines.filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect())))
}

fn field<T: std::str::FromStr>(fields: &[&str], k: usize, line: usize) -> Result<T, CodecError> {
    let tok = fields.get(k).ok_or_else(|| CodecError::Format { line, message: format!("missing column {k}") })?;
    tok.parse().map_err(|_| CodecError::Format { line, message: format!("invalid value `{tok}` in column {k}") })
}

fn expect_columns(fields: &[&str], n: usize, line: usize) -> Result<(), CodecError> {
    if fields.len() != n {
        return Err(CodecError::Format { line, message: format!("expected {n} columns, got {}", fields.len()) });
    }
    Ok(())
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<(), CodecError> {
    let mut out = format!("{TRAJECTORY_HEADER}\n");
    for (id, pose) in traj.iter() {
        let t = pose.translation();
        let q = pose.quaternion();
        let _ = writeln!(out, "{id},{:?},{:?},{:?},{:?},{:?},{:?},{:?}", t.x, t.y, t.z, q.i, q.j, q.k, q.w);
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory, CodecError> {
    let text = read(path)?;
    let mut entries = Vec::new();
    for (line, f) in rows(&text, TRAJECTORY_HEADER)? {
        expect_columns(&f, 8, line)?;
        let id: u64 = field(&f, 0, line)?;
        let t = Vector3::new(field(&f, 1, line)?, field(&f, 2, line)?, field(&f, 3, line)?);
        let q: Quaternion<f64> = Quaternion::new(field(&f, 7, line)?, field(&f, 4, line)?, field(&f, 5, line)?, field(&f, 6, line)?);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(CodecError::Format { line, message: "quaternion is not unit length".into() });
        }
        entries.push((id, SE3Pose::from_quaternion(UnitQuaternion::new_normalize(q), t)));
    }
    Trajectory::new(entries).map_err(|e| CodecError::Invalid(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchKind {
    Point,
    Line,
}

impl MatchKind {
    fn as_str(self) -> &'static str {
        match self {
            MatchKind::Point => "point",
            MatchKind::Line => "line",
        }
    }
}

/// One row of a match-result CSV. For lines the indices are line ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRow {
    pub frame_a: u64,
    pub frame_b: u64,
    pub kind: MatchKind,
    pub idx_a: u64,
    pub idx_b: u64,
    pub score: f64,
}

pub fn write_match_csv(rows_out: &[MatchRow], path: &Path) -> Result<(), CodecError> {
    let mut out = format!("{MATCH_HEADER}\n");
    for r in rows_out {
        let _ = writeln!(out, "{},{},{},{},{},{:?}", r.frame_a, r.frame_b, r.kind.as_str(), r.idx_a, r.idx_b, r.score);
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_match_csv(path: &Path) -> Result<Vec<MatchRow>, CodecError> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (line, f) in rows(&text, MATCH_HEADER)? {
        expect_columns(&f, 6, line)?;
        let kind = match f[2] {
            "point" => MatchKind::Point,
            "line" => MatchKind::Line,
            other => return Err(CodecError::Format { line, message: format!("unknown kind `{other}`") }),
        };
        out.push(MatchRow {
            frame_a: field(&f, 0, line)?,
            frame_b: field(&f, 1, line)?,
            kind,
            idx_a: field(&f, 3, line)?,
            idx_b: field(&f, 4, line)?,
            score: field(&f, 5, line)?,
        });
    }
    Ok(out)
}

pub fn write_loss_csv(losses: &[f64], path: &Path) -> Result<(), CodecError> {
    let mut out = format!("{LOSS_HEADER}\n");
    for (step, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{step},{l:?}");
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<f64>, CodecError> {
    let text = read(path)?;
    let out = rows(&text, LOSS_HEADER)?
        .map(|(line, f)| {
            expect_columns(&f, 2, line)?;
            field(&f, 1, line)
        })
        .collect();
    out
}

pub fn write_ape_csv(series: &[(u64, f64)], path: &Path) -> Result<(), CodecError> {
    let mut out = format!("{APE_HEADER}\n");
    for (id, e) in series {
        let _ = writeln!(out, "{id},{e:?}");
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_ape_csv(path: &Path) -> Result<Vec<(u64, f64)>, CodecError> {
    let text = read(path)?;
    let out = rows(&text, APE_HEADER)?
        .map(|(line, f)| {
            expect_columns(&f, 2, line)?;
            Ok((field(&f, 0, line)?, field(&f, 1, line)?))
        })
        .collect();
    out
}

/// Per-pair odometry log. Commas and line breaks in error messages are
/// replaced so that every record stays on one line.
pub fn write_pair_log_csv(logs: &[PairLog], path: &Path) -> Result<(), CodecError> {
    let mut out = format!("{PAIR_LOG_HEADER}\n");
    for l in logs {
        let error = l.error.as_deref().unwrap_or("").replace(',', ";").replace(['\n', '\r'], " ");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:?},{},{},{}",
            l.frame_a,
            l.frame_b,
            l.point_detections,
            l.point_matches,
            l.line_detections,
            l.line_matches,
            l.inliers,
            l.residual_rms,
            l.stationary,
            l.fallback,
            error.trim()
        );
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_pair_log_csv(path: &Path) -> Result<Vec<PairLog>, CodecError> {
    let text = read(path)?;
    let out = rows(&text, PAIR_LOG_HEADER)?
        .map(|(line, f)| {
            expect_columns(&f, 11, line)?;
            Ok(PairLog {
                frame_a: field(&f, 0, line)?,
                frame_b: field(&f, 1, line)?,
                point_detections: field(&f, 2, line)?,
                point_matches: field(&f, 3, line)?,
                line_detections: field(&f, 4, line)?,
                line_matches: field(&f, 5, line)?,
                inliers: field(&f, 6, line)?,
                residual_rms: field(&f, 7, line)?,
                stationary: field(&f, 8, line)?,
                fallback: field(&f, 9, line)?,
                error: (!f[10].is_empty()).then(|| f[10].to_string()),
            })
        })
        .collect();
    out
}
