//! Line sampling into L-points and majority-vote aggregation of L-point
//! matches into line matches.

use std::collections::HashMap;

use nalgebra::Vector2;
use thiserror::Error;

use crate::geometry::LineSegment;
use crate::ot::MatchSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LineError {
    #[error("line endpoints coincide")]
    DegenerateLine,
    #[error("invalid sampling parameters: {0}")]
    InvalidSampling(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    pub spacing: f64,
    pub min_samples: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { spacing: 8.0, min_samples: 5 }
    }
}

/// Uniform samples from `a` to `b`, both endpoints included.
///
/// The count is `max(min_samples, floor(length / spacing) + 1)`.
pub fn sample_line_points(a: Vector2<f64>, b: Vector2<f64>, cfg: &SamplingConfig) -> Result<Vec<Vector2<f64>>, LineError> {
    if !(cfg.spacing > 0.0) || cfg.min_samples < 2 {
        return Err(LineError::InvalidSampling(format!("spacing {} / min_samples {}", cfg.spacing, cfg.min_samples)));
    }
    let length = (b - a).norm();
    if length == 0.0 {
        return Err(LineError::DegenerateLine);
    }
    let count = cfg.min_samples.max((length / cfg.spacing).floor() as usize + 1);
    let last = (count - 1) as f64;
    Ok((0..count).map(|k| if k + 1 == count { b } else { a + (b - a) * (k as f64 / last) }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineMatch {
    pub line_id_a: u32,
    pub line_id_b: u32,
    /// L-points of line A matched onto line B.
    pub support: usize,
    /// Matched L-points of line A.
    pub total: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteConfig {
    /// Strict fraction of matched L-points that must agree.
    pub majority: f64,
    pub min_support: usize,
}

impl Default for VoteConfig {
    fn default() -> Self {
        Self { majority: 0.5, min_support: 2 }
    }
}

/// Owners of every L-point, by line position in `lines`.
fn owners(lines: &[LineSegment]) -> HashMap<usize, Vec<usize>> {
    let mut map: HashMap<usize, Vec<usize>> = HashMap::new();
    for (li, line) in lines.iter().enumerate() {
        for &q in &line.lpoint_indices {
            map.entry(q).or_default().push(li);
        }
    }
    map
}

struct Tally {
    /// Plurality line on the other side, `None` on ties or no votes.
    winner: Option<usize>,
    support: usize,
    total: usize,
}

/// Counts, for each line of one image, which lines of the other image its
/// matched L-points land on.
fn tally(lines: &[LineSegment], partner: &HashMap<usize, usize>, other_owner: &HashMap<usize, Vec<usize>>) -> Vec<Tally> {
    lines
        .iter()
        .map(|line| {
            let mut votes: HashMap<usize, usize> = HashMap::new();
            let mut total = 0;
            for q in &line.lpoint_indices {
                let Some(p) = partner.get(q) else { continue };
                total += 1;
                for &ol in other_owner.get(p).map(Vec::as_slice).unwrap_or(&[]) {
                    *votes.entry(ol).or_default() += 1;
                }
            }
            let best = votes.values().copied().max().unwrap_or(0);
            let mut leaders = votes.iter().filter(|(_, &v)| v == best && best > 0);
            let winner = match (leaders.next(), leaders.next()) {
                (Some((&l, _)), None) => Some(l),
                _ => None,
            };
            Tally { winner, support: best, total }
        })
        .collect()
}

/// Matches line `a` to line `b` when a strict `majority` of the matched
/// L-points of `a` land on `b`, the support reaches `min_support`, and `a`
/// is likewise the unique plurality counterpart of `b`. Ties never match.
pub fn vote_line_matches(lpoint_matches: &MatchSet, lines_a: &[LineSegment], lines_b: &[LineSegment], cfg: &VoteConfig) -> Vec<LineMatch> {
    let a_to_b: HashMap<usize, usize> = lpoint_matches.pairs.iter().map(|m| (m.i, m.j)).collect();
    let b_to_a: HashMap<usize, usize> = lpoint_matches.pairs.iter().map(|m| (m.j, m.i)).collect();
    let forward = tally(lines_a, &a_to_b, &owners(lines_b));
    let backward = tally(lines_b, &b_to_a, &owners(lines_a));

    let mut out = Vec::new();
    for (la, t) in forward.iter().enumerate() {
        let Some(lb) = t.winner else { continue };
        let accepted = t.support as f64 > cfg.majority * t.total as f64
            && t.support >= cfg.min_support
            && backward[lb].winner == Some(la);
        if accepted {
            out.push(LineMatch {
                line_id_a: lines_a[la].id,
                line_id_b: lines_b[lb].id,
                support: t.support,
                total: t.total,
                score: t.support as f64 / t.total as f64,
            });
        }
    }
    out
}
