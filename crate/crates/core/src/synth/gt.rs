use std::collections::HashMap;

use super::SynthError;
use crate::geometry::FrameFeatures;
use crate::ot::Correspondences;

/// Line correspondences by per-frame line id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LineCorrespondences {
    pub pairs: Vec<(u32, u32)>,
    pub unmatched_a: Vec<u32>,
    pub unmatched_b: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub points: Correspondences,
    pub lpoints: Correspondences,
    pub lines: LineCorrespondences,
}

/// Pairs the entries of `a` and `b` that carry the same label. A label
/// repeated within one side pairs only its first occurrence.
pub(crate) fn id_join(a: &[u64], b: &[u64]) -> Correspondences {
    let mut index_b: HashMap<u64, usize> = HashMap::new();
    for (j, id) in b.iter().enumerate() {
        index_b.entry(*id).or_insert(j);
    }
    let mut used_b = vec![false; b.len()];
    let mut seen_a = std::collections::HashSet::new();
    let mut out = Correspondences::default();
    for (i, id) in a.iter().enumerate() {
        match index_b.get(id) {
            Some(&j) if seen_a.insert(*id) => {
                used_b[j] = true;
                out.pairs.push((i, j));
            }
            _ => out.unmatched_a.push(i),
        }
    }
    out.unmatched_b = (0..b.len()).filter(|&j| !used_b[j]).collect();
    out
}

/// Ground-truth correspondences from the landmark labels of two frames.
pub fn ground_truth_matches(frame_a: &FrameFeatures, frame_b: &FrameFeatures) -> Result<GroundTruth, SynthError> {
    let la = frame_a.labels.as_ref().ok_or(SynthError::MissingLabels(frame_a.frame_id))?;
    let lb = frame_b.labels.as_ref().ok_or(SynthError::MissingLabels(frame_b.frame_id))?;
    let lines = id_join(&la.lines, &lb.lines);
    let ida = |i: usize| frame_a.lines[i].id;
    let idb = |j: usize| frame_b.lines[j].id;
    Ok(GroundTruth {
        points: id_join(&la.ppoints, &lb.ppoints),
        lpoints: id_join(&la.lpoints, &lb.lpoints),
        lines: LineCorrespondences {
            pairs: lines.pairs.iter().map(|&(i, j)| (ida(i), idb(j))).collect(),
            unmatched_a: lines.unmatched_a.iter().map(|&i| ida(i)).collect(),
            unmatched_b: lines.unmatched_b.iter().map(|&j| idb(j)).collect(),
        },
    })
}
