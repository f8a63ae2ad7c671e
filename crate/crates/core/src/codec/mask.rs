//! Static-scene masks as binary PGM (P5) images and feature filtering.

use std::path::Path;

use super::{write_atomic, CodecError};
use crate::geometry::{FeatureDepths, FrameFeatures, Keypoint, LandmarkLabels};

/// Binary mask: `true` keeps the pixel (static scene), `false` drops it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    pub width: u32,
    pub height: u32,
    keep: Vec<bool>,
}

impl MaskImage {
    pub fn new(width: u32, height: u32, keep: Vec<bool>) -> Result<Self, CodecError> {
        if keep.len() != (width as usize) * (height as usize) {
            return Err(CodecError::Invalid(format!("mask of {}x{} needs {} pixels, got {}", width, height, width * height, keep.len())));
        }
        Ok(Self { width, height, keep })
    }

    pub fn filled(width: u32, height: u32, keep: bool) -> Self {
        Self { width, height, keep: vec![keep; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let keep = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, keep }
    }

    /// Whether the pixel containing `(u, v)` is static. Out-of-image
    /// positions are never kept.
    pub fn keeps(&self, u: f64, v: f64) -> bool {
        if !(u >= 0.0 && v >= 0.0) {
            return false;
        }
        let (x, y) = (u.floor() as u64, v.floor() as u64);
        if x >= self.width as u64 || y >= self.height as u64 {
            return false;
        }
        self.keep[(y * self.width as u64 + x) as usize]
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.keep.iter().map(|&k| if k { 255u8 } else { 0 }));
        out
    }

    /// Parses a P5 image; any non-zero pixel keeps.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self, CodecError> {
        let bad = |m: &str| CodecError::Format { line: 0, message: format!("PGM: {m}") };
        let mut pos = 0;
        let mut token = || -> Result<String, CodecError> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        if token()? != "P5" {
            return Err(bad("not a binary PGM (P5)"));
        }
        let width: u32 = token()?.parse().map_err(|_| bad("invalid width"))?;
        let height: u32 = token()?.parse().map_err(|_| bad("invalid height"))?;
        let maxval: u32 = token()?.parse().map_err(|_| bad("invalid maxval"))?;
        if maxval == 0 || maxval > 65535 {
            return Err(bad("maxval out of range"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let bpp = if maxval < 256 { 1 } else { 2 };
        let n = width as usize * height as usize;
        let raster = bytes.get(pos..pos + n * bpp).ok_or_else(|| bad("truncated raster"))?;
        let keep = raster.chunks(bpp).map(|px| px.iter().any(|&b| b != 0)).collect();
        Ok(Self { width, height, keep })
    }

    pub fn save(&self, path: &Path) -> Result<(), CodecError> {
        write_atomic(path, &self.to_pgm())
    }

    pub fn load(path: &Path) -> Result<Self, CodecError> {
        Self::from_pgm(&std::fs::read(path).map_err(|e| CodecError::io(path, e))?)
    }
}

/// Removes features on dynamic (masked-out) pixels.
///
/// Lines keep whichever of their L-points survive and are dropped once
/// fewer than two remain. Indices are re-densified.
pub fn apply_mask(frame: &FrameFeatures, mask: &MaskImage) -> Result<FrameFeatures, CodecError> {
    if mask.width != frame.width || mask.height != frame.height {
        return Err(CodecError::DimensionMismatch {
            expected: (frame.width, frame.height),
            found: (mask.width, mask.height),
        });
    }
    let keep_kp = |k: &Keypoint| mask.keeps(k.u, k.v);
    let p_keep: Vec<usize> = (0..frame.ppoints.len()).filter(|&i| keep_kp(&frame.ppoints[i])).collect();
    let mut q_new = vec![None; frame.lpoints.len()];
    let mut q_keep = Vec::new();
    for (i, k) in frame.lpoints.iter().enumerate() {
        if keep_kp(k) {
            q_new[i] = Some(q_keep.len());
            q_keep.push(i);
        }
    }
    let mut out = FrameFeatures::empty(frame.frame_id, frame.width, frame.height);
    out.ppoints = p_keep.iter().map(|&i| frame.ppoints[i].clone()).collect();
    out.lpoints = q_keep.iter().map(|&i| frame.lpoints[i].clone()).collect();
    let mut line_keep = Vec::new();
    for (li, line) in frame.lines.iter().enumerate() {
        let survivors: Vec<usize> = line.lpoint_indices.iter().filter_map(|&q| q_new[q]).collect();
        if survivors.len() >= 2 {
            let mut l = line.clone();
            l.lpoint_indices = survivors;
            out.lines.push(l);
            line_keep.push(li);
        }
    }
    out.depth = frame.depth.as_ref().map(|d| FeatureDepths {
        ppoints: p_keep.iter().map(|&i| d.ppoints[i]).collect(),
        lpoints: q_keep.iter().map(|&i| d.lpoints[i]).collect(),
    });
    out.labels = frame.labels.as_ref().map(|l| LandmarkLabels {
        ppoints: p_keep.iter().map(|&i| l.ppoints[i]).collect(),
        lpoints: q_keep.iter().map(|&i| l.lpoints[i]).collect(),
        lines: line_keep.iter().map(|&i| l.lines[i]).collect(),
    });
    Ok(out)
}
