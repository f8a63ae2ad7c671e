//! Text feature files, format `plvo-features/1`.
//!
//! The first line is a JSON header. It is followed by exactly
//! `ppoints` records starting with `P`, then `lines` records starting with
//! `L`, then `lpoints` records starting with `Q`. Tokens are separated by a
//! single space and reals use Rust's shortest round-trip notation, so a
//! file reloads bit-exactly.
//!
//! ```text
//! P <u> <v> <c> <depth> <label> <d_1> ... <d_D>
//! L <id> <a_u> <a_v> <b_u> <b_v> <label> <k> <q_1> ... <q_k>
//! Q <u> <v> <c> <depth> <label> <d_1> ... <d_D>
//! ```
//!
//! `<depth>` is `z:<metres>`, `d:<disparity px>` or `-` when unmeasured;
//! `<label>` is the landmark id, or `-` when the header says `labels: false`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{write_atomic, CodecError};
use crate::geometry::{DepthCue, FeatureDepths, FrameFeatures, Keypoint, LandmarkLabels, LineSegment};

pub const FEATURES_FORMAT: &str = "plvo-features/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub format: String,
    pub frame_id: u64,
    pub width: u32,
    pub height: u32,
    pub descriptor_dim: usize,
    pub ppoints: usize,
    pub lines: usize,
    pub lpoints: usize,
    pub depth: bool,
    pub labels: bool,
}

fn depth_token(d: Option<&Option<DepthCue>>) -> String {
    match d {
        Some(Some(DepthCue::Depth(z))) => format!("z:{z:?}"),
        Some(Some(DepthCue::Disparity(x))) => format!("d:{x:?}"),
        _ => "-".into(),
    }
}

fn label_token(l: Option<&u64>) -> String {
    l.map_or_else(|| "-".into(), u64::to_string)
}

fn write_keypoint(out: &mut String, tag: char, k: &Keypoint, depth: Option<&Option<DepthCue>>, label: Option<&u64>) {
    let _ = write!(out, "{tag} {:?} {:?} {:?} {} {}", k.u, k.v, k.c, depth_token(depth), label_token(label));
    for x in k.descriptor() {
        let _ = write!(out, " {x:?}");
    }
    out.push('\n');
}

pub fn encode_features(frame: &FrameFeatures) -> Result<String, CodecError> {
    frame.validate().map_err(|e| CodecError::Invalid(e.to_string()))?;
    let header = FeatureHeader {
        format: FEATURES_FORMAT.into(),
        frame_id: frame.frame_id,
        width: frame.width,
        height: frame.height,
        descriptor_dim: frame.descriptor_dim().unwrap_or(0),
        ppoints: frame.ppoints.len(),
        lines: frame.lines.len(),
        lpoints: frame.lpoints.len(),
        depth: frame.depth.is_some(),
        labels: frame.labels.is_some(),
    };
    let mut out = serde_json::to_string(&header).map_err(|e| CodecError::Invalid(e.to_string()))?;
    out.push('\n');
    let depth = frame.depth.as_ref();
    let labels = frame.labels.as_ref();
    for (i, k) in frame.ppoints.iter().enumerate() {
        write_keypoint(&mut out, 'P', k, depth.map(|d| &d.ppoints[i]), labels.map(|l| &l.ppoints[i]));
    }
    for (i, line) in frame.lines.iter().enumerate() {
        let _ = write!(
            out,
            "L {} {:?} {:?} {:?} {:?} {} {}",
            line.id,
            line.a.x,
            line.a.y,
            line.b.x,
            line.b.y,
            label_token(labels.map(|l| &l.lines[i])),
            line.lpoint_indices.len()
        );
        for q in &line.lpoint_indices {
            let _ = write!(out, " {q}");
        }
        out.push('\n');
    }
    for (i, k) in frame.lpoints.iter().enumerate() {
        write_keypoint(&mut out, 'Q', k, depth.map(|d| &d.lpoints[i]), labels.map(|l| &l.lpoints[i]));
    }
    Ok(out)
}

struct Reader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Reader<'a> {
    fn next_record(&mut self, tag: &str, section: &'static str, expected: usize, found: usize) -> Result<(usize, Vec<&'a str>), CodecError> {
        let Some((idx, text)) = self.lines.next() else {
            return Err(CodecError::Format {
                line: 0,
                message: format!("truncated file: missing section `{section}` (expected {expected} records, found {found})"),
            });
        };
        let tokens: Vec<&str> = text.split(' ').collect();
        if tokens[0] != tag {
            return Err(CodecError::Format {
                line: idx + 1,
                message: format!("expected `{tag}` record of section `{section}` ({found} of {expected} read), got `{}`", tokens[0]),
            });
        }
        Ok((idx + 1, tokens))
    }
}

fn parse<T: std::str::FromStr>(tok: Option<&&str>, line: usize, what: &str) -> Result<T, CodecError> {
    let tok = tok.ok_or_else(|| CodecError::Format { line, message: format!("missing field `{what}`") })?;
    tok.parse().map_err(|_| CodecError::Format { line, message: format!("invalid `{what}`: `{tok}`") })
}

fn parse_depth(tok: Option<&&str>, line: usize) -> Result<Option<DepthCue>, CodecError> {
    let tok = *tok.ok_or_else(|| CodecError::Format { line, message: "missing field `depth`".into() })?;
    let bad = || CodecError::Format { line, message: format!("invalid depth `{tok}`") };
    let cue = match tok.split_once(':') {
        None if tok == "-" => return Ok(None),
        Some(("z", v)) => DepthCue::Depth(v.parse().map_err(|_| bad())?),
        Some(("d", v)) => DepthCue::Disparity(v.parse().map_err(|_| bad())?),
        _ => return Err(bad()),
    };
    if !cue.is_valid() {
        return Err(bad());
    }
    Ok(Some(cue))
}

fn parse_label(tok: Option<&&str>, line: usize, want: bool) -> Result<Option<u64>, CodecError> {
    match (tok, want) {
        (Some(&"-"), false) => Ok(None),
        (_, true) => parse(tok, line, "label").map(Some),
        (other, false) => Err(CodecError::Format { line, message: format!("unexpected label {other:?}") }),
    }
}

struct KeypointRecord {
    keypoint: Keypoint,
    depth: Option<DepthCue>,
    label: Option<u64>,
}

fn parse_keypoint(tokens: &[&str], line: usize, dim: usize, header: &FeatureHeader) -> Result<KeypointRecord, CodecError> {
    if tokens.len() != 6 + dim {
        return Err(CodecError::Format { line, message: format!("expected {} fields, got {}", 6 + dim, tokens.len()) });
    }
    let u = parse(tokens.get(1), line, "u")?;
    let v = parse(tokens.get(2), line, "v")?;
    let c = parse(tokens.get(3), line, "c")?;
    let depth = parse_depth(tokens.get(4), line)?;
    if depth.is_some() && !header.depth {
        return Err(CodecError::Format { line, message: "depth given but header declares none".into() });
    }
    let label = parse_label(tokens.get(5), line, header.labels)?;
    let descriptor = tokens[6..].iter().map(|t| parse(Some(t), line, "descriptor")).collect::<Result<Vec<f64>, _>>()?;
    let keypoint = Keypoint::from_normalized(u, v, c, descriptor).map_err(|e| CodecError::Format { line, message: e.to_string() })?;
    Ok(KeypointRecord { keypoint, depth, label })
}

pub fn decode_features(text: &str) -> Result<FrameFeatures, CodecError> {
    let mut reader = Reader { lines: text.lines().enumerate().peekable() };
    let (_, first) = reader.lines.next().ok_or(CodecError::Format { line: 0, message: "missing section `header`".into() })?;
    let format = serde_json::from_str::<serde_json::Value>(first)
        .map_err(|e| CodecError::Format { line: 1, message: format!("header is not JSON: {e}") })?;
    match format.get("format").and_then(|f| f.as_str()) {
        Some(FEATURES_FORMAT) => {}
        Some(other) => return Err(CodecError::VersionMismatch { expected: FEATURES_FORMAT.into(), found: other.into() }),
        None => return Err(CodecError::Format { line: 1, message: "header has no `format`".into() }),
    }
    let header: FeatureHeader = serde_json::from_value(format).map_err(|e| CodecError::Format { line: 1, message: e.to_string() })?;
    let dim = header.descriptor_dim;

    let mut frame = FrameFeatures::empty(header.frame_id, header.width, header.height);
    let mut depth = FeatureDepths::default();
    let mut labels = LandmarkLabels::default();

    for n in 0..header.ppoints {
        let (line, tokens) = reader.next_record("P", "ppoints", header.ppoints, n)?;
        let rec = parse_keypoint(&tokens, line, dim, &header)?;
        frame.ppoints.push(rec.keypoint);
        depth.ppoints.push(rec.depth);
        labels.ppoints.extend(rec.label);
    }
    for n in 0..header.lines {
        let (line, tokens) = reader.next_record("L", "lines", header.lines, n)?;
        let id = parse(tokens.get(1), line, "id")?;
        let a = Vector2::new(parse(tokens.get(2), line, "a_u")?, parse(tokens.get(3), line, "a_v")?);
        let b = Vector2::new(parse(tokens.get(4), line, "b_u")?, parse(tokens.get(5), line, "b_v")?);
        labels.lines.extend(parse_label(tokens.get(6), line, header.labels)?);
        let k: usize = parse(tokens.get(7), line, "count")?;
        if tokens.len() != 8 + k {
            return Err(CodecError::Format { line, message: format!("expected {k} L-point indices, got {}", tokens.len().saturating_sub(8)) });
        }
        let lpoint_indices = tokens[8..].iter().map(|t| parse(Some(t), line, "index")).collect::<Result<_, _>>()?;
        frame.lines.push(LineSegment { id, a, b, lpoint_indices });
    }
    for n in 0..header.lpoints {
        let (line, tokens) = reader.next_record("Q", "lpoints", header.lpoints, n)?;
        let rec = parse_keypoint(&tokens, line, dim, &header)?;
        frame.lpoints.push(rec.keypoint);
        depth.lpoints.push(rec.depth);
        labels.lpoints.extend(rec.label);
    }
    if let Some((idx, _)) = reader.lines.find(|(_, l)| !l.is_empty()) {
        return Err(CodecError::Format { line: idx + 1, message: "trailing records after declared sections".into() });
    }
    frame.depth = header.depth.then_some(depth);
    frame.labels = header.labels.then_some(labels);
    frame.validate().map_err(|e| CodecError::Invalid(e.to_string()))?;
    Ok(frame)
}

pub fn save_features(frame: &FrameFeatures, path: &Path) -> Result<(), CodecError> {
    write_atomic(path, encode_features(frame)?.as_bytes())
}

pub fn load_features(path: &Path) -> Result<FrameFeatures, CodecError> {
    let text = std::fs::read_to_string(path).map_err(|e| CodecError::io(path, e))?;
    decode_features(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_frame() -> FrameFeatures {
        let kp = |u, v, d: Vec<f64>| Keypoint::new(u, v, 0.75, d).unwrap();
        let mut f = FrameFeatures::empty(4, 64, 48);
        f.ppoints = vec![kp(1.5, 2.25, vec![1.0, 2.0, 3.0]), kp(10.0, 0.1, vec![-1.0, 0.3, 0.0])];
        f.lpoints = vec![kp(3.0, 3.0, vec![0.0, 1.0, 0.0]), kp(5.0, 3.0, vec![0.2, 0.2, 1.0]), kp(7.0, 3.0, vec![1.0, 0.0, 0.0])];
        f.lines = vec![LineSegment { id: 3, a: Vector2::new(3.0, 3.0), b: Vector2::new(7.0, 3.0), lpoint_indices: vec![0, 1, 2] }];
        f.depth = Some(FeatureDepths {
            ppoints: vec![Some(DepthCue::Depth(4.5)), None],
            lpoints: vec![Some(DepthCue::Disparity(12.0)), Some(DepthCue::Depth(0.1)), None],
        });
        f.labels = Some(LandmarkLabels { ppoints: vec![10, 11], lpoints: vec![100, 101, 102], lines: vec![9] });
        f
    }

    #[test]
    fn empty_frame_round_trips() {
        let f = FrameFeatures::empty(0, 640, 480);
        assert_eq!(decode_features(&encode_features(&f).unwrap()).unwrap(), f);
    }

    #[test]
    fn populated_frame_round_trips() {
        let f = sample_frame();
        let text = encode_features(&f).unwrap();
        assert_eq!(decode_features(&text).unwrap(), f);
    }

    #[test]
    fn truncation_names_missing_section() {
        let text = encode_features(&sample_frame()).unwrap();
        let cut: Vec<&str> = text.lines().take(3).collect();
        match decode_features(&cut.join("\n")) {
            Err(CodecError::Format { message, .. }) => assert!(message.contains("`lines`"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
        let cut: Vec<&str> = text.lines().take(5).collect();
        match decode_features(&cut.join("\n")) {
            Err(CodecError::Format { message, .. }) => assert!(message.contains("`lpoints`"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let text = encode_features(&sample_frame()).unwrap().replace(FEATURES_FORMAT, "plvo-features/9");
        assert!(matches!(decode_features(&text), Err(CodecError::VersionMismatch { .. })));
    }

    #[test]
    fn malformed_record_reports_line() {
        let text = encode_features(&sample_frame()).unwrap();
        let broken: Vec<String> = text.lines().enumerate().map(|(i, l)| if i == 2 { l.replace("P 10", "P x") } else { l.into() }).collect();
        match decode_features(&broken.join("\n")) {
            Err(CodecError::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
