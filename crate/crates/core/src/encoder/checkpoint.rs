//! Text checkpoint: a version line, the JSON encoder config, then one
//! `name rows cols values...` line per tensor in layout order.

use std::fmt::Write as _;
use std::path::Path;

use super::{EncoderConfig, EncoderWeights};
use crate::autodiff::Tensor;
use crate::codec::{write_atomic, CodecError};

pub const WEIGHTS_FORMAT: &str = "plvo-weights/1";

pub fn encode_weights(w: &EncoderWeights) -> String {
    let mut out = format!("{WEIGHTS_FORMAT}\n{}\n", serde_json::to_string(w.config()).expect("config serializes"));
    for (name, t) in w.named() {
        let _ = write!(out, "{name} {} {}", t.rows(), t.cols());
        for x in t.data() {
            let _ = write!(out, " {x:?}");
        }
        out.push('\n');
    }
    out
}

pub fn decode_weights(text: &str) -> Result<EncoderWeights, CodecError> {
    let fmt = |line: usize, message: String| CodecError::Format { line, message };
    let mut lines = text.lines();
    let version = lines.next().unwrap_or("");
    if version != WEIGHTS_FORMAT {
        return Err(CodecError::VersionMismatch { expected: WEIGHTS_FORMAT.into(), found: version.into() });
    }
    let config: EncoderConfig = serde_json::from_str(lines.next().unwrap_or("")).map_err(|e| fmt(2, format!("config: {e}")))?;
    let layout = config.layout();
    let mut tensors = Vec::with_capacity(layout.len());
    for (k, (name, rows, cols)) in layout.iter().enumerate() {
        let line = k + 3;
        let row = lines.next().ok_or_else(|| fmt(line, format!("missing tensor `{name}`")))?;
        let mut tok = row.split_ascii_whitespace();
        if tok.next() != Some(name.as_str()) {
            return Err(fmt(line, format!("expected tensor `{name}`")));
        }
        let dims: Vec<usize> = tok.by_ref().take(2).map(|t| t.parse().map_err(|_| fmt(line, format!("bad dimension `{t}`")))).collect::<Result<_, _>>()?;
        if dims != [*rows, *cols] {
            return Err(fmt(line, format!("`{name}` should be {rows}x{cols}, found {dims:?}")));
        }
        let data: Vec<f64> = tok.map(|t| t.parse().map_err(|_| fmt(line, format!("bad value `{t}`")))).collect::<Result<_, _>>()?;
        let t = Tensor::new(vec![*rows, *cols], data).map_err(|e| fmt(line, e.to_string()))?;
        tensors.push(t);
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(fmt(layout.len() + 3, "trailing data".into()));
    }
    EncoderWeights::from_tensors(config, tensors).map_err(|e| CodecError::Invalid(e.to_string()))
}

pub fn save_weights(w: &EncoderWeights, path: &Path) -> Result<(), CodecError> {
    write_atomic(path, encode_weights(w).as_bytes())
}

pub fn load_weights(path: &Path) -> Result<EncoderWeights, CodecError> {
    decode_weights(&std::fs::read_to_string(path).map_err(|e| CodecError::io(path, e))?)
}
