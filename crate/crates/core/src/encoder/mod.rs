//! Keypoint encoder and alternating self/cross attention producing
//! matching descriptors.
//!
//! Every network computation is written once against a [`Tape`]; the
//! plain functions below run it on a throwaway tape of constants.

mod checkpoint;

pub use checkpoint::{load_weights, save_weights, WEIGHTS_FORMAT};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, NodeId, Tape, Tensor};
use crate::geometry::Keypoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("descriptor dimension {found} does not match the network's {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub descriptor_dim: usize,
    /// Attention layers, alternating self (first) and cross.
    pub layers: usize,
    /// Hidden sizes of the position MLP.
    pub pos_hidden: Vec<usize>,
    /// Ablation switch: `false` drops the position term entirely.
    pub position_encoding: bool,
    /// Affinity temperature.
    pub temperature: f64,
    pub dustbin_init: f64,
    /// Standard deviation of the noise added to the identity metric.
    pub metric_noise: f64,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            descriptor_dim: 32,
            layers: 4,
            pos_hidden: vec![32, 64, 32],
            position_encoding: true,
            temperature: 0.1,
            dustbin_init: 1.0,
            metric_noise: 0.01,
            init_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidConfig(m.into()));
        if self.descriptor_dim == 0 {
            return bad("descriptor_dim must be positive");
        }
        if self.pos_hidden.contains(&0) {
            return bad("hidden sizes must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !self.dustbin_init.is_finite() || !(self.metric_noise >= 0.0) {
            return bad("dustbin_init and metric_noise must be finite and non-negative noise");
        }
        Ok(())
    }

    fn pos_layers(&self) -> usize {
        self.pos_hidden.len() + 1
    }

    /// Name and shape of every weight tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let d = self.descriptor_dim;
        let mut out = Vec::new();
        let mut sizes = vec![3];
        sizes.extend(&self.pos_hidden);
        sizes.push(d);
        for k in 0..self.pos_layers() {
            out.push((format!("pos.{k}.w"), sizes[k], sizes[k + 1]));
            out.push((format!("pos.{k}.b"), 1, sizes[k + 1]));
        }
        for l in 0..self.layers {
            for (name, i, o) in [("q", d, d), ("k", d, d), ("v", d, d), ("mlp.0", 2 * d, 2 * d), ("mlp.1", 2 * d, d)] {
                out.push((format!("layer.{l}.{name}.w"), i, o));
                out.push((format!("layer.{l}.{name}.b"), 1, o));
            }
        }
        out.push(("proj.w".into(), d, d));
        out.push(("proj.b".into(), 1, d));
        out.push(("metric".into(), d, d));
        out.push(("dustbin".into(), 1, 1));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    SelfAttention,
    CrossAttention,
}

pub fn layer_kind(l: usize) -> LayerKind {
    if l.is_multiple_of(2) {
        LayerKind::SelfAttention
    } else {
        LayerKind::CrossAttention
    }
}

/// All learnable parameters of one matcher network.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    config: EncoderConfig,
    tensors: Vec<Tensor>,
}

/// Offsets into the storage order of [`EncoderConfig::layout`].
struct Index {
    pos_layers: usize,
    layers: usize,
}

impl Index {
    fn of(cfg: &EncoderConfig) -> Self {
        Self { pos_layers: cfg.pos_layers(), layers: cfg.layers }
    }
    fn pos(&self, k: usize) -> (usize, usize) {
        (2 * k, 2 * k + 1)
    }
    /// `part`: 0 q, 1 k, 2 v, 3 mlp.0, 4 mlp.1.
    fn attn(&self, l: usize, part: usize) -> (usize, usize) {
        let base = 2 * self.pos_layers + 10 * l + 2 * part;
        (base, base + 1)
    }
    fn tail(&self) -> usize {
        2 * self.pos_layers + 10 * self.layers
    }
    fn proj(&self) -> (usize, usize) {
        (self.tail(), self.tail() + 1)
    }
    fn metric(&self) -> usize {
        self.tail() + 2
    }
    fn dustbin(&self) -> usize {
        self.tail() + 3
    }
}

impl EncoderWeights {
    /// Random initialization: Glorot-scaled Gaussian layers with the last
    /// layer of each residual branch shrunk tenfold, identity projection,
    /// identity-plus-noise metric and the configured dustbin score.
    pub fn init(config: EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let layout = config.layout();
        let idx = Index::of(&config);
        let branch_out: Vec<usize> =
            std::iter::once(idx.pos(config.pos_layers() - 1).0).chain((0..config.layers).map(|l| idx.attn(l, 4).0)).collect();
        let mut tensors = Vec::with_capacity(layout.len());
        for (k, (name, r, c)) in layout.iter().enumerate() {
            let t = if k == idx.proj().0 {
                Tensor::identity(*r)
            } else if k == idx.metric() {
                let mut e = Tensor::identity(*r);
                for x in e.data_mut() {
                    *x += config.metric_noise * rng.sample::<f64, _>(StandardNormal);
                }
                e
            } else if k == idx.dustbin() {
                Tensor::scalar(config.dustbin_init)
            } else if name.ends_with(".b") {
                Tensor::zeros(*r, *c)
            } else {
                let scale = (2.0 / (r + c) as f64).sqrt() * if branch_out.contains(&k) { 0.1 } else { 1.0 };
                Tensor::matrix(*r, *c, (0..r * c).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
            };
            tensors.push(t);
        }
        Ok(Self { config, tensors })
    }

    /// Weights from tensors in layout order; shapes are checked.
    pub fn from_tensors(config: EncoderConfig, tensors: Vec<Tensor>) -> Result<Self, EncoderError> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(EncoderError::InvalidConfig(format!("expected {} tensors, got {}", layout.len(), tensors.len())));
        }
        for ((name, r, c), t) in layout.iter().zip(&tensors) {
            if t.shape() != [*r, *c] {
                return Err(EncoderError::InvalidConfig(format!("{name}: expected {r}x{c}, got {:?}", t.shape())));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (String, &Tensor)> {
        self.config.layout().into_iter().map(|(n, _, _)| n).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.named().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let k = self.config.layout().iter().position(|(n, _, _)| n == name)?;
        Some(&mut self.tensors[k])
    }

    pub fn dustbin(&self) -> f64 {
        self.tensors[Index::of(&self.config).dustbin()].item()
    }

    /// Records every tensor on `tape`, as parameters or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundWeights<'_> {
        let nodes = self.tensors.iter().map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) }).collect();
        BoundWeights { config: &self.config, nodes }
    }
}

/// Weights recorded on a tape.
pub struct BoundWeights<'a> {
    config: &'a EncoderConfig,
    pub nodes: Vec<NodeId>,
}

fn linear(tape: &mut Tape, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
    let xw = tape.matmul(x, w)?;
    tape.add_row_bias(xw, b)
}

/// `[u, v, c]` per keypoint with pixels mapped to [-1, 1].
pub fn normalized_positions(features: &[Keypoint], width: u32, height: u32) -> Tensor {
    let (w, h) = (width as f64, height as f64);
    Tensor::matrix(features.len(), 3, features.iter().flat_map(|k| [2.0 * k.u / w - 1.0, 2.0 * k.v / h - 1.0, k.c]).collect())
}

pub fn descriptor_matrix(features: &[Keypoint], dim: usize) -> Result<Tensor, EncoderError> {
    if let Some(k) = features.iter().find(|k| k.dim() != dim) {
        return Err(EncoderError::DimensionMismatch { expected: dim, found: k.dim() });
    }
    Ok(Tensor::matrix(features.len(), dim, features.iter().flat_map(|k| k.descriptor().iter().copied()).collect()))
}

impl BoundWeights<'_> {
    fn idx(&self) -> Index {
        Index::of(self.config)
    }

    /// `y_i = d_i + MLP([u_i, v_i, c_i])`.
    pub fn encode(&self, tape: &mut Tape, features: &[Keypoint], width: u32, height: u32) -> Result<NodeId, EncoderError> {
        let desc = tape.constant(descriptor_matrix(features, self.config.descriptor_dim)?);
        if !self.config.position_encoding {
            return Ok(desc);
        }
        let mut h = tape.constant(normalized_positions(features, width, height));
        let n = self.config.pos_layers();
        for k in 0..n {
            let (w, b) = self.idx().pos(k);
            h = linear(tape, h, self.nodes[w], self.nodes[b])?;
            if k + 1 < n {
                h = tape.relu(h);
            }
        }
        Ok(tape.add(desc, h)?)
    }

    /// Residual update of `x` from attention over `source`.
    fn message(&self, tape: &mut Tape, l: usize, x: NodeId, source: NodeId) -> Result<NodeId, AutodiffError> {
        let d = self.config.descriptor_dim;
        let idx = self.idx();
        let node = |part: usize| {
            let (w, b) = idx.attn(l, part);
            (self.nodes[w], self.nodes[b])
        };
        let rows = tape.value(x).rows();
        let m = if tape.value(source).rows() == 0 {
            tape.constant(Tensor::zeros(rows, d))
        } else {
            let (qw, qb) = node(0);
            let (kw, kb) = node(1);
            let (vw, vb) = node(2);
            let q = linear(tape, x, qw, qb)?;
            let k = linear(tape, source, kw, kb)?;
            let v = linear(tape, source, vw, vb)?;
            let kt = tape.transpose(k);
            let logits = tape.matmul(q, kt)?;
            let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
            let att = tape.softmax_rows(logits);
            tape.matmul(att, v)?
        };
        let (w0, b0) = node(3);
        let (w1, b1) = node(4);
        let cat = tape.concat_cols(x, m)?;
        let h = linear(tape, cat, w0, b0)?;
        let h = tape.relu(h);
        let delta = linear(tape, h, w1, b1)?;
        tape.add(x, delta)
    }

    /// Alternating self/cross attention; both sides update from the
    /// previous layer's values.
    pub fn attend(&self, tape: &mut Tape, ya: NodeId, yb: NodeId) -> Result<(NodeId, NodeId), EncoderError> {
        let (mut xa, mut xb) = (ya, yb);
        for l in 0..self.config.layers {
            let (sa, sb) = match layer_kind(l) {
                LayerKind::SelfAttention => (xa, xb),
                LayerKind::CrossAttention => (xb, xa),
            };
            let na = self.message(tape, l, xa, sa)?;
            let nb = self.message(tape, l, xb, sb)?;
            (xa, xb) = (na, nb);
        }
        Ok((xa, xb))
    }

    /// `h_i = x_i W + b`.
    pub fn matching_descriptors(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId, EncoderError> {
        let (w, b) = self.idx().proj();
        Ok(linear(tape, x, self.nodes[w], self.nodes[b])?)
    }

    /// `h_A E h_Bᵀ / δ`.
    pub fn affinity_logits(&self, tape: &mut Tape, ha: NodeId, hb: NodeId) -> Result<NodeId, EncoderError> {
        let he = tape.matmul(ha, self.nodes[self.idx().metric()])?;
        let hbt = tape.transpose(hb);
        let s = tape.matmul(he, hbt)?;
        Ok(tape.scale(s, 1.0 / self.config.temperature))
    }

    /// Affinity logits bordered by the learned dustbin score.
    pub fn augmented_logits(&self, tape: &mut Tape, logits: NodeId) -> Result<NodeId, EncoderError> {
        Ok(tape.augment_dustbin(logits, self.nodes[self.idx().dustbin()])?)
    }

    /// Full network from keypoints to augmented log-scores.
    pub fn scores(
        &self,
        tape: &mut Tape,
        a: (&[Keypoint], u32, u32),
        b: (&[Keypoint], u32, u32),
    ) -> Result<NodeId, EncoderError> {
        let ya = self.encode(tape, a.0, a.1, a.2)?;
        let yb = self.encode(tape, b.0, b.1, b.2)?;
        let (xa, xb) = self.attend(tape, ya, yb)?;
        let ha = self.matching_descriptors(tape, xa)?;
        let hb = self.matching_descriptors(tape, xb)?;
        let logits = self.affinity_logits(tape, ha, hb)?;
        self.augmented_logits(tape, logits)
    }
}

/// Encoded representations `Y` of a keypoint set.
pub fn encode(features: &[Keypoint], width: u32, height: u32, w: &EncoderWeights) -> Result<Tensor, EncoderError> {
    let mut tape = Tape::new();
    let bound = w.bind(&mut tape, false);
    let y = bound.encode(&mut tape, features, width, height)?;
    Ok(tape.value(y).clone())
}

fn check_dim(t: &Tensor, d: usize) -> Result<(), EncoderError> {
    if t.cols() != d {
        return Err(EncoderError::DimensionMismatch { expected: d, found: t.cols() });
    }
    Ok(())
}

pub fn attend(ya: &Tensor, yb: &Tensor, w: &EncoderWeights) -> Result<(Tensor, Tensor), EncoderError> {
    check_dim(ya, w.config.descriptor_dim)?;
    check_dim(yb, w.config.descriptor_dim)?;
    let mut tape = Tape::new();
    let bound = w.bind(&mut tape, false);
    let (a, b) = (tape.constant(ya.clone()), tape.constant(yb.clone()));
    let (xa, xb) = bound.attend(&mut tape, a, b)?;
    Ok((tape.value(xa).clone(), tape.value(xb).clone()))
}

pub fn matching_descriptors(x: &Tensor, w: &EncoderWeights) -> Result<Tensor, EncoderError> {
    check_dim(x, w.config.descriptor_dim)?;
    let mut tape = Tape::new();
    let bound = w.bind(&mut tape, false);
    let x = tape.constant(x.clone());
    let h = bound.matching_descriptors(&mut tape, x)?;
    Ok(tape.value(h).clone())
}
