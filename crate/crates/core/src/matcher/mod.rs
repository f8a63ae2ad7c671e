//! The full matcher: network scores, Sinkhorn, mutual-max extraction and
//! line voting, plus synthetic training.

mod train;

pub use train::{
    evaluate_pairs, line_accuracy, pair_loss, sample_pair, score_matches, train_matcher, train_on_pairs, FeatureKind, MatchQuality, PairConfig,
    TrainConfig, TrainOutcome, TrainingPair,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor};
use crate::encoder::{EncoderError, EncoderWeights};
use crate::geometry::{FrameFeatures, Keypoint};
use crate::lines::{vote_line_matches, LineMatch, VoteConfig};
use crate::ot::{default_marginals, extract_matches, sinkhorn, AssignmentMatrix, MatchError, MatchSet, SinkhornConfig};
use crate::synth::SynthError;

#[derive(Debug, Error)]
pub enum MatcherError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error("no training pair has features on both sides")]
    NoTrainingPairs,
    #[error("point and line networks disagree on descriptor dimension ({0} vs {1})")]
    DimensionMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
    pub score_threshold: f64,
    pub majority: f64,
    pub min_support: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self { sinkhorn_iters: 100, sinkhorn_tol: 1e-6, score_threshold: 0.2, majority: 0.5, min_support: 2 }
    }
}

impl MatcherConfig {
    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig { max_iters: self.sinkhorn_iters, tol: self.sinkhorn_tol }
    }

    pub fn vote(&self) -> VoteConfig {
        VoteConfig { majority: self.majority, min_support: self.min_support }
    }
}

/// Keypoints of one image with its size.
pub type View<'a> = (&'a [Keypoint], u32, u32);

/// Transport plan between two keypoint sets under `w`.
pub fn assignment(w: &EncoderWeights, a: View, b: View, sinkhorn_cfg: &SinkhornConfig) -> Result<AssignmentMatrix, MatcherError> {
    let (m, n) = (a.0.len(), b.0.len());
    let (ma, mb) = default_marginals(m, n);
    let log_scores = if m == 0 || n == 0 {
        Tensor::zeros(m + 1, n + 1)
    } else {
        let mut tape = Tape::new();
        let bound = w.bind(&mut tape, false);
        let s = bound.scores(&mut tape, a, b)?;
        tape.value(s).clone()
    };
    Ok(sinkhorn(&log_scores, &ma, &mb, sinkhorn_cfg)?)
}

pub fn match_keypoints(w: &EncoderWeights, a: View, b: View, cfg: &MatcherConfig) -> Result<MatchSet, MatcherError> {
    let plan = assignment(w, a, b, &cfg.sinkhorn())?;
    Ok(extract_matches(&plan.p, cfg.score_threshold))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatches {
    pub points: MatchSet,
    pub lpoints: MatchSet,
    pub lines: Vec<LineMatch>,
}

/// Point and line networks with shared matching settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatcher {
    pub points: EncoderWeights,
    pub lines: EncoderWeights,
    pub config: MatcherConfig,
}

impl FrameMatcher {
    pub fn new(points: EncoderWeights, lines: EncoderWeights, config: MatcherConfig) -> Result<Self, MatcherError> {
        let (dp, dl) = (points.config().descriptor_dim, lines.config().descriptor_dim);
        if dp != dl {
            return Err(MatcherError::DimensionMismatch(dp, dl));
        }
        Ok(Self { points, lines, config })
    }

    pub fn match_points(&self, a: &FrameFeatures, b: &FrameFeatures) -> Result<MatchSet, MatcherError> {
        match_keypoints(&self.points, (&a.ppoints, a.width, a.height), (&b.ppoints, b.width, b.height), &self.config)
    }

    pub fn match_frames(&self, a: &FrameFeatures, b: &FrameFeatures) -> Result<FrameMatches, MatcherError> {
        let points = self.match_points(a, b)?;
        let lpoints = match_keypoints(&self.lines, (&a.lpoints, a.width, a.height), (&b.lpoints, b.width, b.height), &self.config)?;
        let lines = vote_line_matches(&lpoints, &a.lines, &b.lines, &self.config.vote());
        Ok(FrameMatches { points, lpoints, lines })
    }
}
