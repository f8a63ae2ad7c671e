use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{match_keypoints, MatcherConfig, MatcherError};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape};
use crate::encoder::EncoderWeights;
use crate::geometry::{CameraRig, FrameFeatures, SE3Pose};
use crate::lines::{vote_line_matches, LineMatch};
use crate::ot::{default_marginals, nll_loss_on_tape, sinkhorn_on_tape, Correspondences, MatchSet, SinkhornConfig};
use crate::synth::{
    generate_world, ground_truth_matches, render_frame, DegradationProfile, GroundTruth, RenderConfig, RepetitiveConfig, WorldConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Points,
    Lines,
}

/// How synthetic frame pairs are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    pub world: WorldConfig,
    /// Probability that a scene also contains the repeated window grid.
    pub repetitive_fraction: f64,
    pub repetitive: RepetitiveConfig,
    /// Each pair draws one of these uniformly.
    pub profiles: Vec<DegradationProfile>,
    pub camera: CameraRig,
    /// Per-axis bound on the relative translation between the views (m).
    pub max_translation: [f64; 3],
    /// Bound on each component of the relative rotation vector (rad).
    pub max_rotation: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            repetitive_fraction: 0.0,
            repetitive: RepetitiveConfig::default(),
            profiles: vec![DegradationProfile::daytime()],
            camera: CameraRig::default_vga(),
            max_translation: [0.5, 0.2, 1.0],
            max_rotation: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub a: FrameFeatures,
    pub b: FrameFeatures,
    pub gt: GroundTruth,
    /// Relative pose taking frame-A camera coordinates to frame B.
    pub a_to_b: SE3Pose,
}

/// Deterministic random scene and view pair for `seed`.
pub fn sample_pair(seed: u64, cfg: &PairConfig) -> TrainingPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world_cfg = cfg.world.clone();
    if rng.random::<f64>() < cfg.repetitive_fraction {
        world_cfg.repetitive = Some(cfg.repetitive.clone());
    }
    let world = generate_world(rng.random(), &world_cfg);
    let profile = &cfg.profiles[rng.random_range(0..cfg.profiles.len())];
    let mut sym = |bound: f64| if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 };
    let cam_a = SE3Pose::from_axis_angle(Vector3::new(0.0, sym(0.1), 0.0), Vector3::new(sym(1.0), sym(0.3), sym(1.0)));
    let r = cfg.max_rotation;
    let [tx, ty, tz] = cfg.max_translation;
    let delta = SE3Pose::from_axis_angle(Vector3::new(sym(r), sym(r), sym(r)), Vector3::new(sym(tx), sym(ty), sym(tz)));
    let cam_b = cam_a.compose(&delta);
    let (seed_a, seed_b) = (rng.random(), rng.random());
    let render = RenderConfig::default();
    let a = render_frame(&world, &cam_a.inverse(), &cfg.camera, profile, &render, 0, seed_a);
    let b = render_frame(&world, &cam_b.inverse(), &cfg.camera, profile, &render, 1, seed_b);
    let gt = ground_truth_matches(&a, &b).expect("rendered frames carry labels");
    TrainingPair { a, b, gt, a_to_b: delta.inverse() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub kind: FeatureKind,
    pub adam: AdamConfig,
    pub pairs: PairConfig,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
    /// Cycle through this many fixed pairs instead of drawing a fresh pair
    /// every step.
    pub fixed_pairs: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            kind: FeatureKind::Points,
            adam: AdamConfig::default(),
            pairs: PairConfig::default(),
            sinkhorn_iters: 100,
            sinkhorn_tol: 1e-6,
            fixed_pairs: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig { max_iters: self.sinkhorn_iters, tol: self.sinkhorn_tol }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: EncoderWeights,
    pub losses: Vec<f64>,
}

fn sides(pair: &TrainingPair, kind: FeatureKind) -> (super::View<'_>, super::View<'_>, &Correspondences) {
    let (a, b) = (&pair.a, &pair.b);
    match kind {
        FeatureKind::Points => ((&a.ppoints, a.width, a.height), (&b.ppoints, b.width, b.height), &pair.gt.points),
        FeatureKind::Lines => ((&a.lpoints, a.width, a.height), (&b.lpoints, b.width, b.height), &pair.gt.lpoints),
    }
}

/// Records the per-term loss of one pair on `tape`; `None` when a side
/// has no features.
fn record_loss(tape: &mut Tape, w: &EncoderWeights, trainable: bool, pair: &TrainingPair, kind: FeatureKind, sk: &SinkhornConfig) -> Result<Option<(crate::autodiff::NodeId, Vec<crate::autodiff::NodeId>)>, MatcherError> {
    let (va, vb, gt) = sides(pair, kind);
    if va.0.is_empty() || vb.0.is_empty() {
        return Ok(None);
    }
    let bound = w.bind(tape, trainable);
    let scores = bound.scores(tape, va, vb)?;
    let (ma, mb) = default_marginals(va.0.len(), vb.0.len());
    let plan = sinkhorn_on_tape(tape, scores, &ma, &mb, sk)?;
    let total = nll_loss_on_tape(tape, plan.log_p, gt)?;
    let loss = tape.scale(total, 1.0 / gt.term_count() as f64);
    Ok(Some((loss, bound.nodes)))
}

/// Loss of `w` on one pair, averaged over its ground-truth terms.
pub fn pair_loss(w: &EncoderWeights, pair: &TrainingPair, kind: FeatureKind, sk: &SinkhornConfig) -> Result<f64, MatcherError> {
    let mut tape = Tape::new();
    Ok(record_loss(&mut tape, w, false, pair, kind, sk)?.map_or(0.0, |(l, _)| tape.value(l).item()))
}

/// Adam on synthetic pairs, one pair per step. `steps == 0` returns the
/// initial weights untouched.
pub fn train_matcher(initial: EncoderWeights, cfg: &TrainConfig, on_step: impl FnMut(usize, f64)) -> Result<TrainOutcome, MatcherError> {
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pool: Vec<TrainingPair> = match cfg.fixed_pairs {
        Some(n) => (0..n.max(1)).map(|_| next_pair(&mut seeds, cfg)).collect(),
        None => vec![],
    };
    if pool.is_empty() {
        run(initial, cfg, |_| std::borrow::Cow::Owned(next_pair(&mut seeds, cfg)), on_step)
    } else {
        run(initial, cfg, |step| std::borrow::Cow::Borrowed(&pool[step % pool.len()]), on_step)
    }
}

/// Adam over a fixed list of pairs, cycled in order. Pairs with no
/// features of `cfg.kind` on either side are skipped.
pub fn train_on_pairs(initial: EncoderWeights, pairs: &[TrainingPair], cfg: &TrainConfig, on_step: impl FnMut(usize, f64)) -> Result<TrainOutcome, MatcherError> {
    let usable: Vec<&TrainingPair> = pairs
        .iter()
        .filter(|p| {
            let (a, b, _) = sides(p, cfg.kind);
            !a.0.is_empty() && !b.0.is_empty()
        })
        .collect();
    if usable.is_empty() && cfg.steps > 0 {
        return Err(MatcherError::NoTrainingPairs);
    }
    run(initial, cfg, |step| std::borrow::Cow::Borrowed(usable[step % usable.len()]), on_step)
}

fn run<'p>(
    initial: EncoderWeights,
    cfg: &TrainConfig,
    mut pair_for: impl FnMut(usize) -> std::borrow::Cow<'p, TrainingPair>,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome, MatcherError> {
    let mut weights = initial;
    let mut state = AdamState::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let pair = pair_for(step);
        let mut tape = Tape::new();
        let Some((loss, nodes)) = record_loss(&mut tape, &weights, true, &pair, cfg.kind, &cfg.sinkhorn())? else {
            unreachable!("pairs are drawn non-empty")
        };
        let grads = tape.backward(loss)?;
        let g: Vec<_> = nodes.iter().map(|&n| grads.get(n)).collect();
        let value = tape.value(loss).item();
        adam_step(weights.tensors_mut(), &g, &mut state, &cfg.adam)?;
        losses.push(value);
        on_step(step, value);
    }
    Ok(TrainOutcome { weights, losses })
}

fn next_pair(seeds: &mut ChaCha8Rng, cfg: &TrainConfig) -> TrainingPair {
    loop {
        let pair = sample_pair(seeds.random(), &cfg.pairs);
        let (a, b, _) = sides(&pair, cfg.kind);
        if !a.0.is_empty() && !b.0.is_empty() {
            return pair;
        }
    }
}

/// Correct, predicted and ground-truth pair counts.
pub fn score_matches(found: &MatchSet, gt: &Correspondences) -> (usize, usize, usize) {
    let truth: std::collections::HashSet<(usize, usize)> = gt.pairs.iter().copied().collect();
    let correct = found.pairs.iter().filter(|m| truth.contains(&(m.i, m.j))).count();
    (correct, found.pairs.len(), gt.pairs.len())
}

/// Correct line matches and ground-truth line pairs.
pub fn line_accuracy(found: &[LineMatch], gt: &GroundTruth) -> (usize, usize) {
    let truth: std::collections::HashSet<(u32, u32)> = gt.lines.pairs.iter().copied().collect();
    (found.iter().filter(|m| truth.contains(&(m.line_id_a, m.line_id_b))).count(), gt.lines.pairs.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatchQuality {
    pub correct: usize,
    pub predicted: usize,
    pub truth: usize,
    /// Line-level counts; zero for point evaluation.
    pub lines_correct: usize,
    pub lines_predicted: usize,
    pub lines_truth: usize,
}

impl MatchQuality {
    pub fn precision(&self) -> f64 {
        if self.predicted == 0 { 1.0 } else { self.correct as f64 / self.predicted as f64 }
    }

    pub fn recall(&self) -> f64 {
        if self.truth == 0 { 1.0 } else { self.correct as f64 / self.truth as f64 }
    }

    pub fn line_accuracy(&self) -> f64 {
        if self.lines_truth == 0 { 1.0 } else { self.lines_correct as f64 / self.lines_truth as f64 }
    }
}

/// Aggregate matching quality over `pairs`, evaluated in parallel.
pub fn evaluate_pairs(w: &EncoderWeights, pairs: &[TrainingPair], kind: FeatureKind, cfg: &MatcherConfig) -> Result<MatchQuality, MatcherError> {
    let per_pair: Vec<MatchQuality> = pairs
        .par_iter()
        .map(|pair| {
            let (va, vb, gt) = sides(pair, kind);
            let found = match_keypoints(w, va, vb, cfg)?;
            let (correct, predicted, truth) = score_matches(&found, gt);
            let mut q = MatchQuality { correct, predicted, truth, ..Default::default() };
            if kind == FeatureKind::Lines {
                let lines = vote_line_matches(&found, &pair.a.lines, &pair.b.lines, &cfg.vote());
                let (lc, lt) = line_accuracy(&lines, &pair.gt);
                (q.lines_correct, q.lines_predicted, q.lines_truth) = (lc, lines.len(), lt);
            }
            Ok(q)
        })
        .collect::<Result<_, MatcherError>>()?;
    Ok(per_pair.iter().fold(MatchQuality::default(), |acc, q| MatchQuality {
        correct: acc.correct + q.correct,
        predicted: acc.predicted + q.predicted,
        truth: acc.truth + q.truth,
        lines_correct: acc.lines_correct + q.lines_correct,
        lines_predicted: acc.lines_predicted + q.lines_predicted,
        lines_truth: acc.lines_truth + q.lines_truth,
    }))
}
