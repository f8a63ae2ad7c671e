use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use plvo::codec::{load_features, read_trajectory_csv, write_loss_csv};
use plvo::encoder::{save_weights, EncoderConfig, EncoderWeights};
use plvo::geometry::SE3Pose;
use plvo::matcher::{train_matcher, train_on_pairs, FeatureKind, TrainConfig, TrainingPair};
use plvo::synth::{ground_truth_matches, DegradationProfile};

use super::synth::{frame_paths, GT_FILE};
use crate::config::{load_config, require_dir, require_writable, runtime, sibling, usage, write_manifest, CliResult};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFileConfig {
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Points,
    Lines,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory of labelled feature files; consecutive frames form the
    /// training pairs. Without it, pairs are synthesized on the fly.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Loss CSV (defaults to `<out>.loss.csv`).
    #[arg(long)]
    pub loss: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub sinkhorn_iters: Option<usize>,
    /// Comma-separated degradation profiles for synthesized pairs.
    #[arg(long, value_delimiter = ',')]
    pub profiles: Option<Vec<String>>,
    /// Probability that a synthesized scene contains the repeated window grid.
    #[arg(long)]
    pub repetitive_fraction: Option<f64>,
    /// Disable the keypoint position encoder.
    #[arg(long)]
    pub no_position: bool,
}

impl TrainArgs {
    fn effective(&self) -> CliResult<TrainFileConfig> {
        let mut cfg: TrainFileConfig = load_config(self.config.as_deref())?;
        let t = &mut cfg.train;
        if let Some(s) = self.steps {
            t.steps = s;
        }
        if let Some(k) = self.kind {
            t.kind = match k {
                KindArg::Points => FeatureKind::Points,
                KindArg::Lines => FeatureKind::Lines,
            };
        }
        if let Some(s) = self.seed {
            t.seed = s;
            cfg.encoder.init_seed = s;
        }
        if let Some(lr) = self.lr {
            t.adam.lr = lr;
        }
        if let Some(n) = self.sinkhorn_iters {
            t.sinkhorn_iters = n;
        }
        if let Some(names) = &self.profiles {
            t.pairs.profiles = names
                .iter()
                .map(|n| DegradationProfile::by_name(n).ok_or_else(|| usage(format!("unknown profile `{n}`"))))
                .collect::<CliResult<_>>()?;
        }
        if let Some(f) = self.repetitive_fraction {
            t.pairs.repetitive_fraction = f;
        }
        if self.no_position {
            cfg.encoder.position_encoding = false;
        }
        if t.pairs.profiles.is_empty() {
            return Err(usage("at least one profile is required"));
        }
        Ok(cfg)
    }
}

/// Consecutive labelled frames of `dir` as training pairs.
fn load_pairs(dir: &std::path::Path) -> CliResult<Vec<TrainingPair>> {
    let frames = frame_paths(dir)?.iter().map(|p| load_features(p).map_err(runtime)).collect::<CliResult<Vec<_>>>()?;
    let gt_path = dir.join(GT_FILE);
    let gt = if gt_path.exists() { Some(read_trajectory_csv(&gt_path).map_err(runtime)?) } else { None };
    let pose_of = |id: u64| gt.as_ref().and_then(|t| t.iter().find(|e| e.0 == id).map(|e| *e.1));
    frames
        .windows(2)
        .map(|w| {
            let gt_matches = ground_truth_matches(&w[0], &w[1]).map_err(runtime)?;
            let a_to_b = match (pose_of(w[0].frame_id), pose_of(w[1].frame_id)) {
                (Some(a), Some(b)) => b.inverse().compose(&a),
                _ => SE3Pose::identity(),
            };
            Ok(TrainingPair { a: w[0].clone(), b: w[1].clone(), gt: gt_matches, a_to_b })
        })
        .collect()
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let cfg = args.effective()?;
    cfg.encoder.validate().map_err(usage)?;
    if let Some(d) = &args.data {
        require_dir(d)?;
    }
    let loss_path = args.loss.clone().unwrap_or_else(|| sibling(&args.out, ".loss.csv"));
    require_writable(&args.out)?;
    require_writable(&loss_path)?;

    let initial = EncoderWeights::init(cfg.encoder.clone()).map_err(usage)?;
    let report = |step: usize, loss: f64| {
        if (step + 1) % 100 == 0 {
            eprintln!("step {} loss {loss:.5}", step + 1);
        }
    };
    let outcome = match &args.data {
        Some(dir) => train_on_pairs(initial, &load_pairs(dir)?, &cfg.train, report),
        None => train_matcher(initial, &cfg.train, report),
    }
    .map_err(runtime)?;
    save_weights(&outcome.weights, &args.out).map_err(runtime)?;
    write_loss_csv(&outcome.losses, &loss_path).map_err(runtime)?;
    let data = args.data.as_ref().map_or_else(|| "synthetic".to_string(), |d| d.display().to_string());
    write_manifest(
        &sibling(&args.out, ".manifest"),
        "train",
        &cfg,
        &[("data", data), ("out", args.out.display().to_string()), ("loss", loss_path.display().to_string())],
    )?;
    match outcome.losses.last() {
        Some(l) => println!("trained {} steps, final loss {l:.6}", outcome.losses.len()),
        None => println!("0 steps: saved initial weights"),
    }
    Ok(())
}
