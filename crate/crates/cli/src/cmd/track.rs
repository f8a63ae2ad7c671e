use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use plvo::codec::{load_features, write_atomic, write_pair_log_csv, write_trajectory_csv, MaskImage};
use plvo::matcher::MatcherConfig;
use plvo::vo::{stats_table, track, MatchStats, TrackConfig};

use super::matching::MatcherArgs;
use super::synth::{frame_paths, load_camera, MANIFEST_FILE};
use crate::config::{load_config, require_dir, require_file, runtime, usage, write_manifest, CliResult};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const STATS_CSV: &str = "stats.csv";
pub const STATS_TXT: &str = "stats.txt";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackFileConfig {
    pub matcher: MatcherConfig,
    pub track: TrackConfig,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Directory of feature files (and optionally `camera.toml`).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Directory of `mask_<frame>.pgm` files, one per frame.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// RANSAC seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ransac_iters: Option<usize>,
    /// RANSAC inlier threshold (px).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Estimate poses from point correspondences only.
    #[arg(long, conflicts_with = "lines_only")]
    pub points_only: bool,
    /// Estimate poses from line correspondences only.
    #[arg(long)]
    pub lines_only: bool,
    #[command(flatten)]
    pub matcher: MatcherArgs,
}

impl TrackArgs {
    fn effective(&self) -> CliResult<TrackFileConfig> {
        let mut cfg: TrackFileConfig = load_config(self.config.as_deref())?;
        self.matcher.apply(&mut cfg.matcher);
        if let Some(s) = self.seed {
            cfg.track.ransac.seed = s;
        }
        if let Some(n) = self.ransac_iters {
            cfg.track.ransac.iterations = n;
        }
        if let Some(t) = self.threshold {
            cfg.track.ransac.threshold = t;
        }
        if self.points_only {
            cfg.track.use_lines = false;
        }
        if self.lines_only {
            cfg.track.use_points = false;
        }
        Ok(cfg)
    }
}

pub fn mask_file(frame_id: u64) -> String {
    format!("mask_{frame_id:06}.pgm")
}

pub fn run(args: &TrackArgs) -> CliResult<()> {
    let cfg = args.effective()?;
    require_dir(&args.data)?;
    args.matcher.check_paths()?;
    if args.out.exists() && !args.out.is_dir() {
        return Err(usage(format!("{} is not a directory", args.out.display())));
    }
    let paths = frame_paths(&args.data)?;
    if paths.len() < 2 {
        return Err(usage(format!("{} holds fewer than two feature files", args.data.display())));
    }
    let camera = load_camera(&args.data)?;
    let frames = paths.iter().map(|p| load_features(p).map_err(|e| runtime(format!("{}: {e}", p.display())))).collect::<CliResult<Vec<_>>>()?;
    let masks = match &args.masks {
        Some(dir) => {
            require_dir(dir)?;
            let files: Vec<PathBuf> = frames.iter().map(|f| dir.join(mask_file(f.frame_id))).collect();
            for f in &files {
                require_file(f)?;
            }
            Some(files.iter().map(|f| MaskImage::load(f).map_err(runtime)).collect::<CliResult<Vec<_>>>()?)
        }
        None => None,
    };
    let matcher = args.matcher.load(cfg.matcher)?;

    let out = track(&frames, masks.as_deref(), &camera, &matcher, &cfg.track).map_err(runtime)?;

    std::fs::create_dir_all(&args.out).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    write_trajectory_csv(&out.trajectory, &args.out.join(TRAJECTORY_FILE)).map_err(runtime)?;
    write_pair_log_csv(&out.logs, &args.out.join(PAIRS_FILE)).map_err(runtime)?;
    write_stats(&[("track".to_string(), out.stats)], &args.out.join(STATS_CSV), &args.out.join(STATS_TXT))?;
    let mut extra = vec![
        ("data", args.data.display().to_string()),
        ("point_weights", args.matcher.point_weights.display().to_string()),
        ("line_weights", args.matcher.line_weights.display().to_string()),
    ];
    if let Some(m) = &args.masks {
        extra.push(("masks", m.display().to_string()));
    }
    write_manifest(&args.out.join(MANIFEST_FILE), "track", &cfg, &extra)?;

    let fallbacks = out.logs.iter().filter(|l| l.fallback).count();
    println!("tracked {} frames ({} fallbacks, {} stationary)", out.trajectory.len(), fallbacks, out.logs.iter().filter(|l| l.stationary).count());
    print!("{}", stats_table(&[("track".to_string(), out.stats)]));
    Ok(())
}

pub fn write_stats(rows: &[(String, MatchStats)], csv: &std::path::Path, txt: &std::path::Path) -> CliResult<()> {
    let mut text = format!("{}\n", MatchStats::CSV_HEADER);
    for (label, s) in rows {
        text.push_str(&s.csv_row(label));
        text.push('\n');
    }
    write_atomic(csv, text.as_bytes()).map_err(runtime)?;
    write_atomic(txt, stats_table(rows).as_bytes()).map_err(runtime)
}
