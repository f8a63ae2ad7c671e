use std::path::{Path, PathBuf};

use clap::Args;

use plvo::codec::{load_features, write_match_csv, MatchKind, MatchRow};
use plvo::encoder::load_weights;
use plvo::matcher::{FrameMatcher, MatcherConfig};

use crate::config::{load_config, require_file, require_writable, runtime, sibling, usage, write_manifest, CliResult};

/// Matcher flags shared by `match` and `track`.
#[derive(Debug, Args)]
pub struct MatcherArgs {
    #[arg(long)]
    pub point_weights: PathBuf,
    #[arg(long)]
    pub line_weights: PathBuf,
    #[arg(long)]
    pub score_threshold: Option<f64>,
    #[arg(long)]
    pub sinkhorn_iters: Option<usize>,
}

impl MatcherArgs {
    pub fn apply(&self, cfg: &mut MatcherConfig) {
        if let Some(t) = self.score_threshold {
            cfg.score_threshold = t;
        }
        if let Some(n) = self.sinkhorn_iters {
            cfg.sinkhorn_iters = n;
        }
    }

    pub fn check_paths(&self) -> CliResult<()> {
        require_file(&self.point_weights)?;
        require_file(&self.line_weights)
    }

    pub fn load(&self, cfg: MatcherConfig) -> CliResult<FrameMatcher> {
        let load = |p: &Path| load_weights(p).map_err(|e| usage(format!("{}: {e}", p.display())));
        FrameMatcher::new(load(&self.point_weights)?, load(&self.line_weights)?, cfg).map_err(usage)
    }
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Match CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with a `MatcherConfig`; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub matcher: MatcherArgs,
}

fn pct(m: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * m as f64 / n as f64
    }
}

pub fn run(args: &MatchArgs) -> CliResult<()> {
    let mut cfg: MatcherConfig = load_config(args.config.as_deref())?;
    args.matcher.apply(&mut cfg);
    require_file(&args.a)?;
    require_file(&args.b)?;
    args.matcher.check_paths()?;
    require_writable(&args.out)?;

    let matcher = args.matcher.load(cfg)?;
    let a = load_features(&args.a).map_err(runtime)?;
    let b = load_features(&args.b).map_err(runtime)?;
    let m = matcher.match_frames(&a, &b).map_err(runtime)?;

    let mut rows: Vec<MatchRow> = m
        .points
        .pairs
        .iter()
        .map(|p| MatchRow { frame_a: a.frame_id, frame_b: b.frame_id, kind: MatchKind::Point, idx_a: p.i as u64, idx_b: p.j as u64, score: p.score })
        .collect();
    rows.extend(m.lines.iter().map(|l| MatchRow {
        frame_a: a.frame_id,
        frame_b: b.frame_id,
        kind: MatchKind::Line,
        idx_a: u64::from(l.line_id_a),
        idx_b: u64::from(l.line_id_b),
        score: l.support as f64 / l.total.max(1) as f64,
    }));
    write_match_csv(&rows, &args.out).map_err(runtime)?;
    write_manifest(
        &sibling(&args.out, ".manifest"),
        "match",
        &cfg,
        &[
            ("a", args.a.display().to_string()),
            ("b", args.b.display().to_string()),
            ("point_weights", args.matcher.point_weights.display().to_string()),
            ("line_weights", args.matcher.line_weights.display().to_string()),
        ],
    )?;
    println!("points: {}/{} matched ({:.1}%)", m.points.pairs.len(), a.ppoints.len(), pct(m.points.pairs.len(), a.ppoints.len()));
    println!("lines: {}/{} matched ({:.1}%)", m.lines.len(), a.lines.len(), pct(m.lines.len(), a.lines.len()));
    Ok(())
}
