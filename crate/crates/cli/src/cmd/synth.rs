use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use plvo::codec::{save_features, write_atomic, write_trajectory_csv};
use plvo::geometry::CameraRig;
use plvo::synth::{bounds_around, generate_trajectory, generate_world, render_frame, DegradationProfile, PathKind, RenderConfig, RepetitiveConfig, TrajectoryConfig, WorldConfig};
use plvo::vo::Trajectory;

use crate::config::{load_config, runtime, usage, write_manifest, CliResult};

pub const CAMERA_FILE: &str = "camera.toml";
pub const GT_FILE: &str = "gt_trajectory.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn frame_file(k: u64) -> String {
    format!("frame_{k:06}.feat")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub profile: String,
    pub trajectory: TrajectoryConfig,
    pub world: WorldConfig,
    /// Replace the world bounds by a box around the trajectory.
    pub auto_bounds: bool,
    /// Extent of the automatic box ahead of the path and above/below it (m).
    pub ahead: f64,
    pub vertical: f64,
    pub camera: CameraRig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            profile: "daytime".into(),
            trajectory: TrajectoryConfig::default(),
            world: WorldConfig { n_points: 400, n_lines: 60, ..Default::default() },
            auto_bounds: true,
            ahead: 30.0,
            vertical: 4.0,
            camera: CameraRig::default_vga(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathArg {
    Straight,
    Arc,
    FigureEight,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with a `SynthConfig`; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// daytime, fog, nighttime or noise_free.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long, value_enum)]
    pub path: Option<PathArg>,
    /// Distance per frame (m).
    #[arg(long)]
    pub speed: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub lines: Option<usize>,
    /// Add the repeated window grid.
    #[arg(long)]
    pub repetitive: bool,
}

impl SynthArgs {
    fn effective(&self) -> CliResult<SynthConfig> {
        let mut cfg: SynthConfig = load_config(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(f) = self.frames {
            cfg.trajectory.frames = f;
        }
        if let Some(p) = &self.profile {
            cfg.profile = p.clone();
        }
        if let Some(p) = self.path {
            cfg.trajectory.path = match p {
                PathArg::Straight => PathKind::Straight,
                PathArg::Arc => PathKind::Arc { radius: 20.0 },
                PathArg::FigureEight => PathKind::FigureEight { width: 12.0, length: 24.0 },
            };
        }
        if let Some(s) = self.speed {
            cfg.trajectory.speed = s;
        }
        if let Some(n) = self.points {
            cfg.world.n_points = n;
        }
        if let Some(n) = self.lines {
            cfg.world.n_lines = n;
        }
        if self.repetitive {
            cfg.world.repetitive = Some(RepetitiveConfig::default());
        }
        Ok(cfg)
    }
}

/// Seed of the world and of each rendered frame.
fn seeds(seed: u64, frames: usize) -> (u64, Vec<u64>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let world = rng.random();
    (world, (0..frames).map(|_| rng.random()).collect())
}

pub fn run(args: &SynthArgs) -> CliResult<()> {
    let cfg = args.effective()?;
    let profile = DegradationProfile::by_name(&cfg.profile).ok_or_else(|| usage(format!("unknown profile `{}`", cfg.profile)))?;
    profile.validate().map_err(usage)?;
    cfg.camera.validate().map_err(usage)?;
    if args.out.exists() && !args.out.is_dir() {
        return Err(usage(format!("{} is not a directory", args.out.display())));
    }
    if cfg.trajectory.frames == 0 {
        println!("0 frames: nothing written");
        return Ok(());
    }
    std::fs::create_dir_all(&args.out).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    let written = synthesize(&cfg, &profile, &args.out)?;
    write_manifest(&args.out.join(MANIFEST_FILE), "synth", &cfg, &[])?;
    println!("wrote {written} frames to {}", args.out.display());
    Ok(())
}

fn synthesize(cfg: &SynthConfig, profile: &DegradationProfile, out: &Path) -> CliResult<usize> {
    let poses = generate_trajectory(&cfg.trajectory);
    let mut world_cfg = cfg.world.clone();
    if cfg.auto_bounds {
        world_cfg.bounds = bounds_around(&poses, cfg.ahead, cfg.vertical);
    }
    let (world_seed, frame_seeds) = seeds(cfg.seed, poses.len());
    let world = generate_world(world_seed, &world_cfg);
    let render = RenderConfig::default();
    for (k, (pose, seed)) in poses.iter().zip(frame_seeds).enumerate() {
        let frame = render_frame(&world, &pose.inverse(), &cfg.camera, profile, &render, k as u64, seed);
        save_features(&frame, &out.join(frame_file(k as u64))).map_err(runtime)?;
    }
    let gt = Trajectory::new(poses.iter().enumerate().map(|(k, p)| (k as u64, *p)).collect()).map_err(runtime)?;
    write_trajectory_csv(&gt, &out.join(GT_FILE)).map_err(runtime)?;
    let camera = toml::to_string(&cfg.camera).map_err(runtime)?;
    write_atomic(&out.join(CAMERA_FILE), camera.as_bytes()).map_err(runtime)?;
    Ok(poses.len())
}

/// Camera of a data directory, or the default rig if it has none.
pub fn load_camera(dir: &Path) -> CliResult<CameraRig> {
    let path = dir.join(CAMERA_FILE);
    if !path.exists() {
        return Ok(CameraRig::default_vga());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let camera: CameraRig = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    camera.validate().map_err(usage)?;
    Ok(camera)
}

/// Feature files of a data directory in frame order.
pub fn frame_paths(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "feat"))
        .collect();
    paths.sort();
    Ok(paths)
}
