use std::path::PathBuf;

use clap::Args;

use plvo::codec::{read_trajectory_csv, write_ape_csv, write_atomic};
use plvo::vo::{ape_svg, evaluate, trajectory_svg};

use crate::config::{require_file, require_writable, runtime, write_manifest, CliResult};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Estimated trajectory CSV.
    #[arg(long)]
    pub traj: PathBuf,
    /// Ground-truth trajectory CSV.
    #[arg(long)]
    pub gt: PathBuf,
    /// APE series CSV (aligned when alignment is possible).
    #[arg(long)]
    pub ape: Option<PathBuf>,
    /// SVG of both trajectories, top-down.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// SVG of the APE series.
    #[arg(long)]
    pub ape_plot: Option<PathBuf>,
    /// Report raw world-frame error only.
    #[arg(long)]
    pub no_align: bool,
    /// Align with a similarity transform instead of a rigid one.
    #[arg(long)]
    pub scale: bool,
}

pub fn run(args: &EvalArgs) -> CliResult<()> {
    require_file(&args.traj)?;
    require_file(&args.gt)?;
    for p in [&args.ape, &args.plot, &args.ape_plot].into_iter().flatten() {
        require_writable(p)?;
    }
    let traj = read_trajectory_csv(&args.traj).map_err(runtime)?;
    let gt = read_trajectory_csv(&args.gt).map_err(runtime)?;
    let ev = evaluate(&traj, &gt, args.scale).map_err(runtime)?;
    let aligned = if args.no_align { None } else { ev.aligned.as_ref() };

    println!("frames: {}", traj.len());
    println!("raw: rmse {:.6} mean {:.6} max {:.6} (m)", ev.raw.rmse, ev.raw.mean, ev.raw.max);
    match aligned {
        Some((report, _)) => println!("aligned: rmse {:.6} mean {:.6} max {:.6} (m)", report.rmse, report.mean, report.max),
        None if args.no_align => {}
        None => println!("aligned: n/a (degenerate or too short)"),
    }
    let headline = aligned.map_or(&ev.raw, |a| &a.0);
    println!("RMSE {:.6}", headline.rmse);

    if let Some(p) = &args.ape {
        write_ape_csv(&headline.series, p).map_err(runtime)?;
    }
    if let Some(p) = &args.plot {
        let shown = aligned.map_or_else(|| traj.clone(), |(_, t)| t.apply_trajectory(&traj));
        let svg = trajectory_svg(&[("estimate".to_string(), &shown), ("ground truth".to_string(), &gt)]);
        write_atomic(p, svg.as_bytes()).map_err(runtime)?;
    }
    if let Some(p) = &args.ape_plot {
        let svg = ape_svg(&[("APE".to_string(), headline.series.clone())]);
        write_atomic(p, svg.as_bytes()).map_err(runtime)?;
    }
    if let Some(p) = args.ape.as_ref().or(args.plot.as_ref()).or(args.ape_plot.as_ref()) {
        let flags = serde_json::json!({ "no_align": args.no_align, "scale": args.scale });
        write_manifest(
            &crate::config::sibling(p, ".manifest"),
            "eval",
            &flags,
            &[("traj", args.traj.display().to_string()), ("gt", args.gt.display().to_string())],
        )?;
    }
    Ok(())
}
