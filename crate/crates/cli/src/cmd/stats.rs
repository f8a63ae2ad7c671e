use std::path::PathBuf;

use clap::Args;

use plvo::codec::read_pair_log_csv;
use plvo::vo::{match_stats, stats_table};

use super::track::write_stats;
use crate::config::{require_file, require_writable, runtime, usage, CliResult};

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Pair logs written by `track`, as `PATH` or `LABEL=PATH`.
    #[arg(long = "log", required = true)]
    pub logs: Vec<String>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Plain-text table.
    #[arg(long)]
    pub txt: Option<PathBuf>,
}

fn split(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((label, path)) if !label.is_empty() => (label.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let label = path.parent().and_then(|p| p.file_name()).map_or_else(|| arg.to_string(), |n| n.to_string_lossy().into_owned());
            (label, path)
        }
    }
}

pub fn run(args: &StatsArgs) -> CliResult<()> {
    let specs: Vec<(String, PathBuf)> = args.logs.iter().map(|s| split(s)).collect();
    for (_, p) in &specs {
        require_file(p)?;
    }
    if args.csv.is_some() != args.txt.is_some() {
        return Err(usage("--csv and --txt go together"));
    }
    for p in [&args.csv, &args.txt].into_iter().flatten() {
        require_writable(p)?;
    }
    let rows = specs
        .iter()
        .map(|(label, p)| Ok((label.clone(), match_stats(&read_pair_log_csv(p).map_err(runtime)?))))
        .collect::<CliResult<Vec<_>>>()?;
    if let (Some(csv), Some(txt)) = (&args.csv, &args.txt) {
        write_stats(&rows, csv, txt)?;
    }
    print!("{}", stats_table(&rows));
    Ok(())
}
