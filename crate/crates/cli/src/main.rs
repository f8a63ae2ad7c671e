//! `plvo`: synthesize data, train matchers, match frames, run odometry
//! and evaluate trajectories.

mod cmd;
mod config;

use clap::{Parser, Subcommand};

use config::CliError;

#[derive(Debug, Parser)]
#[command(name = "plvo", version, about = "Point-and-line stereo visual odometry")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic sequence: feature files, ground truth and camera.
    Synth(cmd::synth::SynthArgs),
    /// Train a point or line matching network.
    Train(cmd::train::TrainArgs),
    /// Match two feature files.
    Match(cmd::matching::MatchArgs),
    /// Run frame-to-frame odometry over a directory of feature files.
    Track(cmd::track::TrackArgs),
    /// Absolute position error of a trajectory against ground truth.
    Eval(cmd::eval::EvalArgs),
    /// Detection and match tables from pair logs.
    Stats(cmd::stats::StatsArgs),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global().map_err(config::runtime)?;
    }
    match &cli.command {
        Command::Synth(a) => cmd::synth::run(a),
        Command::Train(a) => cmd::train::run(a),
        Command::Match(a) => cmd::matching::run(a),
        Command::Track(a) => cmd::track::run(a),
        Command::Eval(a) => cmd::eval::run(a),
        Command::Stats(a) => cmd::stats::run(a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(&cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
