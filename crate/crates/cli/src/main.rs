//! `spherelift`: build icosphere meshes, generate and project signals, run
//! lifting transforms, check the library's invariants, and train the
//! hierarchical models. Every run that writes artifacts also writes a
//! manifest next to them; progress goes to stderr as one JSON object per
//! line so stdout stays parseable.

mod commands;
mod config;
mod error;
mod events;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::artifacts::{self, Direction};
use commands::{check, training};
use config::TrainOverrides;
use error::CliResult;
use events::Logger;

#[derive(Copy, Clone, Debug, ValueEnum)]
enum KindArg {
    Constant,
    Bandlimited,
    Noise,
}

impl From<KindArg> for spherelift_core::signals::SignalKind {
    fn from(k: KindArg) -> Self {
        use spherelift_core::signals::SignalKind::*;
        match k {
            KindArg::Constant => Constant,
            KindArg::Bandlimited => Bandlimited,
            KindArg::Noise => Noise,
        }
    }
}

#[derive(Parser)]
#[command(name = "spherelift", version, about = "Lifting-based wavelets on icosphere meshes")]
struct Cli {
    /// Upper bound on worker threads. Execution is single-threaded today;
    /// the cap is accepted (and recorded) so configs stay forward-compatible.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,
    /// Suppress the JSON event log on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an icosphere hierarchy and write it to a mesh file.
    Mesh {
        /// Deepest subdivision level to build.
        #[arg(long, default_value_t = 4)]
        max_level: usize,
        /// Output mesh file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic spherical signals.
    Gen {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, value_enum, default_value_t = KindArg::Bandlimited)]
        kind: KindArg,
        /// Mesh level the signals live on.
        #[arg(long)]
        level: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        /// Maximum harmonic degree for bandlimited signals.
        #[arg(long, default_value_t = 8)]
        band: usize,
        #[arg(long, default_value_t = 1.0)]
        amplitude: f64,
        #[arg(long)]
        count: usize,
        /// Base seed; signal i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project planar images (IDX file) onto the sphere.
    Project {
        #[arg(long)]
        mesh: PathBuf,
        /// IDX image file (e.g. an MNIST-format archive).
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        level: usize,
        /// Project only the first N images.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the lifting transform over a signals file.
    Transform {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        signals: PathBuf,
        #[arg(long, value_enum, default_value_t = Direction::Forward)]
        direction: Direction,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify the library's invariants against a mesh and print a table.
    Check {
        #[arg(long)]
        mesh: PathBuf,
        /// Deepest level to exercise (defaults to 3 or the mesh maximum).
        #[arg(long)]
        max_level: Option<usize>,
    },
    /// Train a model described by a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory for metrics.csv, checkpoint.bin, and the manifest.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Score a checkpoint on the config's eval data.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional directory for summary.json and the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per pooling kind and tabulate test metrics.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Pooling kinds to race (downsample, mean, max, lift_handcrafted,
        /// lift_adaptive); defaults to the config's `kinds`.
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<String>,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
}

fn dispatch(cli: Cli, log: &Logger) -> CliResult<()> {
    match cli.command {
        Command::Mesh { max_level, out } => artifacts::mesh(max_level, &out, log),
        Command::Gen { mesh, kind, level, channels, band, amplitude, count, seed, out } => {
            let seed = config::resolve_seed(seed)?.unwrap_or(0);
            artifacts::gen(&mesh, kind.into(), level, channels, band, amplitude, count, seed, &out, log)
        }
        Command::Project { mesh, images, level, limit, out } => {
            artifacts::project(&mesh, &images, level, limit, &out, log)
        }
        Command::Transform { mesh, signals, direction, out } => {
            artifacts::transform(&mesh, &signals, direction, &out, log)
        }
        Command::Check { mesh, max_level } => check::check(&mesh, max_level, log),
        Command::Train { config, out, overrides } => {
            training::train_cmd(&config, &overrides, &out, log)
        }
        Command::Eval { config, checkpoint, out } => {
            training::eval_cmd(&config, &checkpoint, out.as_deref(), log)
        }
        Command::Compare { config, kinds, out, overrides } => {
            training::compare_cmd(&config, &kinds, &overrides, &out, log)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log = Logger::new(!cli.quiet);
    if let Some(t) = cli.threads {
        log.event("threads", serde_json::json!({"requested": t, "used": 1}));
    }
    match dispatch(cli, &log) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code())
        }
    }
}
