use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use branchtrace::config::RunConfig;
use branchtrace::pipeline;
use branchtrace::provider::ProviderKind;
use branchtrace::{io, Error, Exec, Result};

#[derive(Parser)]
#[command(name = "branchtrace", version, about = "Trace curvilinear structures in 2D/3D images")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the configured rng_seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: intensity, labels and ground-truth SWC.
    Synth {
        #[arg(long)]
        output: PathBuf,
    },
    /// Compute classical feature maps from an intensity grid.
    Features {
        /// Scene directory or intensity grid.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Trace a reconstruction and write it as SWC.
    Trace {
        /// oracle, classical or file; defaults to the configured kind.
        #[arg(long)]
        provider: Option<ProviderKind>,
        /// Scene directory (oracle, classical), intensity grid (classical) or
        /// feature directory (file).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a predicted SWC against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Loss values of prediction grids against label grids.
    Loss {
        /// Directory of predicted maps.
        #[arg(long)]
        pred: PathBuf,
        /// Scene or label directory.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => io::write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Spatial rank of the data behind `input`, read from its grid header.
fn rank_of(input: &Path, candidates: &[&str]) -> Result<usize> {
    if !input.is_dir() {
        return io::grid_rank(input);
    }
    for c in candidates {
        let p = input.join(c);
        if io::header_path(&p).exists() {
            return io::grid_rank(&p);
        }
    }
    Err(Error::load(input, format!("no grid header among {candidates:?}")))
}

macro_rules! by_rank {
    ($rank:expr, $f:ident :: <D> ($($arg:expr),*)) => {
        match $rank {
            2 => $f::<2>($($arg),*).map(|_| ()),
            3 => $f::<3>($($arg),*).map(|_| ()),
            d => Err(Error::Config(format!("only 2D and 3D data are supported, got {d}D"))),
        }
    };
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed_override {
        cfg.rng_seed = s;
    }
    let exec = Exec::default();
    use pipeline::{features, loss, synth, trace};
    match cli.command {
        Command::Synth { output } => by_rank!(cfg.synth.dims.len(), synth::<D>(&cfg, &output, exec)),
        Command::Features { input, output } => {
            let rank = rank_of(&input, &[pipeline::INTENSITY_FILE])?;
            by_rank!(rank, features::<D>(&cfg, &input, &output, exec))
        }
        Command::Trace {
            provider,
            input,
            output,
        } => {
            let kind = provider.unwrap_or(cfg.provider.kind);
            let input = input
                .or_else(|| cfg.provider.path.clone())
                .ok_or_else(|| Error::Config("trace needs --input or provider.path".into()))?;
            let names: &[&str] = match kind {
                ProviderKind::Oracle => &["labels/centerline", "centerline"],
                ProviderKind::Classical => &[pipeline::INTENSITY_FILE],
                ProviderKind::File => &["centerline"],
            };
            let rank = rank_of(&input, names)?;
            by_rank!(rank, trace::<D>(&cfg, kind, &input, &output, exec))
        }
        Command::Eval { pred, gt, output } => {
            let report = pipeline::eval(&cfg, &pred, &gt)?;
            emit(&pipeline::to_json(&report), output.as_deref())
        }
        Command::Loss { pred, gt, output } => {
            let rank = rank_of(&pred, &["centerline"])?;
            let report = match rank {
                2 => loss::<2>(&cfg, &pred, &gt),
                3 => loss::<3>(&cfg, &pred, &gt),
                d => Err(Error::Config(format!("only 2D and 3D data are supported, got {d}D"))),
            }?;
            emit(&pipeline::to_json(&report), output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
