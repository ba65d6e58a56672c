//! `pitune`: batch front end over a directory-backed task registry.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pitune_core::interp::TuneMode;
use pitune_core::Error;

#[derive(Debug, Parser)]
#[command(name = "pitune", version, about = "Retrieve, interpolate and tune parameter-efficient experts")]
pub struct Cli {
    /// Registry directory.
    #[arg(long, env = "PI_REGISTRY", global = true)]
    pub registry: Option<PathBuf>,

    /// Root seed; every component derives its own stream from it.
    #[arg(long, default_value_t = 0, global = true)]
    pub seed: u64,

    /// Output directory for metrics and reports [default: <registry>/out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Adapter,
    Lora,
    Prompt,
    Bitfit,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Adapter => "adapter",
            Kind::Lora => "lora",
            Kind::Prompt => "prompt",
            Kind::Bitfit => "bitfit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

/// Tasks to operate on: an explicit list or every non-pretraining task.
#[derive(Clone, Debug, Args)]
#[group(required = true, multiple = false)]
pub struct TaskSelection {
    #[arg(long, value_delimiter = ',')]
    pub task: Vec<String>,

    /// Every task not reserved for pretraining.
    #[arg(long)]
    pub all: bool,
}

/// Overrides for the command's default training budget.
#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub steps: Option<usize>,

    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the task family and write the manifest and dataset cache.
    GenTasks {
        /// Rotation angles in degrees.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0])]
        angles: Vec<f64>,
        /// Extra label permutations applied to every angle.
        #[arg(long, default_value_t = 0)]
        permutations: usize,
        /// Held-out angles whose tasks pretrain the backbone.
        #[arg(long, value_delimiter = ',', default_values_t = [355.0])]
        pretrain_angles: Vec<f64>,
        /// Low-shot target angles.
        #[arg(long, value_delimiter = ',')]
        targets: Vec<f64>,
        /// Train rows per class kept for low-shot targets.
        #[arg(long, default_value_t = 16)]
        shots: usize,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 500)]
        val: usize,
        #[arg(long, default_value_t = 500)]
        test: usize,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
    },
    /// Pretrain and freeze the backbone on the pretraining tasks.
    Pretrain {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train one expert per selected task.
    TrainExpert {
        #[command(flatten)]
        tasks: TaskSelection,
        #[arg(long, value_enum, default_value_t = Kind::Adapter)]
        kind: Kind,
        /// Adapter bottleneck, LoRA rank, or prompt length.
        #[arg(long)]
        size: Option<usize>,
        /// Insertion points (adapter sites or layers) [default: all].
        #[arg(long, value_delimiter = ',')]
        points: Option<Vec<usize>>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Compute Fisher embeddings of trained experts.
    Embed {
        #[command(flatten)]
        tasks: TaskSelection,
        #[arg(long, value_enum, default_value_t = Kind::Adapter)]
        kind: Kind,
        /// Maximum number of train rows in the Fisher average.
        #[arg(long, default_value_t = pitune_core::fisher::DEFAULT_SAMPLE_CAP)]
        samples: usize,
    },
    /// Write the pairwise similarity matrix as CSV and a heatmap.
    Graph {
        #[arg(long, value_enum, default_value_t = Kind::Adapter)]
        kind: Kind,
    },
    /// Print the tasks most similar to a target.
    Retrieve {
        #[arg(long)]
        task: String,
        #[arg(short, long)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Kind::Adapter)]
        kind: Kind,
    },
    /// Tune an interpolation of the target and its k nearest experts.
    PiTune {
        #[arg(long)]
        task: String,
        #[arg(short, long)]
        k: usize,
        #[arg(long, default_value_t = TuneMode::Joint)]
        mode: TuneMode,
        #[arg(long, value_enum, default_value_t = Kind::Adapter)]
        kind: Kind,
        /// Learning rate of the mixture logits [default: the expert rate].
        #[arg(long)]
        alpha_lr: Option<f64>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate the nearest pool expert on a task with no expert of its own.
    ZeroShot {
        #[arg(long)]
        task: String,
        #[arg(long, value_enum, default_value_t = Kind::Adapter)]
        kind: Kind,
    },
    /// Tune one interpolation on several tasks at once.
    Multitask {
        /// The first task's expert is the interpolation target.
        #[arg(long, value_delimiter = ',', required = true)]
        tasks: Vec<String>,
        #[arg(long, value_enum, default_value_t = Kind::Adapter)]
        kind: Kind,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Scan the linear path between two experts on the target's test split.
    Lmc {
        #[arg(long)]
        task: String,
        #[arg(long)]
        source: String,
        #[arg(long, default_value_t = 0.05)]
        interval: f64,
        #[arg(long, value_enum, default_value_t = Kind::Adapter)]
        kind: Kind,
    },
    /// Test error over the plane through three experts.
    Landscape {
        #[arg(long)]
        task: String,
        #[arg(long, value_delimiter = ',', required = true)]
        experts: Vec<String>,
        #[arg(long, default_value_t = 11)]
        grid: usize,
        /// Extra room around the checkpoints, as a fraction of their extent.
        #[arg(long, default_value_t = 0.25)]
        margin: f64,
        #[arg(long, value_enum, default_value_t = Kind::Adapter)]
        kind: Kind,
    },
    /// Joint tuning accuracy for k = 0..=kmax.
    AblateK {
        #[arg(long)]
        task: String,
        #[arg(long)]
        kmax: usize,
        #[arg(long, value_enum, default_value_t = Kind::Adapter)]
        kind: Kind,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Relate similarity to the target with transfer along each path.
    Transfer {
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 0.1)]
        interval: f64,
        #[arg(long, value_enum, default_value_t = Kind::Adapter)]
        kind: Kind,
    },
    /// Relative accuracy drop of every expert on every other task.
    Shift {
        /// Defaults to every task with an expert of the kind.
        #[arg(long, value_delimiter = ',')]
        tasks: Vec<String>,
        #[arg(long, value_enum, default_value_t = Kind::Adapter)]
        kind: Kind,
    },
    /// Check the minimizer-distance bound on random quadratic task pairs.
    CheckBound {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        /// Largest condition number of the sampled curvatures.
        #[arg(long, default_value_t = 100.0)]
        cond: f64,
        #[arg(long, default_value_t = 1.0 - 1e-6)]
        c3: f64,
    },
    /// Evaluate an expert file, or a registry expert, on a task split.
    Eval {
        #[arg(long)]
        task: String,
        /// Expert file [default: the task's registry expert of --kind].
        #[arg(long)]
        expert: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Kind::Adapter)]
        kind: Kind,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
    },
    /// Verify registry consistency.
    Fsck,
}

fn exit_class(err: &anyhow::Error) -> (u8, &'static str) {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => (1, "config"),
        Some(Error::Retrieval(_)) => (1, "retrieval"),
        Some(Error::Data(_)) => (2, "data"),
        Some(Error::Layout(_)) => (2, "layout"),
        Some(Error::Format { .. }) => (2, "format"),
        Some(Error::Io { .. }) => (2, "io"),
        Some(Error::Numerical { .. }) => (3, "numerical"),
        Some(Error::Diverged { .. }) => (3, "diverged"),
        Some(Error::DegenerateEmbedding(_)) => (3, "degenerate-embedding"),
        Some(Error::DegenerateBasis(_)) => (3, "degenerate-basis"),
        Some(Error::Singular(_)) => (3, "singular"),
        None => (2, "other"),
    }
}

/// The one-line diagnostic: `pitune-error code=N kind=K reason="..."`.
fn report(code: u8, kind: &str, reason: &str) {
    let reason = reason.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("pitune-error code={code} kind={kind} reason={}", serde_json::Value::String(reason));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let first = e.to_string();
            report(1, "usage", first.lines().next().unwrap_or("bad arguments"));
            return ExitCode::from(1);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = exit_class(&e);
            report(code, kind, &format!("{e:#}"));
            ExitCode::from(code)
        }
    }
}
