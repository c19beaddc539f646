use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use linerec::synth::DegradationProfile;

#[derive(Parser, Debug)]
#[command(name = "linerec", version, about = "Text-line recognition pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every stage.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Master seed for every random choice in the stage.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key=value` file; keys are the long flag names of the stage.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving every file the stage writes.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic corpus: images/, labels.txt, meta.jsonl.
    GenData(GenData),
    /// Clean a manifest, build the dictionary, pack the store and split it.
    BuildDataset(BuildDataset),
    /// Train from scratch or fine-tune from a checkpoint.
    Train(Train),
    /// Evaluate a checkpoint on a dataset split.
    Eval(Eval),
    /// Recognize one image.
    Infer(Infer),
    /// Compare two evaluation reports, or two checkpoints on a dataset or image.
    Compare(Compare),
    /// Serve the comparison API.
    Serve(Serve),
}

#[derive(Args, Debug)]
pub struct GenData {
    #[command(flatten)]
    pub common: Common,
    /// Number of distinct characters.
    #[arg(long)]
    pub alphabet: Option<usize>,
    /// Number of lines.
    #[arg(long)]
    pub count: Option<usize>,
    /// clean, light or heavy.
    #[arg(long)]
    pub profile: Option<DegradationProfile>,
}

#[derive(Args, Debug)]
pub struct BuildDataset {
    #[command(flatten)]
    pub common: Common,
    /// `path<TAB>label` manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Root that manifest paths are relative to; defaults to the manifest's directory.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Reuse an existing dictionary instead of deriving one from the labels.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// Degradation sidecar; defaults to meta.jsonl next to the manifest when present.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Train:validation ratio, e.g. `10:1`.
    #[arg(long)]
    pub ratio: Option<String>,
}

#[derive(Args, Debug)]
pub struct Train {
    #[command(flatten)]
    pub common: Common,
    /// Output directory of build-dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint to fine-tune from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub kd_temperature: Option<f64>,
    #[arg(long)]
    pub teacher_ctc_weight: Option<f64>,
    #[arg(long)]
    pub freeze_teacher: bool,
}

#[derive(Args, Debug)]
pub struct Eval {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// val, train or all.
    #[arg(long)]
    pub split: Option<String>,
    /// Largest edit distance still counted as a partial match.
    #[arg(long)]
    pub partial_threshold: Option<usize>,
}

#[derive(Args, Debug)]
pub struct Infer {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
}

#[derive(Args, Debug)]
pub struct Compare {
    #[command(flatten)]
    pub common: Common,
    /// Report JSON from eval, before fine-tuning.
    #[arg(long, requires = "after", conflicts_with_all = ["baseline", "finetuned"])]
    pub before: Option<PathBuf>,
    /// Report JSON from eval, after fine-tuning.
    #[arg(long, requires = "before")]
    pub after: Option<PathBuf>,
    #[arg(long, requires = "finetuned")]
    pub baseline: Option<PathBuf>,
    #[arg(long, requires = "baseline")]
    pub finetuned: Option<PathBuf>,
    /// Evaluate both checkpoints on this dataset's split.
    #[arg(long, requires = "baseline", conflicts_with = "image")]
    pub dataset: Option<PathBuf>,
    /// Run both checkpoints on one image.
    #[arg(long, requires = "baseline")]
    pub image: Option<PathBuf>,
    /// Split used with --dataset: val, train or all.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Args, Debug)]
pub struct Serve {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub finetuned: PathBuf,
    /// Address to bind, e.g. 127.0.0.1:8080 (port 0 picks a free port).
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub max_upload_bytes: Option<usize>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Allowed CORS origin, `*` for any.
    #[arg(long)]
    pub cors_origin: Option<String>,
    /// Built UI assets to serve at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}
