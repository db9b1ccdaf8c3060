use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "portrait", version, about = "Speech portrait training and inference")]
struct Cli {
    /// Line-based key=value training config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// full or tiny.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic face/voice dataset.
    GenData(GenData),
    /// Train the face decoder.
    TrainFd(TrainFd),
    /// Train the speech encoder against a frozen decoder.
    TrainSe(TrainSe),
    /// Train the speech gender classifier.
    TrainGender(TrainGender),
    /// Evaluate encoder checkpoints and write a metrics CSV.
    Eval(Eval),
    /// Build neutral, male and female priors.
    PriorBuild(PriorBuild),
    /// Prior convergence table as CSV.
    PriorTable(PriorTable),
    /// Embed, decode and re-embed dataset faces.
    FaceToFace(FaceToFace),
    /// Audio file to face PNG.
    Infer(Infer),
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    /// Number of pairs; defaults to the config's `samples`.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainFd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-step loss CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainSe {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    fd: PathBuf,
    #[arg(long)]
    priors: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// non-prior, neutral, neutral+fc, gender, gender+fc, female or male.
    #[arg(long, default_value = "neutral+fc")]
    variant: String,
    /// Gender classifier checkpoint; dataset labels are used without it.
    #[arg(long)]
    gender_model: Option<PathBuf>,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainGender {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct Eval {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    fd: PathBuf,
    #[arg(long)]
    priors: PathBuf,
    /// Encoder checkpoints, one report row each.
    #[arg(long = "se", required = true)]
    se: Vec<PathBuf>,
    #[arg(long)]
    gender_model: Option<PathBuf>,
    /// Also append the Face-to-Face row.
    #[arg(long)]
    face_to_face: bool,
    /// Unit-normalize features before L1 and L2.
    #[arg(long)]
    unitized: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PriorBuild {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PriorTable {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated increasing sample counts.
    #[arg(long, value_delimiter = ',', default_values_t = portrait_core::prior::PRIOR_LADDER)]
    ns: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FaceToFace {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    fd: PathBuf,
    #[arg(long)]
    unitized: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Infer {
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    se: PathBuf,
    #[arg(long)]
    fd: PathBuf,
    /// Prior directory, needed by fusion models.
    #[arg(long)]
    priors: Option<PathBuf>,
    #[arg(long)]
    gender_model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
