use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use detectlab_cli::{
    cmd_ablate, cmd_attnviz, cmd_eval, cmd_gradcheck, cmd_loss_bench, cmd_synth, cmd_train, Split,
};

#[derive(Parser)]
#[command(
    name = "detectlab",
    about = "Miniature grid detector lab: synthetic scenes, swappable neck/attention/box-loss training, mAP evaluation, gradient checks, ablations and loss benches",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with 6:2:2 split manifests
    Synth {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes
        #[arg(long)]
        n: usize,
        /// Dataset seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scene spec JSON (defaults baked in)
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Train a detector and write the per-epoch CSV log plus a checkpoint
    Train {
        /// Detector config JSON
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory (from `synth`)
        #[arg(long)]
        data: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint written with the same config
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a split, or score a prediction file
    Eval {
        /// Checkpoint to evaluate
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Dataset directory (with --ckpt)
        #[arg(long)]
        data: Option<PathBuf>,
        /// Split to evaluate: train, val or test
        #[arg(long, default_value = "test")]
        split: String,
        /// Detections JSONL (with --gt)
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Ground-truth JSONL (with --pred)
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Write the full result as JSON
        #[arg(long)]
        json_out: Option<PathBuf>,
        /// Dump the decoded detections as JSONL
        #[arg(long)]
        pred_out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks (exit code 2 on failure)
    Gradcheck {
        /// conv, cbs, ca, rfb, sppcspc, wiou1, wiou3, ciou, or all
        #[arg(long)]
        module: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Relative-error tolerance
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Train the ablation grid and emit one CSV row per configuration
    Ablate {
        /// Dataset directory (from `synth`)
        #[arg(long)]
        data: PathBuf,
        /// Grid JSON ({"base": {...}, "rows": [...]}); default is the
        /// four-row core grid
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Output CSV path
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
    },
    /// Pure box-regression bench: gradient descent under each loss
    LossBench {
        /// Comma-separated losses: ciou, wiou1, wiou3
        #[arg(long, default_value = "ciou,wiou1,wiou3")]
        losses: String,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Fixed descent step size
        #[arg(long, default_value_t = 20.0)]
        lr: f64,
        /// Number of box pairs
        #[arg(long, default_value_t = 256)]
        pairs: usize,
        /// Output CSV path
        #[arg(long, default_value = "loss_bench.csv")]
        out: PathBuf,
    },
    /// Export attention gate maps for one image
    Attnviz {
        #[arg(long)]
        ckpt: PathBuf,
        /// Image tensor file ([3,H,W])
        #[arg(long)]
        image: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> detectlab_cli::Result<()> {
    match cli.command {
        Command::Synth { out, n, seed, spec } => cmd_synth(&out, n, seed, spec.as_deref()),
        Command::Train {
            config,
            data,
            out,
            resume,
        } => cmd_train(&config, &data, &out, resume.as_deref()),
        Command::Eval {
            ckpt,
            data,
            split,
            pred,
            gt,
            json_out,
            pred_out,
        } => cmd_eval(
            ckpt.as_deref(),
            data.as_deref(),
            Split::parse(&split)?,
            pred.as_deref(),
            gt.as_deref(),
            json_out.as_deref(),
            pred_out.as_deref(),
        ),
        Command::Gradcheck { module, seed, tol } => cmd_gradcheck(&module, seed, tol),
        Command::Ablate { data, grid, out } => cmd_ablate(&data, grid.as_deref(), &out),
        Command::LossBench {
            losses,
            steps,
            seed,
            lr,
            pairs,
            out,
        } => cmd_loss_bench(&losses, steps, seed, lr, pairs, &out),
        Command::Attnviz { ckpt, image, out } => cmd_attnviz(&ckpt, &image, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
