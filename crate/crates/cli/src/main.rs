//! `lwgcn`: train, evaluate, prune and check learned-connectivity GCNs.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or input error,
//! 3 training diverged.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::settings::{load_config, RunSpec, Settings};

#[derive(Parser, Debug)]
#[command(name = "lwgcn", version, about = "Graph convolutional networks with learned, lightweight connectivity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoint, metrics and summary.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(RunArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Print the sharpness needed for ε-orthogonality and verify it empirically.
    Bound(BoundArgs),
    /// Run the (K, mode) ablation grid.
    Ablate(RunArgs),
    /// Magnitude-prune a checkpoint and fine-tune it.
    Prune(RunArgs),
}

/// Flags shared by the data and training commands. Any flag overrides the
/// same key in `--config`.
#[derive(Args, Debug, Default)]
pub struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the seeded synthetic dataset.
    #[arg(long, conflicts_with = "fpha")]
    synthetic: bool,
    /// Use sequence files listed in a `path,label,split` manifest.
    #[arg(long, value_name = "MANIFEST")]
    fpha: Option<PathBuf>,
    #[arg(long)]
    joints: Option<usize>,
    /// Subtract each sequence's centroid before chunking.
    #[arg(long)]
    center: bool,
    #[arg(long)]
    chunks: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// Synthetic joint count.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    synth_noise: Option<f64>,
    /// none | orth | stc | orth+stc
    #[arg(long)]
    mode: Option<String>,
    /// Basis size; a comma list for `ablate`.
    #[arg(long)]
    k: Option<String>,
    /// Ablation columns, e.g. `L,L+orth,L+MP(K)`.
    #[arg(long)]
    modes: Option<String>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    lr_max: Option<f64>,
    #[arg(long)]
    lr_factor: Option<f64>,
    /// Final sharpness, or `auto` for the ε-orthogonality bound.
    #[arg(long)]
    gamma_max: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Per-epoch basis noise magnitude.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    prune_rate: Option<f64>,
    #[arg(long)]
    fine_tune_epochs: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Model checkpoint to load.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn settings(&self) -> Result<Settings, String> {
        let mut s = match &self.config {
            Some(path) => load_config(path)?,
            None => Settings::new(),
        };
        let mut set = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                s.insert(key.to_string(), v);
            }
        };
        let show = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        set("data", self.synthetic.then(|| "synthetic".to_string()));
        if let Some(m) = &self.fpha {
            set("data", Some("fpha".into()));
            set("manifest", Some(m.display().to_string()));
        }
        set("joints", self.joints.map(|v| v.to_string()));
        set("center", self.center.then(|| "true".to_string()));
        set("chunks", self.chunks.map(|v| v.to_string()));
        set("classes", self.classes.map(|v| v.to_string()));
        set("n", self.n.map(|v| v.to_string()));
        set("per_class", self.per_class.map(|v| v.to_string()));
        set("synth_noise", self.synth_noise.map(|v| v.to_string()));
        set("mode", self.mode.clone());
        set("k", self.k.clone());
        set("modes", self.modes.clone());
        set("channels", self.channels.map(|v| v.to_string()));
        set("epochs", self.epochs.map(|v| v.to_string()));
        set("batch_size", self.batch_size.map(|v| v.to_string()));
        set("lr", self.lr.map(|v| v.to_string()));
        set("lr_min", self.lr_min.map(|v| v.to_string()));
        set("lr_max", self.lr_max.map(|v| v.to_string()));
        set("lr_factor", self.lr_factor.map(|v| v.to_string()));
        set("gamma_max", self.gamma_max.clone());
        set("epsilon", self.epsilon.map(|v| v.to_string()));
        set("delta", self.delta.map(|v| v.to_string()));
        set("noise", self.noise.map(|v| v.to_string()));
        set("seed", self.seed.map(|v| v.to_string()));
        set("prune_rate", self.prune_rate.map(|v| v.to_string()));
        set("fine_tune_epochs", self.fine_tune_epochs.map(|v| v.to_string()));
        set("threshold", self.threshold.map(|v| v.to_string()));
        set("checkpoint_every", self.checkpoint_every.map(|v| v.to_string()));
        set("checkpoint", show(&self.checkpoint));
        set("out", show(&self.out));
        Ok(s)
    }

    fn resolve(&self, command: &str) -> Result<RunSpec, String> {
        RunSpec::resolve(&self.settings()?, command)
    }
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Single mode to check; all four when omitted.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Signal dimension s.
    #[arg(long, default_value_t = 4)]
    pub s: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Number of random instances per mode.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sharpness used for the constrained modes.
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Test hook: negate the analytic gradients.
    #[arg(long, hide = true)]
    pub fault: bool,
}

#[derive(Args, Debug)]
pub struct BoundArgs {
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,
    /// Random δ-gapped bases checked at the bound.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Matrix size of the random bases.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(a) => a.resolve("train").map_err(commands::usage).and_then(|s| commands::train(&s)),
        Command::Eval(a) => a.resolve("eval").map_err(commands::usage).and_then(|s| commands::eval(&s)),
        Command::Ablate(a) => a.resolve("ablate").map_err(commands::usage).and_then(|s| commands::ablate(&s)),
        Command::Prune(a) => a.resolve("prune").map_err(commands::usage).and_then(|s| commands::prune(&s)),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Bound(a) => commands::bound(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
