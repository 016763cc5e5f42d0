//! Run configuration: a flat `key = value` file merged with command-line flags.
//!
//! Keys (defaults in brackets):
//!
//! ```text
//! data              synthetic | fpha                     [synthetic]
//! manifest          path,label,split CSV (fpha data)     [-]
//! joints            joints per frame for fpha data       [21]
//! center            subtract the per-sequence centroid   [false]
//! chunks            temporal chunks M (s = 3M)           [4]
//! classes           synthetic classes                    [5]
//! n                 synthetic joints                     [12]
//! per_class         synthetic samples per class          [20]
//! synth_noise       synthetic coordinate noise           [0.05]
//! mode              none | orth | stc | orth+stc         [orth+stc]
//! k                 basis size K (comma list for ablate) [4]
//! modes             ablation columns, comma separated    [H,L,L+orth,L+MP(K),L+orth+stc,L+MP(n)]
//! channels          block output channels                [16]
//! epochs            training epochs                      [2800]
//! batch_size        mini-batch size                      [600]
//! lr                initial learning rate                [0.01]
//! lr_min / lr_max   learning-rate clamp                  [1e-5 / 0.1]
//! lr_factor         learning-rate factor                 [0.99]
//! beta1 / beta2     Adam moments                         [0.9 / 0.999]
//! adam_eps          Adam epsilon                         [1e-8]
//! gamma_max         final sharpness, or auto             [auto]
//! epsilon / delta   orthogonality tolerance and gap      [0.01 / 0.01]
//! noise             per-epoch basis noise                [delta/2]
//! seed              run seed                             [0]
//! prune_rate        magnitude-prune percentage           [-]
//! fine_tune_epochs  epochs after pruning                 [epochs/10]
//! threshold         sparsity threshold                   [0.01]
//! checkpoint_every  epochs between checkpoints, 0 = off  [0]
//! checkpoint        model checkpoint to load (eval, prune)
//! out               output directory                     [$LWGCN_OUT or runs, then /<command>]
//! ```
//!
//! `gamma_max = auto` uses the ε-orthogonality bound for (K, δ, ε).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lwgcn::connectivity::{epsilon_orth_bound, ConstraintMode, DEFAULT_DELTA, DEFAULT_EPSILON};
use lwgcn::skeleton::{load_split, synth_dataset, Dataset, SkeletonGraph, SynthConfig};
use lwgcn::trainer::{AblationMode, PruneConfig, TrainConfig};

pub const OUT_ENV: &str = "LWGCN_OUT";

pub const KEYS: &[&str] = &[
    "data",
    "manifest",
    "joints",
    "center",
    "chunks",
    "classes",
    "n",
    "per_class",
    "synth_noise",
    "mode",
    "k",
    "modes",
    "channels",
    "epochs",
    "batch_size",
    "lr",
    "lr_min",
    "lr_max",
    "lr_factor",
    "beta1",
    "beta2",
    "adam_eps",
    "gamma_max",
    "epsilon",
    "delta",
    "noise",
    "seed",
    "prune_rate",
    "fine_tune_epochs",
    "threshold",
    "checkpoint_every",
    "checkpoint",
    "out",
];

/// Raw key/value settings before typing.
pub type Settings = BTreeMap<String, String>;

pub fn parse_config(text: &str, origin: &Path) -> Result<Settings, String> {
    let mut out = Settings::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("{}:{}: expected 'key = value'", origin.display(), i + 1));
        };
        let key = key.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(format!("{}:{}: unknown key '{key}'", origin.display(), i + 1));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(format!("{}:{}: key '{key}' given twice", origin.display(), i + 1));
        }
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<Settings, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    parse_config(&text, path)
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Fpha {
        manifest: PathBuf,
        joints: usize,
        chunks: usize,
        center: bool,
    },
}

impl DataSource {
    pub fn load(&self) -> lwgcn::Result<Dataset> {
        match self {
            DataSource::Synthetic(cfg) => synth_dataset(cfg),
            DataSource::Fpha {
                manifest,
                joints,
                chunks,
                center,
            } => {
                let graph = if *joints == 21 {
                    SkeletonGraph::hand21()
                } else {
                    SkeletonGraph::chain(*joints)
                };
                load_split(manifest, &graph, *chunks, *center)
            }
        }
    }
}

/// Fully resolved settings for one command.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub data: DataSource,
    pub train: TrainConfig,
    pub k_values: Vec<usize>,
    pub modes: Vec<AblationMode>,
    pub epsilon: f64,
    pub delta: f64,
    pub gamma_auto: bool,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Every key with its final value, for echoing.
    pub resolved: Settings,
}

struct Reader<'a> {
    settings: &'a Settings,
    resolved: Settings,
}

impl Reader<'_> {
    fn raw(&mut self, key: &str, default: &str) -> String {
        let v = self.settings.get(key).cloned().unwrap_or_else(|| default.to_string());
        self.resolved.insert(key.to_string(), v.clone());
        v
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str, default: &str) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key, default);
        v.parse::<T>().map_err(|e| format!("bad value '{v}' for '{key}': {e}"))
    }

    fn optional<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, String>
    where
        T::Err: std::fmt::Display,
    {
        match self.settings.get(key) {
            None => Ok(None),
            Some(v) => {
                self.resolved.insert(key.to_string(), v.clone());
                v.parse::<T>().map(Some).map_err(|e| format!("bad value '{v}' for '{key}': {e}"))
            }
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str, default: &str) -> Result<Vec<T>, String>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key, default);
        v.split(',')
            .map(|s| s.trim().parse::<T>().map_err(|e| format!("bad entry '{s}' in '{key}': {e}")))
            .collect()
    }
}

impl RunSpec {
    pub fn resolve(settings: &Settings, command: &str) -> Result<Self, String> {
        if let Some(bad) = settings.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(format!("unknown key '{bad}'"));
        }
        let mut r = Reader {
            settings,
            resolved: Settings::new(),
        };
        let seed: u64 = r.get("seed", "0")?;
        let chunks: usize = r.get("chunks", "4")?;
        let kind = r.raw("data", "synthetic");
        let data = match kind.as_str() {
            "synthetic" => DataSource::Synthetic(SynthConfig {
                num_classes: r.get("classes", "5")?,
                n: r.get("n", "12")?,
                per_class: r.get("per_class", "20")?,
                noise: r.get("synth_noise", "0.05")?,
                seed,
                frames: SynthConfig::default().frames,
                chunks,
            }),
            "fpha" => DataSource::Fpha {
                manifest: r
                    .optional::<PathBuf>("manifest")?
                    .ok_or("fpha data needs a manifest path")?,
                joints: r.get("joints", "21")?,
                chunks,
                center: r.get("center", "false")?,
            },
            other => return Err(format!("unknown data source '{other}' (synthetic | fpha)")),
        };
        if chunks == 0 {
            return Err("chunks must be >= 1".into());
        }

        let k_values: Vec<usize> = r.list("k", "4")?;
        if k_values.is_empty() || k_values.contains(&0) {
            return Err("k values must be >= 1".into());
        }
        let modes: Vec<AblationMode> = r.list("modes", "H,L,L+orth,L+MP(K),L+orth+stc,L+MP(n)")?;
        let mode: ConstraintMode = r.get("mode", "orth+stc")?;
        let epsilon: f64 = r.get("epsilon", &DEFAULT_EPSILON.to_string())?;
        let delta: f64 = r.get("delta", &DEFAULT_DELTA.to_string())?;
        let k = k_values[0];
        let gamma_raw = r.raw("gamma_max", "auto");
        let gamma_auto = gamma_raw == "auto";
        let gamma_max = if gamma_auto {
            if k >= 2 {
                epsilon_orth_bound(k, delta, epsilon).map_err(|e| e.to_string())?
            } else {
                1.0
            }
        } else {
            gamma_raw.parse().map_err(|e| format!("bad value '{gamma_raw}' for 'gamma_max': {e}"))?
        };

        let epochs: usize = r.get("epochs", "2800")?;
        let prune = match r.optional::<f64>("prune_rate")? {
            Some(rate) => Some(PruneConfig {
                rate,
                fine_tune_epochs: r.get("fine_tune_epochs", &(epochs / 10).to_string())?,
            }),
            None => r.optional::<usize>("fine_tune_epochs")?.map(|fine_tune_epochs| PruneConfig {
                rate: 0.0,
                fine_tune_epochs,
            }),
        };
        let mut train = TrainConfig {
            max_epochs: epochs,
            batch_size: r.get("batch_size", "600")?,
            beta1: r.get("beta1", "0.9")?,
            beta2: r.get("beta2", "0.999")?,
            adam_eps: r.get("adam_eps", "1e-8")?,
            lr_init: r.get("lr", "0.01")?,
            lr_factor: r.get("lr_factor", "0.99")?,
            lr_bounds: (r.get("lr_min", "1e-5")?, r.get("lr_max", "0.1")?),
            mode,
            gamma_max,
            noise_magnitude: r.get("noise", &(delta / 2.0).to_string())?,
            seed,
            prune,
            freeze_basis: false,
            k,
            channels: r.get("channels", "16")?,
            sparsity_threshold: r.get("threshold", "0.01")?,
            checkpoint_every: r.get("checkpoint_every", "0")?,
            checkpoint_dir: None,
        };
        let checkpoint = r.optional::<PathBuf>("checkpoint")?;
        let default_out = {
            let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            root.join(command).display().to_string()
        };
        let out_dir: PathBuf = r.get("out", &default_out)?;
        if train.checkpoint_every > 0 {
            train.checkpoint_dir = Some(out_dir.join("checkpoints"));
        }
        train.validate().map_err(|e| e.to_string())?;
        let mut resolved = r.resolved;
        if gamma_auto {
            resolved.insert("gamma_max".into(), format!("auto ({gamma_max})"));
        }
        Ok(Self {
            data,
            train,
            k_values,
            modes,
            epsilon,
            delta,
            gamma_auto,
            checkpoint,
            out_dir,
            resolved,
        })
    }

    /// Sharpness used for basis size `k` (the bound when `gamma_max = auto`).
    pub fn gamma_for(&self, k: usize) -> f64 {
        if self.gamma_auto && k >= 2 {
            epsilon_orth_bound(k, self.delta, self.epsilon).unwrap_or(self.train.gamma_max)
        } else {
            self.train.gamma_max
        }
    }

    /// The merged settings in config-file syntax.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.resolved {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let cfg = parse_config("# run\nepochs = 50\nmode=orth # inline\n\nper-class = 4\n", Path::new("c")).unwrap();
        assert_eq!(cfg["epochs"], "50");
        assert_eq!(cfg["mode"], "orth");
        assert_eq!(cfg["per_class"], "4");
        assert!(parse_config("bogus = 1", Path::new("c")).is_err());
        assert!(parse_config("epochs 1", Path::new("c")).is_err());
        assert!(parse_config("epochs = 1\nepochs = 2", Path::new("c")).is_err());
    }

    #[test]
    fn defaults_and_auto_gamma() {
        let spec = RunSpec::resolve(&Settings::new(), "train").unwrap();
        assert_eq!(spec.train.max_epochs, 2800);
        assert_eq!(spec.train.batch_size, 600);
        assert_eq!(spec.train.mode, ConstraintMode::OrthStoch);
        assert!((spec.train.gamma_max - 597.9).abs() < 0.1);
        assert!((spec.gamma_for(2) - 528.8).abs() < 0.1);
        assert!(spec.echo().contains("epochs = 2800"));
    }

    #[test]
    fn fpha_requires_manifest() {
        let mut s = Settings::new();
        s.insert("data".into(), "fpha".into());
        assert!(RunSpec::resolve(&s, "train").is_err());
    }
}
