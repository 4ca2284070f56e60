//! Flag sets. Every field is optional so that a value can come from the
//! command line, from the matching section of a `--config` TOML file, or
//! from the built-in default, in that order of precedence.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cachefed::{Error, Result};

const FORMATS: &str = "\
File formats:
  *.cff        CFF1 feature file: 24-byte header (magic \"CFF1\", u32 version=1,
               u32 num_classes, u32 dim, u64 num_rows), class names, then per
               row a u32 label and dim little-endian f32 values. Rows must be
               unit-norm. Text heads use the same layout, one row per class.
  rounds.csv   round,accuracy,mean_loss,params_uploaded,flops
  sweep.csv    alpha,beta,final_accuracy,seed
  *.cfm        CFM1 cache checkpoint (keys, value labels, alpha, beta).
CSV files open with a `# columns:` comment line. JSON mirrors use the same
field names.

Config files are TOML with one table per subcommand ([gen-synth], [train],
[convergence], [partition]); keys are the long flag names. Flags win over
the file, the file wins over defaults.

Exit codes: 0 success, 2 validation error, 3 I/O error, 4 numeric divergence.
CACHEFED_THREADS caps worker threads (0 = all cores).";

#[derive(Parser, Debug)]
#[command(name = "cachefed", version, about = "Federated cache-adapter fine-tuning and convergence lab", after_help = FORMATS)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic feature world (train, test, synthetic cache set, text head).
    #[command(after_help = FORMATS)]
    GenSynth(GenSynthArgs),
    /// Run federated training of the cache keys.
    #[command(after_help = FORMATS)]
    Train(TrainArgs),
    /// Certify the local-SGD rate bound on a synthetic quadratic problem.
    #[command(after_help = FORMATS)]
    Convergence(ConvergenceArgs),
    /// Split a feature file across clients and report label skew.
    #[command(after_help = FORMATS)]
    Partition(PartitionArgs),
}

macro_rules! overlay {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl $ty {
            /// Fills every unset field from `other`.
            pub fn overlay(self, other: $ty) -> $ty {
                $ty { config: self.config, $($field: self.$field.or(other.$field)),* }
            }
        }
    };
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GenSynthArgs {
    /// TOML config file; values are read from its [gen-synth] table.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Number of classes [default: 10]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    /// Synthetic samples per class in the cache set [default: 16]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
    /// Feature dimension [default: 64]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Spread of class centers around the shared axis [default: 1.0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
    /// Norm scale of per-sample noise [default: 2.5]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    /// Rotation (radians) of synthetic class centers away from real ones [default: 0.2]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain_gap: Option<f64>,
    /// Norm scale of the text-embedding perturbation [default: 1.0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_noise: Option<f64>,
    /// Real training samples per class [default: 16]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_per_class: Option<usize>,
    /// Real test samples per class [default: 50]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_per_class: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output prefix; writes PREFIX.{train,test,synthetic,text}.cff [default: synth]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

overlay!(GenSynthArgs {
    classes,
    shots,
    dim,
    separation,
    noise,
    domain_gap,
    text_noise,
    train_per_class,
    test_per_class,
    seed,
    out
});

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainArgs {
    /// TOML config file; values are read from its [train] table.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset prefix. Uses PREFIX.train.cff (or PREFIX.features.cff),
    /// PREFIX.test.cff, PREFIX.synthetic.cff and PREFIX.text.cff when present.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Training features (overrides --data)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    /// Test features [default: the training features]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Class-balanced cache features [default: first --shots per class of the training set]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<PathBuf>,
    /// Text head
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<PathBuf>,
    /// Shots per class when the cache is cut from the training set [default: 16, capped by the rarest class]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
    /// Partition scheme: iid, dir or pat [default: iid]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<String>,
    /// Concentration for the dir scheme [default: 0.1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dirichlet_alpha: Option<f64>,
    /// Number of clients N [default: 10]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clients: Option<usize>,
    /// Clients sampled per round K [default: every client holding data]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clients_per_round: Option<usize>,
    /// Global rounds T [default: 20]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    /// Local epochs E [default: 1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_epochs: Option<usize>,
    /// Learning rate [default: 0.001]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// Learning-rate schedule: constant or inverse_t [default: constant]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_schedule: Option<String>,
    /// gamma of the inverse_t schedule [default: 10.0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_gamma: Option<f64>,
    /// Fusion weight alpha [default: 0.5]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Affinity sharpness beta [default: 1.0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// FedProx proximal weight mu; 0 disables [default: 0.0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prox_mu: Option<f64>,
    /// Local mini-batch size [default: whole shard]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Cache key initialisation: synthetic or random [default: synthetic]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_init: Option<String>,
    /// Random seed [default: 0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory for rounds.csv, rounds.jsonl, record.json, checkpoint.cfm [default: .]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

overlay!(TrainArgs {
    data,
    train,
    test,
    synthetic,
    text,
    shots,
    partition,
    dirichlet_alpha,
    clients,
    clients_per_round,
    rounds,
    local_epochs,
    lr,
    lr_schedule,
    lr_gamma,
    alpha,
    beta,
    prox_mu,
    batch_size,
    cache_init,
    seed,
    out
});

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConvergenceArgs {
    /// TOML config file; values are read from its [convergence] table.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Number of clients N [default: 10]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clients: Option<usize>,
    /// Participation K/N, e.g. 5/10; N must match --clients [default: 5/10]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub participation: Option<String>,
    /// Problem dimension [default: 20]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Strong convexity mu [default: 1.0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Smoothness L [default: 4.0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
    /// Per-coordinate gradient noise std sigma [default: 0.1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Spread of client minimisers [default: 1.0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heterogeneity: Option<f64>,
    /// Local steps between synchronisations E [default: 5]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_steps: Option<usize>,
    /// Step-size offset gamma in eta_t = lr_scale / (t + gamma) [default: max(8L/mu - 1, E)]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Step-size numerator [default: 2/mu]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_scale: Option<f64>,
    /// Horizon T [default: 10000]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Independent runs averaged [default: 50]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    /// Resamples per checkpoint for the sampling checks; 0 skips them [default: 10000]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resamples: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory for convergence.csv and convergence.json [default: .]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

overlay!(ConvergenceArgs {
    clients,
    participation,
    dim,
    mu,
    smoothness,
    sigma,
    heterogeneity,
    local_steps,
    gamma,
    lr_scale,
    horizon,
    runs,
    resamples,
    seed,
    out
});

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PartitionArgs {
    /// TOML config file; values are read from its [partition] table.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset prefix; uses PREFIX.train.cff or PREFIX.features.cff
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Feature file to split (overrides --data)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    /// Scheme: iid, dir or pat [default: iid]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    /// Number of clients [default: 10]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clients: Option<usize>,
    /// Concentration for the dir scheme [default: 0.1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dirichlet_alpha: Option<f64>,
    /// Random seed [default: 0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory for partition.txt, partition.json, heterogeneity.json [default: .]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

overlay!(PartitionArgs {
    data,
    train,
    scheme,
    clients,
    dirichlet_alpha,
    seed,
    out
});

/// Reads table `section` of a TOML config file into a flag set.
pub fn load_section<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>, section: &str) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        msg,
    };
    let doc: toml::Table = toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
    match doc.get(section) {
        None => Ok(T::default()),
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(format!("[{section}]: {e}"))),
    }
}

/// The resolved flag set as a config file that reproduces the run.
pub fn render<T: Serialize>(section: &str, resolved: &T) -> String {
    let mut doc = toml::Table::new();
    doc.insert(
        section.to_string(),
        toml::Value::try_from(resolved).expect("flag sets serialise to TOML"),
    );
    toml::to_string(&doc).expect("TOML table serialises")
}
