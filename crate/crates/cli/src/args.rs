use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use cfgd::objective::{LabelNorm, RegSet};
use cfgd::trainer::TrainConfig;

#[derive(Parser, Debug)]
#[command(name = "cfgd", version, about = "Noise-robust node classification: training, corruption and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a canonical graph directory plus split.json.
    Prepare {
        #[command(subcommand)]
        source: PrepareSource,
    },
    /// Corrupt the training labels of a split.
    Corrupt(CorruptArgs),
    /// Train the full method or the plain-GCN baseline.
    Train(TrainArgs),
    /// Re-evaluate a saved checkpoint.
    Eval(EvalArgs),
    /// Sweep noise kinds, rates and seeds; write per-run and summary CSVs.
    Benchmark(BenchmarkArgs),
    /// Compare edge-adding strategies for unlabeled nodes.
    Linkexp(LinkexpArgs),
    /// Run the full model and its three ablations.
    Ablate(AblateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SplitArgs {
    /// Training fraction per class.
    #[arg(long, default_value_t = 0.05)]
    pub train_frac: f64,
    /// Validation fraction of all nodes.
    #[arg(long, default_value_t = 0.15)]
    pub val_frac: f64,
}

#[derive(Subcommand, Debug)]
pub enum PrepareSource {
    /// Generate a stochastic block model graph.
    Sbm {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 0.5)]
        p_in: f64,
        #[arg(long, default_value_t = 0.05)]
        p_out: f64,
        #[arg(long, default_value_t = 16)]
        feat_dim: usize,
        /// Distance between class feature means.
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Validate and canonicalize an existing graph directory.
    Graph {
        /// Graph directory or manifest path.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        split: SplitArgs,
    },
}

#[derive(Args, Debug)]
pub struct CorruptArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Split file; defaults to `<graph>/split.json`.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value = "uniform")]
    pub kind: String,
    #[arg(long)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated class permutation for pair noise.
    #[arg(long, value_delimiter = ',')]
    pub pair_map: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Hyperparameter overrides; unset flags fall back to the config file, then defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON file with any subset of the training config fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub p_th: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub th_pse1: Option<f64>,
    #[arg(long)]
    pub th_pse2: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub n_neg: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub edge_hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub label_norm: Option<LabelNorm>,
    #[arg(long)]
    pub reg_set: Option<RegSet>,
    #[arg(long)]
    pub no_gmm: bool,
    #[arg(long)]
    pub no_fine: bool,
    #[arg(long)]
    pub no_reg: bool,
    /// Keep raw feature rows instead of L1-normalizing them.
    #[arg(long)]
    pub raw_features: bool,
}

impl ConfigArgs {
    /// Flags over file over defaults.
    pub fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
                serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        set!(p_th, tau, th_pse1, th_pse2, alpha, beta, lambda, n_neg, hidden, edge_hidden, epochs, warmup, lr, weight_decay, seed, label_norm, reg_set);
        if self.top_k.is_some() {
            cfg.top_k = self.top_k;
        }
        if self.no_gmm {
            cfg.use_gmm = false;
        }
        if self.no_fine {
            cfg.use_fine = false;
        }
        if self.no_reg {
            cfg.use_reg = false;
        }
        if self.raw_features {
            cfg.normalize_features = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Cfgd,
    Gcn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cfgd => "cfgd",
            Method::Gcn => "gcn",
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Split file; defaults to `<graph>/split.json`.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Noise record from `corrupt`; clean labels are used when absent.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "cfgd")]
    pub method: Method,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Optional JSON output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of seeds, 0..n.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed_offset: u64,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub sweep: SweepArgs,
    #[arg(long, value_delimiter = ',', default_value = "uniform,pair")]
    pub kinds: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.3,0.4")]
    pub rates: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "gcn,cfgd")]
    pub methods: Vec<Method>,
}

#[derive(Args, Debug)]
pub struct LinkexpArgs {
    #[command(flatten)]
    pub sweep: SweepArgs,
    #[arg(long, default_value = "uniform")]
    pub kind: String,
    #[arg(long, default_value_t = 0.3)]
    pub rate: f64,
    #[arg(long, default_value_t = 50)]
    pub k: usize,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub sweep: SweepArgs,
    #[arg(long, default_value = "uniform")]
    pub kind: String,
    #[arg(long, default_value_t = 0.3)]
    pub rate: f64,
}
