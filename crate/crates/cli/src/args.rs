use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use icis::baselines::{DaeConfig, DaeInit};
use icis::experiments::{AblationRow, BaselineMethod};
use icis::{Distance, LossConfig, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "icis", version, about = "Image-free classifier injection for zero-shot classification")]
pub struct Cli {
    /// Run everything on the calling thread. The parallel pool size follows
    /// `RAYON_NUM_THREADS`.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic dataset directory with a known descriptor→weights map.
    Synth(SynthArgs),
    /// Train the injection model on the seen pairs and save a checkpoint.
    Train(TrainCmd),
    /// Predict unseen weights with a checkpoint and write the extended head.
    Inject(InjectCmd),
    /// Evaluate a head on the test features.
    Eval(EvalCmd),
    /// Run the five-row ablation.
    Ablate(AblateCmd),
    /// Train on nested subsets of the seen pairs.
    Sweep(SweepCmd),
    /// Entropy report and failure histogram for one class.
    Analyze(AnalyzeCmd),
    /// Run a comparison method.
    Baseline(BaselineCmd),
    /// Score hyperparameter candidates on held-out seen pairs.
    Select(SelectCmd),
    /// Re-run the command stored in a run record.
    Replay(ReplayCmd),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub n_seen: usize,
    #[arg(long, default_value_t = 20)]
    pub n_unseen: usize,
    /// Seen classes held out for validation (the last ones).
    #[arg(long, default_value_t = 0)]
    pub n_val: usize,
    #[arg(long, default_value_t = 32)]
    pub descriptor_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub weight_dim: usize,
    #[arg(long, value_enum, default_value_t = MapArg::Linear)]
    pub map: MapArg,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 50)]
    pub samples_per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    pub feature_noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 0.0)]
    pub correlation: f64,
    #[arg(long)]
    pub unit_descriptors: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapArg {
    Linear,
    Mlp,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Batch 16, hidden 2048.
    Cub,
    /// Batch 20, hidden 2048.
    Awa2,
    /// Batch 16, hidden 4096.
    Sun,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceArg {
    Cosine,
    L2,
}

impl From<DistanceArg> for Distance {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::Cosine => Distance::Cosine,
            DistanceArg::L2 => Distance::L2,
        }
    }
}

/// Optimisation settings; unset values come from the preset.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Preset::Cub)]
    pub preset: Preset,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub stop_threshold: Option<f64>,
    #[arg(long)]
    pub stop_window: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Append the head bias to each weight vector.
    #[arg(long)]
    pub include_bias: bool,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        let mut cfg = match self.preset {
            Preset::Cub => TrainConfig::default(),
            Preset::Awa2 => TrainConfig::awa2(),
            Preset::Sun => TrainConfig::sun(),
        };
        if let Some(v) = self.hidden_dim {
            cfg.hidden_dim = v;
        }
        if let Some(v) = self.lr {
            cfg.adam.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.stop_threshold {
            cfg.stop_threshold = v;
        }
        if let Some(v) = self.stop_window {
            cfg.stop_window = v;
        }
        cfg.seed = self.seed;
        cfg.include_bias = self.include_bias;
        cfg
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct LossArgs {
    #[arg(long, value_enum, default_value_t = DistanceArg::Cosine)]
    pub distance: DistanceArg,
    /// Comma-separated objective terms; a2w is required.
    #[arg(long, default_value = "a2w,a2a,w2w,w2a")]
    pub terms: String,
    /// Autoencode unseen descriptors too.
    #[arg(long)]
    pub include_unseen_desc: bool,
}

impl LossArgs {
    pub fn config(&self) -> icis::Result<LossConfig> {
        Ok(LossConfig::parse_terms(&self.terms, self.distance.into())?
            .with_unseen_descriptors(self.include_unseen_desc))
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainCmd {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub loss: LossArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct InjectCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory receiving head.bin / head.ids (and head_bias.bin).
    #[arg(long)]
    pub out: PathBuf,
    /// Keep only the injected rows.
    #[arg(long)]
    pub zsl: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalCmd {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding head.bin / head.ids.
    #[arg(long)]
    pub head: PathBuf,
    /// Restrict the head to unseen classes and score unseen samples only.
    #[arg(long)]
    pub zsl: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct AblateCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Rows to run (mlp-base, cosine, within, across, include-unseen).
    #[arg(long, value_delimiter = ',', default_value = "mlp-base,cosine,within,across,include-unseen")]
    pub rows: Vec<String>,
    /// Seeds to repeat the table with; overrides --seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub train: TrainArgs,
}

impl AblateCmd {
    pub fn rows(&self) -> icis::Result<Vec<AblationRow>> {
        self.rows.iter().map(|r| AblationRow::parse(r.trim())).collect()
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SweepCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,1")]
    pub fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "mlp-base,include-unseen")]
    pub rows: Vec<String>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub head: PathBuf,
    /// Class whose test samples are analysed.
    #[arg(long)]
    pub target: u32,
    #[arg(long, default_value_t = 10)]
    pub bin_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Conse,
    Costa,
    Subreg,
    Dae,
    Wavg,
    Smo,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BaselineCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// ConSE: number of top seen scores combined.
    #[arg(long, default_value_t = 10)]
    pub top_t: usize,
    /// WAvg: softmax temperature over cosine similarities.
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    /// SMO: ridge term added to the Gram matrix.
    #[arg(long, default_value_t = 1e-3)]
    pub ridge: f64,
    /// DAE: hidden width.
    #[arg(long, default_value_t = 512)]
    pub dae_hidden: usize,
    /// DAE: training epochs.
    #[arg(long, default_value_t = 200)]
    pub dae_epochs: usize,
    /// DAE: start from the identity map instead of a random init.
    #[arg(long)]
    pub dae_identity_init: bool,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Objective of the weight predictor used by subreg and dae.
    #[command(flatten)]
    pub loss: LossArgs,
}

impl BaselineCmd {
    pub fn method(&self) -> BaselineMethod {
        match self.method {
            MethodArg::Conse => BaselineMethod::Conse { top_t: self.top_t },
            MethodArg::Costa => BaselineMethod::Costa,
            MethodArg::Subreg => BaselineMethod::Subreg,
            MethodArg::Dae => BaselineMethod::Dae,
            MethodArg::Wavg => BaselineMethod::Wavg {
                temperature: self.temperature,
            },
            MethodArg::Smo => BaselineMethod::Smo { ridge: self.ridge },
        }
    }

    pub fn dae_config(&self) -> DaeConfig {
        DaeConfig {
            hidden_dim: self.dae_hidden,
            epochs: self.dae_epochs,
            seed: self.train.seed,
            init: if self.dae_identity_init {
                DaeInit::Identity
            } else {
                DaeInit::Kaiming
            },
            ..DaeConfig::default()
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SelectCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096")]
    pub hidden_dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1e-5")]
    pub lrs: Vec<f64>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub loss: LossArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReplayCmd {
    /// A record.json written by an earlier run.
    #[arg(long)]
    pub record: PathBuf,
    /// Output directory replacing the recorded one.
    #[arg(long)]
    pub out: PathBuf,
}
