//! Experiment drivers: a single injection run, the five-row ablation, the
//! nested-subset data-efficiency sweep, validation-based hyperparameter
//! scoring and the baselines, plus the run record written by the CLI.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::baselines::{self, DaeConfig, SimilarityWeighting};
use crate::data::{derive_validation_split, ClassId, ClassifierHead, DescriptorSet, FeatureSet, PairSet, SplitManifest, SynthData};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::model::{self, IcisModel, InjectMode, LossConfig, LossTrace, TrainConfig};
use crate::nn::Distance;
use crate::par::{self, Execution};
use crate::tensor::{Matrix, Rng};

/// Everything an experiment needs: descriptors for all classes, the given
/// seen-class head, the split and labelled test features.
#[derive(Clone, Debug)]
pub struct ZslDataset {
    pub descriptors: DescriptorSet,
    pub head: ClassifierHead,
    pub manifest: SplitManifest,
    pub test: FeatureSet,
}

impl ZslDataset {
    pub fn new(descriptors: DescriptorSet, head: ClassifierHead, manifest: SplitManifest, test: FeatureSet) -> Result<Self> {
        manifest.validate()?;
        for id in manifest.all_ids() {
            if descriptors.index_of(id).is_none() {
                return Err(Error::Data(format!("class {id} from the manifest has no descriptor")));
            }
        }
        for id in &manifest.seen {
            if head.index_of(*id).is_none() {
                return Err(Error::Data(format!("seen class {id} has no row in the classifier head")));
            }
        }
        if manifest.seen.len() != head.len() {
            return Err(Error::Data(format!(
                "manifest lists {} seen classes but the head has {} rows",
                manifest.seen.len(),
                head.len()
            )));
        }
        test.check_labels(&manifest.all_ids())?;
        if test.features.cols() != head.dim() {
            return Err(Error::shape("dataset features", test.features.shape(), head.weights.shape()));
        }
        Ok(ZslDataset {
            descriptors,
            head,
            manifest,
            test,
        })
    }

    pub fn from_synth(data: &SynthData) -> Result<Self> {
        ZslDataset::new(
            data.descriptors.clone(),
            data.head.clone(),
            data.manifest.clone(),
            data.features.clone(),
        )
    }

    pub fn seen_pairs(&self, ids: Option<&[ClassId]>, include_bias: bool) -> Result<PairSet> {
        let ids = ids.unwrap_or(&self.manifest.seen);
        PairSet::from_sources(&self.descriptors, &self.head, ids, include_bias)
    }

    pub fn unseen_descriptors(&self) -> Result<Matrix> {
        Ok(self.descriptors.subset(&self.manifest.unseen)?.matrix)
    }

    pub fn seen_descriptors(&self) -> Result<DescriptorSet> {
        self.descriptors.subset(&self.manifest.seen)
    }
}

/// Output of one training + injection + evaluation pass.
#[derive(Clone, Debug)]
pub struct IcisRun {
    pub model: IcisModel,
    pub trace: LossTrace,
    pub head: ClassifierHead,
    pub report: EvalReport,
}

/// Trains on the seen pairs (or the given subset), injects the unseen
/// predictions into the full seen head and evaluates.
pub fn run_icis(
    data: &ZslDataset,
    loss: &LossConfig,
    train_cfg: &TrainConfig,
    seen_subset: Option<&[ClassId]>,
) -> Result<IcisRun> {
    let pairs = data.seen_pairs(seen_subset, train_cfg.include_bias)?;
    let unseen = data.unseen_descriptors()?;
    let mut m = IcisModel::new(pairs.descriptors.cols(), pairs.weights.cols(), train_cfg.hidden_dim, train_cfg.seed);
    let trace = model::train(&mut m, &pairs, Some(&unseen), loss, train_cfg)?;
    let predicted = model::infer_weights(&m, &unseen)?;
    let head = model::inject(&data.head, &predicted, &data.manifest.unseen, InjectMode::Generalised)?;
    let report = eval::evaluate(&head, &data.test)?;
    Ok(IcisRun {
        model: m,
        trace,
        head,
        report,
    })
}

/// Rows of the ablation table, each adding one element to the previous.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationRow {
    MlpBase,
    Cosine,
    Within,
    Across,
    IncludeUnseen,
}

impl AblationRow {
    pub const ALL: [AblationRow; 5] = [
        AblationRow::MlpBase,
        AblationRow::Cosine,
        AblationRow::Within,
        AblationRow::Across,
        AblationRow::IncludeUnseen,
    ];

    /// Short name used on the command line and in files.
    pub fn name(self) -> &'static str {
        match self {
            AblationRow::MlpBase => "mlp-base",
            AblationRow::Cosine => "cosine",
            AblationRow::Within => "within",
            AblationRow::Across => "across",
            AblationRow::IncludeUnseen => "include-unseen",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        AblationRow::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation row `{s}`")))
    }

    pub fn label(self) -> &'static str {
        match self {
            AblationRow::MlpBase => "MLP base model",
            AblationRow::Cosine => "+ Cosine loss",
            AblationRow::Within => "+ Within spaces",
            AblationRow::Across => "+ Across spaces",
            AblationRow::IncludeUnseen => "+ Include A_U",
        }
    }

    pub fn loss_config(self) -> LossConfig {
        use crate::model::Term::*;
        let cos = Distance::Cosine;
        match self {
            AblationRow::MlpBase => LossConfig::base(Distance::L2),
            AblationRow::Cosine => LossConfig::base(cos),
            AblationRow::Within => LossConfig::from_terms(&[AToW, AToA, WToW], cos).expect("a2w present"),
            AblationRow::Across => LossConfig::full(cos),
            AblationRow::IncludeUnseen => LossConfig::full(cos).with_unseen_descriptors(true),
        }
    }
}

impl fmt::Display for AblationRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    pub loss: LossConfig,
    pub trace: LossTrace,
    pub report: EvalReport,
}

/// Runs the requested ablation rows with one training config. Rows are
/// independent and run concurrently under the parallel policy.
pub fn ablate_rows(
    data: &ZslDataset,
    rows: &[AblationRow],
    train_cfg: &TrainConfig,
    seen_subset: Option<&[ClassId]>,
    exec: Execution,
) -> Result<Vec<AblationResult>> {
    par::map(exec, rows, |&row| {
        let loss = row.loss_config();
        run_icis(data, &loss, train_cfg, seen_subset).map(|r| AblationResult {
            row,
            loss,
            trace: r.trace,
            report: r.report,
        })
    })
    .into_iter()
    .collect()
}

pub fn ablate(data: &ZslDataset, train_cfg: &TrainConfig, exec: Execution) -> Result<Vec<AblationResult>> {
    ablate_rows(data, &AblationRow::ALL, train_cfg, None, exec)
}

/// Fixed-width text table of ablation results (Acc | u s H | entropy).
pub fn ablation_table(results: &[AblationResult]) -> String {
    let mut out = format!(
        "{:<18} {:>7} | {:>7} {:>7} {:>7} | {:>8}\n",
        "variant", "Acc", "u", "s", "H", "entropy"
    );
    for r in results {
        let rep = &r.report;
        out.push_str(&format!(
            "{:<18} {:>7.1} | {:>7.1} {:>7.1} {:>7.1} | {:>8.3}\n",
            r.row.label(),
            rep.zsl_acc.unwrap_or(f64::NAN),
            rep.unseen_acc,
            rep.seen_acc,
            rep.harmonic_mean,
            rep.mean_entropy.unwrap_or(f64::NAN),
        ));
    }
    out
}

/// Nested seen-class subsets: one seeded permutation, and fraction `f` keeps
/// its first `ceil(f · n)` classes. Each subset is returned in the original
/// seen order so that fraction 1 reproduces the full run exactly.
pub fn nested_subsets(seen: &[ClassId], fractions: &[f64], seed: u64) -> Result<Vec<Vec<ClassId>>> {
    let mut perm: Vec<usize> = (0..seen.len()).collect();
    Rng::new(seed).split(7).shuffle(&mut perm);
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig(format!("fraction {f} is outside (0, 1]")));
            }
            let k = ((f * seen.len() as f64).ceil() as usize).min(seen.len());
            if k < 2 {
                return Err(Error::InvalidConfig(format!(
                    "fraction {f} keeps {k} seen pair(s); at least 2 are needed"
                )));
            }
            let mut idx = perm[..k].to_vec();
            idx.sort_unstable();
            Ok(idx.into_iter().map(|i| seen[i]).collect())
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub n_pairs: usize,
    pub row: AblationRow,
    pub report: EvalReport,
}

/// Trains each row on nested subsets of the seen pairs; evaluation always
/// injects into the full seen head.
pub fn sweep(
    data: &ZslDataset,
    fractions: &[f64],
    rows: &[AblationRow],
    train_cfg: &TrainConfig,
    exec: Execution,
) -> Result<Vec<SweepPoint>> {
    let subsets = nested_subsets(&data.manifest.seen, fractions, train_cfg.seed)?;
    let jobs: Vec<(usize, AblationRow)> = (0..fractions.len())
        .flat_map(|f| rows.iter().map(move |&r| (f, r)))
        .collect();
    par::map(exec, &jobs, |&(f, row)| {
        run_icis(data, &row.loss_config(), train_cfg, Some(&subsets[f])).map(|r| SweepPoint {
            fraction: fractions[f],
            n_pairs: subsets[f].len(),
            row,
            report: r.report,
        })
    })
    .into_iter()
    .collect()
}

/// CSV `fraction,n_pairs,variant,zsl_acc,u,s,H,entropy`.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("fraction,n_pairs,variant,zsl_acc,u,s,H,entropy\n");
    for p in points {
        let r = &p.report;
        out.push_str(&format!(
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.6}\n",
            p.fraction,
            p.n_pairs,
            p.row.name(),
            r.zsl_acc.unwrap_or(f64::NAN),
            r.unseen_acc,
            r.seen_acc,
            r.harmonic_mean,
            r.mean_entropy.unwrap_or(f64::NAN),
        ));
    }
    out
}

/// Image-free hyperparameter scoring: train each candidate on the train
/// split of the seen pairs and report the held-out descriptor→weights loss.
pub fn validation_scores(
    data: &ZslDataset,
    loss: &LossConfig,
    candidates: &[TrainConfig],
    exec: Execution,
) -> Result<Vec<f64>> {
    if data.manifest.val_seen.is_empty() {
        return Err(Error::InvalidConfig("manifest has no [val_seen] classes".into()));
    }
    par::map(exec, candidates, |cfg| {
        let pairs = data.seen_pairs(None, cfg.include_bias)?;
        let (train, val) = derive_validation_split(&pairs, &data.manifest)?;
        let mut m = IcisModel::new(train.descriptors.cols(), train.weights.cols(), cfg.hidden_dim, cfg.seed);
        model::train(&mut m, &train, None, loss, cfg)?;
        model::evaluate_a_to_w(&m, &val, loss.distance())
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum BaselineMethod {
    Conse { top_t: usize },
    Costa,
    Subreg,
    Dae,
    Wavg { temperature: f64 },
    Smo { ridge: f64 },
}

impl BaselineMethod {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "conse" => BaselineMethod::Conse { top_t: 10 },
            "costa" => BaselineMethod::Costa,
            "subreg" => BaselineMethod::Subreg,
            "dae" => BaselineMethod::Dae,
            "wavg" => BaselineMethod::Wavg { temperature: 0.1 },
            "smo" => BaselineMethod::Smo { ridge: 1e-3 },
            other => return Err(Error::InvalidConfig(format!("unknown baseline `{other}`"))),
        })
    }
}

#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    pub report: EvalReport,
    /// The injected head; ConSE predicts without one.
    pub head: Option<ClassifierHead>,
    pub trace: Option<LossTrace>,
}

/// Runs one baseline. `predictor` is the loss of the weight predictor that
/// Sub.Reg. and DAE build on (the L2 MLP base, or a full configuration).
pub fn run_baseline(
    data: &ZslDataset,
    method: BaselineMethod,
    predictor: &LossConfig,
    train_cfg: &TrainConfig,
    dae_cfg: &DaeConfig,
    exec: Execution,
) -> Result<BaselineOutcome> {
    let seen_desc = data.seen_descriptors()?;
    let unseen = data.unseen_descriptors()?;
    let finish = |weights: Matrix, trace: Option<LossTrace>| -> Result<BaselineOutcome> {
        let head = model::inject(&data.head, &weights, &data.manifest.unseen, InjectMode::Generalised)?;
        Ok(BaselineOutcome {
            report: eval::evaluate(&head, &data.test)?,
            head: Some(head),
            trace,
        })
    };
    match method {
        BaselineMethod::Costa => finish(baselines::costa_weights(&data.head, &seen_desc, &unseen)?, None),
        BaselineMethod::Wavg { temperature } => finish(
            baselines::vgse_weights(&data.head, &seen_desc, &unseen, SimilarityWeighting::Wavg { temperature })?,
            None,
        ),
        BaselineMethod::Smo { ridge } => finish(
            baselines::vgse_weights(&data.head, &seen_desc, &unseen, SimilarityWeighting::Smo { ridge })?,
            None,
        ),
        BaselineMethod::Subreg => {
            let pairs = data.seen_pairs(None, false)?;
            let (m, trace) = baselines::train_subspace_reg(&pairs, &unseen, predictor, train_cfg)?;
            finish(model::infer_weights(&m, &unseen)?, Some(trace))
        }
        BaselineMethod::Dae => {
            let run = run_icis(data, predictor, &TrainConfig { include_bias: false, ..train_cfg.clone() }, None)?;
            let initial = model::infer_weights(&run.model, &unseen)?;
            let refined = baselines::dae_refine(&initial, &data.head.weights, dae_cfg)?;
            finish(refined, Some(run.trace))
        }
        BaselineMethod::Conse { top_t } => {
            let all = data.descriptors.subset(&data.manifest.all_ids())?;
            let unseen_set = data.descriptors.subset(&data.manifest.unseen)?;
            let preds = baselines::conse_classify(&data.head, &seen_desc, &all, &data.test.features, top_t, exec)?;
            let seen: std::collections::HashSet<ClassId> = data.manifest.seen.iter().copied().collect();
            let unseen_test = data.test.filter(|l| !seen.contains(&l));
            let zsl = baselines::conse_classify(&data.head, &seen_desc, &unseen_set, &unseen_test.features, top_t, exec)?;
            let report = eval::report_from_predictions(
                &preds,
                Some(&zsl),
                &data.test,
                &data.manifest.seen,
                &data.manifest.unseen,
                None,
            )?;
            Ok(BaselineOutcome {
                report,
                head: None,
                trace: None,
            })
        }
    }
}

/// What a command did, sufficient to replay it.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    /// Every option the command ran with, including defaults.
    pub config: serde_json::Value,
    pub seed: u64,
    pub trace: Option<LossTrace>,
    pub reports: BTreeMap<String, EvalReport>,
    pub wall_clock_secs: f64,
    pub artifacts: Vec<String>,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
