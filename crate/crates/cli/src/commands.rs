use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use serde_json::Value;

use icis::data::{synth_generate, MapKind, SynthConfig};
use icis::eval::{self, EvalReport};
use icis::experiments::{self, ablation_table, AblationResult, RunRecord, ZslDataset};
use icis::format;
use icis::model::{self, InjectMode};
use icis::{ClassId, ClassifierHead, Execution, IcisModel, SplitManifest};

use crate::args::*;

/// Output directory of one command, tracking what was written into it.
struct RunDir {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl RunDir {
    /// Creates `dir`, refusing to write into any of the input directories.
    fn create(dir: &Path, inputs: &[&Path]) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let canon = fs::canonicalize(dir)?;
        for input in inputs {
            let input = if input.is_file() { input.parent().unwrap_or(input) } else { input };
            if fs::canonicalize(input).is_ok_and(|p| p == canon) {
                return Err(icis::Error::InvalidConfig(format!(
                    "output directory {} is also an input; commands never write into their inputs",
                    dir.display()
                ))
                .into());
            }
        }
        Ok(RunDir {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            let _ = fs::create_dir_all(parent);
        }
        p
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    fn write_report(&mut self, report: &EvalReport) -> Result<()> {
        self.write("report.txt", report.to_key_value())?;
        self.write("report.structured", report.to_json()?)
    }

    fn save_head(&mut self, head: &ClassifierHead) -> Result<()> {
        let m = self.path("head.bin");
        let ids = self.path("head.ids");
        let bias = head.biases.as_ref().map(|_| self.path("head_bias.bin"));
        Ok(format::save_head(m, ids, bias.as_deref(), head)?)
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Inject(_) => "inject",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
            Command::Sweep(_) => "sweep",
            Command::Analyze(_) => "analyze",
            Command::Baseline(_) => "baseline",
            Command::Select(_) => "select",
            Command::Replay(_) => "replay",
        }
    }

    fn out(&self) -> &Path {
        match self {
            Command::Synth(a) => &a.out,
            Command::Train(a) => &a.out,
            Command::Inject(a) => &a.out,
            Command::Eval(a) => &a.out,
            Command::Ablate(a) => &a.out,
            Command::Sweep(a) => &a.out,
            Command::Analyze(a) => &a.out,
            Command::Baseline(a) => &a.out,
            Command::Select(a) => &a.out,
            Command::Replay(a) => &a.out,
        }
    }

    fn set_out(&mut self, out: PathBuf) {
        match self {
            Command::Synth(a) => a.out = out,
            Command::Train(a) => a.out = out,
            Command::Inject(a) => a.out = out,
            Command::Eval(a) => a.out = out,
            Command::Ablate(a) => a.out = out,
            Command::Sweep(a) => a.out = out,
            Command::Analyze(a) => a.out = out,
            Command::Baseline(a) => a.out = out,
            Command::Select(a) => a.out = out,
            Command::Replay(a) => a.out = out,
        }
    }

    fn train_args(&self) -> Option<&TrainArgs> {
        match self {
            Command::Train(a) => Some(&a.train),
            Command::Ablate(a) => Some(&a.train),
            Command::Sweep(a) => Some(&a.train),
            Command::Baseline(a) => Some(&a.train),
            Command::Select(a) => Some(&a.train),
            _ => None,
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        match self {
            Command::Synth(_) => vec![],
            Command::Train(a) => vec![&a.data],
            Command::Inject(a) => vec![&a.data, &a.checkpoint],
            Command::Eval(a) => vec![&a.data, &a.head],
            Command::Ablate(a) => vec![&a.data],
            Command::Sweep(a) => vec![&a.data],
            Command::Analyze(a) => vec![&a.data, &a.head],
            Command::Baseline(a) => vec![&a.data],
            Command::Select(a) => vec![&a.data],
            Command::Replay(a) => vec![&a.record],
        }
    }
}

pub fn run(cmd: &Command, exec: Execution) -> Result<()> {
    if let Command::Replay(r) = cmd {
        return replay(r, exec);
    }
    let start = Instant::now();
    let mut dir = RunDir::create(cmd.out(), &cmd.inputs())?;
    let config = serde_json::to_value(cmd)?;
    let mut text = config_text(&config);
    if let Some(t) = cmd.train_args() {
        let resolved = serde_json::json!({ "resolved": t.config() });
        text.push_str(&config_text(&resolved));
    }
    dir.write("config.txt", text)?;
    let mut record = match cmd {
        Command::Synth(a) => synth(a, &mut dir)?,
        Command::Train(a) => train(a, &mut dir)?,
        Command::Inject(a) => inject(a, &mut dir)?,
        Command::Eval(a) => evaluate(a, &mut dir)?,
        Command::Ablate(a) => ablate(a, &mut dir, exec)?,
        Command::Sweep(a) => sweep(a, &mut dir, exec)?,
        Command::Analyze(a) => analyze(a, &mut dir)?,
        Command::Baseline(a) => baseline(a, &mut dir, exec)?,
        Command::Select(a) => select(a, &mut dir, exec)?,
        Command::Replay(_) => unreachable!("handled above"),
    };
    record.command = cmd.name().to_string();
    record.config = config;
    record.wall_clock_secs = start.elapsed().as_secs_f64();
    dir.artifacts.push("record.json".into());
    record.artifacts = dir.artifacts.clone();
    fs::write(dir.dir.join("record.json"), record.to_json()?)?;
    info!("{} finished in {:.2}s, outputs in {}", cmd.name(), record.wall_clock_secs, dir.dir.display());
    Ok(())
}

fn replay(r: &ReplayCmd, exec: Execution) -> Result<()> {
    let text = fs::read_to_string(&r.record).with_context(|| format!("reading {}", r.record.display()))?;
    let record = RunRecord::from_json(&text)?;
    let mut cmd: Command = serde_json::from_value(record.config)
        .map_err(|e| icis::Error::InvalidConfig(format!("{}: not a replayable config: {e}", r.record.display())))?;
    if matches!(cmd, Command::Replay(_)) {
        return Err(icis::Error::InvalidConfig("a replay record cannot be replayed".into()).into());
    }
    cmd.set_out(r.out.clone());
    run(&cmd, exec)
}

/// `key=value` lines with dotted keys for nested options; unset options are
/// left out and the resolved training settings follow under `resolved.`.
fn config_text(v: &Value) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut String) {
        match v {
            Value::Object(map) => {
                for (k, v) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            Value::Array(items) => {
                let parts: Vec<String> = items.iter().map(|x| x.to_string().trim_matches('"').to_string()).collect();
                out.push_str(&format!("{prefix}={}\n", parts.join(",")));
            }
            Value::Null => {}
            Value::String(s) => out.push_str(&format!("{prefix}={s}\n")),
            other => out.push_str(&format!("{prefix}={other}\n")),
        }
    }
    let mut out = String::new();
    walk("", v, &mut out);
    out
}

/// Loads the dataset directory layout written by `synth`.
pub fn load_dataset(dir: &Path) -> Result<ZslDataset> {
    let manifest = format::load_manifest(dir.join("split.manifest"))?;
    let descriptors = format::load_descriptors(dir.join("descriptors.bin"), dir.join("descriptors.ids"))?;
    let head = format::load_head(
        dir.join("head.bin"),
        dir.join("head.ids"),
        optional(dir.join("head_bias.bin")).as_deref(),
        Some(&manifest),
    )?;
    let test = format::load_features(dir.join("test_features.bin"), dir.join("test_labels.ids"))?;
    Ok(ZslDataset::new(descriptors, head, manifest, test)?)
}

fn optional(p: PathBuf) -> Option<PathBuf> {
    p.exists().then_some(p)
}

fn print_report(label: &str, r: &EvalReport) {
    let zsl = r.zsl_acc.map_or("n/a".to_string(), |a| format!("{a:.2}"));
    println!(
        "{label}: zsl_acc={zsl} u={:.2} s={:.2} H={:.2}",
        r.unseen_acc, r.seen_acc, r.harmonic_mean
    );
}

fn synth(a: &SynthArgs, dir: &mut RunDir) -> Result<RunRecord> {
    let cfg = SynthConfig {
        seed: a.seed,
        n_seen: a.n_seen,
        n_unseen: a.n_unseen,
        descriptor_dim: a.descriptor_dim,
        weight_dim: a.weight_dim,
        map_kind: match a.map {
            MapArg::Linear => MapKind::Linear,
            MapArg::Mlp => MapKind::Mlp,
        },
        noise_std: a.noise,
        samples_per_class: a.samples_per_class,
        feature_noise: a.feature_noise,
        margin: a.margin,
        descriptor_correlation: a.correlation,
        unit_descriptors: a.unit_descriptors,
    };
    let data = synth_generate(&cfg)?;
    if a.n_val + 2 > a.n_seen {
        return Err(icis::Error::InvalidConfig(format!(
            "--n-val {} leaves fewer than 2 training classes out of {}",
            a.n_val, a.n_seen
        ))
        .into());
    }
    let seen = data.manifest.seen.clone();
    let val: Vec<ClassId> = seen[seen.len() - a.n_val..].to_vec();
    let manifest = SplitManifest::new(seen, data.manifest.unseen.clone(), val)?;

    let d = (dir.path("descriptors.bin"), dir.path("descriptors.ids"));
    format::save_descriptors(d.0, d.1, &data.descriptors)?;
    dir.save_head(&data.head)?;
    let f = (dir.path("test_features.bin"), dir.path("test_labels.ids"));
    format::save_features(f.0, f.1, &data.features)?;
    format::save_manifest(dir.path("split.manifest"), &manifest)?;

    let oracle = data.oracle_head();
    let o = (dir.path("oracle/head.bin"), dir.path("oracle/head.ids"));
    format::save_head(o.0, o.1, None, &oracle)?;
    let report = eval::evaluate(&oracle, &data.features)?;
    print_report("oracle", &report);
    Ok(RunRecord {
        seed: a.seed,
        reports: BTreeMap::from([("oracle".to_string(), report)]),
        ..RunRecord::default()
    })
}

fn train(a: &TrainCmd, dir: &mut RunDir) -> Result<RunRecord> {
    let data = load_dataset(&a.data)?;
    let loss = a.loss.config()?;
    let cfg = a.train.config();
    let run = experiments::run_icis(&data, &loss, &cfg, None)?;
    info!("trained {} epochs", run.trace.len());
    run.model.save(dir.path("model.ckpt"), &loss, cfg.seed, cfg.include_bias)?;
    dir.write("trace.csv", run.trace.to_csv())?;
    dir.write_report(&run.report)?;
    print_report("gzsl", &run.report);
    Ok(RunRecord {
        seed: cfg.seed,
        trace: Some(run.trace),
        reports: BTreeMap::from([("gzsl".to_string(), run.report)]),
        ..RunRecord::default()
    })
}

fn inject(a: &InjectCmd, dir: &mut RunDir) -> Result<RunRecord> {
    let data = load_dataset(&a.data)?;
    let (m, header) = IcisModel::load(&a.checkpoint)?;
    let predicted = model::infer_weights(&m, &data.unseen_descriptors()?)?;
    let mode = if a.zsl { InjectMode::ZeroShot } else { InjectMode::Generalised };
    let head = model::inject(&data.head, &predicted, &data.manifest.unseen, mode)?;
    dir.save_head(&head)?;
    println!("injected {} classes, head has {} rows", data.manifest.unseen.len(), head.len());
    Ok(RunRecord {
        seed: header.seed,
        ..RunRecord::default()
    })
}

fn evaluate(a: &EvalCmd, dir: &mut RunDir) -> Result<RunRecord> {
    let data = load_dataset(&a.data)?;
    let head = format::load_head(
        a.head.join("head.bin"),
        a.head.join("head.ids"),
        optional(a.head.join("head_bias.bin")).as_deref(),
        Some(&data.manifest),
    )?;
    let (head, test, key) = if a.zsl {
        let head = head.unseen_only();
        if head.is_empty() {
            return Err(icis::Error::Data("the head has no unseen classes to evaluate".into()).into());
        }
        let keep: std::collections::HashSet<ClassId> = head.class_ids.iter().copied().collect();
        (head, data.test.filter(|l| keep.contains(&l)), "zsl")
    } else {
        (head, data.test.clone(), "gzsl")
    };
    let report = eval::evaluate(&head, &test)?;
    dir.write_report(&report)?;
    print_report(key, &report);
    Ok(RunRecord {
        reports: BTreeMap::from([(key.to_string(), report)]),
        ..RunRecord::default()
    })
}

fn ablation_csv_rows(seed: u64, results: &[AblationResult], out: &mut String) {
    for r in results {
        let rep = &r.report;
        out.push_str(&format!(
            "{seed},{},{:.4},{:.4},{:.4},{:.4},{:.6},{}\n",
            r.row.name(),
            rep.zsl_acc.unwrap_or(f64::NAN),
            rep.unseen_acc,
            rep.seen_acc,
            rep.harmonic_mean,
            rep.mean_entropy.unwrap_or(f64::NAN),
            r.trace.len(),
        ));
    }
}

fn ablate(a: &AblateCmd, dir: &mut RunDir, exec: Execution) -> Result<RunRecord> {
    let data = load_dataset(&a.data)?;
    let rows = a.rows()?;
    let seeds = if a.seeds.is_empty() { vec![a.train.seed] } else { a.seeds.clone() };
    let mut table = String::new();
    let mut csv = String::from("seed,variant,zsl_acc,u,s,H,entropy,epochs\n");
    let mut reports = BTreeMap::new();
    for &seed in &seeds {
        let cfg = icis::TrainConfig {
            seed,
            ..a.train.config()
        };
        let results = experiments::ablate_rows(&data, &rows, &cfg, None, exec)?;
        table.push_str(&format!("# seed {seed}\n{}", ablation_table(&results)));
        ablation_csv_rows(seed, &results, &mut csv);
        for r in results {
            dir.write(&format!("traces/{}-seed{seed}.csv", r.row.name()), r.trace.to_csv())?;
            reports.insert(format!("seed{seed}.{}", r.row.name()), r.report);
        }
    }
    print!("{table}");
    dir.write("ablation.txt", &table)?;
    dir.write("ablation.csv", csv)?;
    Ok(RunRecord {
        seed: seeds[0],
        reports,
        ..RunRecord::default()
    })
}

fn sweep(a: &SweepCmd, dir: &mut RunDir, exec: Execution) -> Result<RunRecord> {
    let data = load_dataset(&a.data)?;
    let rows = a
        .rows
        .iter()
        .map(|r| experiments::AblationRow::parse(r.trim()))
        .collect::<icis::Result<Vec<_>>>()?;
    let cfg = a.train.config();
    let points = experiments::sweep(&data, &a.fractions, &rows, &cfg, exec)?;
    let csv = experiments::sweep_csv(&points);
    print!("{csv}");
    dir.write("sweep.csv", csv)?;
    Ok(RunRecord {
        seed: cfg.seed,
        reports: points
            .into_iter()
            .map(|p| (format!("{}.{}", p.fraction, p.row.name()), p.report))
            .collect(),
        ..RunRecord::default()
    })
}

fn analyze(a: &AnalyzeCmd, dir: &mut RunDir) -> Result<RunRecord> {
    let data = load_dataset(&a.data)?;
    let head = format::load_head(
        a.head.join("head.bin"),
        a.head.join("head.ids"),
        optional(a.head.join("head_bias.bin")).as_deref(),
        Some(&data.manifest),
    )?;
    let target = ClassId(a.target);
    if head.index_of(target).is_none() {
        return Err(icis::Error::Data(format!("class {target} is not in the head")).into());
    }
    let samples = data.test.filter(|l| l == target);
    if samples.is_empty() {
        return Err(icis::Error::Data(format!("class {target} has no test samples")).into());
    }
    let overall = eval::mean_prediction_entropy(&head, &data.test.features)?;
    let on_target = eval::mean_prediction_entropy(&head, &samples.features)?;
    let hist = eval::failure_histogram(&head, &samples.features, &data.descriptors, target, a.bin_size)?;
    let summary = format!(
        "mean_entropy={overall:.6}\ntarget_mean_entropy={on_target:.6}\ntarget_samples={}\n",
        samples.len()
    );
    print!("{summary}{}", hist.to_table());
    dir.write("entropy.txt", summary)?;
    dir.write("histogram.txt", hist.to_table())?;
    dir.write("histogram.json", serde_json::to_string_pretty(&hist)?)?;
    Ok(RunRecord::default())
}

fn baseline(a: &BaselineCmd, dir: &mut RunDir, exec: Execution) -> Result<RunRecord> {
    let data = load_dataset(&a.data)?;
    let loss = a.loss.config()?;
    let cfg = a.train.config();
    let outcome = experiments::run_baseline(&data, a.method(), &loss, &cfg, &a.dae_config(), exec)?;
    dir.write_report(&outcome.report)?;
    if let Some(head) = &outcome.head {
        dir.save_head(head)?;
    }
    if let Some(trace) = &outcome.trace {
        dir.write("trace.csv", trace.to_csv())?;
    }
    print_report("gzsl", &outcome.report);
    Ok(RunRecord {
        seed: cfg.seed,
        trace: outcome.trace,
        reports: BTreeMap::from([("gzsl".to_string(), outcome.report)]),
        ..RunRecord::default()
    })
}

fn select(a: &SelectCmd, dir: &mut RunDir, exec: Execution) -> Result<RunRecord> {
    let data = load_dataset(&a.data)?;
    let loss = a.loss.config()?;
    let base = a.train.config();
    let candidates: Vec<icis::TrainConfig> = a
        .hidden_dims
        .iter()
        .flat_map(|&h| {
            let base = &base;
            a.lrs.iter().map(move |&lr| {
                let mut c = base.clone();
                c.hidden_dim = h;
                c.adam.lr = lr;
                c
            })
        })
        .collect();
    let scores = experiments::validation_scores(&data, &loss, &candidates, exec)?;
    let mut csv = String::from("hidden_dim,lr,val_loss\n");
    for (c, s) in candidates.iter().zip(&scores) {
        csv.push_str(&format!("{},{},{:.8}\n", c.hidden_dim, c.adam.lr, s));
    }
    let best = scores
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| &candidates[i])
        .expect("at least one candidate");
    print!("{csv}");
    println!("best: hidden_dim={} lr={}", best.hidden_dim, best.adam.lr);
    dir.write("scores.csv", csv)?;
    Ok(RunRecord {
        seed: base.seed,
        ..RunRecord::default()
    })
}
