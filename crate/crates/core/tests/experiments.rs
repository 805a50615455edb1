use icis::baselines::{conse_classify, DaeConfig};
use icis::data::{synth_generate, ClassId, SplitManifest, SynthConfig};
use icis::experiments::{
    ablate_rows, nested_subsets, run_baseline, run_icis, sweep, validation_scores, AblationRow, BaselineMethod,
    RunRecord, ZslDataset,
};
use icis::{Distance, Error, Execution, LossConfig, TrainConfig};

fn small_task() -> (icis::data::SynthData, ZslDataset) {
    let data = synth_generate(&SynthConfig {
        n_seen: 24,
        n_unseen: 6,
        descriptor_dim: 8,
        weight_dim: 12,
        samples_per_class: 10,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let ds = ZslDataset::from_synth(&data).unwrap();
    (data, ds)
}

fn quick() -> TrainConfig {
    let mut cfg = TrainConfig {
        hidden_dim: 32,
        max_epochs: 60,
        batch_size: 8,
        ..TrainConfig::default()
    };
    cfg.adam.lr = 1e-3;
    cfg
}

fn seen(n: u32) -> Vec<ClassId> {
    (0..n).map(ClassId).collect()
}

#[test]
fn subsets_are_nested_and_sized_by_ceiling() {
    let ids = seen(10);
    let fr = [0.2, 0.25, 0.5, 0.75, 1.0];
    let subs = nested_subsets(&ids, &fr, 4).unwrap();
    let sizes: Vec<usize> = subs.iter().map(Vec::len).collect();
    assert_eq!(sizes, vec![2, 3, 5, 8, 10]);
    for w in subs.windows(2) {
        assert!(w[0].iter().all(|id| w[1].contains(id)));
    }
    for s in &subs {
        assert!(s.windows(2).all(|p| p[0] < p[1]), "original order kept");
    }
    assert_eq!(subs[4], ids);
}

#[test]
fn subset_fractions_are_validated() {
    let ids = seen(10);
    assert!(matches!(nested_subsets(&ids, &[0.0], 0), Err(Error::InvalidConfig(_))));
    assert!(matches!(nested_subsets(&ids, &[1.5], 0), Err(Error::InvalidConfig(_))));
    assert!(matches!(nested_subsets(&ids, &[0.1], 0), Err(Error::InvalidConfig(_))));
}

#[test]
fn full_fraction_reproduces_the_ablation() {
    let (_, ds) = small_task();
    let rows = [AblationRow::Cosine, AblationRow::IncludeUnseen];
    let abl = ablate_rows(&ds, &rows, &quick(), None, Execution::Sequential).unwrap();
    let sw = sweep(&ds, &[1.0], &rows, &quick(), Execution::Sequential).unwrap();
    for (a, s) in abl.iter().zip(&sw) {
        assert_eq!(a.row, s.row);
        assert_eq!(a.report, s.report);
        assert_eq!(s.n_pairs, 24);
    }
}

#[test]
fn execution_policy_does_not_change_results() {
    let (_, ds) = small_task();
    let seq = ablate_rows(&ds, &AblationRow::ALL, &quick(), None, Execution::Sequential).unwrap();
    let par = ablate_rows(&ds, &AblationRow::ALL, &quick(), None, Execution::default()).unwrap();
    for (a, b) in seq.iter().zip(&par) {
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.report, b.report);
    }
}

#[test]
fn sweep_evaluates_against_the_full_head() {
    let (data, ds) = small_task();
    let pts = sweep(&ds, &[0.5], &[AblationRow::Cosine], &quick(), Execution::default()).unwrap();
    let r = &pts[0].report;
    assert_eq!(pts[0].n_pairs, 12);
    assert_eq!(r.n_seen_samples, 24 * 10);
    assert_eq!(r.per_class_accuracy.len(), data.manifest.all_ids().len());
}

#[test]
fn injected_run_keeps_seen_rows() {
    let (data, ds) = small_task();
    let run = run_icis(&ds, &LossConfig::full(Distance::Cosine), &quick(), None).unwrap();
    assert_eq!(run.head.len(), 30);
    for r in 0..24 {
        assert_eq!(run.head.weights.row(r), data.head.weights.row(r));
    }
    assert!(run.report.zsl_acc.is_some());
}

#[test]
fn every_baseline_runs() {
    let (_, ds) = small_task();
    let dae = DaeConfig {
        hidden_dim: 24,
        epochs: 10,
        ..DaeConfig::default()
    };
    let predictor = AblationRow::MlpBase.loss_config();
    for name in ["conse", "costa", "subreg", "dae", "wavg", "smo"] {
        let method = BaselineMethod::parse(name).unwrap();
        let out = run_baseline(&ds, method, &predictor, &quick(), &dae, Execution::default()).unwrap();
        let r = &out.report;
        assert!((0.0..=100.0).contains(&r.harmonic_mean), "{name}");
        assert_eq!(out.head.is_none(), name == "conse");
        assert_eq!(r.mean_entropy.is_none(), name == "conse");
    }
    assert!(BaselineMethod::parse("nope").is_err());
}

#[test]
fn dae_refinement_is_reproducible() {
    let (_, ds) = small_task();
    let dae = DaeConfig {
        hidden_dim: 24,
        epochs: 10,
        ..DaeConfig::default()
    };
    let predictor = AblationRow::Cosine.loss_config();
    let run = |exec| run_baseline(&ds, BaselineMethod::Dae, &predictor, &quick(), &dae, exec).unwrap().report;
    assert_eq!(run(Execution::Sequential), run(Execution::default()));
}

/// Straight-line ConSE written without the library helpers.
fn conse_oracle(data: &icis::data::SynthData, feature: &[f64], t: usize) -> ClassId {
    let head = &data.head;
    let mut scored: Vec<(f64, usize)> = (0..head.len())
        .map(|i| (head.weights.row(i).iter().zip(feature).map(|(a, b)| a * b).sum(), i))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let top = &scored[..t];
    let m = top[0].0;
    let z: f64 = top.iter().map(|(s, _)| (s - m).exp()).sum();
    let dim = data.descriptors.dim();
    let mut mix = vec![0.0; dim];
    for (s, i) in top {
        let p = (s - m).exp() / z;
        let a = data.descriptors.row_of(head.class_ids[*i]).unwrap();
        for k in 0..dim {
            mix[k] += p * a[k];
        }
    }
    let nm = mix.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut best = (f64::NEG_INFINITY, ClassId(u32::MAX));
    for &id in &data.manifest.unseen {
        let a = data.descriptors.row_of(id).unwrap();
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let c = mix.iter().zip(a).map(|(x, y)| x * y).sum::<f64>() / (nm * na);
        if c > best.0 {
            best = (c, id);
        }
    }
    best.1
}

#[test]
fn conse_matches_straight_line_oracle() {
    let (data, ds) = small_task();
    let seen_desc = ds.seen_descriptors().unwrap();
    let targets = data.descriptors.subset(&data.manifest.unseen).unwrap();
    for t in [1, 3, 24] {
        let got = conse_classify(&data.head, &seen_desc, &targets, &data.features.features, t, Execution::default())
            .unwrap();
        for (r, g) in got.iter().enumerate() {
            assert_eq!(*g, conse_oracle(&data, data.features.features.row(r), t), "t={t} row={r}");
        }
    }
}

#[test]
fn validation_scores_need_a_validation_split() {
    let (data, ds) = small_task();
    let loss = LossConfig::full(Distance::Cosine);
    assert!(matches!(
        validation_scores(&ds, &loss, &[quick()], Execution::default()),
        Err(Error::InvalidConfig(_))
    ));

    let mut with_val = ds.clone();
    with_val.manifest = SplitManifest::new(
        data.manifest.seen.clone(),
        data.manifest.unseen.clone(),
        seen(6),
    )
    .unwrap();
    let candidates: Vec<TrainConfig> = [16, 32].iter().map(|&h| TrainConfig { hidden_dim: h, ..quick() }).collect();
    let seq = validation_scores(&with_val, &loss, &candidates, Execution::Sequential).unwrap();
    let par = validation_scores(&with_val, &loss, &candidates, Execution::default()).unwrap();
    assert_eq!(seq, par);
    assert!(seq.iter().all(|s| s.is_finite() && *s >= 0.0));
}

#[test]
fn run_record_round_trips() {
    let (_, ds) = small_task();
    let run = run_icis(&ds, &LossConfig::base(Distance::Cosine), &quick(), None).unwrap();
    let mut rec = RunRecord {
        command: "train".into(),
        config: serde_json::json!({"hidden_dim": 32}),
        seed: 0,
        trace: Some(run.trace),
        ..RunRecord::default()
    };
    rec.reports.insert("icis".into(), run.report);
    let back = RunRecord::from_json(&rec.to_json().unwrap()).unwrap();
    assert_eq!(back.trace, rec.trace);
    assert_eq!(back.reports, rec.reports);
    assert_eq!(back.config, rec.config);
}

#[test]
fn full_model_curve_dominates_the_base_on_the_default_task() {
    let data = synth_generate(&SynthConfig::default()).unwrap();
    let ds = ZslDataset::from_synth(&data).unwrap();
    let mut cfg = TrainConfig {
        hidden_dim: 256,
        max_epochs: 2000,
        ..TrainConfig::default()
    };
    cfg.adam.lr = 1e-3;
    let fractions = [0.1, 0.25, 0.5, 1.0];
    let rows = [AblationRow::MlpBase, AblationRow::IncludeUnseen];
    let points = sweep(&ds, &fractions, &rows, &cfg, Execution::Parallel).unwrap();
    for pair in points.chunks(2) {
        let (base, full) = (&pair[0].report, &pair[1].report);
        assert_eq!(pair[0].row, AblationRow::MlpBase);
        assert!(full.zsl_acc > base.zsl_acc, "fraction {}: {full:?} vs {base:?}", pair[0].fraction);
        assert!(full.harmonic_mean > base.harmonic_mean, "fraction {}", pair[0].fraction);
    }
}
