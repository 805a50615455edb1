//! Zero-shot and generalised zero-shot metrics, prediction entropy and the
//! similarity-ranked failure histogram.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data::{ClassId, ClassifierHead, DescriptorSet, FeatureSet};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::tensor::{dot, norm, Matrix};

fn row_scores(head: &ClassifierHead, x: &[f64]) -> Vec<f64> {
    (0..head.len())
        .map(|c| dot(head.weights.row(c), x) + head.biases.as_ref().map_or(0.0, |b| b[c]))
        .collect()
}

fn argmax_lowest_id(head: &ClassifierHead, scores: &[f64]) -> Option<ClassId> {
    let mut best: Option<(f64, ClassId)> = None;
    for (c, &s) in scores.iter().enumerate() {
        let id = head.class_ids[c];
        best = match best {
            Some((bs, bid)) if bs > s || (bs == s && bid < id) => Some((bs, bid)),
            _ => Some((s, id)),
        };
    }
    best.map(|(_, id)| id)
}

/// Arg-max of `w·x (+ b)` over head rows; ties go to the lowest class id.
pub fn classify(head: &ClassifierHead, features: &Matrix) -> Result<Vec<ClassId>> {
    classify_with(head, features, Execution::default())
}

pub fn classify_with(head: &ClassifierHead, features: &Matrix, exec: Execution) -> Result<Vec<ClassId>> {
    if features.cols() != head.dim() {
        return Err(Error::shape("classify", features.shape(), head.weights.shape()));
    }
    if head.is_empty() {
        return Err(Error::Data("cannot classify with an empty head".into()));
    }
    Ok(par::map_range(exec, features.rows(), |i| {
        argmax_lowest_id(head, &row_scores(head, features.row(i))).expect("head is non-empty")
    }))
}

/// Within-class accuracy for each class of `class_set` that has samples.
/// Classes without samples are skipped with a warning.
pub fn per_class_accuracy(
    preds: &[ClassId],
    labels: &[ClassId],
    class_set: &[ClassId],
) -> Result<BTreeMap<ClassId, f64>> {
    if preds.len() != labels.len() {
        return Err(Error::Data(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let allowed: HashSet<ClassId> = class_set.iter().copied().collect();
    let mut tally: HashMap<ClassId, (usize, usize)> = HashMap::new();
    for (p, l) in preds.iter().zip(labels) {
        if !allowed.contains(l) {
            return Err(Error::Data(format!("label {l} is outside the evaluated class set")));
        }
        let e = tally.entry(*l).or_default();
        e.0 += usize::from(p == l);
        e.1 += 1;
    }
    let mut out = BTreeMap::new();
    for c in class_set {
        match tally.get(c) {
            Some(&(hit, n)) => {
                out.insert(*c, hit as f64 / n as f64);
            }
            None => log::warn!("class {c} has no samples; excluded from the per-class mean"),
        }
    }
    Ok(out)
}

/// Mean over classes of within-class accuracy, in `[0, 1]`.
pub fn per_class_mean_accuracy(preds: &[ClassId], labels: &[ClassId], class_set: &[ClassId]) -> Result<f64> {
    let per = per_class_accuracy(preds, labels, class_set)?;
    if per.is_empty() {
        return Err(Error::Data("no evaluated class has any sample".into()));
    }
    Ok(per.values().sum::<f64>() / per.len() as f64)
}

pub fn micro_accuracy(preds: &[ClassId], labels: &[ClassId]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// `2us / (u + s)`, or 0 when both are 0.
pub fn harmonic_mean(u: f64, s: f64) -> f64 {
    if u + s == 0.0 {
        0.0
    } else {
        2.0 * u * s / (u + s)
    }
}

/// Shannon entropy (nats) of `softmax(logits)`.
pub fn softmax_entropy(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = z.ln();
    logits
        .iter()
        .map(|l| {
            let log_p = l - max - log_z;
            let p = log_p.exp();
            if p > 0.0 {
                -p * log_p
            } else {
                0.0
            }
        })
        .sum()
}

/// Mean entropy of the head's softmax output over all samples.
pub fn mean_prediction_entropy(head: &ClassifierHead, features: &Matrix) -> Result<f64> {
    if features.cols() != head.dim() {
        return Err(Error::shape("mean_prediction_entropy", features.shape(), head.weights.shape()));
    }
    if features.rows() == 0 {
        return Ok(0.0);
    }
    let per = par::map_range(Execution::default(), features.rows(), |i| {
        softmax_entropy(&row_scores(head, features.row(i)))
    });
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Metrics of one injected head. Accuracies are percentages.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Generalised (all-class head) accuracy per test class.
    pub per_class_accuracy: BTreeMap<ClassId, f64>,
    /// Unseen-only head on unseen samples; `None` without unseen classes.
    pub zsl_acc: Option<f64>,
    pub seen_acc: f64,
    pub unseen_acc: f64,
    pub harmonic_mean: f64,
    /// Nats, over all test samples with the generalised head; `None` for
    /// methods without a softmax head.
    pub mean_entropy: Option<f64>,
    pub zsl_micro_acc: Option<f64>,
    pub seen_micro_acc: f64,
    pub unseen_micro_acc: f64,
    pub n_seen_samples: usize,
    pub n_unseen_samples: usize,
}

impl EvalReport {
    /// `key=value` lines. Per-class entries use `class.<id>=`.
    pub fn to_key_value(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
        let mut out = format!(
            "zsl_acc={}\nseen_acc={:.6}\nunseen_acc={:.6}\nharmonic_mean={:.6}\nmean_entropy={}\n\
             zsl_micro_acc={}\nseen_micro_acc={:.6}\nunseen_micro_acc={:.6}\nn_seen_samples={}\nn_unseen_samples={}\n",
            opt(self.zsl_acc),
            self.seen_acc,
            self.unseen_acc,
            self.harmonic_mean,
            opt(self.mean_entropy),
            opt(self.zsl_micro_acc),
            self.seen_micro_acc,
            self.unseen_micro_acc,
            self.n_seen_samples,
            self.n_unseen_samples,
        );
        for (c, a) in &self.per_class_accuracy {
            out.push_str(&format!("class.{c}={a:.6}\n"));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Evaluates an injected head on labelled test samples.
///
/// Seen and unseen classes come from the head's flags. `s` and `u` use the
/// full head; the zero-shot accuracy restricts the head to unseen rows.
pub fn evaluate(head: &ClassifierHead, test: &FeatureSet) -> Result<EvalReport> {
    test.check_labels(&head.class_ids)?;
    let seen_ids = head.seen_ids();
    let unseen_head = head.unseen_only();
    let seen_set: HashSet<ClassId> = seen_ids.iter().copied().collect();

    let preds = classify(head, &test.features)?;
    let zsl = if unseen_head.is_empty() {
        None
    } else {
        let unseen_feats = test.filter(|l| !seen_set.contains(&l));
        Some(classify(&unseen_head, &unseen_feats.features)?)
    };
    let entropy = mean_prediction_entropy(head, &test.features)?;
    report_from_predictions(&preds, zsl.as_deref(), test, &seen_ids, &unseen_head.class_ids, Some(entropy))
}

/// Assembles a report from generalised predictions over all of `test` and,
/// optionally, zero-shot predictions over its unseen samples (in order).
pub fn report_from_predictions(
    preds: &[ClassId],
    zsl_preds: Option<&[ClassId]>,
    test: &FeatureSet,
    seen_ids: &[ClassId],
    unseen_ids: &[ClassId],
    mean_entropy: Option<f64>,
) -> Result<EvalReport> {
    if preds.len() != test.len() {
        return Err(Error::Data(format!("{} predictions for {} samples", preds.len(), test.len())));
    }
    let seen_set: HashSet<ClassId> = seen_ids.iter().copied().collect();
    let (mut seen_p, mut seen_l, mut unseen_p, mut unseen_l) = (vec![], vec![], vec![], vec![]);
    for (p, l) in preds.iter().zip(&test.labels) {
        if seen_set.contains(l) {
            seen_p.push(*p);
            seen_l.push(*l);
        } else {
            unseen_p.push(*p);
            unseen_l.push(*l);
        }
    }
    let mean_or_zero = |p: &[ClassId], l: &[ClassId], set: &[ClassId]| -> Result<f64> {
        if l.is_empty() {
            Ok(0.0)
        } else {
            Ok(100.0 * per_class_mean_accuracy(p, l, set)?)
        }
    };
    let seen_acc = mean_or_zero(&seen_p, &seen_l, seen_ids)?;
    let unseen_acc = mean_or_zero(&unseen_p, &unseen_l, unseen_ids)?;

    let (zsl_acc, zsl_micro) = match zsl_preds {
        Some(zp) if !unseen_l.is_empty() => {
            if zp.len() != unseen_l.len() {
                return Err(Error::Data(format!(
                    "{} zero-shot predictions for {} unseen samples",
                    zp.len(),
                    unseen_l.len()
                )));
            }
            (
                Some(100.0 * per_class_mean_accuracy(zp, &unseen_l, unseen_ids)?),
                Some(100.0 * micro_accuracy(zp, &unseen_l)),
            )
        }
        _ => (None, None),
    };

    let all: Vec<ClassId> = seen_ids.iter().chain(unseen_ids).copied().collect();
    let per_class = per_class_accuracy(preds, &test.labels, &all)?
        .into_iter()
        .map(|(c, a)| (c, 100.0 * a))
        .collect();

    Ok(EvalReport {
        per_class_accuracy: per_class,
        zsl_acc,
        seen_acc,
        unseen_acc,
        harmonic_mean: harmonic_mean(unseen_acc, seen_acc),
        mean_entropy,
        zsl_micro_acc: zsl_micro,
        seen_micro_acc: 100.0 * micro_accuracy(&seen_p, &seen_l),
        unseen_micro_acc: 100.0 * micro_accuracy(&unseen_p, &unseen_l),
        n_seen_samples: seen_l.len(),
        n_unseen_samples: unseen_l.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedClass {
    pub class_id: ClassId,
    pub similarity: f64,
    pub count: usize,
    pub seen: bool,
}

/// Where the samples of one class end up, with classes ranked by descriptor
/// similarity to that class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureHistogram {
    pub target: ClassId,
    pub bin_size: usize,
    pub ranked: Vec<RankedClass>,
    /// Fraction of samples predicted into each bin of `bin_size` ranked classes.
    pub bins: Vec<f64>,
}

impl FailureHistogram {
    /// Whitespace-separated table: one line per ranked class, then the bins.
    pub fn to_table(&self) -> String {
        let mut out = String::from("# rank class similarity count seen\n");
        for (r, c) in self.ranked.iter().enumerate() {
            out.push_str(&format!(
                "{} {} {:.6} {} {}\n",
                r,
                c.class_id,
                c.similarity,
                c.count,
                if c.seen { "seen" } else { "unseen" }
            ));
        }
        out.push_str("# bin first_rank last_rank probability\n");
        for (b, p) in self.bins.iter().enumerate() {
            let lo = b * self.bin_size;
            let hi = (lo + self.bin_size).min(self.ranked.len()) - 1;
            out.push_str(&format!("{b} {lo} {hi} {p:.6}\n"));
        }
        out
    }
}

/// Ranks every head class by cosine similarity of its descriptor to the
/// target's (target first, then decreasing similarity, ties by class id) and
/// bins the predictions for `features` of the target class.
pub fn failure_histogram(
    head: &ClassifierHead,
    features: &Matrix,
    descriptors: &DescriptorSet,
    target: ClassId,
    bin_size: usize,
) -> Result<FailureHistogram> {
    if bin_size == 0 {
        return Err(Error::InvalidConfig("bin_size must be at least 1".into()));
    }
    let anchor = descriptors
        .row_of(target)
        .ok_or_else(|| Error::Data(format!("target class {target} has no descriptor")))?;
    let preds = classify(head, features)?;
    let mut counts: HashMap<ClassId, usize> = HashMap::new();
    for p in &preds {
        *counts.entry(*p).or_default() += 1;
    }
    let an = norm(anchor);
    let mut ranked = Vec::with_capacity(head.len());
    for (i, &id) in head.class_ids.iter().enumerate() {
        let d = descriptors
            .row_of(id)
            .ok_or_else(|| Error::Data(format!("class {id} has no descriptor")))?;
        let dn = norm(d);
        let sim = if an == 0.0 || dn == 0.0 { 0.0 } else { dot(anchor, d) / (an * dn) };
        ranked.push(RankedClass {
            class_id: id,
            similarity: sim,
            count: counts.get(&id).copied().unwrap_or(0),
            seen: head.seen[i],
        });
    }
    ranked.sort_by(|a, b| {
        (b.class_id == target)
            .cmp(&(a.class_id == target))
            .then(b.similarity.total_cmp(&a.similarity))
            .then(a.class_id.cmp(&b.class_id))
    });
    let total = preds.len().max(1) as f64;
    let bins = ranked
        .chunks(bin_size)
        .map(|chunk| chunk.iter().map(|c| c.count).sum::<usize>() as f64 / total)
        .collect();
    Ok(FailureHistogram {
        target,
        bin_size,
        ranked,
        bins,
    })
}
