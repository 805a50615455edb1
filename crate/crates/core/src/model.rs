//! The injection model: a descriptor autoencoder and a weight autoencoder
//! sharing one latent space, trained with the four-term objective, plus
//! inference and injection into an existing head.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ClassId, ClassifierHead, PairSet};
use crate::error::{Error, Result};
use crate::format;
use crate::nn::{mlp_backward, mlp_forward, AdamConfig, AdamState, Distance, LinearLayer, MlpCache, ParamSlot};
use crate::tensor::{norm, Matrix, Rng};

/// RNG streams derived from the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;

/// One mapping of the objective, named by its source and target spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    /// descriptor → weights, `D_w ∘ E_a`; the mapping used at inference.
    #[serde(rename = "a2w")]
    AToW,
    /// descriptor → descriptor, `D_a ∘ E_a`.
    #[serde(rename = "a2a")]
    AToA,
    /// weights → weights, `D_w ∘ E_w`.
    #[serde(rename = "w2w")]
    WToW,
    /// weights → descriptor, `D_a ∘ E_w`.
    #[serde(rename = "w2a")]
    WToA,
}

impl Term {
    pub const ALL: [Term; 4] = [Term::AToW, Term::AToA, Term::WToW, Term::WToA];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Term::AToW => "a2w",
            Term::AToA => "a2a",
            Term::WToW => "w2w",
            Term::WToA => "w2a",
        }
    }

    pub fn parse(s: &str) -> Result<Term> {
        Term::ALL
            .into_iter()
            .find(|t| t.name() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown loss term `{s}`")))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which terms of the objective are active, and the distance they use.
/// The descriptor→weights term is always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LossConfigRepr", into = "LossConfigRepr")]
pub struct LossConfig {
    enabled: [bool; 4],
    include_unseen_descriptors: bool,
    distance: Distance,
}

#[derive(Serialize, Deserialize)]
struct LossConfigRepr {
    terms: Vec<Term>,
    include_unseen_descriptors: bool,
    distance: Distance,
}

impl TryFrom<LossConfigRepr> for LossConfig {
    type Error = Error;

    fn try_from(r: LossConfigRepr) -> Result<Self> {
        Ok(LossConfig::from_terms(&r.terms, r.distance)?.with_unseen_descriptors(r.include_unseen_descriptors))
    }
}

impl From<LossConfig> for LossConfigRepr {
    fn from(c: LossConfig) -> Self {
        LossConfigRepr {
            terms: c.terms(),
            include_unseen_descriptors: c.include_unseen_descriptors,
            distance: c.distance,
        }
    }
}

impl LossConfig {
    /// Only the descriptor→weights regression.
    pub fn base(distance: Distance) -> Self {
        LossConfig {
            enabled: [true, false, false, false],
            include_unseen_descriptors: false,
            distance,
        }
    }

    /// All four terms.
    pub fn full(distance: Distance) -> Self {
        LossConfig {
            enabled: [true; 4],
            include_unseen_descriptors: false,
            distance,
        }
    }

    pub fn from_terms(terms: &[Term], distance: Distance) -> Result<Self> {
        if !terms.contains(&Term::AToW) {
            return Err(Error::InvalidConfig("the a2w term cannot be disabled".into()));
        }
        let mut cfg = LossConfig::base(distance);
        for t in terms {
            cfg.enabled[t.index()] = true;
        }
        Ok(cfg)
    }

    /// Parses a comma-separated list such as `a2w,a2a,w2w`.
    pub fn parse_terms(list: &str, distance: Distance) -> Result<Self> {
        let terms = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(Term::parse)
            .collect::<Result<Vec<_>>>()?;
        LossConfig::from_terms(&terms, distance)
    }

    pub fn with_term(mut self, term: Term, on: bool) -> Result<Self> {
        if term == Term::AToW && !on {
            return Err(Error::InvalidConfig("the a2w term cannot be disabled".into()));
        }
        self.enabled[term.index()] = on;
        Ok(self)
    }

    pub fn with_unseen_descriptors(mut self, on: bool) -> Self {
        self.include_unseen_descriptors = on;
        self
    }

    pub fn with_distance(mut self, distance: Distance) -> Self {
        self.distance = distance;
        self
    }

    pub fn is_enabled(&self, term: Term) -> bool {
        self.enabled[term.index()]
    }

    pub fn terms(&self) -> Vec<Term> {
        Term::ALL.into_iter().filter(|t| self.is_enabled(*t)).collect()
    }

    pub fn include_unseen_descriptors(&self) -> bool {
        self.include_unseen_descriptors
    }

    pub fn distance(&self) -> Distance {
        self.distance
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Latent width shared by both encoders.
    pub hidden_dim: usize,
    /// Stopping threshold for the cosine distance; scaled by 1e-3 under L2.
    pub stop_threshold: f64,
    pub stop_window: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Append the head bias to each weight vector.
    pub include_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 16,
            hidden_dim: 2048,
            stop_threshold: 2e-4,
            stop_window: 10,
            max_epochs: 5000,
            seed: 0,
            include_bias: false,
        }
    }
}

impl TrainConfig {
    /// Settings used for AWA2-sized runs.
    pub fn awa2() -> Self {
        TrainConfig {
            batch_size: 20,
            ..TrainConfig::default()
        }
    }

    /// Settings used for SUN-sized runs.
    pub fn sun() -> Self {
        TrainConfig {
            hidden_dim: 4096,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.stop_window == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, stop_window and hidden_dim must be at least 1".into(),
            ));
        }
        if !(self.stop_threshold > 0.0) {
            return Err(Error::InvalidConfig("stop_threshold must be positive".into()));
        }
        if !(self.adam.lr >= 0.0) {
            return Err(Error::InvalidConfig("learning rate must be non-negative".into()));
        }
        Ok(())
    }

    /// The threshold actually compared against, given the distance in use.
    pub fn effective_threshold(&self, distance: Distance) -> f64 {
        match distance {
            Distance::Cosine => self.stop_threshold,
            Distance::L2 => self.stop_threshold * 1e-3,
        }
    }
}

/// Mean loss of one epoch, per term and in total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub total: f64,
    pub terms: [Option<f64>; 4],
    /// Contribution of an auxiliary objective, if one was attached.
    pub aux: Option<f64>,
}

impl EpochLoss {
    pub fn term(&self, t: Term) -> Option<f64> {
        self.terms[t.index()]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epochs: Vec<EpochLoss>,
    /// Epoch count at which the stopping rule fired.
    pub stopped_at: Option<usize>,
}

impl LossTrace {
    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total).collect()
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// CSV with columns `epoch,total,a2w,a2a,w2w,w2a,aux`; inactive terms are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,total,a2w,a2a,w2w,w2a,aux\n");
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
        for (i, e) in self.epochs.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.9e},{},{},{},{},{}\n",
                i + 1,
                e.total,
                cell(e.terms[0]),
                cell(e.terms[1]),
                cell(e.terms[2]),
                cell(e.terms[3]),
                cell(e.aux)
            ));
        }
        out
    }
}

/// Slope rule on the per-epoch loss: once `2 * window` epochs exist, stop
/// when the mean of the previous window minus the mean of the latest window
/// drops below `threshold`.
pub fn should_stop(totals: &[f64], window: usize, threshold: f64) -> bool {
    if window == 0 || totals.len() < 2 * window {
        return false;
    }
    let n = totals.len();
    let latest = totals[n - window..].iter().sum::<f64>() / window as f64;
    let prev = totals[n - 2 * window..n - window].iter().sum::<f64>() / window as f64;
    prev - latest < threshold
}

/// One mini-batch of the objective.
#[derive(Clone, Debug)]
pub struct Batch {
    pub descriptors: Matrix,
    pub weights: Matrix,
    /// Unseen-class descriptors; used only by the descriptor autoencoding term.
    pub unseen_descriptors: Option<Matrix>,
    /// Replaces `weights` as the descriptor→weights target when set.
    pub a2w_targets: Option<Matrix>,
}

/// Per-term values of one objective evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub terms: [Option<f64>; 4],
}

impl LossBreakdown {
    pub fn term(&self, t: Term) -> Option<f64> {
        self.terms[t.index()]
    }
}

/// Extra loss attached to training, evaluated once per mini-batch.
pub trait AuxObjective: Sync {
    /// Returns the loss value and accumulates its gradients into `model`.
    fn accumulate(&self, model: &mut IcisModel, batch: &Batch) -> Result<f64>;
}

/// The four single-layer maps. Encoders are followed by a rectifier.
#[derive(Clone, Debug, PartialEq)]
pub struct IcisModel {
    pub enc_a: LinearLayer,
    pub dec_a: LinearLayer,
    pub enc_w: LinearLayer,
    pub dec_w: LinearLayer,
}

impl IcisModel {
    /// Kaiming-style Gaussian init (`√(2/in)` for encoders, `√(1/in)` for
    /// decoders), zero biases, drawn from the init stream of `seed`.
    pub fn new(descriptor_dim: usize, weight_dim: usize, latent_dim: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed).split(STREAM_INIT);
        let enc_std = |i: usize| (2.0 / i as f64).sqrt();
        let dec_std = |i: usize| (1.0 / i as f64).sqrt();
        IcisModel {
            enc_a: LinearLayer::gaussian(descriptor_dim, latent_dim, enc_std(descriptor_dim), &mut rng),
            dec_a: LinearLayer::gaussian(latent_dim, descriptor_dim, dec_std(latent_dim), &mut rng),
            enc_w: LinearLayer::gaussian(weight_dim, latent_dim, enc_std(weight_dim), &mut rng),
            dec_w: LinearLayer::gaussian(latent_dim, weight_dim, dec_std(latent_dim), &mut rng),
        }
    }

    /// Assembles a model from hand-set layers, checking the dimension contract.
    pub fn from_layers(
        enc_a: LinearLayer,
        dec_a: LinearLayer,
        enc_w: LinearLayer,
        dec_w: LinearLayer,
    ) -> Result<Self> {
        let latent = enc_a.out_dim();
        if enc_w.out_dim() != latent || dec_a.in_dim() != latent || dec_w.in_dim() != latent {
            return Err(Error::InvalidConfig("encoders and decoders disagree on the latent width".into()));
        }
        if dec_a.out_dim() != enc_a.in_dim() || dec_w.out_dim() != enc_w.in_dim() {
            return Err(Error::InvalidConfig("decoder outputs must match encoder inputs".into()));
        }
        Ok(IcisModel {
            enc_a,
            dec_a,
            enc_w,
            dec_w,
        })
    }

    pub fn descriptor_dim(&self) -> usize {
        self.enc_a.in_dim()
    }

    pub fn weight_dim(&self) -> usize {
        self.enc_w.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.enc_a.out_dim()
    }

    fn layers(&self, term: Term) -> (&LinearLayer, &LinearLayer) {
        match term {
            Term::AToW => (&self.enc_a, &self.dec_w),
            Term::AToA => (&self.enc_a, &self.dec_a),
            Term::WToW => (&self.enc_w, &self.dec_w),
            Term::WToA => (&self.enc_w, &self.dec_a),
        }
    }

    fn layers_mut(&mut self, term: Term) -> (&mut LinearLayer, &mut LinearLayer) {
        match term {
            Term::AToW => (&mut self.enc_a, &mut self.dec_w),
            Term::AToA => (&mut self.enc_a, &mut self.dec_a),
            Term::WToW => (&mut self.enc_w, &mut self.dec_w),
            Term::WToA => (&mut self.enc_w, &mut self.dec_a),
        }
    }

    /// Forward through one mapping, keeping the cache for [`Self::backward`].
    pub fn forward(&self, term: Term, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        let (enc, dec) = self.layers(term);
        mlp_forward(enc, dec, x)
    }

    /// Accumulates gradients of one mapping given `∂L/∂output`.
    pub fn backward(&mut self, term: Term, cache: &MlpCache, upstream: &Matrix) -> Result<()> {
        let (enc, dec) = self.layers_mut(term);
        mlp_backward(enc, dec, cache, upstream).map(drop)
    }

    pub fn map(&self, term: Term, x: &Matrix) -> Result<Matrix> {
        self.forward(term, x).map(|(y, _)| y)
    }

    pub fn zero_grad(&mut self) {
        for l in self.layers_all_mut() {
            l.zero_grad();
        }
    }

    fn layers_all(&self) -> [&LinearLayer; 4] {
        [&self.enc_a, &self.dec_a, &self.enc_w, &self.dec_w]
    }

    fn layers_all_mut(&mut self) -> [&mut LinearLayer; 4] {
        [&mut self.enc_a, &mut self.dec_a, &mut self.enc_w, &mut self.dec_w]
    }

    pub fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        self.layers_all_mut().into_iter().flat_map(|l| l.slots()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers_all().iter().map(|l| l.num_params()).sum()
    }

    /// All parameters flattened in slot order.
    pub fn parameter_vector(&self) -> Vec<f64> {
        self.layers_all()
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn gradient_vector(&self) -> Vec<f64> {
        self.layers_all()
            .iter()
            .flat_map(|l| l.grad_weight.data().iter().chain(&l.grad_bias).copied())
            .collect()
    }

    pub fn set_parameter_vector(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape("set_parameter_vector", (self.num_params(), 1), (params.len(), 1)));
        }
        let mut it = params.iter().copied();
        for l in self.layers_all_mut() {
            for (v, p) in l.weight.data_mut().iter_mut().chain(l.bias.iter_mut()).zip(&mut it) {
                *v = p;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.parameter_vector().iter().all(|v| v.is_finite())
    }
}

fn check_cols(op: &'static str, m: &Matrix, expected: usize) -> Result<()> {
    if m.cols() != expected {
        return Err(Error::shape(op, m.shape(), (m.rows(), expected)));
    }
    Ok(())
}

fn check_paired(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Mean distance of one mapping on `input` against `target`; gradients are
/// accumulated into the two layers of that mapping.
pub fn term_loss(
    model: &mut IcisModel,
    term: Term,
    input: &Matrix,
    target: &Matrix,
    distance: Distance,
) -> Result<f64> {
    check_paired(term.name(), input, target)?;
    let (pred, cache) = model.forward(term, input)?;
    let (value, grad) = distance.batch_loss(&pred, target)?;
    model.backward(term, &cache, &grad)?;
    Ok(value)
}

pub fn loss_a_to_w(model: &mut IcisModel, descriptors: &Matrix, weights: &Matrix, distance: Distance) -> Result<f64> {
    check_cols("loss_a_to_w", descriptors, model.descriptor_dim())?;
    check_cols("loss_a_to_w", weights, model.weight_dim())?;
    term_loss(model, Term::AToW, descriptors, weights, distance)
}

pub fn loss_a_to_a(model: &mut IcisModel, descriptors: &Matrix, distance: Distance) -> Result<f64> {
    check_cols("loss_a_to_a", descriptors, model.descriptor_dim())?;
    term_loss(model, Term::AToA, descriptors, descriptors, distance)
}

pub fn loss_w_to_w(model: &mut IcisModel, weights: &Matrix, distance: Distance) -> Result<f64> {
    check_cols("loss_w_to_w", weights, model.weight_dim())?;
    term_loss(model, Term::WToW, weights, weights, distance)
}

pub fn loss_w_to_a(model: &mut IcisModel, weights: &Matrix, descriptors: &Matrix, distance: Distance) -> Result<f64> {
    check_cols("loss_w_to_a", descriptors, model.descriptor_dim())?;
    check_cols("loss_w_to_a", weights, model.weight_dim())?;
    term_loss(model, Term::WToA, weights, descriptors, distance)
}

/// Sum of the enabled terms. Gradients of every term accumulate into the
/// shared layers with unit weight.
pub fn total_loss(model: &mut IcisModel, batch: &Batch, cfg: &LossConfig) -> Result<LossBreakdown> {
    check_paired("total_loss", &batch.descriptors, &batch.weights)?;
    let d = cfg.distance();
    let mut out = LossBreakdown::default();
    for term in cfg.terms() {
        let v = match term {
            Term::AToW => {
                let target = batch.a2w_targets.as_ref().unwrap_or(&batch.weights);
                loss_a_to_w(model, &batch.descriptors, target, d)?
            }
            Term::AToA => match (&batch.unseen_descriptors, cfg.include_unseen_descriptors()) {
                (Some(u), true) if u.rows() > 0 => {
                    let all = Matrix::vstack(&[&batch.descriptors, u])?;
                    loss_a_to_a(model, &all, d)?
                }
                _ => loss_a_to_a(model, &batch.descriptors, d)?,
            },
            Term::WToW => loss_w_to_w(model, &batch.weights, d)?,
            Term::WToA => loss_w_to_a(model, &batch.weights, &batch.descriptors, d)?,
        };
        out.terms[term.index()] = Some(v);
        out.total += v;
    }
    Ok(out)
}

/// Unit directions of the rows, rounded to single precision. The rounding
/// absorbs the last-bit differences that rescaling a row leaves in its
/// normalised form, so cosine training sees only the direction of each
/// target, exactly.
fn unit_directions(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = norm(row);
        if n == 0.0 {
            return Err(Error::ZeroNorm("training target"));
        }
        for x in row.iter_mut() {
            *x = (*x / n) as f32 as f64;
        }
    }
    Ok(out)
}

/// Mean descriptor→weights distance without touching gradients.
pub fn evaluate_a_to_w(model: &IcisModel, pairs: &PairSet, distance: Distance) -> Result<f64> {
    let pred = model.map(Term::AToW, &pairs.descriptors)?;
    Ok(distance.batch_loss(&pred, &pairs.weights)?.0)
}

/// Mini-batch Adam on the seen pairs until the slope rule fires or
/// `max_epochs` is reached.
pub fn train(
    model: &mut IcisModel,
    pairs: &PairSet,
    unseen_descriptors: Option<&Matrix>,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<LossTrace> {
    train_with_aux(model, pairs, unseen_descriptors, loss_cfg, train_cfg, None)
}

/// [`train`] with an optional extra objective added to every batch.
///
/// Each epoch visits the seen pairs in a seeded random order; the last short
/// batch is kept. Unseen descriptors (when enabled) are shuffled too and
/// spread over the batches in proportion, entering only the descriptor
/// autoencoding term.
pub fn train_with_aux(
    model: &mut IcisModel,
    pairs: &PairSet,
    unseen_descriptors: Option<&Matrix>,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    aux: Option<&dyn AuxObjective>,
) -> Result<LossTrace> {
    train_cfg.validate()?;
    if pairs.len() < 2 {
        return Err(Error::Data(format!("training needs at least 2 seen pairs, got {}", pairs.len())));
    }
    check_cols("train", &pairs.descriptors, model.descriptor_dim())?;
    check_cols("train", &pairs.weights, model.weight_dim())?;
    let unseen = match unseen_descriptors {
        Some(u) if loss_cfg.include_unseen_descriptors() && loss_cfg.is_enabled(Term::AToA) => {
            check_cols("train", u, model.descriptor_dim())?;
            Some(u)
        }
        _ => None,
    };

    let a2w_targets = match loss_cfg.distance() {
        Distance::Cosine => Some(unit_directions(&pairs.weights)?),
        Distance::L2 => None,
    };

    let mut trace = LossTrace::default();
    let mut rng = Rng::new(train_cfg.seed).split(STREAM_SHUFFLE);
    let mut adam = AdamState::new(train_cfg.adam);
    let threshold = train_cfg.effective_threshold(loss_cfg.distance());
    let n = pairs.len();
    let bs = train_cfg.batch_size;
    let n_batches = n.div_ceil(bs);

    for epoch in 0..train_cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let unseen_order = unseen.map(|u| {
            let mut o: Vec<usize> = (0..u.rows()).collect();
            rng.shuffle(&mut o);
            o
        });

        let mut acc = EpochLoss::default();
        for (b, idx) in order.chunks(bs).enumerate() {
            let batch = Batch {
                descriptors: pairs.descriptors.select_rows(idx),
                weights: pairs.weights.select_rows(idx),
                unseen_descriptors: match (unseen, &unseen_order) {
                    (Some(u), Some(o)) => {
                        let lo = b * o.len() / n_batches;
                        let hi = (b + 1) * o.len() / n_batches;
                        Some(u.select_rows(&o[lo..hi]))
                    }
                    _ => None,
                },
                a2w_targets: a2w_targets.as_ref().map(|t| t.select_rows(idx)),
            };
            model.zero_grad();
            let breakdown = total_loss(model, &batch, loss_cfg)?;
            let aux_value = match aux {
                Some(a) => Some(a.accumulate(model, &batch)?),
                None => None,
            };
            let batch_total = breakdown.total + aux_value.unwrap_or(0.0);
            if !batch_total.is_finite() {
                trace.epochs.push(acc);
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    trace: Box::new(trace),
                });
            }
            adam.step(&mut model.slots())?;

            let w = idx.len() as f64 / n as f64;
            acc.total += w * batch_total;
            for (slot, v) in acc.terms.iter_mut().zip(breakdown.terms) {
                if let Some(v) = v {
                    *slot = Some(slot.unwrap_or(0.0) + w * v);
                }
            }
            if let Some(v) = aux_value {
                acc.aux = Some(acc.aux.unwrap_or(0.0) + w * v);
            }
        }
        trace.epochs.push(acc);
        if should_stop(&trace.totals(), train_cfg.stop_window, threshold) {
            trace.stopped_at = Some(trace.len());
            break;
        }
    }
    Ok(trace)
}

/// Predicted classifier weights `D_w(E_a(a))`, one row per descriptor.
pub fn infer_weights(model: &IcisModel, descriptors: &Matrix) -> Result<Matrix> {
    check_cols("infer_weights", descriptors, model.descriptor_dim())?;
    model.map(Term::AToW, descriptors)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InjectMode {
    /// Seen rows followed by the injected rows.
    Generalised,
    /// Only the injected rows.
    ZeroShot,
}

/// Appends `new_weights` to `head` as classes `new_ids`, flagged unseen.
///
/// When the head carries biases, new rows may either have the head's width
/// (bias 0) or one extra trailing coordinate that is split off as the bias.
/// Existing rows are copied unchanged.
pub fn inject(
    head: &ClassifierHead,
    new_weights: &Matrix,
    new_ids: &[ClassId],
    mode: InjectMode,
) -> Result<ClassifierHead> {
    if new_weights.rows() != new_ids.len() {
        return Err(Error::Data(format!(
            "{} injected weight rows for {} class ids",
            new_weights.rows(),
            new_ids.len()
        )));
    }
    if let Some(id) = new_ids.iter().find(|id| head.index_of(**id).is_some()) {
        return Err(Error::Data(format!("injected class {id} already exists in the head")));
    }
    let dim = head.dim();
    let (weights, new_bias) = if new_weights.cols() == dim || new_ids.is_empty() {
        (new_weights.clone(), head.biases.as_ref().map(|_| vec![0.0; new_ids.len()]))
    } else if head.biases.is_some() && new_weights.cols() == dim + 1 {
        let idx: Vec<usize> = (0..new_weights.rows()).collect();
        let mut w = Matrix::zeros(idx.len(), dim);
        let mut b = Vec::with_capacity(idx.len());
        for r in idx {
            w.row_mut(r).copy_from_slice(&new_weights.row(r)[..dim]);
            b.push(new_weights.get(r, dim));
        }
        (w, Some(b))
    } else {
        return Err(Error::shape("inject", head.weights.shape(), new_weights.shape()));
    };
    let weights = if new_ids.is_empty() { Matrix::zeros(0, dim) } else { weights };

    match mode {
        InjectMode::Generalised => {
            let mut ids = head.class_ids.clone();
            ids.extend_from_slice(new_ids);
            let mut seen = head.seen.clone();
            seen.extend(std::iter::repeat_n(false, new_ids.len()));
            let biases = match (&head.biases, new_bias) {
                (Some(a), Some(b)) => Some(a.iter().chain(&b).copied().collect()),
                _ => None,
            };
            let all = Matrix::vstack(&[&head.weights, &weights])?;
            ClassifierHead::with_flags(ids, all, biases, seen)
        }
        InjectMode::ZeroShot => ClassifierHead::with_flags(
            new_ids.to_vec(),
            weights,
            new_bias,
            vec![false; new_ids.len()],
        ),
    }
}

/// Metadata stored with a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub descriptor_dim: usize,
    pub weight_dim: usize,
    pub latent_dim: usize,
    pub loss: LossConfig,
    pub seed: u64,
    pub include_bias: bool,
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ICISCKPT";

impl IcisModel {
    /// Checkpoint layout: magic `ICISCKPT`, u32 LE header length, UTF-8
    /// `key=value` header lines, then eight matrix containers in the order
    /// enc_a.weight, enc_a.bias, dec_a.weight, dec_a.bias, enc_w.weight,
    /// enc_w.bias, dec_w.weight, dec_w.bias (biases as `1 x n`).
    pub fn save(&self, path: impl AsRef<Path>, loss: &LossConfig, seed: u64, include_bias: bool) -> Result<()> {
        let path = path.as_ref();
        let terms: Vec<&str> = loss.terms().iter().map(|t| t.name()).collect();
        let header = format!(
            "descriptor_dim={}\nweight_dim={}\nlatent_dim={}\ndistance={}\nterms={}\ninclude_unseen_descriptors={}\nseed={}\ninclude_bias={}\n",
            self.descriptor_dim(),
            self.weight_dim(),
            self.latent_dim(),
            loss.distance().name(),
            terms.join(","),
            loss.include_unseen_descriptors(),
            seed,
            include_bias,
        );
        let mut blocks = Vec::new();
        for l in self.layers_all() {
            blocks.push(format::encode_matrix(&l.weight)?);
            blocks.push(format::encode_matrix(&Matrix::row_vector(&l.bias))?);
        }
        let len = (header.len() as u32).to_le_bytes();
        let mut parts: Vec<&[u8]> = vec![CHECKPOINT_MAGIC, &len, header.as_bytes()];
        parts.extend(blocks.iter().map(|b| b.as_slice()));
        format::write_all(path, &parts)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(IcisModel, CheckpointHeader)> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let fail = |offset: usize, message: String| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            message,
        };
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fail(0, "bad checkpoint magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = 12usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fail(8, "truncated checkpoint header".into()))?;
        let text = std::str::from_utf8(&bytes[12..body]).map_err(|_| fail(12, "header is not UTF-8".into()))?;
        let get = |key: &str| -> Result<&str> {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| fail(12, format!("missing header key `{key}`")))
        };
        let num = |key: &str| -> Result<u64> {
            get(key)?.parse().map_err(|_| fail(12, format!("bad value for `{key}`")))
        };
        let flag = |key: &str| -> Result<bool> {
            get(key)?.parse().map_err(|_| fail(12, format!("bad value for `{key}`")))
        };
        let loss = LossConfig::parse_terms(get("terms")?, Distance::parse(get("distance")?)?)?
            .with_unseen_descriptors(flag("include_unseen_descriptors")?);
        let header = CheckpointHeader {
            descriptor_dim: num("descriptor_dim")? as usize,
            weight_dim: num("weight_dim")? as usize,
            latent_dim: num("latent_dim")? as usize,
            loss,
            seed: num("seed")?,
            include_bias: flag("include_bias")?,
        };

        let mut offset = body;
        let mut next = || -> Result<Matrix> {
            let (m, used) = format::decode_matrix_prefix(&bytes[offset..], path, offset as u64)?;
            offset += used;
            Ok(m)
        };
        let mut layers = Vec::with_capacity(4);
        for _ in 0..4 {
            let w = next()?;
            let b = next()?;
            layers.push(LinearLayer::from_parts(w, b.into_data())?);
        }
        if offset != bytes.len() {
            return Err(fail(offset, "trailing bytes after checkpoint".into()));
        }
        let mut it = layers.into_iter();
        let model = IcisModel::from_layers(
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
        )?;
        if (model.descriptor_dim(), model.weight_dim(), model.latent_dim())
            != (header.descriptor_dim, header.weight_dim, header.latent_dim)
        {
            return Err(fail(12, "header dimensions disagree with stored tensors".into()));
        }
        Ok((model, header))
    }
}
