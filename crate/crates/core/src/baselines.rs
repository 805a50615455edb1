//! Comparison methods adapted to the image-free setting: ConSE, COSTA,
//! VGSE-style WAvg/SMO weighting, the subspace regulariser and a dense
//! denoising autoencoder for refining weight estimates.

use serde::{Deserialize, Serialize};

use crate::data::{ClassId, ClassifierHead, DescriptorSet, PairSet};
use crate::error::{Error, Result};
use crate::model::{self, AuxObjective, Batch, IcisModel, LossConfig, LossTrace, Term, TrainConfig};
use crate::nn::{AdamConfig, AdamState, Distance, LinearLayer, MlpTwoLayer};
use crate::par::{self, Execution};
use crate::tensor::{dot, norm, solve_spd, Matrix, Rng};

/// How unseen classes are expressed as combinations of seen ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SimilarityWeighting {
    /// Cosine similarity clamped at 0, normalised to sum 1.
    CostaNormalised,
    /// Softmax of cosine similarities at the given temperature.
    Wavg { temperature: f64 },
    /// Ridge-regularised reconstruction of the unseen descriptor from seen
    /// descriptors with coefficients summing to 1 (signs unconstrained).
    Smo { ridge: f64 },
}

impl SimilarityWeighting {
    pub fn wavg() -> Self {
        SimilarityWeighting::Wavg { temperature: 0.1 }
    }

    pub fn smo() -> Self {
        SimilarityWeighting::Smo { ridge: 1e-3 }
    }
}

fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Seen descriptors re-ordered to match the head rows.
fn paired_descriptors(head: &ClassifierHead, descriptors: &DescriptorSet) -> Result<Matrix> {
    Ok(descriptors.subset(&head.class_ids)?.matrix)
}

/// Combination coefficients, one row per unseen descriptor and one column per
/// seen descriptor.
pub fn combination_weights(seen: &Matrix, unseen: &Matrix, scheme: SimilarityWeighting) -> Result<Matrix> {
    if seen.cols() != unseen.cols() {
        return Err(Error::shape("combination_weights", seen.shape(), unseen.shape()));
    }
    if seen.rows() == 0 {
        return Err(Error::Data("no seen classes to combine".into()));
    }
    let mut out = Matrix::zeros(unseen.rows(), seen.rows());
    if seen.rows() == 1 {
        // every scheme normalises to sum 1, so a lone seen class gets weight 1
        out.data_mut().fill(1.0);
        return Ok(out);
    }
    match scheme {
        SimilarityWeighting::CostaNormalised => {
            for u in 0..unseen.rows() {
                let row: Vec<f64> = seen.iter_rows().map(|s| cosine_sim(unseen.row(u), s).max(0.0)).collect();
                let total: f64 = row.iter().sum();
                if !(total > 0.0) {
                    return Err(Error::Data(format!(
                        "unseen row {u} has no positive similarity to any seen class"
                    )));
                }
                for (o, v) in out.row_mut(u).iter_mut().zip(row) {
                    *o = v / total;
                }
            }
        }
        SimilarityWeighting::Wavg { temperature } => {
            if !(temperature > 0.0) {
                return Err(Error::InvalidConfig("WAvg temperature must be positive".into()));
            }
            for u in 0..unseen.rows() {
                let logits: Vec<f64> = seen.iter_rows().map(|s| cosine_sim(unseen.row(u), s) / temperature).collect();
                out.row_mut(u).copy_from_slice(&softmax(&logits));
            }
        }
        SimilarityWeighting::Smo { ridge } => {
            for u in 0..unseen.rows() {
                let beta = smo_coefficients(seen, unseen.row(u), ridge)?;
                out.row_mut(u).copy_from_slice(&beta);
            }
        }
    }
    Ok(out)
}

/// `argmin ‖a − Sᵀβ‖² + γ‖β‖²` subject to `Σβ = 1`, via the Lagrangian:
/// `β = G⁻¹(c − μ1)` with `G = SSᵀ + γI`, `c = Sa`.
pub fn smo_coefficients(seen: &Matrix, target: &[f64], ridge: f64) -> Result<Vec<f64>> {
    if ridge < 0.0 {
        return Err(Error::InvalidConfig("SMO ridge must be non-negative".into()));
    }
    let n = seen.rows();
    let mut gram = seen.matmul_nt(seen)?;
    for i in 0..n {
        gram.set(i, i, gram.get(i, i) + ridge);
    }
    let c: Vec<f64> = seen.iter_rows().map(|s| dot(s, target)).collect();
    let solve = |rhs: &[f64]| {
        solve_spd(&gram, rhs).map_err(|e| match e {
            Error::Singular(msg) => Error::Singular(format!(
                "SMO system is singular ({msg}); use a ridge term > 0"
            )),
            other => other,
        })
    };
    let x_c = solve(&c)?;
    let x_1 = solve(&vec![1.0; n])?;
    let mu = (x_c.iter().sum::<f64>() - 1.0) / x_1.iter().sum::<f64>();
    Ok(x_c.iter().zip(&x_1).map(|(a, b)| a - mu * b).collect())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

/// Unseen classifiers as combinations of the seen head rows.
pub fn vgse_weights(
    head: &ClassifierHead,
    seen_descriptors: &DescriptorSet,
    unseen_descriptors: &Matrix,
    scheme: SimilarityWeighting,
) -> Result<Matrix> {
    let seen = paired_descriptors(head, seen_descriptors)?;
    combination_weights(&seen, unseen_descriptors, scheme)?.matmul(&head.weights)
}

pub fn costa_weights(
    head: &ClassifierHead,
    seen_descriptors: &DescriptorSet,
    unseen_descriptors: &Matrix,
) -> Result<Matrix> {
    vgse_weights(head, seen_descriptors, unseen_descriptors, SimilarityWeighting::CostaNormalised)
}

/// ConSE: softmax over the `top_t` seen scores, convex combination of their
/// descriptors, then the target class whose descriptor is most cosine-similar.
/// Ties go to the lowest class id.
pub fn conse_predict(
    head: &ClassifierHead,
    seen_descriptors: &DescriptorSet,
    targets: &DescriptorSet,
    feature: &[f64],
    top_t: usize,
) -> Result<ClassId> {
    let seen = paired_descriptors(head, seen_descriptors)?;
    conse_with(head, &seen, targets, feature, top_t)
}

fn conse_with(
    head: &ClassifierHead,
    seen: &Matrix,
    targets: &DescriptorSet,
    feature: &[f64],
    top_t: usize,
) -> Result<ClassId> {
    if targets.is_empty() {
        return Err(Error::Data("ConSE needs at least one target class".into()));
    }
    if top_t == 0 {
        return Err(Error::InvalidConfig("top_t must be at least 1".into()));
    }
    if feature.len() != head.dim() {
        return Err(Error::shape("conse_predict", (1, feature.len()), head.weights.shape()));
    }
    if targets.dim() != seen.cols() {
        return Err(Error::shape("conse_predict", seen.shape(), targets.matrix.shape()));
    }
    let scores: Vec<f64> = (0..head.len())
        .map(|i| dot(head.weights.row(i), feature) + head.biases.as_ref().map_or(0.0, |b| b[i]))
        .collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(top_t);
    let probs = softmax(&order.iter().map(|&i| scores[i]).collect::<Vec<_>>());
    let mut combined = vec![0.0; seen.cols()];
    for (&i, p) in order.iter().zip(probs) {
        for (c, a) in combined.iter_mut().zip(seen.row(i)) {
            *c += p * a;
        }
    }
    if norm(&combined) == 0.0 {
        return Err(Error::ZeroNorm("ConSE combined descriptor"));
    }
    let mut best: Option<(f64, ClassId)> = None;
    for (r, &id) in targets.class_ids.iter().enumerate() {
        let s = cosine_sim(&combined, targets.matrix.row(r));
        best = match best {
            Some((bs, bid)) if bs > s || (bs == s && bid < id) => Some((bs, bid)),
            _ => Some((s, id)),
        };
    }
    Ok(best.expect("targets non-empty").1)
}

/// [`conse_predict`] for every row of `features`.
pub fn conse_classify(
    head: &ClassifierHead,
    seen_descriptors: &DescriptorSet,
    targets: &DescriptorSet,
    features: &Matrix,
    top_t: usize,
    exec: Execution,
) -> Result<Vec<ClassId>> {
    let seen = paired_descriptors(head, seen_descriptors)?;
    par::map_range(exec, features.rows(), |i| conse_with(head, &seen, targets, features.row(i), top_t))
        .into_iter()
        .collect()
}

/// Orthonormal basis of the span of a set of weight vectors.
#[derive(Clone, Debug)]
pub struct SubspaceBasis {
    basis: Matrix,
}

impl SubspaceBasis {
    /// Modified Gram-Schmidt over the rows; directions whose residual norm is
    /// below `1e-10` of the largest row norm are dropped.
    pub fn from_rows(rows: &Matrix) -> Result<Self> {
        let scale = rows.row_norms().into_iter().fold(0.0, f64::max);
        let tol = 1e-10 * scale;
        let mut kept: Vec<Vec<f64>> = Vec::new();
        for r in rows.iter_rows() {
            let mut v = r.to_vec();
            for _ in 0..2 {
                for q in &kept {
                    let p = dot(&v, q);
                    v.iter_mut().zip(q).for_each(|(x, qi)| *x -= p * qi);
                }
            }
            let n = norm(&v);
            if n > tol && n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
                kept.push(v);
            }
        }
        if kept.is_empty() {
            return Err(Error::Data("seen classifiers span no subspace (rank 0)".into()));
        }
        Ok(SubspaceBasis {
            basis: Matrix::from_rows(&kept)?,
        })
    }

    pub fn rank(&self) -> usize {
        self.basis.rows()
    }

    /// `w − P w` for every row.
    pub fn residual(&self, w: &Matrix) -> Result<Matrix> {
        if w.cols() != self.basis.cols() {
            return Err(Error::shape("subspace residual", w.shape(), self.basis.shape()));
        }
        let coeff = w.matmul_nt(&self.basis)?;
        w.sub(&coeff.matmul(&self.basis)?)
    }
}

/// Mean squared distance of predictions from their projection onto the span
/// of the seen classifiers, and its gradient `2(w − Pw)/n`.
pub fn subspace_reg_loss(predicted: &Matrix, head: &ClassifierHead) -> Result<(f64, Matrix)> {
    let basis = SubspaceBasis::from_rows(&head.weights)?;
    subspace_reg_with(&basis, predicted)
}

pub fn subspace_reg_with(basis: &SubspaceBasis, predicted: &Matrix) -> Result<(f64, Matrix)> {
    let r = basis.residual(predicted)?;
    let n = predicted.rows().max(1) as f64;
    let loss = r.data().iter().map(|x| x * x).sum::<f64>() / n;
    Ok((loss, r.scale(2.0 / n)))
}

/// Subspace regulariser on the predictions for unseen descriptors, attached
/// to the descriptor→weights training.
pub struct SubspaceRegObjective {
    pub basis: SubspaceBasis,
    pub unseen_descriptors: Matrix,
}

impl AuxObjective for SubspaceRegObjective {
    fn accumulate(&self, model: &mut IcisModel, _batch: &Batch) -> Result<f64> {
        if self.unseen_descriptors.rows() == 0 {
            return Ok(0.0);
        }
        let (pred, cache) = model.forward(Term::AToW, &self.unseen_descriptors)?;
        let (loss, grad) = subspace_reg_with(&self.basis, &pred)?;
        model.backward(Term::AToW, &cache, &grad)?;
        Ok(loss)
    }
}

/// Trains a predictor with the subspace regulariser added.
pub fn train_subspace_reg(
    pairs: &PairSet,
    unseen_descriptors: &Matrix,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<(IcisModel, LossTrace)> {
    let objective = SubspaceRegObjective {
        basis: SubspaceBasis::from_rows(&pairs.weights)?,
        unseen_descriptors: unseen_descriptors.clone(),
    };
    let mut m = IcisModel::new(
        pairs.descriptors.cols(),
        pairs.weights.cols(),
        train_cfg.hidden_dim,
        train_cfg.seed,
    );
    let trace = model::train_with_aux(&mut m, pairs, Some(unseen_descriptors), loss_cfg, train_cfg, Some(&objective))?;
    Ok((m, trace))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DaeInit {
    Kaiming,
    /// `relu(x) − relu(−x)`: hidden width is forced to twice the input width.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaeConfig {
    pub hidden_dim: usize,
    /// Noise std as a fraction of each dimension's std over the seen weights.
    pub noise_frac: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init: DaeInit,
}

impl Default for DaeConfig {
    fn default() -> Self {
        DaeConfig {
            hidden_dim: 512,
            noise_frac: 0.1,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            epochs: 200,
            batch_size: 16,
            seed: 0,
            init: DaeInit::Kaiming,
        }
    }
}

/// Trains a denoising autoencoder on the seen classifiers (mean squared
/// reconstruction of clean rows from noisy ones) and passes the initial
/// estimates through it.
pub fn dae_refine(initial: &Matrix, seen_weights: &Matrix, cfg: &DaeConfig) -> Result<Matrix> {
    let (n, dim) = seen_weights.shape();
    if n < 2 {
        return Err(Error::Data(format!("DAE refinement needs at least 2 seen classifiers, got {n}")));
    }
    if initial.cols() != dim {
        return Err(Error::shape("dae_refine", initial.shape(), seen_weights.shape()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let root = Rng::new(cfg.seed);
    let mut net = match cfg.init {
        DaeInit::Kaiming => MlpTwoLayer::init(dim, cfg.hidden_dim, dim, &mut root.split(0)),
        DaeInit::Identity => {
            let mut enc = Matrix::zeros(2 * dim, dim);
            let mut dec = Matrix::zeros(dim, 2 * dim);
            for i in 0..dim {
                enc.set(i, i, 1.0);
                enc.set(dim + i, i, -1.0);
                dec.set(i, i, 1.0);
                dec.set(i, dim + i, -1.0);
            }
            MlpTwoLayer::new(
                LinearLayer::from_parts(enc, vec![0.0; 2 * dim])?,
                LinearLayer::from_parts(dec, vec![0.0; dim])?,
            )?
        }
    };

    let means = seen_weights.column_sums().into_iter().map(|s| s / n as f64).collect::<Vec<_>>();
    let noise_std: Vec<f64> = (0..dim)
        .map(|j| {
            let var = seen_weights.iter_rows().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n as f64;
            cfg.noise_frac * var.sqrt()
        })
        .collect();

    let mut rng = root.split(1);
    let mut adam = AdamState::new(cfg.adam);
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        for idx in order.chunks(cfg.batch_size) {
            let clean = seen_weights.select_rows(idx);
            let mut noisy = clean.clone();
            for r in 0..noisy.rows() {
                for (x, s) in noisy.row_mut(r).iter_mut().zip(&noise_std) {
                    *x += s * rng.normal();
                }
            }
            net.zero_grad();
            let out = net.forward(&noisy)?;
            let (loss, grad) = Distance::L2.batch_loss(&out, &clean)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: 0,
                    trace: Box::default(),
                });
            }
            net.backward(&grad)?;
            adam.step(&mut net.slots())?;
        }
    }
    net.predict(initial)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: u32) -> Vec<ClassId> {
        (0..n).map(ClassId).collect()
    }

    #[test]
    fn single_seen_class_returns_its_weights() {
        let head = ClassifierHead::new(ids(1), Matrix::from_rows(&[[0.3, -1.0, 2.0]]).unwrap(), None).unwrap();
        let desc = DescriptorSet::new(ids(1), Matrix::from_rows(&[[1.0, 0.5]]).unwrap()).unwrap();
        let unseen = Matrix::from_rows(&[[0.2, 1.0], [1.0, 0.1]]).unwrap();
        for scheme in [
            SimilarityWeighting::CostaNormalised,
            SimilarityWeighting::wavg(),
            SimilarityWeighting::smo(),
        ] {
            let w = vgse_weights(&head, &desc, &unseen, scheme).unwrap();
            for r in 0..2 {
                assert_eq!(w.row(r), head.weights.row(0), "{scheme:?}");
            }
        }
    }

    #[test]
    fn costa_picks_the_only_similar_class() {
        let head = ClassifierHead::new(ids(3), Rng::new(1).rand_normal(3, 4, 1.0), None).unwrap();
        let desc = DescriptorSet::new(ids(3), Matrix::identity(3)).unwrap();
        let unseen = Matrix::from_rows(&[[0.0, 2.0, 0.0]]).unwrap();
        let w = costa_weights(&head, &desc, &unseen).unwrap();
        assert_eq!(w.row(0), head.weights.row(1));
    }

    #[test]
    fn costa_matches_direct_formula() {
        let mut rng = Rng::new(5);
        let head = ClassifierHead::new(ids(5), rng.rand_normal(5, 6, 1.0), None).unwrap();
        let desc = DescriptorSet::new(ids(5), rng.rand_normal(5, 4, 1.0)).unwrap();
        let unseen = rng.rand_normal(2, 4, 1.0);
        let w = costa_weights(&head, &desc, &unseen).unwrap();
        for u in 0..2 {
            let a = unseen.row(u);
            let mut sims = Vec::new();
            for s in 0..5 {
                let b = desc.matrix.row(s);
                let c: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
                    / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt());
                sims.push(if c > 0.0 { c } else { 0.0 });
            }
            let z: f64 = sims.iter().sum();
            for j in 0..6 {
                let expect: f64 = (0..5).map(|s| sims[s] / z * head.weights.get(s, j)).sum();
                assert!((w.get(u, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn costa_all_zero_similarity_names_the_row() {
        let head = ClassifierHead::new(ids(2), Matrix::identity(2), None).unwrap();
        let desc = DescriptorSet::new(ids(2), Matrix::identity(2)).unwrap();
        let unseen = Matrix::from_rows(&[[1.0, 1.0], [-1.0, -1.0]]).unwrap();
        let err = costa_weights(&head, &desc, &unseen).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
    }

    #[test]
    fn smo_interpolates_a_seen_descriptor() {
        let seen = Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.5], [0.0, 1.0, 0.2, 0.0], [0.3, 0.0, 1.0, 0.0]]).unwrap();
        let beta = smo_coefficients(&seen, seen.row(0), 1e-12).unwrap();
        assert!((beta[0] - 1.0).abs() < 1e-8, "{beta:?}");
        assert!(beta[1].abs() < 1e-8 && beta[2].abs() < 1e-8);
    }

    #[test]
    fn smo_singular_without_ridge() {
        // more seen classes than descriptor dimensions → rank-deficient Gram matrix
        let seen = Rng::new(2).rand_normal(5, 3, 1.0);
        let err = smo_coefficients(&seen, &[1.0, 0.0, 0.0], 0.0).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
        assert!(err.to_string().contains("ridge"));
        assert!(smo_coefficients(&seen, &[1.0, 0.0, 0.0], 1e-3).is_ok());
    }

    #[test]
    fn wavg_rows_are_convex() {
        let mut rng = Rng::new(8);
        let w = combination_weights(&rng.rand_normal(6, 4, 1.0), &rng.rand_normal(3, 4, 1.0), SimilarityWeighting::wavg())
            .unwrap();
        for r in w.iter_rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(r.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn subspace_loss_cases() {
        let head = ClassifierHead::new(ids(2), Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap(), None)
            .unwrap();
        let (l, g) = subspace_reg_loss(&Matrix::from_rows(&[[0.0, 0.0, 1.0]]).unwrap(), &head).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        assert_eq!(g.row(0), &[0.0, 0.0, 2.0]);
        let (l, _) = subspace_reg_loss(&Matrix::from_rows(&[[3.0, -2.0, 0.0]]).unwrap(), &head).unwrap();
        assert!(l.abs() < 1e-15);
    }

    #[test]
    fn subspace_rank_zero_is_rejected() {
        assert!(SubspaceBasis::from_rows(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn subspace_gradient_matches_finite_differences() {
        let mut rng = Rng::new(13);
        let head = ClassifierHead::new(ids(3), rng.rand_normal(3, 6, 1.0), None).unwrap();
        let pred = rng.rand_normal(4, 6, 1.0);
        let (_, g) = subspace_reg_loss(&pred, &head).unwrap();
        let h = 1e-5;
        for i in 0..pred.data().len() {
            let mut p = pred.clone();
            p.data_mut()[i] += h;
            let mut m = pred.clone();
            m.data_mut()[i] -= h;
            let fd = (subspace_reg_loss(&p, &head).unwrap().0 - subspace_reg_loss(&m, &head).unwrap().0) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-5 * fd.abs().max(1.0), "{i}: {fd} vs {}", g.data()[i]);
        }
    }

    #[test]
    fn conse_one_hot_scores() {
        let head = ClassifierHead::new(ids(3), Matrix::identity(3), None).unwrap();
        let seen = DescriptorSet::new(ids(3), Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap()).unwrap();
        // target 10 duplicates seen class 1's descriptor
        let targets = DescriptorSet::new(
            vec![ClassId(10), ClassId(11)],
            Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.1]]).unwrap(),
        )
        .unwrap();
        let pred = conse_predict(&head, &seen, &targets, &[0.0, 5.0, 0.0], 1).unwrap();
        assert_eq!(pred, ClassId(10));
        let empty = DescriptorSet::new(vec![], Matrix::zeros(0, 2)).unwrap();
        assert!(conse_predict(&head, &seen, &empty, &[0.0, 5.0, 0.0], 1).is_err());
    }

    #[test]
    fn dae_identity_with_zero_lr_is_a_no_op() {
        let mut rng = Rng::new(4);
        let seen = rng.rand_normal(6, 5, 1.0);
        let initial = rng.rand_normal(3, 5, 1.0);
        let cfg = DaeConfig {
            noise_frac: 0.0,
            adam: AdamConfig { lr: 0.0, ..AdamConfig::default() },
            epochs: 3,
            init: DaeInit::Identity,
            ..DaeConfig::default()
        };
        assert_eq!(dae_refine(&initial, &seen, &cfg).unwrap(), initial);
    }

    #[test]
    fn dae_shapes_and_errors() {
        let mut rng = Rng::new(6);
        let seen = rng.rand_normal(8, 4, 1.0);
        let initial = rng.rand_normal(3, 4, 1.0);
        let cfg = DaeConfig { hidden_dim: 16, epochs: 5, ..DaeConfig::default() };
        assert_eq!(dae_refine(&initial, &seen, &cfg).unwrap().shape(), (3, 4));
        assert!(dae_refine(&initial, &seen.select_rows(&[0]), &cfg).is_err());
    }
}
