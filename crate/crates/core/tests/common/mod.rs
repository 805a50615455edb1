#![allow(dead_code)]

use icis::model::{total_loss, Batch, IcisModel};
use icis::{LossConfig, Rng};

pub fn random_batch(rng: &mut Rng, n: usize, da: usize, dw: usize, n_unseen: usize) -> Batch {
    Batch {
        descriptors: rng.rand_normal(n, da, 1.0),
        weights: rng.rand_normal(n, dw, 1.0),
        unseen_descriptors: (n_unseen > 0).then(|| rng.rand_normal(n_unseen, da, 1.0)),
        a2w_targets: None,
    }
}

/// Loss value only; gradients are cleared afterwards.
pub fn loss_at(model: &mut IcisModel, batch: &Batch, cfg: &LossConfig) -> f64 {
    let v = total_loss(model, batch, cfg).unwrap().total;
    model.zero_grad();
    v
}

/// Analytic gradient and central differences of the total loss. Returns the
/// largest error relative to `max(|analytic|, |numeric|, 1e-3)`.
pub fn max_grad_error(model: &mut IcisModel, batch: &Batch, cfg: &LossConfig, h: f64) -> f64 {
    model.zero_grad();
    total_loss(model, batch, cfg).unwrap();
    let analytic = model.gradient_vector();
    model.zero_grad();
    let theta = model.parameter_vector();
    let mut worst = 0.0f64;
    let mut p = theta.clone();
    for i in 0..theta.len() {
        p[i] = theta[i] + h;
        model.set_parameter_vector(&p).unwrap();
        let up = loss_at(model, batch, cfg);
        p[i] = theta[i] - h;
        model.set_parameter_vector(&p).unwrap();
        let down = loss_at(model, batch, cfg);
        p[i] = theta[i];
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-3);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    model.set_parameter_vector(&theta).unwrap();
    worst
}

/// Model with every parameter, biases included, drawn from `N(0, 0.5²)`.
pub fn random_model(da: usize, dw: usize, latent: usize, rng: &mut Rng) -> IcisModel {
    let mut m = IcisModel::new(da, dw, latent, 0);
    let p: Vec<f64> = (0..m.num_params()).map(|_| 0.5 * rng.normal()).collect();
    m.set_parameter_vector(&p).unwrap();
    m
}
