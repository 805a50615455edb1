//! Linear layers, the two-layer encoder/decoder composition with a manual
//! backward pass, distance losses with analytic gradients, and Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Matrix, Rng};

/// Distance `d(v, q)` between a prediction and its target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    /// `1 - cos(v, q)`.
    Cosine,
    /// Mean squared difference over coordinates.
    L2,
}

impl Distance {
    pub fn name(self) -> &'static str {
        match self {
            Distance::Cosine => "cosine",
            Distance::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Distance::Cosine),
            "l2" | "mse" => Ok(Distance::L2),
            other => Err(Error::InvalidConfig(format!("unknown distance `{other}`"))),
        }
    }

    pub fn value(self, v: &[f64], q: &[f64]) -> Result<f64> {
        match self {
            Distance::Cosine => cosine_distance(v, q),
            Distance::L2 => l2_distance(v, q),
        }
    }

    pub fn grad(self, v: &[f64], q: &[f64]) -> Result<Vec<f64>> {
        match self {
            Distance::Cosine => cosine_distance_grad(v, q),
            Distance::L2 => l2_distance_grad(v, q),
        }
    }

    /// Mean distance over paired rows, and its gradient w.r.t. `pred`.
    pub fn batch_loss(self, pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
        if pred.shape() != target.shape() {
            return Err(Error::shape("batch_loss", pred.shape(), target.shape()));
        }
        let n = pred.rows();
        let mut grad = Matrix::zeros(n, pred.cols());
        if n == 0 {
            return Ok((0.0, grad));
        }
        let inv_n = 1.0 / n as f64;
        let mut total = 0.0;
        for r in 0..n {
            let (v, q) = (pred.row(r), target.row(r));
            total += self.value(v, q)?;
            for (g, dv) in grad.row_mut(r).iter_mut().zip(self.grad(v, q)?) {
                *g = dv * inv_n;
            }
        }
        Ok((total * inv_n, grad))
    }
}

fn check_len(op: &'static str, v: &[f64], q: &[f64]) -> Result<()> {
    if v.len() != q.len() {
        return Err(Error::shape(op, (1, v.len()), (1, q.len())));
    }
    Ok(())
}

pub fn cosine_distance(v: &[f64], q: &[f64]) -> Result<f64> {
    check_len("cosine_distance", v, q)?;
    let (nv, nq) = (norm(v), norm(q));
    if nv == 0.0 || nq == 0.0 {
        return Err(Error::ZeroNorm("cosine_distance"));
    }
    Ok(1.0 - dot(v, q) / (nv * nq))
}

/// `∂d/∂v = -(q̂ - cos·v̂) / ‖v‖` with hats denoting unit vectors.
pub fn cosine_distance_grad(v: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    check_len("cosine_distance_grad", v, q)?;
    let (nv, nq) = (norm(v), norm(q));
    if nv == 0.0 || nq == 0.0 {
        return Err(Error::ZeroNorm("cosine_distance_grad"));
    }
    let cos = dot(v, q) / (nv * nq);
    Ok(v.iter()
        .zip(q)
        .map(|(&vi, &qi)| -(qi / nq - cos * vi / nv) / nv)
        .collect())
}

pub fn l2_distance(v: &[f64], q: &[f64]) -> Result<f64> {
    check_len("l2_distance", v, q)?;
    if v.is_empty() {
        return Ok(0.0);
    }
    Ok(v.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / v.len() as f64)
}

pub fn l2_distance_grad(v: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    check_len("l2_distance_grad", v, q)?;
    let scale = 2.0 / v.len().max(1) as f64;
    Ok(v.iter().zip(q).map(|(a, b)| scale * (a - b)).collect())
}

/// `y = x Wᵀ + b`, with gradient accumulators of the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub grad_weight: Matrix,
    pub grad_bias: Vec<f64>,
}

impl LinearLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        LinearLayer {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
            grad_weight: Matrix::zeros(out_dim, in_dim),
            grad_bias: vec![0.0; out_dim],
        }
    }

    /// Gaussian weights with the given std, zero bias.
    pub fn gaussian(in_dim: usize, out_dim: usize, std: f64, rng: &mut Rng) -> Self {
        let mut layer = LinearLayer::zeros(in_dim, out_dim);
        layer.weight = rng.rand_normal(out_dim, in_dim, std);
        layer
    }

    /// Takes ownership of hand-set parameters.
    pub fn from_parts(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape("LinearLayer", weight.shape(), (bias.len(), 1)));
        }
        let (o, i) = weight.shape();
        Ok(LinearLayer {
            weight,
            bias,
            grad_weight: Matrix::zeros(o, i),
            grad_bias: vec![0.0; o],
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape("linear forward", x.shape(), self.weight.shape()));
        }
        let mut y = x.matmul_nt(&self.weight)?;
        y.add_row_vector(&self.bias)?;
        Ok(y)
    }

    /// Accumulates parameter gradients for `upstream = ∂L/∂y` and returns `∂L/∂x`.
    pub fn backward(&mut self, x: &Matrix, upstream: &Matrix) -> Result<Matrix> {
        if upstream.cols() != self.out_dim() || upstream.rows() != x.rows() {
            return Err(Error::shape("linear backward", upstream.shape(), x.shape()));
        }
        let gw = upstream.matmul_tn(x)?;
        for (g, d) in self.grad_weight.data_mut().iter_mut().zip(gw.data()) {
            *g += d;
        }
        for (g, d) in self.grad_bias.iter_mut().zip(upstream.column_sums()) {
            *g += d;
        }
        upstream.matmul(&self.weight)
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.data_mut().fill(0.0);
        self.grad_bias.fill(0.0);
    }

    pub fn num_params(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }

    /// Parameter/gradient pairs in a fixed order (weight, then bias).
    pub fn slots(&mut self) -> [ParamSlot<'_>; 2] {
        [
            ParamSlot {
                value: self.weight.data_mut(),
                grad: self.grad_weight.data(),
            },
            ParamSlot {
                value: &mut self.bias,
                grad: &self.grad_bias,
            },
        ]
    }
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    pub input: Matrix,
    pub pre_activation: Matrix,
    pub hidden: Matrix,
}

/// `dec(relu(enc(x)))` over a batch. Returns the output and the cache.
pub fn mlp_forward(
    enc: &LinearLayer,
    dec: &LinearLayer,
    x: &Matrix,
) -> Result<(Matrix, MlpCache)> {
    if enc.out_dim() != dec.in_dim() {
        return Err(Error::shape("mlp_forward", enc.weight.shape(), dec.weight.shape()));
    }
    let pre = enc.forward(x)?;
    let hidden = pre.map(|v| v.max(0.0));
    let out = dec.forward(&hidden)?;
    Ok((
        out,
        MlpCache {
            input: x.clone(),
            pre_activation: pre,
            hidden,
        },
    ))
}

/// Backward pass through `dec ∘ relu ∘ enc`; accumulates into both layers'
/// gradients and returns `∂L/∂x`.
pub fn mlp_backward(
    enc: &mut LinearLayer,
    dec: &mut LinearLayer,
    cache: &MlpCache,
    upstream: &Matrix,
) -> Result<Matrix> {
    let mut grad_hidden = dec.backward(&cache.hidden, upstream)?;
    for (g, &p) in grad_hidden
        .data_mut()
        .iter_mut()
        .zip(cache.pre_activation.data())
    {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    enc.backward(&cache.input, &grad_hidden)
}

/// A standalone encoder-decoder pair owning its forward cache.
#[derive(Clone, Debug)]
pub struct MlpTwoLayer {
    pub layer1: LinearLayer,
    pub layer2: LinearLayer,
    cache: Option<MlpCache>,
}

impl MlpTwoLayer {
    pub fn new(layer1: LinearLayer, layer2: LinearLayer) -> Result<Self> {
        if layer1.out_dim() != layer2.in_dim() {
            return Err(Error::shape(
                "MlpTwoLayer",
                layer1.weight.shape(),
                layer2.weight.shape(),
            ));
        }
        Ok(MlpTwoLayer {
            layer1,
            layer2,
            cache: None,
        })
    }

    /// Kaiming-style init: `√(2/in)` before the rectifier, `√(1/in)` after.
    pub fn init(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let l1 = LinearLayer::gaussian(in_dim, hidden, (2.0 / in_dim as f64).sqrt(), rng);
        let l2 = LinearLayer::gaussian(hidden, out_dim, (1.0 / hidden as f64).sqrt(), rng);
        MlpTwoLayer {
            layer1: l1,
            layer2: l2,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let (out, cache) = mlp_forward(&self.layer1, &self.layer2, x)?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Inference without touching the cache.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        mlp_forward(&self.layer1, &self.layer2, x).map(|(out, _)| out)
    }

    pub fn backward(&mut self, upstream: &Matrix) -> Result<Matrix> {
        let cache = self.cache.as_ref().ok_or(Error::NoCachedForward)?;
        mlp_backward(&mut self.layer1, &mut self.layer2, cache, upstream)
    }

    pub fn zero_grad(&mut self) {
        self.layer1.zero_grad();
        self.layer2.zero_grad();
    }

    pub fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        let mut out = Vec::with_capacity(4);
        out.extend(self.layer1.slots());
        out.extend(self.layer2.slots());
        out
    }
}

/// A parameter buffer and its gradient, as seen by the optimiser.
pub struct ParamSlot<'a> {
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. Moment buffers are allocated on the
/// first step and must keep the same shapes afterwards.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [ParamSlot<'_>]) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            if p.value.len() != p.grad.len() {
                return Err(Error::shape("adam_step", (i, p.value.len()), (i, p.grad.len())));
            }
        }
        if self.step == 0 && self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.len())
        {
            return Err(Error::shape(
                "adam_step",
                (self.first.len(), 0),
                (params.len(), 0),
            ));
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            for (((x, &g), mi), vi) in p.value.iter_mut().zip(p.grad).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
