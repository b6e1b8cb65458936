//! Small fully connected classifier with an analytic backward pass, the two
//! training losses, and SGD with momentum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PtError, Result};

/// Floor added inside logarithms.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Architecture of an MLP classifier: `input_dim -> hidden_dims... -> num_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

impl NetConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Self {
        NetConfig {
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(PtError::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(PtError::Config("all layer dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// `(inputs, outputs)` for every affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self
            .hidden_dims
            .iter()
            .chain(std::iter::once(&self.num_classes))
        {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// One affine layer. Weights are stored input-major: `weights[i * outputs + o]`
/// connects input `i` to output `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    pub fn weight(&self, input: usize, output: usize) -> f64 {
        self.weights[input * self.outputs + output]
    }
}

/// All trainable weights and biases of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    layers: Vec<Layer>,
}

impl ParamSet {
    pub fn zeros(cfg: &NetConfig) -> Self {
        ParamSet {
            layers: cfg
                .layer_dims()
                .into_iter()
                .map(|(i, o)| Layer::zeros(i, o))
                .collect(),
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_uniform(cfg: &NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(cfg);
        for layer in &mut p.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        p
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(PtError::Contract("adjacent layer sizes disagree".into()));
            }
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(PtError::Contract("layer buffer sizes disagree".into()));
            }
        }
        Ok(ParamSet { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn matches(&self, cfg: &NetConfig) -> bool {
        let dims = cfg.layer_dims();
        dims.len() == self.layers.len()
            && dims
                .iter()
                .zip(&self.layers)
                .all(|(&(i, o), l)| l.inputs == i && l.outputs == o)
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// `a * self + b * other`, elementwise.
    pub fn lin_comb(&self, a: f64, other: &ParamSet, b: f64) -> Result<ParamSet> {
        let mut out = self.clone();
        out.lin_comb_assign(a, other, b)?;
        Ok(out)
    }

    /// `self <- a * self + b * other`, elementwise.
    pub fn lin_comb_assign(&mut self, a: f64, other: &ParamSet, b: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(PtError::Contract("parameter sets differ in shape".into()));
        }
        for (x, y) in self.values_mut().zip(other.values()) {
            *x = a * *x + b * *y;
        }
        Ok(())
    }

    fn add_assign(&mut self, other: &ParamSet) {
        for (x, y) in self.values_mut().zip(other.values()) {
            *x += *y;
        }
    }
}

/// Gradient of a scalar loss, shaped like the [`ParamSet`] it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet(ParamSet);

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        let mut g = params.clone();
        g.values_mut().for_each(|v| *v = 0.0);
        GradSet(g)
    }

    pub fn as_params(&self) -> &ParamSet {
        &self.0
    }

    pub fn into_params(self) -> ParamSet {
        self.0
    }

    pub fn from_params(p: ParamSet) -> Self {
        GradSet(p)
    }

    pub fn add_assign(&mut self, other: &GradSet) {
        self.0.add_assign(&other.0);
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }
}

/// Pre-activations and activations of every layer for a single input.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input; `activations[l]` feeds layer `l`.
    pub activations: Vec<Vec<f64>>,
    /// Pre-activation output of every layer; the last entry is the logits.
    pub pre_activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.pre_activations
            .last()
            .expect("trace has at least one layer")
    }
}

#[inline]
fn affine(layer: &Layer, input: &[f64]) -> Vec<f64> {
    let mut out = layer.bias.clone();
    for (xi, row) in input.iter().zip(layer.weights.chunks_exact(layer.outputs)) {
        if *xi == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(row) {
            *o += xi * w;
        }
    }
    out
}

/// Four-lane dot product with a fixed summation order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn forward(params: &ParamSet, x: &[f64], cfg: &NetConfig) -> Result<ForwardTrace> {
    if x.len() != cfg.input_dim {
        return Err(PtError::Config(format!(
            "input has {} features, network expects {}",
            x.len(),
            cfg.input_dim
        )));
    }
    if !params.matches(cfg) {
        return Err(PtError::Config(
            "parameters do not match network config".into(),
        ));
    }
    let n = params.layers.len();
    let mut activations = Vec::with_capacity(n);
    let mut pre_activations = Vec::with_capacity(n);
    activations.push(x.to_vec());
    for (l, layer) in params.layers.iter().enumerate() {
        let z = affine(layer, &activations[l]);
        if l + 1 < n {
            activations.push(z.iter().map(|&v| cfg.activation.apply(v)).collect());
        }
        pre_activations.push(z);
    }
    Ok(ForwardTrace {
        activations,
        pre_activations,
    })
}

/// Logits only, without keeping the intermediate activations.
pub fn predict_logits(params: &ParamSet, x: &[f64], cfg: &NetConfig) -> Result<Vec<f64>> {
    if x.len() != cfg.input_dim || !params.matches(cfg) {
        return Err(PtError::Config(
            "input or parameters do not match network config".into(),
        ));
    }
    let n = params.layers.len();
    let mut a = x.to_vec();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = affine(layer, &a);
        if l + 1 < n {
            z.iter_mut().for_each(|v| *v = cfg.activation.apply(*v));
        }
        a = z;
    }
    Ok(a)
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn one_hot(class: usize, num_classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; num_classes];
    y[class] = 1.0;
    y
}

/// Cross-entropy `-sum_j y_j ln(p_j + eps)` against a one-hot target.
pub fn ce_loss(probs: &[f64], y: &[f64]) -> Result<f64> {
    if probs.len() != y.len() {
        return Err(PtError::Contract(
            "probability and target lengths differ".into(),
        ));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    let zeros = y.iter().filter(|&&v| v == 0.0).count();
    if ones != 1 || ones + zeros != y.len() {
        return Err(PtError::Contract("target is not one-hot".into()));
    }
    let k = y.iter().position(|&v| v == 1.0).unwrap();
    Ok(ce_loss_index(probs, k))
}

/// Cross-entropy for a class index.
#[inline]
pub fn ce_loss_index(probs: &[f64], class: usize) -> f64 {
    -(probs[class] + LOG_EPS).ln()
}

/// Squared Euclidean distance between two probability vectors.
pub fn mse_consistency(p_student: &[f64], p_teacher: &[f64]) -> Result<f64> {
    if p_student.len() != p_teacher.len() {
        return Err(PtError::Contract(
            "consistency inputs differ in length".into(),
        ));
    }
    Ok(p_student
        .iter()
        .zip(p_teacher)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Pull a gradient w.r.t. softmax outputs back to the logits:
/// `dz_j = p_j * (g_j - sum_k p_k g_k)`.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_probs)
        .map(|(p, g)| p * (g - inner))
        .collect()
}

/// Reverse-mode gradient of a scalar loss given its gradient at the logits.
pub fn backward(
    trace: &ForwardTrace,
    params: &ParamSet,
    loss_grad_at_logits: &[f64],
    cfg: &NetConfig,
) -> Result<GradSet> {
    let mut grads = GradSet::zeros_like(params);
    backward_into(trace, params, loss_grad_at_logits, cfg, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`] but adds the gradient into `acc`.
pub fn backward_into(
    trace: &ForwardTrace,
    params: &ParamSet,
    loss_grad_at_logits: &[f64],
    cfg: &NetConfig,
    acc: &mut GradSet,
) -> Result<()> {
    let n = params.layers.len();
    if trace.pre_activations.len() != n
        || trace.activations.len() != n
        || loss_grad_at_logits.len() != params.layers[n - 1].outputs
        || !acc.0.same_shape(params)
    {
        return Err(PtError::Contract("backward inputs differ in shape".into()));
    }
    let mut delta = loss_grad_at_logits.to_vec();
    for l in (0..n).rev() {
        let layer = &params.layers[l];
        let input = &trace.activations[l];
        let g = &mut acc.0.layers[l];
        for (b, d) in g.bias.iter_mut().zip(&delta) {
            *b += d;
        }
        for (a, row) in input.iter().zip(g.weights.chunks_exact_mut(layer.outputs)) {
            if *a == 0.0 {
                continue;
            }
            for (w, d) in row.iter_mut().zip(&delta) {
                *w += a * d;
            }
        }
        if l > 0 {
            let z_prev = &trace.pre_activations[l - 1];
            delta = layer
                .weights
                .chunks_exact(layer.outputs)
                .zip(z_prev.iter().zip(input))
                .map(|(row, (&z, &a))| dot(row, &delta) * cfg.activation.derivative(z, a))
                .collect();
        }
    }
    Ok(())
}

/// `v <- mu * v + (g + wd * p)`, `p <- p - lr * v`.
pub fn sgd_momentum_step(
    params: &ParamSet,
    grads: &GradSet,
    velocity: &ParamSet,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<(ParamSet, ParamSet)> {
    let mut p = params.clone();
    let mut v = velocity.clone();
    sgd_momentum_step_in_place(&mut p, grads, &mut v, lr, momentum, weight_decay)?;
    Ok((p, v))
}

pub fn sgd_momentum_step_in_place(
    params: &mut ParamSet,
    grads: &GradSet,
    velocity: &mut ParamSet,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !params.same_shape(&grads.0) || !params.same_shape(velocity) {
        return Err(PtError::Contract("optimizer inputs differ in shape".into()));
    }
    if !(lr > 0.0) || !(0.0..1.0).contains(&momentum) {
        return Err(PtError::Config(format!(
            "need lr > 0 and momentum in [0,1), got lr={lr} momentum={momentum}"
        )));
    }
    if !grads.is_finite() {
        return Err(PtError::Divergence {
            iteration: 0,
            group: 0,
            detail: "nonfinite gradient".into(),
        });
    }
    for ((p, g), v) in params
        .values_mut()
        .zip(grads.0.values())
        .zip(velocity.values_mut())
    {
        *v = momentum * *v + (*g + weight_decay * *p);
        *p -= lr * *v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny() -> NetConfig {
        NetConfig::new(3, vec![4], 3)
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let cfg = tiny();
        let p = ParamSet::zeros(&cfg);
        let t = forward(&p, &[0.3, -1.0, 2.0], &cfg).unwrap();
        assert_eq!(t.logits(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let cfg = NetConfig::new(2, vec![], 2);
        let layer = Layer {
            inputs: 2,
            outputs: 2,
            weights: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0, 0.0],
        };
        let p = ParamSet::from_layers(vec![layer]).unwrap();
        let t = forward(&p, &[1.0, 0.0], &cfg).unwrap();
        assert_eq!(t.logits(), &[1.0, 0.0]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let cfg = tiny();
        let p = ParamSet::zeros(&cfg);
        assert!(matches!(forward(&p, &[1.0], &cfg), Err(PtError::Config(_))));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0; 7]);
        p.iter()
            .for_each(|&v| assert_abs_diff_eq!(v, 1.0 / 7.0, epsilon = 1e-15));
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
        let p = softmax(&[1.0, 2.0, 3.0]);
        for (a, b) in p.iter().zip([0.09003, 0.24473, 0.66524]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-4);
        }
    }

    #[test]
    fn ce_examples() {
        assert_abs_diff_eq!(
            ce_loss(&[0.0, 1.0], &[0.0, 1.0]).unwrap(),
            0.0,
            epsilon = 1e-11
        );
        let u = vec![1.0 / 7.0; 7];
        assert_abs_diff_eq!(
            ce_loss(&u, &one_hot(3, 7)).unwrap(),
            7f64.ln(),
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(
            ce_loss(&[0.7, 0.2, 0.1], &one_hot(1, 3)).unwrap(),
            1.60944,
            epsilon = 1e-5
        );
        assert!(matches!(
            ce_loss(&[0.5, 0.5], &[0.5, 0.5]),
            Err(PtError::Contract(_))
        ));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_consistency(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mse_consistency(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert_abs_diff_eq!(
            mse_consistency(&[0.5, 0.5], &[0.9, 0.1]).unwrap(),
            0.32,
            epsilon = 1e-15
        );
        assert!(mse_consistency(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grad() {
        let cfg = tiny();
        let p = ParamSet::init_uniform(&cfg, 1);
        let t = forward(&p, &[0.1, 0.2, 0.3], &cfg).unwrap();
        let g = backward(&t, &p, &[0.0; 3], &cfg).unwrap();
        assert!(g.as_params().values().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_softmax_ce_gradient_is_outer_product() {
        let cfg = NetConfig::new(2, vec![], 3);
        let p = ParamSet::init_uniform(&cfg, 4);
        let x = [0.5, -1.5];
        let t = forward(&p, &x, &cfg).unwrap();
        let probs = softmax(t.logits());
        let y = one_hot(2, 3);
        let up: Vec<f64> = probs.iter().zip(&y).map(|(p, y)| p - y).collect();
        let g = backward(&t, &p, &up, &cfg).unwrap();
        let l = &g.as_params().layers()[0];
        for (i, xi) in x.iter().enumerate() {
            for (o, uo) in up.iter().enumerate() {
                assert_abs_diff_eq!(l.weight(i, o), uo * xi, epsilon = 1e-15);
            }
        }
        assert_eq!(l.bias, up);
    }

    #[test]
    fn sgd_examples() {
        let cfg = NetConfig::new(1, vec![], 2);
        let mut p = ParamSet::zeros(&cfg);
        p.values_mut().for_each(|v| *v = 1.0);
        let mut g = GradSet::zeros_like(&p);
        g.0.values_mut().for_each(|v| *v = 1.0);
        let v0 = ParamSet::zeros(&cfg);

        // plain gradient descent
        let (p1, _) = sgd_momentum_step(&p, &g, &v0, 0.1, 0.0, 0.0).unwrap();
        assert!(p1.values().all(|&x| x == 1.0 - 0.1));

        // two momentum steps
        let (p1, v1) = sgd_momentum_step(&p, &g, &v0, 0.1, 0.9, 0.0).unwrap();
        let (p2, _) = sgd_momentum_step(&p1, &g, &v1, 0.1, 0.9, 0.0).unwrap();
        p2.values()
            .for_each(|&x| assert_abs_diff_eq!(x, 0.71, epsilon = 1e-15));

        // fixed point
        let zero = GradSet::zeros_like(&p);
        let (p3, _) = sgd_momentum_step(&p, &zero, &v0, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p3, p);

        let mut bad = g.clone();
        bad.0.values_mut().for_each(|v| *v = f64::NAN);
        assert!(matches!(
            sgd_momentum_step(&p, &bad, &v0, 0.1, 0.9, 0.0),
            Err(PtError::Divergence { .. })
        ));
    }

    #[test]
    fn lin_comb_rejects_shape_mismatch() {
        let a = ParamSet::zeros(&tiny());
        let b = ParamSet::zeros(&NetConfig::new(3, vec![5], 3));
        assert!(a.lin_comb(1.0, &b, 1.0).is_err());
    }
}
