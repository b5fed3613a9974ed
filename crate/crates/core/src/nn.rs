//! Sequential dense networks with exact reverse-mode gradients.
//!
//! Just enough machinery to train small experts and gating networks from
//! scratch: affine layers with relu/identity activations, softmax
//! cross-entropy, and plain SGD.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "id")]
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer followed by an activation. Weights are stored row-major,
/// `out_dim` rows of `in_dim` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Dense {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let out_dim = weights.len();
        if out_dim == 0 {
            return Err(Error::config("layer must have at least one output"));
        }
        let in_dim = weights[0].len();
        if in_dim == 0 {
            return Err(Error::config("layer must have at least one input"));
        }
        if let Some(row) = weights.iter().find(|r| r.len() != in_dim) {
            return Err(Error::dim("weight row", in_dim, row.len()));
        }
        if bias.len() != out_dim {
            return Err(Error::dim("bias", out_dim, bias.len()));
        }
        let weights: Vec<f64> = weights.into_iter().flatten().collect();
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::config("layer parameters must be finite"));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.in_dim + col]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.weights
            .chunks_exact(self.in_dim)
            .map(<[f64]>::to_vec)
            .collect()
    }
}

/// Gradient of a scalar with respect to one layer's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient structure mirroring a [`DenseNet`]'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v *= factor);
            l.bias.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Flattened in the same order as [`DenseNet::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Intermediate values recorded by [`DenseNet::forward_trace`].
#[derive(Clone, Debug)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// A sequential stack of dense layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetCheckpoint", into = "NetCheckpoint")]
pub struct DenseNet {
    layers: Vec<Dense>,
}

impl DenseNet {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::dim("layer chain", pair[0].out_dim, pair[1].in_dim));
            }
        }
        Ok(Self { layers })
    }

    /// Builds a randomly initialised network. `dims` lists the width of every
    /// layer boundary, input first. Hidden layers use `hidden`; the last layer
    /// is linear.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::config(format!("invalid layer widths {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == last {
                    Activation::Identity
                } else {
                    hidden
                };
                Dense::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    /// Seeded convenience wrapper around [`DenseNet::init`].
    pub fn seeded(dims: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        Self::init(dims, hidden, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Single linear layer with all parameters zero.
    pub fn zeros(input_dim: usize, output_dim: usize) -> Result<Self> {
        Self::new(vec![Dense::new(
            vec![vec![0.0; input_dim]; output_dim],
            vec![0.0; output_dim],
            Activation::Identity,
        )?])
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Sets the last layer's weights and bias to zero, so every input maps
    /// to the zero output until training moves it.
    pub fn zero_output_layer(&mut self) {
        if let Some(l) = self.layers.last_mut() {
            l.weights.iter_mut().for_each(|v| *v = 0.0);
            l.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim(
                "flat parameters",
                self.param_count(),
                params.len(),
            ));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = it.next().unwrap_or_default();
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l
                .pre_activation(&h)
                .into_iter()
                .map(|z| l.activation.apply(z))
                .collect();
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for l in &self.layers {
            let z = l.pre_activation(&h);
            let next = z.iter().map(|&v| l.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut h, next));
            pre_activations.push(z);
        }
        Ok(Trace {
            inputs,
            pre_activations,
            output: h,
        })
    }

    /// Reverse-mode pass. Returns parameter gradients and the gradient with
    /// respect to the network input.
    pub fn backward_trace(&self, trace: &Trace, upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        if upstream.len() != self.output_dim() {
            return Err(Error::dim(
                "upstream gradient",
                self.output_dim(),
                upstream.len(),
            ));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            for (d, &z) in delta.iter_mut().zip(&trace.pre_activations[k]) {
                *d *= l.activation.derivative(z);
            }
            let input = &trace.inputs[k];
            let g = &mut grads.layers[k];
            let mut down = vec![0.0; l.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] = d;
                if d == 0.0 {
                    continue;
                }
                let row = &l.weights[o * l.in_dim..(o + 1) * l.in_dim];
                let grow = &mut g.weights[o * l.in_dim..(o + 1) * l.in_dim];
                for i in 0..l.in_dim {
                    grow[i] = d * input[i];
                    down[i] += d * row[i];
                }
            }
            delta = down;
        }
        Ok((grads, delta))
    }

    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Gradients> {
        let trace = self.forward_trace(x)?;
        self.backward_trace(&trace, upstream).map(|(g, _)| g)
    }

    /// `w <- w - lr * g` for every parameter.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.weights.len() != l.weights.len() || g.bias.len() != l.bias.len())
        {
            return Err(Error::config("gradient shape does not match network"));
        }
        if !grads.is_finite() {
            return Err(Error::Diverged {
                step: 0,
                reason: "non-finite gradient".into(),
            });
        }
        if learning_rate == 0.0 {
            return Ok(());
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, d) in l.weights.iter_mut().zip(&g.weights) {
                *w -= learning_rate * d;
            }
            for (b, d) in l.bias.iter_mut().zip(&g.bias) {
                *b -= learning_rate * d;
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), x.len()));
        }
        Ok(())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, with its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(Error::config("cross-entropy needs at least two classes"));
    }
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

pub fn argmax(values: &[f64]) -> usize {
    // first index wins ties
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 1e-4,
            steps: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps must be positive"));
        }
        Ok(())
    }
}

/// Yields minibatches of indices from shuffled passes over `0..n`.
pub(crate) struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub(crate) fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self {
            order,
            cursor: 0,
            batch: batch.min(n).max(1),
            rng,
        }
    }

    pub(crate) fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        out
    }
}

/// Minibatch SGD on mean softmax cross-entropy. Returns the trained network
/// and the per-step mean loss.
pub fn train_classifier(
    mut net: DenseNet,
    inputs: &[Vec<f64>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(DenseNet, Vec<f64>)> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if inputs.len() != labels.len() {
        return Err(Error::dim("labels", inputs.len(), labels.len()));
    }
    let mut sampler = BatchSampler::new(inputs.len(), cfg.batch_size, cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = sampler.next_batch();
        let mut grads = Gradients::zeros_like(&net);
        let mut total = 0.0;
        for &i in &batch {
            let trace = net.forward_trace(&inputs[i])?;
            let (loss, g) = softmax_cross_entropy(trace.output(), labels[i])?;
            total += loss;
            let (pg, _) = net.backward_trace(&trace, &g)?;
            grads.add_scaled(&pg, 1.0);
        }
        let m = batch.len() as f64;
        let mean = total / m;
        if !mean.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: "non-finite loss".into(),
            });
        }
        grads.scale(1.0 / m);
        net.sgd_step(&grads, cfg.learning_rate)
            .map_err(|e| e.at_step(step))?;
        losses.push(mean);
    }
    Ok((net, losses))
}

#[derive(Serialize, Deserialize)]
struct LayerCheckpoint {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    act: Activation,
}

#[derive(Serialize, Deserialize)]
struct NetCheckpoint {
    layers: Vec<LayerCheckpoint>,
    input_dim: usize,
}

impl From<DenseNet> for NetCheckpoint {
    fn from(net: DenseNet) -> Self {
        let input_dim = net.input_dim();
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerCheckpoint {
                    w: l.rows(),
                    b: l.bias.clone(),
                    act: l.activation,
                })
                .collect(),
            input_dim,
        }
    }
}

impl TryFrom<NetCheckpoint> for DenseNet {
    type Error = Error;

    fn try_from(ck: NetCheckpoint) -> Result<Self> {
        let layers = ck
            .layers
            .into_iter()
            .map(|l| Dense::new(l.w, l.b, l.act))
            .collect::<Result<Vec<_>>>()?;
        let net = DenseNet::new(layers)?;
        if net.input_dim() != ck.input_dim {
            return Err(Error::dim(
                "checkpoint input_dim",
                ck.input_dim,
                net.input_dim(),
            ));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn single(w: Vec<Vec<f64>>, b: Vec<f64>, act: Activation) -> DenseNet {
        DenseNet::new(vec![Dense::new(w, b, act).unwrap()]).unwrap()
    }

    #[test]
    fn forward_examples() {
        let id = single(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0],
            Activation::Identity,
        );
        assert_eq!(id.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);

        let relu = single(vec![vec![-1.0]], vec![0.0], Activation::Relu);
        assert_eq!(relu.forward(&[3.0]).unwrap(), vec![0.0]);

        let aff = single(vec![vec![1.0, 1.0]], vec![0.5], Activation::Identity);
        assert_eq!(aff.forward(&[1.0, 2.0]).unwrap(), vec![3.5]);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let net = DenseNet::zeros(3, 2).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 1,
                ..
            })
        ));
    }

    #[test]
    fn new_rejects_unchained_layers() {
        let a = Dense::new(vec![vec![1.0, 1.0]; 3], vec![0.0; 3], Activation::Relu).unwrap();
        let b = Dense::new(vec![vec![1.0; 2]], vec![0.0], Activation::Identity).unwrap();
        assert!(DenseNet::new(vec![a, b]).is_err());
    }

    #[test]
    fn linear_weight_gradient() {
        let net = single(vec![vec![0.7]], vec![0.0], Activation::Identity);
        let g = net.backward(&[2.0], &[1.0]).unwrap();
        assert_eq!(g.layers[0].weights, vec![2.0]);
        assert_eq!(g.layers[0].bias, vec![1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = DenseNet::seeded(&[3, 5, 2], Activation::Relu, 4).unwrap();
        let g = net.backward(&[0.1, -0.4, 0.9], &[0.0, 0.0]).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sgd_step_examples() {
        let mut net = single(vec![vec![1.0]], vec![0.0], Activation::Identity);
        let grads = Gradients {
            layers: vec![LayerGradient {
                weights: vec![2.0],
                bias: vec![0.0],
            }],
        };
        net.sgd_step(&grads, 0.1).unwrap();
        assert!((net.layers()[0].weight(0, 0) - 0.8).abs() < 1e-15);

        let before = net.clone();
        net.sgd_step(&grads, 0.0).unwrap();
        assert_eq!(net, before);

        let nan = Gradients {
            layers: vec![LayerGradient {
                weights: vec![f64::NAN],
                bias: vec![0.0],
            }],
        };
        assert!(matches!(
            net.sgd_step(&nan, 0.1),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        let (loss, grad) = softmax_cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((grad[0] + 0.5).abs() < 1e-12 && (grad[1] - 0.5).abs() < 1e-12);

        let (loss, grad) = softmax_cross_entropy(&[1000.0, 0.0], 0).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.is_finite()));

        assert!(matches!(
            softmax_cross_entropy(&[0.0, 1.0], 2),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = [0.3, -1.2, 2.1, 0.05];
        let (_, grad) = softmax_cross_entropy(&logits, 2).unwrap();
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut up = logits;
            let mut dn = logits;
            up[i] += h;
            dn[i] -= h;
            let fd = (softmax_cross_entropy(&up, 2).unwrap().0
                - softmax_cross_entropy(&dn, 2).unwrap().0)
                / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() <= 1e-4 * fd.abs().max(1e-3),
                "{i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn checkpoint_round_trip_is_lossless() {
        let net = DenseNet::seeded(&[4, 7, 3], Activation::Relu, 11).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        assert!(json.contains("\"act\":\"relu\"") && json.contains("\"input_dim\":4"));
        let back: DenseNet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn checkpoint_rejects_bad_input_dim() {
        let bad = r#"{"layers":[{"w":[[1.0,2.0]],"b":[0.0],"act":"id"}],"input_dim":3}"#;
        assert!(serde_json::from_str::<DenseNet>(bad).is_err());
    }

    #[test]
    fn classifier_learns_separable_problem() {
        let inputs: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let t = i as f64 / 200.0;
                vec![if i % 2 == 0 { t } else { -t - 0.1 }, 0.5]
            })
            .collect();
        let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let net = DenseNet::seeded(&[2, 8, 2], Activation::Relu, 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 32,
            learning_rate: 0.5,
            steps: 400,
            seed: 3,
        };
        let (net, losses) = train_classifier(net, &inputs, &labels, &cfg).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        let correct = inputs
            .iter()
            .zip(&labels)
            .filter(|(x, &y)| argmax(&net.forward(x).unwrap()) == y)
            .count();
        assert!(correct >= 190, "{correct}");
    }

    fn loss_of(net: &DenseNet, x: &[f64], label: usize) -> f64 {
        softmax_cross_entropy(&net.forward(x).unwrap(), label)
            .unwrap()
            .0
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn gradients_match_central_differences(
            seed in 0u64..10_000,
            hidden in 1usize..6,
            x in proptest::collection::vec(-1.0f64..1.0, 3),
            label in 0usize..3,
        ) {
            let mut net = DenseNet::seeded(&[3, hidden, 3], Activation::Relu, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let params: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
            net.set_flat_params(&params).unwrap();

            let trace = net.forward_trace(&x).unwrap();
            let (_, up) = softmax_cross_entropy(trace.output(), label).unwrap();
            let analytic = net.backward_trace(&trace, &up).unwrap().0.flat();

            let h = 1e-5;
            for i in 0..params.len() {
                let mut p = params.clone();
                p[i] += h;
                let mut n_up = net.clone();
                n_up.set_flat_params(&p).unwrap();
                p[i] -= 2.0 * h;
                let mut n_dn = net.clone();
                n_dn.set_flat_params(&p).unwrap();
                // skip parameters whose perturbation crosses a relu kink
                let kink = trace.pre_activations[0].iter().any(|z| z.abs() < 2.0 * h * (1.0 + x.iter().map(|v| v.abs()).sum::<f64>()));
                if kink { continue; }
                let fd = (loss_of(&n_up, &x, label) - loss_of(&n_dn, &x, label)) / (2.0 * h);
                let denom = fd.abs().max(analytic[i].abs()).max(1e-6);
                prop_assert!((fd - analytic[i]).abs() / denom < 1e-4 || (fd - analytic[i]).abs() < 1e-9,
                    "param {i}: fd {fd} analytic {}", analytic[i]);
            }
        }

        #[test]
        fn forward_is_pure(seed in 0u64..1000, x in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let net = DenseNet::seeded(&[4, 6, 2], Activation::Relu, seed).unwrap();
            let a = net.forward(&x).unwrap();
            let b = net.forward(&x).unwrap();
            prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn zero_rate_step_is_identity(seed in 0u64..1000, g in -10.0f64..10.0) {
            let mut net = DenseNet::seeded(&[2, 3, 2], Activation::Relu, seed).unwrap();
            let before = net.clone();
            let mut grads = Gradients::zeros_like(&net);
            grads.layers.iter_mut().for_each(|l| l.weights.iter_mut().for_each(|v| *v = g));
            net.sgd_step(&grads, 0.0).unwrap();
            prop_assert_eq!(net, before);
        }
    }
}
