//! The value-function approximator: a small fully connected network mapping
//! a feature vector to a predicted task value in `(0, 1)`.
//!
//! Two ReLU hidden layers (128 and 64 nodes by default) feed a scalar
//! sigmoid output. Whenever the training set grows the network is
//! re-initialized and trained from scratch for a fixed number of epochs
//! with Adam on the mean squared error. Everything is keyed by the spec's
//! seed: identical `(spec, data)` always produce the identical network.

use crate::features::{FeatureVector, NormStats};
use crate::rng::Rng;
use std::collections::HashSet;
use std::fmt;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

const INIT_STREAM: u64 = 0x11F0;
const SHUFFLE_STREAM: u64 = 0x11F1;

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorError {
    InvalidSpec(String),
    DimensionMismatch { expected: usize, got: usize },
    DuplicateKey(String),
    /// Targets must fit the sigmoid output range.
    ValueOutOfRange(f64),
    EmptyTrainSet,
}

impl fmt::Display for PredictorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorError::InvalidSpec(msg) => write!(f, "invalid predictor spec: {msg}"),
            PredictorError::DimensionMismatch { expected, got } => {
                write!(f, "input dimension mismatch: expected {expected}, got {got}")
            }
            PredictorError::DuplicateKey(key) => {
                write!(f, "training set already contains state {key}")
            }
            PredictorError::ValueOutOfRange(v) => {
                write!(f, "target value {v} outside [0, 1]")
            }
            PredictorError::EmptyTrainSet => write!(f, "cannot train on an empty set"),
        }
    }
}

impl std::error::Error for PredictorError {}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PredictorSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub epochs: u32,
    pub learning_rate: f64,
    /// Mini-batch size; anything >= the training-set size trains full-batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl PredictorSpec {
    pub fn new(input_dim: usize, seed: u64) -> Self {
        PredictorSpec {
            input_dim,
            hidden: vec![128, 64],
            epochs: 10,
            learning_rate: 1e-2,
            batch_size: 16,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        if self.input_dim == 0 {
            return Err(PredictorError::InvalidSpec("input_dim must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(PredictorError::InvalidSpec("epochs must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(PredictorError::InvalidSpec("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(PredictorError::InvalidSpec("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One visited state with its feature vector and true value.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainEntry {
    pub key: String,
    pub features: FeatureVector,
    pub value: f64,
}

/// Insertion-ordered set of `(state, value)` pairs with unique keys.
#[derive(Debug, Clone, Default)]
pub struct TrainSet {
    entries: Vec<TrainEntry>,
    keys: HashSet<String>,
}

impl TrainSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        key: String,
        features: FeatureVector,
        value: f64,
    ) -> Result<(), PredictorError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(PredictorError::ValueOutOfRange(value));
        }
        if self.keys.contains(&key) {
            return Err(PredictorError::DuplicateKey(key));
        }
        self.keys.insert(key.clone());
        self.entries.push(TrainEntry {
            key,
            features,
            value,
        });
        Ok(())
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.keys.contains(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TrainEntry] {
        &self.entries
    }

    /// Z-score parameters fit on this set's feature batch.
    pub fn norm_stats(&self) -> Result<NormStats, PredictorError> {
        let batch: Vec<FeatureVector> =
            self.entries.iter().map(|e| e.features.clone()).collect();
        crate::features::normalize(&batch)
            .map(|(_, stats)| stats)
            .map_err(|_| PredictorError::EmptyTrainSet)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
struct Layer {
    /// Row-major `output_dim x input_dim`.
    weights: Vec<f64>,
    biases: Vec<f64>,
    input_dim: usize,
    output_dim: usize,
}

impl Layer {
    fn forward(&self, input: &[f64], output: &mut Vec<f64>) {
        output.clear();
        for o in 0..self.output_dim {
            let row = &self.weights[o * self.input_dim..(o + 1) * self.input_dim];
            let mut z = self.biases[o];
            for (w, x) in row.iter().zip(input) {
                z += w * x;
            }
            output.push(z);
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    // keep the output strictly inside (0, 1) even for saturating inputs
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

/// Feed-forward network; hidden layers are rectified, the scalar output is
/// squashed by a sigmoid. Immutable once trained.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
    input_dim: usize,
}

/// Versioned weight dump for reproducibility audits.
#[derive(serde::Serialize, serde::Deserialize)]
struct NetworkDump {
    format_version: u32,
    network: Network,
}

const NETWORK_DUMP_VERSION: u32 = 1;

/// Serializes a trained network to a versioned JSON weight dump.
pub fn network_to_json(net: &Network) -> String {
    serde_json::to_string(&NetworkDump {
        format_version: NETWORK_DUMP_VERSION,
        network: net.clone(),
    })
    .expect("network serializes")
}

/// Restores a network from [`network_to_json`] output, bit-exact.
pub fn network_from_json(text: &str) -> Result<Network, PredictorError> {
    let dump: NetworkDump = serde_json::from_str(text)
        .map_err(|e| PredictorError::InvalidSpec(format!("weight dump: {e}")))?;
    if dump.format_version != NETWORK_DUMP_VERSION {
        return Err(PredictorError::InvalidSpec(format!(
            "weight dump version {} unsupported",
            dump.format_version
        )));
    }
    Ok(dump.network)
}

impl Network {
    /// All-zero parameters: a constant 0.5 predictor, mainly useful as the
    /// fully tied baseline in tests and diagnostics.
    pub fn zeroed(input_dim: usize, hidden: &[usize]) -> Network {
        let mut layers = Vec::new();
        let mut fan_in = input_dim;
        for &h in hidden.iter().chain(std::iter::once(&1usize)) {
            layers.push(Layer {
                weights: vec![0.0; h * fan_in],
                biases: vec![0.0; h],
                input_dim: fan_in,
                output_dim: h,
            });
            fan_in = h;
        }
        Network { layers, input_dim }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// `(weight_count, bias_count)` per layer, outermost first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.weights.len(), l.biases.len()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    fn get_param(&self, index: usize) -> f64 {
        let mut i = index;
        for layer in &self.layers {
            if i < layer.weights.len() {
                return layer.weights[i];
            }
            i -= layer.weights.len();
            if i < layer.biases.len() {
                return layer.biases[i];
            }
            i -= layer.biases.len();
        }
        panic!("parameter index {index} out of range");
    }

    fn set_param(&mut self, index: usize, value: f64) {
        let mut i = index;
        for layer in &mut self.layers {
            if i < layer.weights.len() {
                layer.weights[i] = value;
                return;
            }
            i -= layer.weights.len();
            if i < layer.biases.len() {
                layer.biases[i] = value;
                return;
            }
            i -= layer.biases.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// Scalar prediction in the open interval `(0, 1)`.
    pub fn forward(&self, input: &[f64]) -> Result<f64, PredictorError> {
        if input.len() != self.input_dim {
            return Err(PredictorError::DimensionMismatch {
                expected: self.input_dim,
                got: input.len(),
            });
        }
        let mut current = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            layer.forward(&current, &mut next);
            if li < last {
                for z in &mut next {
                    *z = z.max(0.0);
                }
            }
            std::mem::swap(&mut current, &mut next);
        }
        Ok(sigmoid(current[0]))
    }

    pub fn forward_feature(&self, f: &FeatureVector) -> Result<f64, PredictorError> {
        self.forward(&f.values)
    }

    /// Forward pass retaining pre-activations of every layer.
    fn forward_trace(&self, input: &[f64]) -> (Vec<Vec<f64>>, f64) {
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(&current, &mut z);
            pre.push(z.clone());
            if li < last {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            current = z;
        }
        (pre, sigmoid(current[0]))
    }

    /// ReLU activation signature of a recorded forward trace; two parameter
    /// settings whose signatures differ straddle a kink.
    fn pattern_of(pre: &[Vec<f64>]) -> Vec<bool> {
        let mut pattern = Vec::new();
        for layer in &pre[..pre.len() - 1] {
            pattern.extend(layer.iter().map(|&z| z > 0.0));
        }
        pattern
    }

    /// Accumulates `upstream * d(pred)/d(params)` into `grads` (flattened
    /// like the parameter indexing) and returns the prediction.
    fn backward(&self, input: &[f64], upstream: f64, grads: &mut [f64]) -> f64 {
        let (pre, pred) = self.forward_trace(input);
        // activations entering each layer
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        inputs.push(input.to_vec());
        for z in pre.iter().take(self.layers.len() - 1) {
            let mut a = z.clone();
            for v in &mut a {
                *v = v.max(0.0);
            }
            inputs.push(a);
        }
        // output layer delta: d pred / d z_out = sigmoid'(z)
        let z_out = pre.last().unwrap()[0];
        let s = sigmoid(z_out);
        let mut delta = vec![upstream * s * (1.0 - s)];
        let mut offset_end = grads.len();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let layer_params = layer.weights.len() + layer.biases.len();
            let offset = offset_end - layer_params;
            let a_in = &inputs[li];
            for o in 0..layer.output_dim {
                let d = delta[o];
                let w_off = offset + o * layer.input_dim;
                for (i, &a) in a_in.iter().enumerate() {
                    grads[w_off + i] += d * a;
                }
                grads[offset + layer.weights.len() + o] += d;
            }
            if li > 0 {
                let mut next_delta = vec![0.0; layer.input_dim];
                for (o, &d) in delta.iter().enumerate().take(layer.output_dim) {
                    let row = &layer.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
                    for (i, &w) in row.iter().enumerate() {
                        next_delta[i] += d * w;
                    }
                }
                // ReLU gate of the layer below
                for (nd, &z) in next_delta.iter_mut().zip(&pre[li - 1]) {
                    if z <= 0.0 {
                        *nd = 0.0;
                    }
                }
                delta = next_delta;
            }
            offset_end = offset;
        }
        pred
    }
}

/// Fresh network with weights drawn uniformly from
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` and zero biases, keyed by the seed.
pub fn init_network(spec: &PredictorSpec) -> Network {
    let mut rng = Rng::seeded(spec.seed, INIT_STREAM);
    let mut layers = Vec::new();
    let mut fan_in = spec.input_dim;
    for &h in spec.hidden.iter().chain(std::iter::once(&1usize)) {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let weights = (0..h * fan_in)
            .map(|_| (rng.uniform() * 2.0 - 1.0) * scale)
            .collect();
        layers.push(Layer {
            weights,
            biases: vec![0.0; h],
            input_dim: fan_in,
            output_dim: h,
        });
        fan_in = h;
    }
    Network {
        layers,
        input_dim: spec.input_dim,
    }
}

/// Mean squared error of the network over a training set (features passed
/// through `norm` first).
pub fn mse_loss(net: &Network, data: &TrainSet, norm: &NormStats) -> f64 {
    let mut sum = 0.0;
    for e in data.entries() {
        let x = norm.apply(&e.features);
        let pred = net.forward(&x.values).expect("dimension checked upstream");
        sum += (pred - e.value) * (pred - e.value);
    }
    sum / data.len() as f64
}

/// Trains a fresh network from scratch: seeded re-initialization, then
/// `epochs` passes of (mini-batch) Adam on the MSE over the normalized
/// features. Deterministic given `(spec, data)`.
pub fn train(
    spec: &PredictorSpec,
    data: &TrainSet,
    norm: &NormStats,
) -> Result<Network, PredictorError> {
    spec.validate()?;
    if data.is_empty() {
        return Err(PredictorError::EmptyTrainSet);
    }
    let xs: Vec<Vec<f64>> = data
        .entries()
        .iter()
        .map(|e| {
            if e.features.dim() != spec.input_dim {
                Err(PredictorError::DimensionMismatch {
                    expected: spec.input_dim,
                    got: e.features.dim(),
                })
            } else {
                Ok(norm.apply(&e.features).values)
            }
        })
        .collect::<Result<_, _>>()?;
    let ys: Vec<f64> = data.entries().iter().map(|e| e.value).collect();

    let mut net = init_network(spec);
    let n_params = net.param_count();
    let mut grads = vec![0.0; n_params];
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut step = 0u32;
    let mut rng = Rng::seeded(spec.seed, SHUFFLE_STREAM);
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();

    for _ in 0..spec.epochs {
        if spec.batch_size < n {
            // Fisher-Yates, seeded
            for i in (1..n).rev() {
                order.swap(i, rng.index(i + 1));
            }
        }
        for batch in order.chunks(spec.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (_, pred) = net.forward_trace(&xs[i]);
                let upstream = 2.0 * (pred - ys[i]) * scale;
                net.backward(&xs[i], upstream, &mut grads);
            }
            step += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
            for (pi, &g) in grads.iter().enumerate() {
                m[pi] = ADAM_BETA1 * m[pi] + (1.0 - ADAM_BETA1) * g;
                v[pi] = ADAM_BETA2 * v[pi] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = m[pi] / bc1;
                let v_hat = v[pi] / bc2;
                let update = spec.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                net.set_param(pi, net.get_param(pi) - update);
            }
        }
    }
    Ok(net)
}

/// Squared error of the network on `(x, target)` and its analytic gradient
/// with respect to every parameter, flattened in layer order (weights then
/// biases per layer).
pub fn loss_gradient(net: &Network, x: &[f64], target: f64) -> (f64, Vec<f64>) {
    let mut grads = vec![0.0; net.param_count()];
    let (_, pred) = net.forward_trace(x);
    let upstream = 2.0 * (pred - target);
    net.backward(x, upstream, &mut grads);
    ((pred - target) * (pred - target), grads)
}

/// Compares the analytic gradient of the squared error against central
/// finite differences (step `1e-5`) over a seeded sample of parameters and
/// returns the maximum relative error.
///
/// A central difference is not a derivative estimate across a ReLU kink, so
/// parameters whose `±h` evaluations flip any hidden activation are skipped.
pub fn gradient_check(spec: &PredictorSpec, x: &[f64], target: f64) -> f64 {
    const H: f64 = 1e-5;
    const SAMPLE: usize = 64;
    let net = init_network(spec);
    let (_, analytic) = loss_gradient(&net, x, target);
    let n_params = net.param_count();
    let mut rng = Rng::seeded(spec.seed ^ 0xF1D0, INIT_STREAM);
    let mut max_rel: f64 = 0.0;
    let mut perturbed = net.clone();
    let count = SAMPLE.min(n_params);
    for probe in 0..count {
        let pi = if n_params <= SAMPLE {
            probe
        } else {
            rng.index(n_params)
        };
        let original = net.get_param(pi);
        perturbed.set_param(pi, original + H);
        let (pre_plus, pred_plus) = perturbed.forward_trace(x);
        perturbed.set_param(pi, original - H);
        let (pre_minus, pred_minus) = perturbed.forward_trace(x);
        perturbed.set_param(pi, original);
        if Network::pattern_of(&pre_plus) != Network::pattern_of(&pre_minus) {
            continue;
        }
        let loss_plus = (pred_plus - target) * (pred_plus - target);
        let loss_minus = (pred_minus - target) * (pred_minus - target);
        let numeric = (loss_plus - loss_minus) / (2.0 * H);
        let denom = (analytic[pi].abs() + numeric.abs()).max(1e-6);
        max_rel = max_rel.max((analytic[pi] - numeric).abs() / denom);
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::normalize;

    fn fv(values: Vec<f64>) -> FeatureVector {
        FeatureVector { values }
    }

    fn small_spec(input_dim: usize, seed: u64) -> PredictorSpec {
        PredictorSpec {
            hidden: vec![16, 8],
            ..PredictorSpec::new(input_dim, seed)
        }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let spec = PredictorSpec::new(39, 4);
        let a = init_network(&spec);
        let b = init_network(&spec);
        assert_eq!(a, b);
        assert_eq!(a.layer_shapes(), vec![(39 * 128, 128), (128 * 64, 64), (64, 1)]);
        let c = init_network(&PredictorSpec::new(39, 5));
        assert_ne!(a, c);
    }

    #[test]
    fn zero_network_outputs_half() {
        let net = Network::zeroed(7, &[16, 8]);
        let mut rng = Rng::new(1);
        for _ in 0..20 {
            let x: Vec<f64> = (0..7).map(|_| rng.uniform() * 10.0 - 5.0).collect();
            assert_eq!(net.forward(&x).unwrap(), 0.5);
        }
    }

    #[test]
    fn forward_stays_in_open_interval() {
        let spec = small_spec(5, 9);
        let net = init_network(&spec);
        let mut rng = Rng::new(2);
        for _ in 0..200 {
            let x: Vec<f64> = (0..5).map(|_| rng.normal(0.0, 100.0)).collect();
            let y = net.forward(&x).unwrap();
            assert!(y > 0.0 && y < 1.0, "prediction {y} escaped (0,1)");
        }
        // saturating input still inside the open interval
        let mut sat = Network::zeroed(1, &[]);
        sat.set_param(0, 1000.0);
        let hi = sat.forward(&[1.0]).unwrap();
        let lo = sat.forward(&[-1.0]).unwrap();
        assert!(hi < 1.0 && hi > 0.99);
        assert!(lo > 0.0 && lo < 0.01);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let net = Network::zeroed(4, &[8]);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(PredictorError::DimensionMismatch { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn batch_forward_equals_single_forwards() {
        let spec = small_spec(6, 11);
        let net = init_network(&spec);
        let mut rng = Rng::new(3);
        let batch: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..6).map(|_| rng.normal(0.0, 1.0)).collect())
            .collect();
        let batched: Vec<f64> = batch.iter().map(|x| net.forward(x).unwrap()).collect();
        for (x, &b) in batch.iter().zip(&batched) {
            assert_eq!(net.forward(x).unwrap(), b);
        }
    }

    #[test]
    fn train_set_rejects_duplicates_and_out_of_range() {
        let mut set = TrainSet::new();
        set.insert("1-2".into(), fv(vec![1.0]), 0.5).unwrap();
        assert!(matches!(
            set.insert("1-2".into(), fv(vec![1.0]), 0.6),
            Err(PredictorError::DuplicateKey(_))
        ));
        assert!(matches!(
            set.insert("1-3".into(), fv(vec![1.0]), 1.5),
            Err(PredictorError::ValueOutOfRange(_))
        ));
        assert!(matches!(
            set.insert("1-4".into(), fv(vec![1.0]), -0.1),
            Err(PredictorError::ValueOutOfRange(_))
        ));
        assert_eq!(set.len(), 1);
        assert!(set.contains_key("1-2"));
    }

    #[test]
    fn single_entry_moves_prediction_toward_target() {
        let mut set = TrainSet::new();
        set.insert("a".into(), fv(vec![2.0, -1.0, 0.5]), 0.8).unwrap();
        let norm = set.norm_stats().unwrap();
        let spec = small_spec(3, 17);
        let untrained = init_network(&spec);
        let trained = train(&spec, &set, &norm).unwrap();
        let x = norm.apply(&set.entries()[0].features);
        let before = (untrained.forward(&x.values).unwrap() - 0.8).abs();
        let after = (trained.forward(&x.values).unwrap() - 0.8).abs();
        assert!(after < before, "did not move toward target: {before} -> {after}");
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let mut set = TrainSet::new();
        let mut rng = Rng::new(23);
        for i in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.normal(0.0, 2.0)).collect();
            let v = rng.uniform();
            set.insert(format!("s{i}"), fv(x), v).unwrap();
        }
        let norm = set.norm_stats().unwrap();
        let spec = small_spec(5, 29);
        let a = train(&spec, &set, &norm).unwrap();
        let b = train(&spec, &set, &norm).unwrap();
        assert_eq!(a, b);
        assert_eq!(mse_loss(&a, &set, &norm), mse_loss(&b, &set, &norm));
    }

    #[test]
    fn training_reduces_loss_after_stated_epochs() {
        let mut set = TrainSet::new();
        let mut rng = Rng::new(31);
        for i in 0..30 {
            let x: Vec<f64> = (0..4).map(|_| rng.normal(0.0, 1.0)).collect();
            let v = if x[0] + 0.5 * x[1] > 0.0 { 0.9 } else { 0.1 };
            set.insert(format!("s{i}"), fv(x), v).unwrap();
        }
        let norm = set.norm_stats().unwrap();
        let spec = small_spec(4, 37);
        let initial = mse_loss(&init_network(&spec), &set, &norm);
        let trained = train(&spec, &set, &norm).unwrap();
        assert!(mse_loss(&trained, &set, &norm) <= initial);
    }

    #[test]
    fn learning_sanity_on_separable_set() {
        // linearly separable 50-point toy set: post-training MSE must fall
        // below a quarter of the pre-training MSE
        let mut set = TrainSet::new();
        let mut rng = Rng::new(41);
        let w = [1.0, -2.0, 0.5, 1.5, -1.0, 0.7];
        for i in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| rng.normal(0.0, 1.0)).collect();
            let dot: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
            let v = if dot > 0.0 { 1.0 } else { 0.0 };
            set.insert(format!("s{i}"), fv(x), v).unwrap();
        }
        let norm = set.norm_stats().unwrap();
        let spec = PredictorSpec::new(6, 43);
        let before = mse_loss(&init_network(&spec), &set, &norm);
        let net = train(&spec, &set, &norm).unwrap();
        let after = mse_loss(&net, &set, &norm);
        assert!(
            after < 0.25 * before,
            "training too weak: {before} -> {after}"
        );
    }

    #[test]
    fn gradient_zero_at_perfect_fit() {
        let spec = small_spec(4, 47);
        let net = init_network(&spec);
        let x = [0.3, -0.8, 1.2, 0.1];
        let target = net.forward(&x).unwrap();
        let (loss, grads) = loss_gradient(&net, &x, target);
        assert!(loss < 1e-28);
        assert!(grads.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn bias_only_path_matches_closed_form() {
        // zero weights: prediction = sigmoid(output bias); the analytic
        // gradient of the squared error wrt that bias has a closed form
        let mut net = Network::zeroed(3, &[4]);
        let n_params = net.param_count();
        let bias_index = n_params - 1;
        net.set_param(bias_index, 0.37);
        let target = 0.9;
        let (_, grads) = loss_gradient(&net, &[0.5, -0.5, 1.0], target);
        let s = 1.0 / (1.0 + (-0.37f64).exp());
        let expected = 2.0 * (s - target) * s * (1.0 - s);
        assert!((grads[bias_index] - expected).abs() < 1e-12);
        // every other parameter is gradient-free on this path
        for (i, g) in grads.iter().enumerate() {
            if i != bias_index {
                assert!(
                    g.abs() < 1e-12,
                    "param {i} picked up gradient {g} with zero activations"
                );
            }
        }
    }

    #[test]
    fn gradient_check_small_errors_over_probes() {
        let mut rng = Rng::new(53);
        for probe in 0..25 {
            let spec = small_spec(7, 1000 + probe);
            let x: Vec<f64> = (0..7).map(|_| rng.normal(0.0, 1.0)).collect();
            let target = rng.uniform();
            let err = gradient_check(&spec, &x, target);
            assert!(err < 1e-4, "probe {probe}: relative error {err}");
        }
    }

    #[test]
    fn weight_dump_round_trips_bitwise() {
        let mut set = TrainSet::new();
        let mut rng = Rng::new(61);
        for i in 0..12 {
            let x: Vec<f64> = (0..4).map(|_| rng.normal(0.0, 1.0)).collect();
            set.insert(format!("s{i}"), fv(x), rng.uniform()).unwrap();
        }
        let norm = set.norm_stats().unwrap();
        let net = train(&small_spec(4, 67), &set, &norm).unwrap();
        let restored = network_from_json(&network_to_json(&net)).unwrap();
        assert_eq!(net, restored);
        let x = [0.1, -0.4, 0.9, 0.0];
        assert_eq!(
            net.forward(&x).unwrap().to_bits(),
            restored.forward(&x).unwrap().to_bits()
        );
        assert!(network_from_json("{}").is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(PredictorSpec::new(39, 0).validate().is_ok());
        assert!(PredictorSpec { input_dim: 0, ..PredictorSpec::new(1, 0) }
            .validate()
            .is_err());
        assert!(PredictorSpec { epochs: 0, ..PredictorSpec::new(1, 0) }
            .validate()
            .is_err());
        assert!(PredictorSpec { learning_rate: 0.0, ..PredictorSpec::new(1, 0) }
            .validate()
            .is_err());
        assert!(PredictorSpec { batch_size: 0, ..PredictorSpec::new(1, 0) }
            .validate()
            .is_err());
    }

    #[test]
    fn train_requires_data_and_matching_dims() {
        let spec = small_spec(3, 1);
        let set = TrainSet::new();
        let norm = NormStats {
            mean: vec![0.0; 3],
            std: vec![1.0; 3],
        };
        assert!(matches!(
            train(&spec, &set, &norm),
            Err(PredictorError::EmptyTrainSet)
        ));
        let mut bad = TrainSet::new();
        bad.insert("a".into(), fv(vec![1.0, 2.0]), 0.4).unwrap();
        let bad_norm = normalize(&[fv(vec![1.0, 2.0])]).unwrap().1;
        assert!(matches!(
            train(&spec, &bad, &bad_norm),
            Err(PredictorError::DimensionMismatch { expected: 3, got: 2 })
        ));
    }
}
