//! Dense feed-forward regressor with analytic gradients.
//!
//! Parameters are stored per layer as an `out × in` weight matrix plus a bias
//! vector, so a layer maps a batch `[n × in]` to `[n × out]` via
//! `A·Wᵀ + b`. Two training losses are supported: mean squared error and the
//! pinball (quantile) loss over a grid of levels, one output unit per level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    #[default]
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, Copy)]
enum Act {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Act {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Act::Relu => z.max(0.0),
            Act::Tanh => z.tanh(),
            Act::Sigmoid => sigmoid(z),
            Act::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Act::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Act::Tanh => 1.0 - a * a,
            Act::Sigmoid => a * (1.0 - a),
            Act::Identity => 1.0,
        }
    }
}

impl From<HiddenActivation> for Act {
    fn from(h: HiddenActivation) -> Self {
        match h {
            HiddenActivation::Relu => Act::Relu,
            HiddenActivation::Tanh => Act::Tanh,
            HiddenActivation::Sigmoid => Act::Sigmoid,
        }
    }
}

impl From<OutputActivation> for Act {
    fn from(o: OutputActivation) -> Self {
        match o {
            OutputActivation::Identity => Act::Identity,
            OutputActivation::Sigmoid => Act::Sigmoid,
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weights `[out × in]` and bias `[out]` of one layer. Also used as the
/// container for gradients and optimizer moments of the same layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weights: Matrix::zeros(out, inp),
            bias: vec![0.0; out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.weights.shape() == other.weights.shape() && self.bias.len() == other.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl MlpParams {
    /// Assembles parameters from explicit layers, checking that dimensions chain.
    pub fn from_layers(
        layers: Vec<Dense>,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture("no layers".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() || l.fan_out() == 0 || l.fan_in() == 0 {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {k} has weights {:?} and {} biases",
                    l.weights.shape(),
                    l.bias.len()
                )));
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {k} emits {} values but layer {} expects {}",
                    pair[0].fan_out(),
                    k + 1,
                    pair[1].fan_in()
                )));
            }
        }
        Ok(Self {
            layers,
            hidden_activation,
            output_activation,
        })
    }

    /// Layer widths from input to output, e.g. `[4, 16, 1]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(Dense::fan_out));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Hash of every parameter bit pattern. Used to tie a forward cache to the
    /// exact parameters it was computed from.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        for l in &self.layers {
            h.write_u64(l.weights.rows() as u64);
            h.write_u64(l.weights.cols() as u64);
            for v in l.weights.as_slice().iter().chain(&l.bias) {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }

    fn act(&self, layer: usize) -> Act {
        if layer + 1 == self.layers.len() {
            self.output_activation.into()
        } else {
            self.hidden_activation.into()
        }
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Gradient of a loss with respect to every weight and bias of an
/// [`MlpParams`]; layer `k` mirrors the shape of parameter layer `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Dense::zeros(l.fan_out(), l.fan_in()))
                .collect(),
        }
    }

    pub fn matches(&self, params: &MlpParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.same_shape(p))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Strictly increasing quantile levels inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileLevels(Vec<f64>);

impl QuantileLevels {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("empty quantile level grid".into()));
        }
        if let Some(q) = levels.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
            return Err(Error::Config(format!(
                "quantile level {q} is outside (0, 1)"
            )));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "quantile levels must be strictly increasing".into(),
            ));
        }
        Ok(Self(levels))
    }

    /// `{0.025, 0.05, 0.10, …, 0.90, 0.95, 0.975}`: nineteen 5%-spaced levels
    /// plus the two tails needed for a 95% interval.
    pub fn default_grid() -> Self {
        let mut v = vec![0.025];
        v.extend((1..=19).map(|k| f64::from(k) * 0.05));
        v.push(0.975);
        // 0.05·k is not always the nearest double to k/20
        for q in v.iter_mut() {
            *q = (*q * 1000.0).round() / 1000.0;
        }
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of `q` in the grid, matched within 1e-9.
    pub fn position(&self, q: f64) -> Option<usize> {
        self.0.iter().position(|l| (l - q).abs() < 1e-9)
    }
}

impl TryFrom<Vec<f64>> for QuantileLevels {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<QuantileLevels> for Vec<f64> {
    fn from(q: QuantileLevels) -> Self {
        q.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Pinball { levels: QuantileLevels },
}

impl LossKind {
    pub fn levels(&self) -> Option<&QuantileLevels> {
        match self {
            LossKind::Mse => None,
            LossKind::Pinball { levels } => Some(levels),
        }
    }
}

/// Per-layer pre-activations and activations saved by [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch, `activations[k+1]` the output of layer `k`.
    activations: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    fingerprint: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations
            .last()
            .expect("cache holds the input at least")
    }
}

/// Draws weights from `U(−1/√fan_in, 1/√fan_in)` and zeroes the biases.
pub fn init_mlp(
    layer_sizes: &[usize],
    hidden_activation: HiddenActivation,
    output_activation: OutputActivation,
    seed: u64,
) -> Result<MlpParams> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArchitecture(format!(
            "need at least an input and an output size, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidArchitecture(format!(
            "zero-width layer in {layer_sizes:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (inp, out) = (w[0], w[1]);
            let bound = 1.0 / (inp as f64).sqrt();
            let weights = (0..inp * out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Dense {
                weights: Matrix::from_vec(out, inp, weights).expect("sized above"),
                bias: vec![0.0; out],
            }
        })
        .collect();
    MlpParams::from_layers(layers, hidden_activation, output_activation)
}

/// Runs the network on a batch `[n × d]`.
pub fn forward(params: &MlpParams, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if x.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} features, network expects {}",
            x.cols(),
            params.input_dim()
        )));
    }
    let mut activations = Vec::with_capacity(params.layers.len() + 1);
    let mut pre_activations = Vec::with_capacity(params.layers.len());
    activations.push(x.clone());
    for (k, layer) in params.layers.iter().enumerate() {
        let prev = activations.last().expect("non-empty");
        let mut z = prev.matmul_transposed(&layer.weights)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        let act = params.act(k);
        let mut a = z.clone();
        a.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
        pre_activations.push(z);
        activations.push(a);
    }
    let out = activations.last().expect("non-empty").clone();
    Ok((
        out,
        ForwardCache {
            activations,
            pre_activations,
            fingerprint: params.fingerprint(),
        },
    ))
}

/// Forward pass without keeping the cache.
pub fn predict(params: &MlpParams, x: &Matrix) -> Result<Matrix> {
    forward(params, x).map(|(out, _)| out)
}

#[inline]
fn pinball(q: f64, y: f64, yhat: f64) -> f64 {
    if y >= yhat {
        q * (y - yhat)
    } else {
        (1.0 - q) * (yhat - y)
    }
}

fn check_targets(predictions: &Matrix, targets: &Matrix, kind: &LossKind) -> Result<()> {
    if predictions.rows() == 0 || predictions.cols() == 0 {
        return Err(Error::EmptyData("no predictions".into()));
    }
    if predictions.rows() != targets.rows() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            predictions.rows(),
            targets.rows()
        )));
    }
    match kind {
        LossKind::Mse if predictions.cols() != targets.cols() => Err(Error::Shape(format!(
            "predictions have {} columns, targets {}",
            predictions.cols(),
            targets.cols()
        ))),
        LossKind::Pinball { levels } if predictions.cols() != levels.len() => {
            Err(Error::Shape(format!(
                "{} quantile outputs for {} levels",
                predictions.cols(),
                levels.len()
            )))
        }
        LossKind::Pinball { .. } if targets.cols() != 1 => Err(Error::Shape(
            "pinball loss needs a single target column".into(),
        )),
        _ => Ok(()),
    }
}

/// Mean squared error over all entries, or mean pinball loss over samples and levels.
pub fn compute_loss(predictions: &Matrix, targets: &Matrix, kind: &LossKind) -> Result<f64> {
    check_targets(predictions, targets, kind)?;
    let count = predictions.as_slice().len() as f64;
    let total: f64 = match kind {
        LossKind::Mse => predictions
            .as_slice()
            .iter()
            .zip(targets.as_slice())
            .map(|(p, y)| (p - y) * (p - y))
            .sum(),
        LossKind::Pinball { levels } => (0..predictions.rows())
            .map(|r| {
                let y = targets.get(r, 0);
                predictions
                    .row(r)
                    .iter()
                    .zip(levels.as_slice())
                    .map(|(&p, &q)| pinball(q, y, p))
                    .sum::<f64>()
            })
            .sum(),
    };
    Ok(total / count)
}

/// Derivative of the loss with respect to each network output.
fn output_gradient(predictions: &Matrix, targets: &Matrix, kind: &LossKind) -> Matrix {
    let count = predictions.as_slice().len() as f64;
    let mut d = Matrix::zeros(predictions.rows(), predictions.cols());
    match kind {
        LossKind::Mse => {
            for ((g, p), y) in d
                .as_mut_slice()
                .iter_mut()
                .zip(predictions.as_slice())
                .zip(targets.as_slice())
            {
                *g = 2.0 * (p - y) / count;
            }
        }
        LossKind::Pinball { levels } => {
            for r in 0..predictions.rows() {
                let y = targets.get(r, 0);
                for (c, &q) in levels.as_slice().iter().enumerate() {
                    // tie y == ŷ falls on the q side
                    let slope = if y >= predictions.get(r, c) {
                        -q
                    } else {
                        1.0 - q
                    };
                    d.set(r, c, slope / count);
                }
            }
        }
    }
    d
}

/// Exact gradient of [`compute_loss`] through the cached forward pass.
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    targets: &Matrix,
    kind: &LossKind,
) -> Result<Gradients> {
    if cache.fingerprint != params.fingerprint()
        || cache.pre_activations.len() != params.layers.len()
    {
        return Err(Error::StaleCache);
    }
    let predictions = cache.output();
    check_targets(predictions, targets, kind)?;

    let n_layers = params.layers.len();
    let mut grads = Gradients::zeros_like(params);
    let mut delta = output_gradient(predictions, targets, kind);
    for k in (0..n_layers).rev() {
        let act = params.act(k);
        let z = &cache.pre_activations[k];
        let a = &cache.activations[k + 1];
        for ((d, &zv), &av) in delta
            .as_mut_slice()
            .iter_mut()
            .zip(z.as_slice())
            .zip(a.as_slice())
        {
            *d *= act.derivative(zv, av);
        }
        let input = &cache.activations[k];
        let g = &mut grads.layers[k];
        g.weights = delta.transpose_matmul(input)?;
        for r in 0..delta.rows() {
            for (b, d) in g.bias.iter_mut().zip(delta.row(r)) {
                *b += d;
            }
        }
        if k > 0 {
            delta = delta.matmul(&params.layers[k].weights)?;
        }
    }
    Ok(grads)
}

/// Quantile predictions with levels attached; each row is sorted so that
/// quantiles never cross.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    pub levels: QuantileLevels,
    pub values: Matrix,
}

impl QuantileForecast {
    /// Wraps raw network outputs, repairing crossings by sorting each row.
    pub fn from_raw(levels: QuantileLevels, mut values: Matrix) -> Result<Self> {
        if values.cols() != levels.len() {
            return Err(Error::Shape(format!(
                "{} output columns for {} quantile levels",
                values.cols(),
                levels.len()
            )));
        }
        for r in 0..values.rows() {
            values.row_mut(r).sort_by(f64::total_cmp);
        }
        Ok(Self { levels, values })
    }

    pub fn n_samples(&self) -> usize {
        self.values.rows()
    }

    /// Forecast values at level `q` for every sample.
    pub fn at_level(&self, q: f64) -> Option<Vec<f64>> {
        self.levels.position(q).map(|c| self.values.column(c))
    }
}

pub fn predict_quantiles(
    params: &MlpParams,
    x: &Matrix,
    levels: &QuantileLevels,
) -> Result<QuantileForecast> {
    if params.output_dim() != levels.len() {
        return Err(Error::Shape(format!(
            "network has {} outputs for {} quantile levels",
            params.output_dim(),
            levels.len()
        )));
    }
    QuantileForecast::from_raw(levels.clone(), predict(params, x)?)
}
