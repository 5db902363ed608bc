//! Network building blocks: dense layers, multi-layer perceptrons, a serial
//! LSTM chain, the convolutional matrix summarizer, and the prior squashing
//! map that keeps generated parameters inside their uniform prior box.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayerError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid prior bounds for dimension {dim}: lo={lo}, hi={hi}")]
    InvalidPrior { dim: usize, lo: f64, hi: f64 },
    #[error("{0}")]
    Config(String),
    #[error("sequence must have at least one time step")]
    EmptySequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Identity,
    Sigmoid,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Every entry drawn from N(0, std²).
    Normal { std: f64 },
    /// N(0, 1/fan_in).
    FanIn,
}

impl Default for Init {
    fn default() -> Self {
        Init::Normal { std: 1.0 }
    }
}

impl Init {
    fn draw(self, rng: &mut impl Rng, fan_in: usize, shape: &[usize]) -> Tensor {
        let std = match self {
            Init::Normal { std } => std,
            Init::FanIn => 1.0 / (fan_in.max(1) as f64).sqrt(),
        };
        let n: usize = shape.iter().product();
        let data = if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| normal.sample(rng)).collect()
        } else {
            vec![0.0; n]
        };
        Tensor::new(shape.to_vec(), data).expect("shape matches data")
    }
}

/// `activation(x · W + b)` with `W`: in×out and `b`: out.
#[derive(Clone, Debug)]
pub struct Dense {
    weight: ParamId,
    bias: ParamId,
    activation: Activation,
    in_dim: usize,
    out_dim: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let w = init.draw(rng, in_dim, &[in_dim, out_dim]);
        let b = init.draw(rng, in_dim, &[out_dim]);
        Self {
            weight: store.add(format!("{name}.w"), w),
            bias: store.add(format!("{name}.b"), b),
            activation,
            in_dim,
            out_dim,
        }
    }

    /// Layer with explicitly given weights.
    pub fn from_weights(
        store: &mut ParamStore,
        name: &str,
        weight: Tensor,
        bias: Tensor,
        activation: Activation,
    ) -> Result<Self, LayerError> {
        if weight.ndim() != 2 || bias.len() != weight.shape()[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "dense",
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            }
            .into());
        }
        let (in_dim, out_dim) = (weight.shape()[0], weight.shape()[1]);
        let bias = bias.reshape(&[out_dim])?;
        Ok(Self {
            weight: store.add(format!("{name}.w"), weight),
            bias: store.add(format!("{name}.b"), bias),
            activation,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, LayerError> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let z = tape.matmul(x, w)?;
        let z = tape.add_row(z, b)?;
        Ok(self.activation.apply(tape, z)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
}

/// Stack of dense layers: hidden layers share one activation, the output
/// layer has its own.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Dense::new(store, &format!("{name}.{i}"), prev, h, hidden_activation, init, rng));
            prev = h;
        }
        layers.push(Dense::new(
            store,
            &format!("{name}.{}", hidden.len()),
            prev,
            out_dim,
            output_activation,
            init,
            rng,
        ));
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, LayerError> {
        self.layers.iter().try_fold(x, |h, layer| layer.forward(tape, store, h))
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Dense::params).collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }
}

/// `k` LSTM units connected serially over a sequence, starting from a zero
/// hidden and cell state. Each gate acts on the concatenation `[h_{t-1}, x_t]`.
#[derive(Clone, Debug)]
pub struct LstmChain {
    units: usize,
    input_dim: usize,
    w_f: ParamId,
    w_i: ParamId,
    w_c: ParamId,
    w_o: ParamId,
    b_f: ParamId,
    b_i: ParamId,
    b_c: ParamId,
    b_o: ParamId,
}

impl LstmChain {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        units: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = units + input_dim;
        let mut w = |gate: &str, rng: &mut _| {
            let t = init.draw(rng, fan_in, &[fan_in, units]);
            store.add(format!("{name}.w_{gate}"), t)
        };
        let (w_f, w_i, w_c, w_o) = (w("f", rng), w("i", rng), w("c", rng), w("o", rng));
        let mut b = |gate: &str, rng: &mut _| {
            let t = init.draw(rng, fan_in, &[units]);
            store.add(format!("{name}.b_{gate}"), t)
        };
        let (b_f, b_i, b_c, b_o) = (b("f", rng), b("i", rng), b("c", rng), b("o", rng));
        Self {
            units,
            input_dim,
            w_f,
            w_i,
            w_c,
            w_o,
            b_f,
            b_i,
            b_c,
            b_o,
        }
    }

    /// Weights in the order `W_f, W_i, W_C, W_o, b_f, b_i, b_C, b_o`.
    pub fn params(&self) -> Vec<ParamId> {
        vec![
            self.w_f, self.w_i, self.w_c, self.w_o, self.b_f, self.b_i, self.b_c, self.b_o,
        ]
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// `seq`: batch×T×d. Returns the final hidden state, batch×k.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, seq: Var) -> Result<Var, LayerError> {
        let shape = tape.value(seq)?.shape().to_vec();
        if shape.len() != 3 || shape[2] != self.input_dim {
            return Err(AutodiffError::ShapeMismatch {
                op: "lstm",
                lhs: shape,
                rhs: vec![self.input_dim],
            }
            .into());
        }
        let (batch, steps) = (shape[0], shape[1]);
        if steps == 0 {
            return Err(LayerError::EmptySequence);
        }
        let p = |tape: &mut Tape, id| tape.param(store, id);
        let (w_f, w_i, w_c, w_o) = (p(tape, self.w_f), p(tape, self.w_i), p(tape, self.w_c), p(tape, self.w_o));
        let (b_f, b_i, b_c, b_o) = (p(tape, self.b_f), p(tape, self.b_i), p(tape, self.b_c), p(tape, self.b_o));

        let mut h = tape.input(Tensor::zeros(&[batch, self.units]));
        let mut c = tape.input(Tensor::zeros(&[batch, self.units]));
        for t in 0..steps {
            let x_t = tape.slice(seq, 1, t..t + 1)?;
            let x_t = tape.reshape(x_t, &[batch, self.input_dim])?;
            let z = tape.concat(&[h, x_t], 1)?;
            let gate = |tape: &mut Tape, w, b| -> Result<Var, AutodiffError> {
                let a = tape.matmul(z, w)?;
                tape.add_row(a, b)
            };
            let f = gate(tape, w_f, b_f)?;
            let f = tape.sigmoid(f)?;
            let i = gate(tape, w_i, b_i)?;
            let i = tape.sigmoid(i)?;
            let c_tilde = gate(tape, w_c, b_c)?;
            let c_tilde = tape.tanh(c_tilde)?;
            let o = gate(tape, w_o, b_o)?;
            let o = tape.sigmoid(o)?;
            let keep = tape.mul(f, c)?;
            let write = tape.mul(i, c_tilde)?;
            c = tape.add(keep, write)?;
            let squashed = tape.tanh(c)?;
            h = tape.mul(o, squashed)?;
        }
        Ok(h)
    }
}

/// Convolutional summarizer for binary matrices:
/// conv (valid padding) → ReLU → max-pool → flatten → dense.
#[derive(Clone, Debug)]
pub struct ConvSummarizer {
    filters: ParamId,
    conv_bias: ParamId,
    head: Dense,
    stride: usize,
    pool: usize,
    in_shape: (usize, usize),
    feature_shape: (usize, usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: usize,
    pub outputs: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            filters: 8,
            kernel: 5,
            stride: 2,
            pool: 2,
            outputs: 160,
        }
    }
}

impl ConvSummarizer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_shape: (usize, usize),
        spec: ConvSpec,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self, LayerError> {
        let (h, w) = in_shape;
        if spec.kernel == 0 || spec.stride == 0 || spec.pool == 0 || spec.filters == 0 {
            return Err(LayerError::Config(format!("degenerate convolution spec {spec:?}")));
        }
        if h < spec.kernel || w < spec.kernel {
            return Err(LayerError::Config(format!(
                "input {h}×{w} smaller than filter footprint {k}×{k}",
                k = spec.kernel
            )));
        }
        let (oh, ow) = ((h - spec.kernel) / spec.stride + 1, (w - spec.kernel) / spec.stride + 1);
        if oh < spec.pool || ow < spec.pool {
            return Err(LayerError::Config(format!(
                "convolution output {oh}×{ow} smaller than pooling window {}",
                spec.pool
            )));
        }
        let feature_shape = (spec.filters, oh / spec.pool, ow / spec.pool);
        let fan_in = spec.kernel * spec.kernel;
        let filters = store.add(
            format!("{name}.filters"),
            init.draw(rng, fan_in, &[spec.filters, spec.kernel, spec.kernel]),
        );
        let conv_bias = store.add(format!("{name}.conv_b"), init.draw(rng, fan_in, &[spec.filters]));
        let flat = feature_shape.0 * feature_shape.1 * feature_shape.2;
        let head = Dense::new(store, &format!("{name}.head"), flat, spec.outputs, Activation::Identity, init, rng);
        Ok(Self {
            filters,
            conv_bias,
            head,
            stride: spec.stride,
            pool: spec.pool,
            in_shape,
            feature_shape,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.filters, self.conv_bias];
        p.extend(self.head.params());
        p
    }

    pub fn filters(&self) -> ParamId {
        self.filters
    }

    pub fn conv_bias(&self) -> ParamId {
        self.conv_bias
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    pub fn flat_dim(&self) -> usize {
        self.feature_shape.0 * self.feature_shape.1 * self.feature_shape.2
    }

    pub fn out_dim(&self) -> usize {
        self.head.out_dim()
    }

    /// Flattened pooled feature maps, batch×flat_dim.
    pub fn features(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, LayerError> {
        let shape = tape.value(x)?.shape().to_vec();
        if shape.len() != 3 || (shape[1], shape[2]) != self.in_shape {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv_summarize",
                lhs: shape,
                rhs: vec![self.in_shape.0, self.in_shape.1],
            }
            .into());
        }
        let w = tape.param(store, self.filters);
        let b = tape.param(store, self.conv_bias);
        let y = tape.conv2d(x, w, b, self.stride)?;
        let y = tape.relu(y)?;
        let y = tape.maxpool2d(y, self.pool)?;
        Ok(tape.reshape(y, &[shape[0], self.flat_dim()])?)
    }

    /// batch×H×W matrices → batch×outputs.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, LayerError> {
        let f = self.features(tape, store, x)?;
        self.head.forward(tape, store, f)
    }

    /// Summarizes consecutive groups of `group` matrices into one vector
    /// each by averaging their features before the dense head. Because the
    /// head is affine this equals the mean of the per-matrix summaries.
    pub fn forward_grouped(&self, tape: &mut Tape, store: &ParamStore, x: Var, group: usize) -> Result<Var, LayerError> {
        let n = tape.value(x)?.rows();
        if group == 0 || n % group != 0 {
            return Err(LayerError::Config(format!("{n} matrices cannot be split into groups of {group}")));
        }
        let f = self.features(tape, store, x)?;
        let pooled = group_mean(tape, f, group)?;
        self.head.forward(tape, store, pooled)
    }
}

/// Averages consecutive blocks of `group` rows of a matrix.
pub fn group_mean(tape: &mut Tape, x: Var, group: usize) -> Result<Var, AutodiffError> {
    let n = tape.value(x)?.rows();
    let g = n / group;
    let mut pool = Tensor::zeros(&[g, n]);
    let inv = 1.0 / group as f64;
    for i in 0..g {
        for j in 0..group {
            pool.data_mut()[i * n + i * group + j] = inv;
        }
    }
    let pool = tape.input(pool);
    tape.matmul(pool, x)
}

/// Independent uniform prior on a box.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl PriorSpec {
    pub fn new(bounds: &[(f64, f64)]) -> Result<Self, LayerError> {
        for (dim, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(LayerError::InvalidPrior { dim, lo, hi });
            }
        }
        if bounds.is_empty() {
            return Err(LayerError::Config("prior must have at least one dimension".into()));
        }
        Ok(Self {
            lo: bounds.iter().map(|b| b.0).collect(),
            hi: bounds.iter().map(|b| b.1).collect(),
        })
    }

    /// Same box in every one of `dim` dimensions.
    pub fn uniform_box(dim: usize, lo: f64, hi: f64) -> Result<Self, LayerError> {
        Self::new(&vec![(lo, hi); dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.lo.iter().copied().zip(self.hi.iter().copied()).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn half_width(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (b - a)).collect()
    }

    /// True when every coordinate lies strictly inside the box.
    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && theta.iter().zip(&self.lo).zip(&self.hi).all(|((t, a), b)| a < t && t < b)
    }

    /// `n` independent draws, n×d.
    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Tensor {
        let mut data = Vec::with_capacity(n * self.dim());
        for _ in 0..n {
            for (a, b) in self.lo.iter().zip(&self.hi) {
                data.push(rng.random_range(*a..*b));
            }
        }
        Tensor::new(vec![n, self.dim()], data).expect("n×d")
    }

    /// Maps unconstrained `raw` (batch×d) into the box: `lo + (hi - lo)·σ(raw)`.
    pub fn squash(&self, tape: &mut Tape, raw: Var) -> Result<Var, LayerError> {
        Ok(tape.squash(raw, &self.lo, &self.hi)?)
    }

    /// Affine map of the box onto `[-1, 1]^d`.
    pub fn normalize(&self, tape: &mut Tape, x: Var) -> Result<Var, LayerError> {
        let scale: Vec<f64> = self.half_width().iter().map(|w| 1.0 / w).collect();
        let shift: Vec<f64> = self.mean().iter().zip(&scale).map(|(m, s)| -m * s).collect();
        Ok(tape.affine_cols(x, &scale, &shift)?)
    }
}
