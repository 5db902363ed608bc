//! The ABC-GAN network: generator G, approximator A, summarizer Z and
//! decoder A_d, trained by alternating `improve_approx` and `improve_accept`
//! phases against a black-box simulator.

mod train;
mod transform;

#[cfg(test)]
mod tests;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::layers::{Activation, ConvSpec, ConvSummarizer, Dense, Init, LayerError, LstmChain, Mlp, PriorSpec};
use crate::mmd::MmdError;
use crate::simulators::SimError;

pub use train::{
    posterior_from_trace, ApproxLoss, IterationRecord, Minibatch, Observed, Posterior, TrainConfig, TrainError,
};
pub use transform::InputTransform;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Mmd(#[from] MmdError),
    #[error("simulator failed: {0}")]
    Simulator(#[from] SimError),
    #[error("non-finite {phase} loss at iteration {iteration}")]
    NonFiniteLoss { phase: &'static str, iteration: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trace is empty")]
    EmptyTrace,
}

/// Parameter groups of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    Generator,
    Approximator,
    Summarizer,
    Decoder,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::Generator,
        Component::Approximator,
        Component::Summarizer,
        Component::Decoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Generator => "generator",
            Component::Approximator => "approximator",
            Component::Summarizer => "summarizer",
            Component::Decoder => "decoder",
        }
    }
}

/// Architecture of the summarizer Z.
#[derive(Clone, Debug, PartialEq)]
pub enum SummarizerSpec {
    /// Dense network over the flattened dataset.
    Mlp { hidden: Vec<usize>, activation: Activation },
    /// Per-sample network averaged over the samples of a dataset, followed
    /// by a linear map. Suited to i.i.d. data.
    DeepSet { hidden: Vec<usize>, activation: Activation },
    /// LSTM chain over a sequence, followed by a linear map.
    Lstm { units: usize },
    /// Convolutional summarizer applied to every matrix of a dataset; the
    /// pooled features are averaged over matrices before the dense head.
    Conv(ConvSpec),
}

/// Full description of an ABC-GAN network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub prior: PriorSpec,
    /// Shape of one summarizer input (a transformed dataset).
    pub input_shape: Vec<usize>,
    pub summary_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub generator_activation: Activation,
    /// Width of an optional standard-normal channel appended to the
    /// generator input.
    pub generator_noise: usize,
    pub approximator_hidden: Vec<usize>,
    pub approximator_activation: Activation,
    /// Width of the standard-normal input of the approximator.
    pub approximator_noise: usize,
    pub summarizer: SummarizerSpec,
    pub decoder_hidden: Vec<usize>,
    pub decoder_activation: Activation,
    pub init: Init,
}

impl ModelSpec {
    /// Small dense networks everywhere, N(0, 1) initialization.
    pub fn dense(prior: PriorSpec, input_shape: Vec<usize>, summary_dim: usize) -> Self {
        let d = prior.dim();
        Self {
            prior,
            input_shape,
            summary_dim,
            generator_hidden: vec![16],
            generator_activation: Activation::Tanh,
            generator_noise: 0,
            approximator_hidden: vec![16],
            approximator_activation: Activation::Tanh,
            approximator_noise: d,
            summarizer: SummarizerSpec::Mlp {
                hidden: vec![16],
                activation: Activation::Tanh,
            },
            decoder_hidden: vec![16],
            decoder_activation: Activation::Tanh,
            init: Init::default(),
        }
    }

    pub fn param_dim(&self) -> usize {
        self.prior.dim()
    }
}

#[derive(Clone, Debug)]
enum Summarizer {
    Mlp(Mlp),
    DeepSet { phi: Mlp, rho: Dense },
    Lstm { chain: LstmChain, head: Dense },
    Conv(ConvSummarizer),
}

#[derive(Clone, Debug)]
pub struct AbcGanModel {
    spec: ModelSpec,
    store: ParamStore,
    generator: Mlp,
    approximator: Mlp,
    summarizer: Summarizer,
    decoder: Mlp,
    groups: [Vec<ParamId>; 4],
}

impl AbcGanModel {
    pub fn new(spec: ModelSpec, rng: &mut impl Rng) -> Result<Self, ModelError> {
        let d = spec.param_dim();
        if spec.summary_dim == 0 {
            return Err(ModelError::Config("summary dimension must be positive".into()));
        }
        if spec.input_shape.is_empty() || spec.input_shape.contains(&0) {
            return Err(ModelError::Config(format!("invalid summarizer input shape {:?}", spec.input_shape)));
        }
        let mut store = ParamStore::new();
        let init = spec.init;
        let generator = Mlp::new(
            &mut store,
            "G",
            d + spec.generator_noise,
            &spec.generator_hidden,
            d,
            spec.generator_activation,
            Activation::Identity,
            init,
            rng,
        );
        let g_ids = generator.params();
        let approximator = Mlp::new(
            &mut store,
            "A",
            d + spec.approximator_noise,
            &spec.approximator_hidden,
            spec.summary_dim,
            spec.approximator_activation,
            Activation::Identity,
            init,
            rng,
        );
        let a_ids = approximator.params();
        let (summarizer, z_ids) = build_summarizer(&spec, &mut store, rng)?;
        let decoder = Mlp::new(
            &mut store,
            "Ad",
            spec.summary_dim,
            &spec.decoder_hidden,
            d,
            spec.decoder_activation,
            Activation::Identity,
            init,
            rng,
        );
        let ad_ids = decoder.params();
        Ok(Self {
            spec,
            store,
            generator,
            approximator,
            summarizer,
            decoder,
            groups: [g_ids, a_ids, z_ids, ad_ids],
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.spec.prior
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn params(&self, component: Component) -> &[ParamId] {
        &self.groups[component as usize]
    }

    /// Scalar parameter count of one component.
    pub fn param_count(&self, component: Component) -> usize {
        self.store.count(self.params(component))
    }

    pub fn snapshot(&self, component: Component) -> Vec<Tensor> {
        self.store.snapshot(self.params(component))
    }

    /// θ = G(β): prior draws (normalized to [−1, 1]) plus optional noise,
    /// mapped through the generator and squashed into the prior box.
    pub fn generate(&self, tape: &mut Tape, prior_draws: &Tensor, noise: &Tensor) -> Result<Var, ModelError> {
        let x = tape.input(prior_draws.clone());
        let mut x = self.spec.prior.normalize(tape, x)?;
        if self.spec.generator_noise > 0 {
            let n = tape.input(noise.clone());
            x = tape.concat(&[x, n], 1)?;
        }
        let raw = self.generator.forward(tape, &self.store, x)?;
        Ok(self.spec.prior.squash(tape, raw)?)
    }

    /// y_A = A(θ, ε).
    pub fn approximate(&self, tape: &mut Tape, theta: Var, noise: &Tensor) -> Result<Var, ModelError> {
        let mut x = self.spec.prior.normalize(tape, theta)?;
        if self.spec.approximator_noise > 0 {
            let n = tape.input(noise.clone());
            x = tape.concat(&[x, n], 1)?;
        }
        Ok(self.approximator.forward(tape, &self.store, x)?)
    }

    /// y = Z(x) for a batch of summarizer inputs, batch×input_shape.
    pub fn summarize(&self, tape: &mut Tape, inputs: Var) -> Result<Var, ModelError> {
        let shape = tape.value(inputs)?.shape().to_vec();
        if shape.len() != self.spec.input_shape.len() + 1 || shape[1..] != self.spec.input_shape[..] {
            return Err(AutodiffError::ShapeMismatch {
                op: "summarize",
                lhs: shape,
                rhs: self.spec.input_shape.clone(),
            }
            .into());
        }
        let batch = shape[0];
        let out = match &self.summarizer {
            Summarizer::Mlp(mlp) => {
                let flat = tape.reshape(inputs, &[batch, mlp.in_dim()])?;
                mlp.forward(tape, &self.store, flat)?
            }
            Summarizer::DeepSet { phi, rho } => {
                let (n, p) = (shape[1], shape[2..].iter().product::<usize>());
                let per_sample = tape.reshape(inputs, &[batch * n, p])?;
                let h = phi.forward(tape, &self.store, per_sample)?;
                let pooled = crate::layers::group_mean(tape, h, n)?;
                rho.forward(tape, &self.store, pooled)?
            }
            Summarizer::Lstm { chain, head } => {
                let seq = tape.reshape(inputs, &[batch, shape[1], chain.input_dim()])?;
                let h = chain.forward(tape, &self.store, seq)?;
                head.forward(tape, &self.store, h)?
            }
            Summarizer::Conv(conv) => {
                let (c, h, w) = (shape[1], shape[2], shape[3]);
                let mats = tape.reshape(inputs, &[batch * c, h, w])?;
                conv.forward_grouped(tape, &self.store, mats, c)?
            }
        };
        Ok(out)
    }

    /// θ_d = A_d(y_A), with the decoder output mapped from [−1, 1] onto the
    /// prior box by a fixed affine map.
    pub fn decode(&self, tape: &mut Tape, y_a: Var) -> Result<Var, ModelError> {
        let raw = self.decoder.forward(tape, &self.store, y_a)?;
        let prior = &self.spec.prior;
        Ok(tape.affine_cols(raw, &prior.half_width(), &prior.mean())?)
    }

    /// Generator output for given prior draws, off tape.
    pub fn sample_theta(&self, prior_draws: &Tensor, noise: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let theta = self.generate(&mut tape, prior_draws, noise)?;
        Ok(tape.value(theta)?.clone())
    }

    /// Summaries of a batch of inputs, off tape.
    pub fn summaries(&self, inputs: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let x = tape.input(inputs.clone());
        let y = self.summarize(&mut tape, x)?;
        Ok(tape.value(y)?.clone())
    }
}

fn build_summarizer(
    spec: &ModelSpec,
    store: &mut ParamStore,
    rng: &mut impl Rng,
) -> Result<(Summarizer, Vec<ParamId>), ModelError> {
    let shape = &spec.input_shape;
    let init = spec.init;
    let out = spec.summary_dim;
    let z = match &spec.summarizer {
        SummarizerSpec::Mlp { hidden, activation } => {
            let flat = shape.iter().product();
            Summarizer::Mlp(Mlp::new(store, "Z", flat, hidden, out, *activation, Activation::Identity, init, rng))
        }
        SummarizerSpec::DeepSet { hidden, activation } => {
            let Some((&last, inner)) = hidden.split_last() else {
                return Err(ModelError::Config("deep-set summarizer needs at least one hidden layer".into()));
            };
            if shape.len() < 2 {
                return Err(ModelError::Config(format!("deep-set input must be samples×features, got {shape:?}")));
            }
            let p = shape[1..].iter().product();
            let phi = Mlp::new(store, "Z.phi", p, inner, last, *activation, *activation, init, rng);
            let rho = Dense::new(store, "Z.rho", last, out, Activation::Identity, init, rng);
            Summarizer::DeepSet { phi, rho }
        }
        SummarizerSpec::Lstm { units } => {
            if shape.len() != 2 {
                return Err(ModelError::Config(format!("LSTM input must be steps×features, got {shape:?}")));
            }
            let chain = LstmChain::new(store, "Z.lstm", shape[1], *units, init, rng);
            let head = Dense::new(store, "Z.head", *units, out, Activation::Identity, init, rng);
            Summarizer::Lstm { chain, head }
        }
        SummarizerSpec::Conv(conv) => {
            if shape.len() != 3 {
                return Err(ModelError::Config(format!("conv input must be matrices×rows×cols, got {shape:?}")));
            }
            if conv.outputs != out {
                return Err(ModelError::Config(format!(
                    "conv summarizer emits {} features but summary dimension is {out}",
                    conv.outputs
                )));
            }
            Summarizer::Conv(ConvSummarizer::new(store, "Z.conv", (shape[1], shape[2]), *conv, init, rng)?)
        }
    };
    let ids = match &z {
        Summarizer::Mlp(m) => m.params(),
        Summarizer::DeepSet { phi, rho } => phi.params().into_iter().chain(rho.params()).collect(),
        Summarizer::Lstm { chain, head } => chain.params().into_iter().chain(head.params()).collect(),
        Summarizer::Conv(c) => c.params(),
    };
    Ok((z, ids))
}
