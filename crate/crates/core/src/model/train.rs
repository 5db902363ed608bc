use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use super::{AbcGanModel, Component, InputTransform, ModelError};
use crate::autodiff::{RmsProp, Tape, Tensor, Var};
use crate::mmd::{mmd_unbiased, KernelSpec};
use crate::rng::{derive_seed, rng_from, stream_seed, Stream};
use crate::simulators::{simulate_batch, Simulator};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    /// Minibatch size m: generator samples and simulator calls per iteration.
    pub minibatch: usize,
    pub iterations: usize,
    /// improve_approx steps per improve_accept step.
    pub approx_rounds: usize,
    /// Weight λ_θ of the decoder loss.
    pub decoder_weight: f64,
    pub seed: u64,
    pub kernel: KernelSpec,
    /// `size` argument of every simulator call.
    pub sim_size: usize,
    /// Components whose parameters are never updated.
    pub frozen: Vec<Component>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            decay: 0.9,
            eps: 1e-8,
            minibatch: 50,
            iterations: 1000,
            approx_rounds: 1,
            decoder_weight: 1.0,
            seed: 0,
            kernel: KernelSpec::median(),
            sim_size: 1,
            frozen: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.minibatch < 2 {
            return bad(format!("minibatch must be at least 2, got {}", self.minibatch));
        }
        if self.approx_rounds == 0 {
            return bad("approx_rounds must be at least 1".into());
        }
        if !(self.decoder_weight >= 0.0 && self.decoder_weight.is_finite()) {
            return bad(format!("decoder weight must be non-negative, got {}", self.decoder_weight));
        }
        if self.sim_size == 0 {
            return bad("sim_size must be positive".into());
        }
        RmsProp::new(self.lr, self.decay, self.eps)?;
        Ok(())
    }

    pub fn optimizer(&self) -> Result<RmsProp, ModelError> {
        Ok(RmsProp::new(self.lr, self.decay, self.eps)?)
    }

    fn trains(&self, c: Component) -> bool {
        !self.frozen.contains(&c)
    }
}

/// Observed datasets after the input transform, stacked along the leading
/// axis. Each row is one unit comparable to a single simulator output.
#[derive(Clone, Debug, PartialEq)]
pub struct Observed {
    inputs: Tensor,
}

impl Observed {
    pub fn new(inputs: Tensor) -> Result<Self, ModelError> {
        if inputs.ndim() < 2 || inputs.rows() == 0 {
            return Err(ModelError::Config(format!(
                "observed data must hold at least one unit, got shape {:?}",
                inputs.shape()
            )));
        }
        Ok(Self { inputs })
    }

    /// Applies `transform` to raw units (units×raw shape).
    pub fn from_raw(units: &Tensor, transform: &InputTransform) -> Result<Self, ModelError> {
        Self::new(transform.apply_batch(units))
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    /// Units compared against one minibatch: a random subset of size `m`
    /// when more are available, all of them otherwise, and a single unit
    /// twice (the unbiased MMD needs two samples per side).
    pub(crate) fn select(&self, m: usize, rng: &mut impl Rng) -> Tensor {
        let n = self.len();
        let idx: Vec<usize> = if n > m {
            sample(rng, n, m).into_vec()
        } else if n == 1 {
            vec![0, 0]
        } else {
            (0..n).collect()
        };
        self.inputs.select_rows(&idx)
    }
}

/// Everything drawn for one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub iteration: usize,
    /// Generator input β: prior draws, m×d.
    pub prior_draws: Tensor,
    pub generator_noise: Tensor,
    /// Approximator noise ε, m×k.
    pub approx_noise: Tensor,
    /// Generator output θ, m×d.
    pub theta: Tensor,
    /// Transformed simulator outputs S(θ), m×input shape.
    pub sim_inputs: Tensor,
    /// Transformed observed units, n×input shape.
    pub observed_inputs: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApproxLoss {
    pub l_a: f64,
    pub l_theta: f64,
}

/// One training iteration: the generated θ and the losses of every phase.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub theta: Tensor,
    /// One entry per improve_approx round.
    pub approx: Vec<ApproxLoss>,
    pub l_g: f64,
    pub elapsed_s: f64,
}

impl IterationRecord {
    /// Per-dimension mean of the minibatch θ.
    pub fn theta_mean(&self) -> Vec<f64> {
        column_stats(&self.theta).0
    }

    pub fn last_approx(&self) -> ApproxLoss {
        *self.approx.last().expect("at least one approx round")
    }
}

/// Training stopped early; `trace` holds every completed iteration.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("training failed after {} iterations: {error}", trace.len())]
pub struct TrainError {
    #[source]
    pub error: ModelError,
    pub trace: Vec<IterationRecord>,
}

/// Pooled trailing-window posterior samples with per-dimension summaries
/// (population standard deviation).
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub samples: Tensor,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Pools θ from the last `last_k` iterations.
pub fn posterior_from_trace(trace: &[IterationRecord], last_k: usize) -> Result<Posterior, ModelError> {
    if trace.is_empty() || last_k == 0 {
        return Err(ModelError::EmptyTrace);
    }
    if last_k > trace.len() {
        return Err(ModelError::Config(format!(
            "window of {last_k} iterations exceeds trace length {}",
            trace.len()
        )));
    }
    let tail = &trace[trace.len() - last_k..];
    let d = tail[0].theta.row_len();
    let mut data = Vec::new();
    for r in tail {
        data.extend_from_slice(r.theta.data());
    }
    let samples = Tensor::new(vec![data.len() / d, d], data)?;
    let (mean, std) = column_stats(&samples);
    Ok(Posterior { samples, mean, std })
}

pub(crate) fn column_stats(t: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (t.rows() as f64, t.row_len());
    let mut mean = vec![0.0; d];
    for i in 0..t.rows() {
        for (m, v) in mean.iter_mut().zip(t.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for i in 0..t.rows() {
        for ((s, v), m) in var.iter_mut().zip(t.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    (mean, var.into_iter().map(|s| (s / n).sqrt()).collect())
}

fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).expect("rows×cols")
}

fn scalar(tape: &Tape, v: Var) -> Result<f64, ModelError> {
    Ok(tape.value(v)?.data()[0])
}

/// Loss graph of the improve_approx phase.
pub(crate) struct ApproxGraph {
    pub tape: Tape,
    pub loss: Var,
    pub losses: ApproxLoss,
}

/// Loss graph of the improve_accept phase.
pub(crate) struct AcceptGraph {
    pub tape: Tape,
    pub loss: Var,
}

impl AbcGanModel {
    /// Draws the generator input and approximator noise, runs the generator,
    /// calls the simulator once per θ row and picks the observed units.
    pub fn sample_minibatch(
        &self,
        simulator: &dyn Simulator,
        transform: &InputTransform,
        observed: &Observed,
        cfg: &TrainConfig,
        iteration: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Minibatch, ModelError> {
        let m = cfg.minibatch;
        let prior_draws = self.prior().sample(rng, m);
        let generator_noise = normal_matrix(rng, m, self.spec.generator_noise);
        let approx_noise = normal_matrix(rng, m, self.spec.approximator_noise);
        let theta = self.sample_theta(&prior_draws, &generator_noise)?;
        let sim_seed = stream_seed(cfg.seed, Stream::Simulator);
        let seeds: Vec<u64> = (0..m).map(|row| derive_seed(sim_seed, iteration as u64, row as u64)).collect();
        let raw = simulate_batch(simulator, &theta, &seeds, cfg.sim_size)?;
        let sim_inputs = transform.apply_batch(&raw);
        let observed_inputs = observed.select(m, rng);
        Ok(Minibatch {
            iteration,
            prior_draws,
            generator_noise,
            approx_noise,
            theta,
            sim_inputs,
            observed_inputs,
        })
    }

    /// `L_A + λ_θ·L_θ` with `L_A = MMD(y_A, y_S)` and
    /// `L_θ = mean ‖θ − θ_d‖₂`. θ enters as a constant.
    pub(crate) fn approx_graph(&self, batch: &Minibatch, cfg: &TrainConfig) -> Result<ApproxGraph, ModelError> {
        let mut tape = Tape::new();
        let theta = tape.input(batch.theta.clone());
        let y_a = self.approximate(&mut tape, theta, &batch.approx_noise)?;
        let x_s = tape.input(batch.sim_inputs.clone());
        let y_s = self.summarize(&mut tape, x_s)?;
        let theta_d = self.decode(&mut tape, y_a)?;
        let bw = cfg.kernel.resolve(tape.value(y_a)?, tape.value(y_s)?)?.bandwidth;
        let l_a = mmd_unbiased(&mut tape, y_a, y_s, bw)?;
        let diff = tape.sub(theta_d, theta)?;
        let norms = tape.l2norm_rows(diff)?;
        let l_theta = tape.mean(norms)?;
        let loss = if cfg.decoder_weight > 0.0 {
            let weighted = tape.scale(l_theta, cfg.decoder_weight)?;
            tape.add(l_a, weighted)?
        } else {
            l_a
        };
        let losses = ApproxLoss {
            l_a: scalar(&tape, l_a)?,
            l_theta: scalar(&tape, l_theta)?,
        };
        Ok(ApproxGraph { tape, loss, losses })
    }

    /// `L_G = MMD(y_A, y_O)` with y_O a constant, so only the generator and
    /// approximator lie on the gradient path.
    pub(crate) fn accept_graph(&self, batch: &Minibatch, cfg: &TrainConfig) -> Result<AcceptGraph, ModelError> {
        let y_o = self.summaries(&batch.observed_inputs)?;
        let mut tape = Tape::new();
        let theta = self.generate(&mut tape, &batch.prior_draws, &batch.generator_noise)?;
        let y_a = self.approximate(&mut tape, theta, &batch.approx_noise)?;
        let bw = cfg.kernel.resolve(tape.value(y_a)?, &y_o)?.bandwidth;
        let y_o = tape.input(y_o);
        let loss = mmd_unbiased(&mut tape, y_a, y_o, bw)?;
        Ok(AcceptGraph { tape, loss })
    }

    /// Gradients of the improve_approx objective, accumulated into the
    /// parameter store without stepping.
    pub fn approx_gradients(&mut self, batch: &Minibatch, cfg: &TrainConfig) -> Result<ApproxLoss, ModelError> {
        let g = self.approx_graph(batch, cfg)?;
        self.store.zero_grads();
        g.tape.backward_into(g.loss, &mut self.store)?;
        Ok(g.losses)
    }

    /// Gradients of the improve_accept objective, accumulated into the
    /// parameter store without stepping.
    pub fn accept_gradients(&mut self, batch: &Minibatch, cfg: &TrainConfig) -> Result<f64, ModelError> {
        let g = self.accept_graph(batch, cfg)?;
        self.store.zero_grads();
        g.tape.backward_into(g.loss, &mut self.store)?;
        scalar(&g.tape, g.loss)
    }

    /// Objective values only; used for finite-difference checks.
    pub fn approx_objective(&self, batch: &Minibatch, cfg: &TrainConfig) -> Result<f64, ModelError> {
        let g = self.approx_graph(batch, cfg)?;
        scalar(&g.tape, g.loss)
    }

    pub fn accept_objective(&self, batch: &Minibatch, cfg: &TrainConfig) -> Result<f64, ModelError> {
        let g = self.accept_graph(batch, cfg)?;
        scalar(&g.tape, g.loss)
    }

    fn step(&mut self, components: &[Component], cfg: &TrainConfig, opt: &RmsProp) -> Result<(), ModelError> {
        for &c in components {
            if !cfg.trains(c) {
                continue;
            }
            for &id in &self.groups[c as usize] {
                opt.step(self.store.get_mut(id))?;
            }
        }
        self.store.zero_grads();
        Ok(())
    }

    /// One RMSProp step on φ_A, φ_Z, φ_Ad descending `L_A + λ_θ·L_θ`.
    pub fn improve_approx_step(
        &mut self,
        batch: &Minibatch,
        cfg: &TrainConfig,
        opt: &RmsProp,
    ) -> Result<ApproxLoss, ModelError> {
        let losses = self.approx_gradients(batch, cfg)?;
        if !(losses.l_a.is_finite() && losses.l_theta.is_finite()) {
            return Err(ModelError::NonFiniteLoss {
                phase: "improve_approx",
                iteration: batch.iteration,
            });
        }
        self.step(&[Component::Approximator, Component::Summarizer, Component::Decoder], cfg, opt)?;
        Ok(losses)
    }

    /// One RMSProp step on φ_G descending `L_G`.
    pub fn improve_accept_step(&mut self, batch: &Minibatch, cfg: &TrainConfig, opt: &RmsProp) -> Result<f64, ModelError> {
        let l_g = self.accept_gradients(batch, cfg)?;
        if !l_g.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                phase: "improve_accept",
                iteration: batch.iteration,
            });
        }
        self.step(&[Component::Generator], cfg, opt)?;
        Ok(l_g)
    }

    /// Runs `cfg.iterations` rounds of sampling, improve_approx and
    /// improve_accept. On failure the completed part of the trace is
    /// returned with the error.
    pub fn train(
        &mut self,
        simulator: &dyn Simulator,
        transform: &InputTransform,
        observed: &Observed,
        cfg: &TrainConfig,
    ) -> Result<Vec<IterationRecord>, TrainError> {
        let mut trace = Vec::with_capacity(cfg.iterations);
        let fail = |error, trace| TrainError { error, trace };
        if let Err(e) = self.check_inputs(simulator, transform, observed, cfg) {
            return Err(fail(e, trace));
        }
        let opt = match cfg.optimizer() {
            Ok(o) => o,
            Err(e) => return Err(fail(e, trace)),
        };
        let mut rng = rng_from(stream_seed(cfg.seed, Stream::Train));
        let start = Instant::now();
        for iteration in 0..cfg.iterations {
            match self.iterate(simulator, transform, observed, cfg, &opt, iteration, &mut rng) {
                Ok((theta, approx, l_g)) => trace.push(IterationRecord {
                    iteration,
                    theta,
                    approx,
                    l_g,
                    elapsed_s: start.elapsed().as_secs_f64(),
                }),
                Err(e) => return Err(fail(e, trace)),
            }
        }
        Ok(trace)
    }

    #[allow(clippy::too_many_arguments)]
    fn iterate(
        &mut self,
        simulator: &dyn Simulator,
        transform: &InputTransform,
        observed: &Observed,
        cfg: &TrainConfig,
        opt: &RmsProp,
        iteration: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, Vec<ApproxLoss>, f64), ModelError> {
        let batch = self.sample_minibatch(simulator, transform, observed, cfg, iteration, rng)?;
        let approx = (0..cfg.approx_rounds)
            .map(|_| self.improve_approx_step(&batch, cfg, opt))
            .collect::<Result<Vec<_>, _>>()?;
        let l_g = self.improve_accept_step(&batch, cfg, opt)?;
        Ok((batch.theta, approx, l_g))
    }

    fn check_inputs(
        &self,
        simulator: &dyn Simulator,
        transform: &InputTransform,
        observed: &Observed,
        cfg: &TrainConfig,
    ) -> Result<(), ModelError> {
        cfg.validate()?;
        if simulator.param_dim() != self.spec.param_dim() {
            return Err(ModelError::Config(format!(
                "simulator takes {} parameters but the prior has {}",
                simulator.param_dim(),
                self.spec.param_dim()
            )));
        }
        let sim_shape = transform.output_shape(&simulator.output_shape(cfg.sim_size));
        if sim_shape != self.spec.input_shape || observed.inputs.shape()[1..] != self.spec.input_shape[..] {
            return Err(ModelError::Config(format!(
                "summarizer expects {:?}, simulator yields {:?}, observed units are {:?}",
                self.spec.input_shape,
                sim_shape,
                &observed.inputs.shape()[1..]
            )));
        }
        Ok(())
    }
}
