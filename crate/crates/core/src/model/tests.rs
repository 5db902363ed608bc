use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{central_difference, max_relative_error};
use crate::mmd::KernelSpec;
use crate::simulators::{MixtureNormal, Ricker, SimError, Simulator, UnivariateNormal};

/// Returns θ plus a little seeded noise, repeated `size` times.
struct Shift {
    calls: AtomicUsize,
}

impl Shift {
    fn new() -> Self {
        Self { calls: AtomicUsize::new(0) }
    }
}

impl Simulator for Shift {
    fn name(&self) -> &'static str {
        "shift"
    }
    fn param_dim(&self) -> usize {
        2
    }
    fn prior(&self) -> PriorSpec {
        PriorSpec::uniform_box(2, -1.0, 1.0).unwrap()
    }
    fn output_shape(&self, size: usize) -> Vec<usize> {
        vec![size, 2]
    }
    fn simulate(&self, theta: &[f64], seed: u64, size: usize) -> Result<Tensor, SimError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let jitter = (seed % 1000) as f64 / 1000.0 - 0.5;
        let data = (0..size).flat_map(|_| theta.iter().map(move |t| t + 0.1 * jitter)).collect();
        Ok(Tensor::new(vec![size, 2], data).unwrap())
    }
}

fn shift_spec() -> ModelSpec {
    let mut spec = ModelSpec::dense(PriorSpec::uniform_box(2, -1.0, 1.0).unwrap(), vec![1, 2], 3);
    spec.init = Init::Normal { std: 0.5 };
    spec
}

fn cfg(iterations: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        minibatch: 8,
        iterations,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn observed() -> Observed {
    Observed::new(Tensor::new(vec![4, 1, 2], vec![0.5, -0.5, 0.4, -0.4, 0.6, -0.6, 0.5, -0.3]).unwrap()).unwrap()
}

fn model(seed: u64) -> AbcGanModel {
    AbcGanModel::new(shift_spec(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn batch(m: &AbcGanModel, c: &TrainConfig) -> Minibatch {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    m.sample_minibatch(&Shift::new(), &InputTransform::Identity, &observed(), c, 0, &mut rng)
        .unwrap()
}

#[test]
fn minibatch_shapes() {
    let m = model(0);
    let c = cfg(1);
    let b = batch(&m, &c);
    assert_eq!(b.prior_draws.shape(), &[8, 2]);
    assert_eq!(b.approx_noise.shape(), &[8, 2]);
    assert_eq!(b.generator_noise.shape(), &[8, 0]);
    assert_eq!(b.theta.shape(), &[8, 2]);
    assert_eq!(b.sim_inputs.shape(), &[8, 1, 2]);
    assert_eq!(b.observed_inputs.shape(), &[4, 1, 2]);
    assert!(b.theta.data().iter().all(|t| (-1.0..=1.0).contains(t)));
}

#[test]
fn observed_selection_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let one = Observed::new(Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
    assert_eq!(one.select(8, &mut rng).data(), &[1.0, 2.0, 1.0, 2.0]);
    let many = Observed::new(Tensor::new(vec![20, 1, 1], (0..20).map(f64::from).collect()).unwrap()).unwrap();
    let s = many.select(5, &mut rng);
    assert_eq!(s.shape(), &[5, 1, 1]);
    let mut picked: Vec<f64> = s.data().to_vec();
    picked.sort_by(f64::total_cmp);
    picked.dedup();
    assert_eq!(picked.len(), 5);
    assert!(Observed::new(Tensor::zeros(&[0, 2])).is_err());
}

#[test]
fn training_is_deterministic_under_seed() {
    let run = || {
        let mut m = model(4);
        m.train(&Shift::new(), &InputTransform::Identity, &observed(), &cfg(5)).unwrap()
    };
    let (a, b) = (run(), run());
    let strip = |t: Vec<IterationRecord>| -> Vec<(Tensor, Vec<ApproxLoss>, f64)> {
        t.into_iter().map(|r| (r.theta, r.approx, r.l_g)).collect()
    };
    assert_eq!(strip(a), strip(b));
}

#[test]
fn one_simulator_call_per_generated_theta() {
    let sim = Shift::new();
    let mut m = model(1);
    let trace = m.train(&sim, &InputTransform::Identity, &observed(), &cfg(7)).unwrap();
    assert_eq!(trace.len(), 7);
    assert_eq!(sim.calls.load(Ordering::SeqCst), 7 * 8);
}

#[test]
fn zero_iterations_leave_parameters_untouched() {
    let mut m = model(2);
    let before: Vec<Vec<Tensor>> = Component::ALL.iter().map(|&c| m.snapshot(c)).collect();
    let trace = m.train(&Shift::new(), &InputTransform::Identity, &observed(), &cfg(0)).unwrap();
    assert!(trace.is_empty());
    let after: Vec<Vec<Tensor>> = Component::ALL.iter().map(|&c| m.snapshot(c)).collect();
    assert_eq!(before, after);
}

#[test]
fn approx_phase_leaves_generator_alone() {
    let mut m = model(3);
    let c = cfg(1);
    let b = batch(&m, &c);
    let g = m.snapshot(Component::Generator);
    let others: Vec<Vec<Tensor>> = [Component::Approximator, Component::Summarizer, Component::Decoder]
        .iter()
        .map(|&c| m.snapshot(c))
        .collect();
    m.improve_approx_step(&b, &c, &c.optimizer().unwrap()).unwrap();
    assert_eq!(m.snapshot(Component::Generator), g);
    for (i, &comp) in [Component::Approximator, Component::Summarizer, Component::Decoder].iter().enumerate() {
        assert_ne!(m.snapshot(comp), others[i], "{} did not move", comp.name());
    }
}

#[test]
fn accept_phase_moves_only_generator() {
    let mut m = model(3);
    let c = cfg(1);
    let b = batch(&m, &c);
    let before: Vec<Vec<Tensor>> = Component::ALL.iter().map(|&c| m.snapshot(c)).collect();
    m.improve_accept_step(&b, &c, &c.optimizer().unwrap()).unwrap();
    assert_ne!(m.snapshot(Component::Generator), before[0]);
    for (i, &comp) in Component::ALL.iter().enumerate().skip(1) {
        assert_eq!(m.snapshot(comp), before[i], "{} moved", comp.name());
    }
    assert!(m.store().iter().all(|(_, p)| p.grad().data().iter().all(|&g| g == 0.0)));
}

#[test]
fn frozen_components_stay_fixed() {
    let mut m = model(5);
    let mut c = cfg(3);
    c.frozen = vec![Component::Summarizer, Component::Generator];
    let z = m.snapshot(Component::Summarizer);
    let g = m.snapshot(Component::Generator);
    m.train(&Shift::new(), &InputTransform::Identity, &observed(), &c).unwrap();
    assert_eq!(m.snapshot(Component::Summarizer), z);
    assert_eq!(m.snapshot(Component::Generator), g);
}

#[test]
fn approx_rounds_are_recorded() {
    let mut m = model(6);
    let mut c = cfg(2);
    c.approx_rounds = 3;
    let trace = m.train(&Shift::new(), &InputTransform::Identity, &observed(), &c).unwrap();
    assert!(trace.iter().all(|r| r.approx.len() == 3));
}

#[test]
fn accept_gradient_reaches_every_generator_parameter() {
    let mut m = model(7);
    let c = cfg(1);
    let b = batch(&m, &c);
    m.accept_gradients(&b, &c).unwrap();
    for &id in m.params(Component::Generator) {
        let g = m.store().get(id).grad();
        assert!(g.data().iter().any(|&v| v != 0.0), "{} has zero gradient", m.store().get(id).name());
    }
    for comp in [Component::Summarizer, Component::Decoder] {
        for &id in m.params(comp) {
            assert!(m.store().get(id).grad().data().iter().all(|&v| v == 0.0));
        }
    }
}

fn check_component_gradients(m: &mut AbcGanModel, c: &TrainConfig, b: &Minibatch, accept: bool, comps: &[Component]) {
    if accept {
        m.accept_gradients(b, c).unwrap();
    } else {
        m.approx_gradients(b, c).unwrap();
    }
    for &comp in comps {
        for &id in m.params(comp).to_vec().iter() {
            let analytic = m.store().get(id).grad().clone();
            let start = m.store().get(id).value().clone();
            let mut probe = m.clone();
            let numeric = central_difference(&start, 1e-5, |v| {
                *probe.store_mut().get_mut(id).value_mut() = v.clone();
                if accept {
                    probe.accept_objective(b, c).unwrap()
                } else {
                    probe.approx_objective(b, c).unwrap()
                }
            });
            let err = max_relative_error(&analytic, &numeric, 1e-6);
            assert!(err < 1e-4, "{} {}: relative error {err}", comp.name(), m.store().get(id).name());
        }
    }
}

#[test]
fn full_network_gradients_match_finite_differences() {
    let mut m = model(8);
    let mut c = cfg(1);
    c.kernel = KernelSpec::fixed(1.5).unwrap();
    c.decoder_weight = 0.7;
    let b = batch(&m, &c);
    check_component_gradients(
        &mut m,
        &c,
        &b,
        false,
        &[Component::Approximator, Component::Summarizer, Component::Decoder],
    );
    check_component_gradients(&mut m, &c, &b, true, &[Component::Generator]);
}

#[test]
fn lstm_and_deepset_summarizers_train() {
    let ricker = Ricker::default();
    let mut spec = ModelSpec::dense(ricker.prior(), vec![10, 1], 4);
    spec.summarizer = SummarizerSpec::Lstm { units: 5 };
    spec.init = Init::FanIn;
    let mut m = AbcGanModel::new(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let obs_raw = ricker.simulate(&[3.8, 0.3, 10.0], 1, 10).unwrap().reshape(&[1, 10, 1]).unwrap();
    let obs = Observed::from_raw(&obs_raw, &InputTransform::Log1p).unwrap();
    let mut c = cfg(3);
    c.minibatch = 4;
    c.sim_size = 10;
    let trace = m.train(&ricker, &InputTransform::Log1p, &obs, &c).unwrap();
    assert_eq!(trace.len(), 3);

    let normal = UnivariateNormal;
    let mut spec = ModelSpec::dense(normal.prior(), vec![20, 1], 3);
    spec.summarizer = SummarizerSpec::DeepSet {
        hidden: vec![8, 8],
        activation: Activation::Tanh,
    };
    let mut m = AbcGanModel::new(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let obs_raw = normal.simulate(&[1.0, 2.0], 0, 20).unwrap().reshape(&[1, 20, 1]).unwrap();
    let obs = Observed::new(obs_raw).unwrap();
    let mut c = cfg(2);
    c.sim_size = 20;
    m.train(&normal, &InputTransform::Identity, &obs, &c).unwrap();
}

#[test]
fn deepset_summary_ignores_sample_order() {
    let mut spec = ModelSpec::dense(UnivariateNormal.prior(), vec![5, 1], 3);
    spec.summarizer = SummarizerSpec::DeepSet {
        hidden: vec![6],
        activation: Activation::Tanh,
    };
    let m = AbcGanModel::new(spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let a = Tensor::new(vec![1, 5, 1], vec![0.1, 0.7, -2.0, 3.0, 1.1]).unwrap();
    let b = Tensor::new(vec![1, 5, 1], vec![3.0, 1.1, 0.1, -2.0, 0.7]).unwrap();
    let (sa, sb) = (m.summaries(&a).unwrap(), m.summaries(&b).unwrap());
    for (x, y) in sa.data().iter().zip(sb.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn shape_mismatches_are_rejected() {
    let mut m = model(0);
    let bad_obs = Observed::new(Tensor::zeros(&[3, 1, 3])).unwrap();
    let err = m.train(&Shift::new(), &InputTransform::Identity, &bad_obs, &cfg(1)).unwrap_err();
    assert!(matches!(err.error, ModelError::Config(_)));
    let err = m
        .train(&MixtureNormal::default(), &InputTransform::Identity, &observed(), &cfg(1))
        .unwrap_err();
    assert!(matches!(err.error, ModelError::Config(_)));
    let mut c = cfg(1);
    c.minibatch = 1;
    assert!(m.train(&Shift::new(), &InputTransform::Identity, &observed(), &c).is_err());
}

struct Failing;

impl Simulator for Failing {
    fn name(&self) -> &'static str {
        "failing"
    }
    fn param_dim(&self) -> usize {
        2
    }
    fn prior(&self) -> PriorSpec {
        PriorSpec::uniform_box(2, -1.0, 1.0).unwrap()
    }
    fn output_shape(&self, size: usize) -> Vec<usize> {
        vec![size, 2]
    }
    fn simulate(&self, theta: &[f64], seed: u64, size: usize) -> Result<Tensor, SimError> {
        if seed.is_multiple_of(3) {
            return Err(SimError::invalid("failing", theta, "unlucky seed"));
        }
        Ok(Tensor::new(vec![size, 2], theta.repeat(size)).unwrap())
    }
}

#[test]
fn simulator_failure_returns_partial_trace() {
    let mut m = model(0);
    let err = m.train(&Failing, &InputTransform::Identity, &observed(), &cfg(50)).unwrap_err();
    assert!(matches!(err.error, ModelError::Simulator(_)));
    assert!(err.trace.len() < 50);
}

#[test]
fn posterior_window() {
    let rec = |i: usize, v: f64| IterationRecord {
        iteration: i,
        theta: Tensor::new(vec![2, 1], vec![v, v + 2.0]).unwrap(),
        approx: vec![ApproxLoss { l_a: 0.0, l_theta: 0.0 }],
        l_g: 0.0,
        elapsed_s: 0.0,
    };
    let trace = vec![rec(0, 100.0), rec(1, 0.0), rec(2, 2.0)];
    let p = posterior_from_trace(&trace, 2).unwrap();
    assert_eq!(p.samples.shape(), &[4, 1]);
    assert_eq!(p.mean, vec![2.0]);
    assert!((p.std[0] - 2f64.sqrt()).abs() < 1e-12);
    assert!(posterior_from_trace(&trace, 4).is_err());
    assert!(matches!(posterior_from_trace(&[], 1), Err(ModelError::EmptyTrace)));
}

#[test]
fn generator_learns_a_point_mass() {
    // Observed data sit at θ = (0.5, −0.5); the trained generator should
    // move its mean there from the initial spread over the box.
    let mut m = model(9);
    let mut c = cfg(2000);
    c.minibatch = 16;
    c.lr = 5e-3;
    let trace = m.train(&Shift::new(), &InputTransform::Identity, &observed(), &c).unwrap();
    let p = posterior_from_trace(&trace, 100).unwrap();
    assert!((p.mean[0] - 0.5).abs() < 0.15 && (p.mean[1] + 0.5).abs() < 0.15, "{:?}", p.mean);
}
