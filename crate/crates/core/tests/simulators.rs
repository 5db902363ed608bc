use abcgan_core::autodiff::Tensor;
use abcgan_core::rng::rng_from;
use abcgan_core::simulators::{
    simulate_batch, Dcc, DccConfig, Glm, MixtureNormal, Mvn, Ricker, SimError, Simulator, UnivariateNormal,
};
use proptest::prelude::*;

fn small_dcc() -> Dcc {
    Dcc::new(DccConfig {
        centers: 3,
        attendees: 12,
        strains: 5,
        ..DccConfig::default()
    })
    .unwrap()
}

fn all_simulators() -> Vec<Box<dyn Simulator>> {
    vec![
        Box::new(UnivariateNormal),
        Box::new(MixtureNormal::default()),
        Box::new(Mvn::default()),
        Box::new(Glm::new(16).unwrap()),
        Box::new(Ricker::default()),
        Box::new(small_dcc()),
    ]
}

fn prior_draw(sim: &dyn Simulator, seed: u64) -> Vec<f64> {
    sim.prior().sample(&mut rng_from(seed), 1).row(0).to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_are_deterministic_finite_and_shaped(seed in any::<u64>(), size in 1usize..30) {
        for sim in all_simulators() {
            let theta = prior_draw(sim.as_ref(), seed);
            let a = sim.simulate(&theta, seed, size).unwrap();
            let b = sim.simulate(&theta, seed, size).unwrap();
            let shape = sim.output_shape(size);
            prop_assert_eq!(a.shape(), shape.as_slice(), "{}", sim.name());
            prop_assert!(a.data().iter().all(|v| v.is_finite()), "{}", sim.name());
            prop_assert_eq!(a, b, "{}", sim.name());
        }
    }

    #[test]
    fn ricker_counts_are_non_negative_integers(seed in any::<u64>(), size in 1usize..60) {
        let sim = Ricker::default();
        let x = sim.simulate(&prior_draw(&sim, seed), seed, size).unwrap();
        prop_assert!(x.data().iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
    }

    #[test]
    fn dcc_entries_are_binary(seed in any::<u64>()) {
        let sim = small_dcc();
        let x = sim.simulate(&prior_draw(&sim, seed), seed, 0).unwrap();
        prop_assert!(x.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn different_seeds_give_different_data() {
    for sim in all_simulators() {
        let theta = prior_draw(sim.as_ref(), 5);
        let a = sim.simulate(&theta, 1, 20).unwrap();
        let b = sim.simulate(&theta, 2, 20).unwrap();
        assert_ne!(a, b, "{}", sim.name());
    }
}

#[test]
fn wrong_parameter_count_is_rejected_by_batch() {
    for sim in all_simulators() {
        let d = sim.param_dim() + 1;
        let thetas = Tensor::new(vec![2, d], vec![0.5; 2 * d]).unwrap();
        let err = simulate_batch(sim.as_ref(), &thetas, &[1, 2], 4).unwrap_err();
        assert!(matches!(err, SimError::Row { row: 0, .. }), "{}: {err}", sim.name());
    }
}

#[test]
fn batch_rows_equal_single_calls() {
    for sim in all_simulators() {
        let thetas = sim.prior().sample(&mut rng_from(9), 3);
        let seeds = [11, 12, 13];
        let batch = simulate_batch(sim.as_ref(), &thetas, &seeds, 7).unwrap();
        let mut shape = vec![3];
        shape.extend(sim.output_shape(7));
        assert_eq!(batch.shape(), shape.as_slice(), "{}", sim.name());
        let per_row = batch.data().len() / 3;
        for (i, &seed) in seeds.iter().enumerate() {
            let single = sim.simulate(thetas.row(i), seed, 7).unwrap();
            assert_eq!(&batch.data()[i * per_row..(i + 1) * per_row], single.data(), "{}", sim.name());
        }
    }
}
