use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttpinn_core::check::{gradient_check, gradient_suite};
use ttpinn_core::{
    loss_and_grad, AdamConfig, AdamState, HelmholtzProblem, MlpSpec, Pinn, Samples, SamplingConfig, TtShape,
};

fn interior(seed: u64, n: usize) -> Samples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let residual = (0..n).map(|_| (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95))).collect();
    Samples { residual, ..Samples::default() }
}

#[test]
fn full_loss_gradients_match_central_differences() {
    let suite = gradient_suite(0);
    assert!(suite.passed, "{}", suite.detail);
}

#[test]
fn uneven_tt_shape_gradients_match_central_differences() {
    let shape = TtShape::new(vec![2, 4], vec![4, 2], vec![1, 2, 3, 2, 1]).unwrap();
    let net = Pinn::init(MlpSpec::tt(shape, 2), 11).unwrap();
    let check = gradient_check(&net, &HelmholtzProblem::benchmark(), &interior(11, 5), 1e-6).unwrap();
    assert!(check.max_rel <= 1e-5, "{check:?}");
}

#[test]
fn soft_boundary_terms_are_differentiated() {
    let mut spec = MlpSpec::dense(6, 1);
    spec.hard_bc = false;
    let net = Pinn::init(spec, 2).unwrap();
    let problem = HelmholtzProblem::benchmark();
    let config = SamplingConfig { residual_points: 4, boundary_points: 4, initial_points: 3, seed: 2 };
    let samples = ttpinn_core::sample(&config, &problem);
    let check = gradient_check(&net, &problem, &samples, 1e-6).unwrap();
    assert!(check.max_rel <= 1e-5, "{check:?}");
}

#[test]
fn gradients_are_bitwise_reproducible() {
    let net = Pinn::init(MlpSpec::tt(TtShape::uniform(vec![4; 4], vec![4; 4], 5).unwrap(), 3), 0).unwrap();
    let samples = interior(3, 300);
    let problem = HelmholtzProblem::benchmark();
    let (la, ga) = loss_and_grad(&net, &problem, &samples).unwrap();
    let (lb, gb) = loss_and_grad(&net, &problem, &samples).unwrap();
    assert_eq!(la.total.to_bits(), lb.total.to_bits());
    assert!(ga.flatten().iter().zip(gb.flatten()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn optimizer_trajectory_is_bitwise_reproducible() {
    let run = || {
        let mut net = Pinn::init(MlpSpec::tt(TtShape::uniform(vec![4, 4], vec![4, 4], 3).unwrap(), 2), 6).unwrap();
        let samples = interior(6, 50);
        let mut adam = AdamState::new(net.params(), AdamConfig::default());
        for _ in 0..5 {
            let (_, g) = loss_and_grad(&net, &HelmholtzProblem::benchmark(), &samples).unwrap();
            adam.step(net.params_mut(), &g, 1e-3).unwrap();
        }
        net.params().clone()
    };
    assert_eq!(run(), run());
}
