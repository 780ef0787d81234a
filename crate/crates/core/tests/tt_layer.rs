use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ttpinn_core::check::{matvec_discrepancy, random_tt_layer};
use ttpinn_core::tensor::probe;
use ttpinn_core::tt::{core_std, tt_init_with};
use ttpinn_core::{loss_and_grad, tt_init, tt_param_count, HelmholtzProblem, MlpSpec, Pinn, Samples, TtShape};

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[test]
fn matvec_matches_dense_oracle_over_100_seeds() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = random_tt_layer(&mut rng);
        let z = gaussian_vec(&mut rng, layer.cols());
        let err = matvec_discrepancy(&layer, &z).unwrap();
        assert!(err <= 1e-10, "seed {seed}: {err:e}");
    }
}

#[test]
fn matvec_ignores_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut layer = random_tt_layer(&mut rng);
    layer.bias.iter_mut().enumerate().for_each(|(i, b)| *b = i as f64);
    let y = layer.matvec(&vec![0.0; layer.cols()]).unwrap();
    assert_eq!(y, vec![0.0; layer.rows()]);
}

#[test]
fn matvec_never_builds_the_dense_matrix() {
    let shape = TtShape::uniform(vec![4; 4], vec![4; 4], 8).unwrap();
    let layer = tt_init(&shape, 1);
    let z = vec![1.0; 256];
    probe::reset();
    layer.matvec(&z).unwrap();
    assert!(probe::peak() < 256 * 256, "peak {}", probe::peak());
}

#[test]
fn training_pass_never_builds_a_hidden_matrix() {
    let shape = TtShape::uniform(vec![4; 4], vec![4; 4], 5).unwrap();
    let net = Pinn::init(MlpSpec::tt(shape, 3), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // 10 points keep every activation buffer (256 x 5 x 10) below 256 x 256.
    let points: Vec<(f64, f64)> = (0..10).map(|_| (rng.random(), rng.random())).collect();
    let samples = Samples { residual: points.clone(), ..Samples::default() };
    probe::reset();
    loss_and_grad(&net, &HelmholtzProblem::benchmark(), &samples).unwrap();
    net.solution_batch(&points).unwrap();
    assert!(probe::peak() < 256 * 256, "peak {}", probe::peak());
    probe::reset();
    net.densified().unwrap();
    assert!(probe::peak() >= 256 * 256, "the probe sees dense reconstruction");
}

#[test]
fn parameter_count_is_below_dense_when_compressing() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let layer = random_tt_layer(&mut rng);
        if layer.shape.compression() > 1.0 {
            assert!(tt_param_count(&layer) < layer.rows() * layer.cols());
        }
    }
}

#[test]
fn initialization_variance_matches_xavier() {
    let shape = TtShape::uniform(vec![4; 4], vec![4; 4], 5).unwrap();
    let target = 2.0 / 512.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut sum2 = 0.0;
    let mut count = 0usize;
    for _ in 0..20 {
        let w = tt_init_with(&shape, &mut rng).dense_matrix().unwrap();
        sum2 += w.iter().map(|v| v * v).sum::<f64>();
        count += w.len();
    }
    let var = sum2 / count as f64;
    assert!((0.5 * target..=2.0 * target).contains(&var), "variance {var:e} vs {target:e}");
    assert!(core_std(&shape) > 0.0);
}

#[test]
fn full_rank_tt_net_matches_its_densified_twin() {
    // Ranks (1,4,16,4,1) can represent any 16x16 matrix.
    let shape = TtShape::new(vec![4, 4], vec![4, 4], vec![1, 4, 16, 4, 1]).unwrap();
    let net = Pinn::init(MlpSpec::tt(shape, 2), 3).unwrap();
    let dense = net.densified().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points: Vec<(f64, f64)> = (0..64).map(|_| (rng.random(), rng.random())).collect();
    let a = net.forward_batch(&points).unwrap();
    let b = dense.forward_batch(&points).unwrap();
    for (ja, jb) in a.iter().zip(&b) {
        for (ca, cb) in ja.channels().iter().zip(jb.channels()) {
            assert!((ca - cb).abs() <= 1e-10, "{ca} vs {cb}");
        }
    }
}

#[test]
fn batched_network_path_agrees_with_single_vector_matvec() {
    let shape = TtShape::uniform(vec![4; 4], vec![4; 4], 5).unwrap();
    let net = Pinn::init(MlpSpec::tt(shape, 1), 8).unwrap();
    let layer = net.tt_layer(0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let points: Vec<(f64, f64)> = (0..2000).map(|_| (rng.random(), rng.random())).collect();
    // Rebuild the hidden activations by hand and push them through the literal sweep.
    let input = net.params().iter().find(|(_, p)| p.name == "input.weight").unwrap().1.data.clone();
    let input_b = net.params().iter().find(|(_, p)| p.name == "input.bias").unwrap().1.data.clone();
    let out_w = net.params().iter().find(|(_, p)| p.name == "output.weight").unwrap().1.data.clone();
    let out_b = net.params().iter().find(|(_, p)| p.name == "output.bias").unwrap().1.data[0];
    let batched = net.forward_batch(&points).unwrap();
    for (&(x, y), jet) in points.iter().zip(&batched).step_by(97) {
        let h: Vec<f64> = (0..256).map(|i| (input[2 * i] * x + input[2 * i + 1] * y + input_b[i]).sin()).collect();
        let h2: Vec<f64> = layer.matvec(&h).unwrap().into_iter().map(f64::sin).collect();
        let f: f64 = out_w.iter().zip(&h2).map(|(w, v)| w * v).sum::<f64>() + out_b;
        assert!((f - jet.v).abs() <= 1e-12, "{f} vs {}", jet.v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matvec_is_linear(seed in 0u64..10_000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = random_tt_layer(&mut rng);
        layer.bias.iter_mut().for_each(|b| *b = 0.0);
        let n = layer.cols();
        let (z1, z2) = (gaussian_vec(&mut rng, n), gaussian_vec(&mut rng, n));
        let mix: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = layer.matvec(&mix).unwrap();
        let (y1, y2) = (layer.matvec(&z1).unwrap(), layer.matvec(&z2).unwrap());
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (alpha * y1[i] + beta * y2[i])).abs() <= 1e-10);
        }
    }

    #[test]
    fn matvec_matches_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = random_tt_layer(&mut rng);
        let z = gaussian_vec(&mut rng, layer.cols());
        prop_assert!(matvec_discrepancy(&layer, &z).unwrap() <= 1e-10);
    }
}
