mod common;

use common::{hidden_mix, random_data, random_net};
use eldrop::data::Dataset;
use eldrop::network::{enumerate_expectation, Activation, Architecture, Network};
use eldrop::objective::PROB_FLOOR;
use eldrop::tensor::{streams, RngStream, Vector};
use eldrop::theory::{
    likelihood_gap, max_layer_norm, mean_kl_to_uniform, network_delta, penalty, scale_to_linearize, thm6_rhs,
    validate_thm3, Estimator, Regime,
};
use proptest::prelude::*;

fn sigmoid_net(seed: u64) -> Network {
    let arch = Architecture {
        input_dim: 3,
        hidden: vec![4],
        hidden_activation: Activation::Sigmoid,
        output_dim: 3,
        output_activation: Activation::Softmax,
        input_keep: 0.6,
        hidden_keep: 0.5,
    };
    let mut net = Network::glorot(&arch, &mut RngStream::new(seed, streams::INIT)).unwrap();
    for l in net.layers_mut() {
        l.weights.scale(4.0);
    }
    net
}

fn uniform_inputs(rng: &mut RngStream, n: usize, d: usize, k: usize) -> Dataset {
    let xs = (0..n).map(|_| Vector::new((0..d).map(|_| rng.next_f64()).collect())).collect();
    Dataset::new(xs, vec![0; n], k).unwrap()
}

#[test]
fn empirical_gap_converges_at_root_n() {
    let net = sigmoid_net(2);
    let population = {
        let mut rng = RngStream::new(99, streams::DATA);
        network_delta(&net, &uniform_inputs(&mut rng, 160_000, 3, 3), Estimator::Exact)
            .unwrap()
            .value
    };
    let reps = 24;
    let rmse = |n: usize| {
        let sq: f64 = (0..reps)
            .map(|r| {
                let mut rng = RngStream::new(r, streams::DATA).derive(n as u64);
                let d = network_delta(&net, &uniform_inputs(&mut rng, n, 3, 3), Estimator::Exact).unwrap().value;
                (d - population).powi(2)
            })
            .sum();
        (sq / reps as f64).sqrt()
    };
    let (small, large) = (rmse(100), rmse(1600));
    // 16x the data should cut the error about 4x
    let ratio = small / large;
    assert!((2.0..8.0).contains(&ratio), "rmse {small} at n=100, {large} at n=1600");
}

#[test]
fn uniform_predictor_gap_is_mean_kl() {
    // labels drawn from the model make the expected log-likelihood gap to the
    // uniform predictor equal to E[KL(p ‖ Unif)]
    let net = sigmoid_net(5);
    let n = 3000;
    let mut rng = RngStream::new(4, streams::DATA);
    let inputs = uniform_inputs(&mut rng, n, 3, 3);
    let mut labels = Vec::with_capacity(n);
    let mut logs = Vec::with_capacity(n);
    for x in inputs.inputs() {
        let p = enumerate_expectation(&net, x.as_slice()).unwrap();
        let u = rng.next_f64();
        let mut acc = 0.0;
        let y = p.iter().position(|&q| {
            acc += q;
            u < acc
        });
        let y = y.unwrap_or(p.len() - 1);
        labels.push(y);
        logs.push(p[y].max(PROB_FLOOR).ln());
    }
    let ds = Dataset::new(inputs.inputs().to_vec(), labels, 3).unwrap();

    let lin = scale_to_linearize(&net, 0.0, &ds).unwrap();
    assert_eq!(lin.alpha, 0.0);
    let gap = likelihood_gap(&net, &lin.network, &ds, Estimator::Exact).unwrap();
    let kl = mean_kl_to_uniform(&net, &ds, Estimator::Exact).unwrap();
    let mean = logs.iter().sum::<f64>() / n as f64;
    let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((gap.value - kl).abs() <= 4.0 * se, "gap {} kl {kl} se {se}", gap.value);
    assert_eq!(thm6_rhs(0.0, lin.beta, lin.eta_norm, kl), kl);
}

#[test]
fn likelihood_gap_monte_carlo_matches_exact() {
    let net = sigmoid_net(6);
    let mut rng = RngStream::new(1, streams::DATA);
    let ds = random_data(&mut rng, 3, 3, 40);
    let lin = scale_to_linearize(&net, 0.1, &ds).unwrap();
    let exact = likelihood_gap(&net, &lin.network, &ds, Estimator::Exact).unwrap();
    let mc = likelihood_gap(&net, &lin.network, &ds, Estimator::MonteCarlo { samples: 4000, seed: 2 }).unwrap();
    assert!((exact.value - mc.value).abs() <= 4.0 * mc.std_error, "{exact:?} {mc:?}");
}

#[test]
fn sampled_beta_never_exceeds_enumerated_beta() {
    let net = sigmoid_net(7);
    let mut rng = RngStream::new(3, streams::DATA);
    let ds = random_data(&mut rng, 3, 3, 20);
    let exact = max_layer_norm(&net, &ds, 1, Estimator::Exact).unwrap();
    let sampled = max_layer_norm(&net, &ds, 1, Estimator::MonteCarlo { samples: 200, seed: 0 }).unwrap();
    assert!(sampled <= exact + 1e-12);
    assert!(sampled > 0.5 * exact);
}

#[test]
fn deeper_expanding_nets_get_larger_bounds() {
    let mut prev = 0.0;
    for depth in 1..=3 {
        let arch = Architecture {
            input_dim: 3,
            hidden: vec![3; depth],
            hidden_activation: Activation::Tanh,
            output_dim: 2,
            output_activation: Activation::Softmax,
            input_keep: 0.8,
            hidden_keep: 0.8,
        };
        let mut net = Network::glorot(&arch, &mut RngStream::new(1, streams::INIT)).unwrap();
        for l in net.layers_mut() {
            l.weights.scale(8.0);
        }
        let mut rng = RngStream::new(2, streams::DATA);
        let ds = random_data(&mut rng, 3, 2, 6);
        let r = validate_thm3(&net, &ds, 50, 0).unwrap();
        assert_eq!(r.regime, Regime::Expanding);
        assert!(r.holds, "{}", r.to_json());
        assert!(r.thm3_bound > prev);
        prev = r.thm3_bound;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn scaling_meets_any_target(seed in any::<u64>(), delta in 0.001f64..1.0) {
        let mut rng = RngStream::new(seed, streams::INIT);
        let kinds = [Activation::Sigmoid, Activation::Tanh, Activation::Relu, Activation::Identity];
        let depth = 1 + rng.below(2) as usize;
        let hidden = hidden_mix(&mut rng, depth, &kinds);
        let net = random_net(&mut rng, &hidden, Activation::Softmax, 3.0);
        let ds = random_data(&mut rng, net.input_dim(), net.output_dim(), 6);
        let lin = scale_to_linearize(&net, delta, &ds).unwrap();
        let v = penalty(&lin.network, &ds, Estimator::Exact).unwrap().value;
        prop_assert!(v <= delta, "V = {} > {}", v, delta);
        prop_assert!((0.0..=1.0).contains(&lin.alpha));
    }
}
