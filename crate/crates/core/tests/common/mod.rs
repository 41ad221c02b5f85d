#![allow(dead_code)]

use eldrop::data::Dataset;
use eldrop::network::{Activation, DenseLayer, Network};
use eldrop::tensor::{Matrix, RngStream, Vector};

/// Random fully connected network with every mask enumerable.
///
/// `hidden` picks one activation per hidden layer; the output is softmax
/// unless `output` says otherwise.
pub fn random_net(rng: &mut RngStream, hidden: &[Activation], output: Activation, weight_scale: f64) -> Network {
    loop {
        let input = 2 + rng.below(3) as usize;
        let mut dims = vec![input];
        dims.extend(hidden.iter().map(|_| 2 + rng.below(3) as usize));
        dims.push(2 + rng.below(2) as usize);
        let acts: Vec<Activation> = hidden.iter().copied().chain([output]).collect();
        let layers: Vec<DenseLayer> = dims
            .windows(2)
            .zip(&acts)
            .map(|(w, &act)| {
                let data = (0..w[0] * w[1]).map(|_| weight_scale * rng.standard_normal()).collect();
                let bias = Vector::new((0..w[1]).map(|_| 0.5 * rng.standard_normal()).collect());
                let keep = rng.uniform(0.3, 0.9);
                DenseLayer::new(Matrix::from_vec(w[1], w[0], data).unwrap(), bias, act, keep).unwrap()
            })
            .collect();
        let net = Network::new(input, layers).unwrap();
        if net.dropout_units() <= 14 {
            return net;
        }
    }
}

/// `n` inputs uniform in `[0, 1]^d` with labels uniform over `k` classes.
pub fn random_data(rng: &mut RngStream, d: usize, k: usize, n: usize) -> Dataset {
    let xs = (0..n).map(|_| Vector::new((0..d).map(|_| rng.next_f64()).collect())).collect();
    let ys = (0..n).map(|_| rng.below(k as u64) as usize).collect();
    Dataset::new(xs, ys, k).unwrap()
}

pub fn hidden_mix(rng: &mut RngStream, depth: usize, choices: &[Activation]) -> Vec<Activation> {
    (0..depth).map(|_| choices[rng.below(choices.len() as u64) as usize]).collect()
}
