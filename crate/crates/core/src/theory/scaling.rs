//! Shrinking the output layer until the network is expectation-linear to a
//! target level, and the likelihood lost by doing so.

use rayon::prelude::*;

use super::measure::{example_stream, max_layer_norm, output_welford, Estimate, Estimator};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{enumerate_expectation, Network, ENUMERATION_CAP};
use crate::objective::PROB_FLOOR;

/// Number of sampled masks used for `β` when the masks cannot be enumerated.
pub const BETA_MASK_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Linearized {
    pub network: Network,
    /// Factor applied to the output weights and bias, in `[0, 1]`.
    pub alpha: f64,
    /// `max ‖h^(L−1)‖₂` over data and masks.
    pub beta: f64,
    /// Frobenius norm of the output weights before scaling.
    pub eta_norm: f64,
}

/// Scales the softmax layer by `α = min(1, δ / (4β‖η‖))`, after which every
/// example satisfies `‖E_S[h^(L)] − h^(L)(E[S])‖₂ ≤ δ`.
pub fn scale_to_linearize(net: &Network, delta_target: f64, ds: &Dataset) -> Result<Linearized> {
    let hidden_units: usize = net.layers()[..net.num_layers() - 1]
        .iter()
        .filter(|l| l.keep_prob < 1.0)
        .map(|l| l.input_dim())
        .sum();
    let est = if hidden_units <= ENUMERATION_CAP {
        Estimator::Exact
    } else {
        Estimator::MonteCarlo {
            samples: BETA_MASK_SAMPLES,
            seed: 0,
        }
    };
    scale_to_linearize_with(net, delta_target, ds, est)
}

pub fn scale_to_linearize_with(net: &Network, delta_target: f64, ds: &Dataset, est: Estimator) -> Result<Linearized> {
    if !net.has_softmax_output() {
        return Err(Error::Network("scaling requires a softmax output layer".into()));
    }
    if !(delta_target >= 0.0 && delta_target.is_finite()) {
        return Err(Error::Domain(format!("invalid target {delta_target}")));
    }
    let last = net.num_layers() - 1;
    let beta = max_layer_norm(net, ds, last, est)?;
    let eta_norm = net.layers()[last].weights.frobenius_norm();
    let alpha = if eta_norm == 0.0 || beta == 0.0 {
        1.0
    } else {
        (delta_target / (4.0 * beta * eta_norm)).min(1.0)
    };
    let mut network = net.clone();
    if alpha < 1.0 {
        let out = &mut network.layers_mut()[last];
        out.weights.scale(alpha);
        out.bias.iter_mut().for_each(|b| *b *= alpha);
    }
    Ok(Linearized {
        network,
        alpha,
        beta,
        eta_norm,
    })
}

/// Predictive distribution `E_S[h^(L)(x, S)]` and per-class standard errors.
fn predictive(net: &Network, x: &[f64], est: Estimator, index: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    match est {
        Estimator::Exact => {
            let p = enumerate_expectation(net, x)?;
            let k = p.len();
            Ok((p.into_inner(), vec![0.0; k]))
        }
        Estimator::MonteCarlo { samples, seed } => {
            let w = output_welford(net, x, samples, &mut example_stream(seed, index))?;
            Ok((w.mean().into_inner(), w.std_errors()))
        }
    }
}

/// `(1/n)(l(D; θ̂) − l(D; θ̃))` with the marginal likelihood over masks.
///
/// Monte-Carlo errors are propagated through the log to first order.
pub fn likelihood_gap(net_hat: &Network, net_tilde: &Network, ds: &Dataset, est: Estimator) -> Result<Estimate> {
    if net_hat.input_dim() != net_tilde.input_dim() || net_hat.output_dim() != net_tilde.output_dim() {
        return Err(Error::Network("likelihood gap needs networks of the same shape".into()));
    }
    if !net_hat.has_softmax_output() || !net_tilde.has_softmax_output() {
        return Err(Error::Network("likelihood requires a softmax output layer".into()));
    }
    if ds.is_empty() {
        return Err(Error::Domain("likelihood gap of an empty dataset".into()));
    }
    let rows: Vec<(f64, f64)> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = ds.get(i);
            let (ph, eh) = predictive(net_hat, x, est, i)?;
            let (pt, et) = predictive(net_tilde, x, est, i)?;
            let a = ph[y].max(PROB_FLOOR);
            let b = pt[y].max(PROB_FLOOR);
            Ok((a.ln() - b.ln(), (eh[y] / a).powi(2) + (et[y] / b).powi(2)))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    Ok(Estimate {
        value: rows.iter().map(|r| r.0).sum::<f64>() / n,
        std_error: rows.iter().map(|r| r.1).sum::<f64>().sqrt() / n,
    })
}

/// `E_X[KL(p(·|X) ‖ Unif)] = E_X[Σ_y p log p] + log k` under the marginal
/// predictive distribution.
pub fn mean_kl_to_uniform(net: &Network, ds: &Dataset, est: Estimator) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Domain("KL over an empty dataset".into()));
    }
    let k = net.output_dim() as f64;
    let per: Vec<f64> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let (p, _) = predictive(net, ds.inputs()[i].as_slice(), est, i)?;
            Ok(p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>() + k.ln())
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// `(1 − δ / (4β‖η̂‖)) · E[KL(p(·|X) ‖ Unif)]`
pub fn thm6_rhs(delta: f64, beta: f64, eta_norm: f64, mean_kl: f64) -> f64 {
    (1.0 - delta / (4.0 * beta * eta_norm)) * mean_kl
}
