//! Standard (scaled) and Monte-Carlo dropout inference, error rates, and the
//! empirical inference-gap measure.
//!
//! Every Monte-Carlo estimate over a dataset gives example `i` its own stream
//! `RngStream::new(seed, MC).derive(i)`, so parallel and serial evaluation
//! agree bit for bit.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::{streams, RngStream, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMode {
    Standard,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub mode: InferenceMode,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            mode: InferenceMode::Standard,
            mc_samples: 100,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn standard() -> Self {
        InferenceConfig::default()
    }

    pub fn monte_carlo(mc_samples: usize, seed: u64) -> Self {
        InferenceConfig {
            mode: InferenceMode::MonteCarlo,
            mc_samples,
            seed,
        }
    }
}

/// Sample mean and per-component sample variance of `h_L(x, S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputMoments {
    pub mean: Vector,
    pub variance: Vector,
    pub samples: usize,
}

impl OutputMoments {
    /// `tr Var` estimate.
    pub fn total_variance(&self) -> f64 {
        self.variance.iter().sum()
    }

    /// Per-component standard error of the mean.
    pub fn std_errors(&self) -> Vector {
        self.variance.iter().map(|v| (v / self.samples as f64).sqrt()).collect::<Vec<_>>().into()
    }
}

/// Monte-Carlo moments of the network output from `m` fresh masks.
pub fn output_moments(net: &Network, x: &[f64], m: usize, rng: &mut RngStream) -> Result<OutputMoments> {
    if m == 0 {
        return Err(Error::Domain("need at least one Monte-Carlo sample".into()));
    }
    // Welford
    let k = net.output_dim();
    let mut mean = vec![0.0; k];
    let mut m2 = vec![0.0; k];
    for i in 0..m {
        let h = net.output_stochastic(x, &net.sample_mask(rng))?;
        let n = (i + 1) as f64;
        for j in 0..k {
            let d = h[j] - mean[j];
            mean[j] += d / n;
            m2[j] += d * (h[j] - mean[j]);
        }
    }
    let denom = if m > 1 { (m - 1) as f64 } else { 1.0 };
    Ok(OutputMoments {
        mean: mean.into(),
        variance: m2.into_iter().map(|v| v / denom).collect::<Vec<_>>().into(),
        samples: m,
    })
}

fn mc_stream(seed: u64, index: u64) -> RngStream {
    RngStream::new(seed, streams::MC).derive(index)
}

/// Class distribution for `x` under the configured mode; Monte-Carlo mode
/// uses the stream of example index 0.
pub fn predict(net: &Network, x: &[f64], cfg: &InferenceConfig) -> Result<Vector> {
    predict_indexed(net, x, cfg, 0)
}

/// [`predict`] with the Monte-Carlo stream keyed by `index`.
pub fn predict_indexed(net: &Network, x: &[f64], cfg: &InferenceConfig, index: u64) -> Result<Vector> {
    if !net.has_softmax_output() {
        return Err(Error::Network("prediction requires a softmax output layer".into()));
    }
    match cfg.mode {
        InferenceMode::Standard => net.output_deterministic(x),
        InferenceMode::MonteCarlo => {
            let mut rng = mc_stream(cfg.seed, index);
            Ok(output_moments(net, x, cfg.mc_samples, &mut rng)?.mean)
        }
    }
}

/// Percentage of examples whose arg-max prediction (lowest index on ties)
/// differs from the label.
pub fn error_rate(net: &Network, ds: &Dataset, cfg: &InferenceConfig) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Domain("error rate of an empty dataset".into()));
    }
    let wrong: Vec<bool> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = ds.get(i);
            Ok(predict_indexed(net, x, cfg, i as u64)?.argmax() != y)
        })
        .collect::<Result<_>>()?;
    Ok(100.0 * wrong.iter().filter(|&&w| w).count() as f64 / ds.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapMeasurement {
    /// `(1/n) Σ ‖mean_m h_L(x_i, S) − h_L(x_i, E[S])‖₂`
    pub delta_hat: f64,
    /// `(1/n) Σ sqrt(tr Σ̂_i / m)`; bounds the expected Monte-Carlo error of
    /// `delta_hat` through the triangle inequality.
    pub std_error: f64,
    pub per_example: Vec<f64>,
}

/// Empirical inference gap with an unsquared norm, the inner expectation
/// estimated from `mc_samples` masks per example.
pub fn measure_gap(net: &Network, ds: &Dataset, mc_samples: usize, seed: u64) -> Result<GapMeasurement> {
    if mc_samples < 2 {
        return Err(Error::Domain(format!("need at least 2 Monte-Carlo samples, got {mc_samples}")));
    }
    if ds.is_empty() {
        return Err(Error::Domain("gap of an empty dataset".into()));
    }
    let rows: Vec<(f64, f64)> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let x = ds.inputs()[i].as_slice();
            let mom = output_moments(net, x, mc_samples, &mut mc_stream(seed, i as u64))?;
            let det = net.output_deterministic(x)?;
            Ok((mom.mean.dist_sq(&det).sqrt(), (mom.total_variance() / mc_samples as f64).sqrt()))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    Ok(GapMeasurement {
        delta_hat: rows.iter().map(|r| r.0).sum::<f64>() / n,
        std_error: rows.iter().map(|r| r.1).sum::<f64>() / n,
        per_example: rows.into_iter().map(|r| r.0).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{enumerate_expectation, Activation, Architecture, DenseLayer};
    use crate::tensor::Matrix;

    fn net(keep: f64, hidden: Activation) -> Network {
        let arch = Architecture {
            input_dim: 3,
            hidden: vec![4],
            hidden_activation: hidden,
            output_dim: 3,
            output_activation: Activation::Softmax,
            input_keep: keep,
            hidden_keep: keep,
        };
        Network::glorot(&arch, &mut RngStream::new(21, streams::INIT)).unwrap()
    }

    fn toy_data() -> Dataset {
        let xs = vec![
            Vector::new(vec![0.1, 0.5, 0.9]),
            Vector::new(vec![0.7, 0.2, 0.3]),
            Vector::new(vec![0.4, 0.4, 0.0]),
        ];
        Dataset::new(xs, vec![0, 1, 2], 3).unwrap()
    }

    #[test]
    fn modes_agree_without_dropout() {
        let n = net(1.0, Activation::Tanh);
        let x = [0.3, 0.2, 0.5];
        let a = predict(&n, &x, &InferenceConfig::standard()).unwrap();
        let b = predict(&n, &x, &InferenceConfig::monte_carlo(10, 3)).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn standard_mode_is_deterministic_and_normalized() {
        let n = net(0.5, Activation::Sigmoid);
        let x = [0.3, 0.2, 0.5];
        let cfg = InferenceConfig::standard();
        let a = predict(&n, &x, &cfg).unwrap();
        assert_eq!(a, predict(&n, &x, &cfg).unwrap());
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let b = predict(&n, &x, &InferenceConfig::monte_carlo(100, 1)).unwrap();
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn monte_carlo_matches_enumeration() {
        let n = net(0.5, Activation::Sigmoid);
        let x = [0.8, 0.1, 0.6];
        let exact = enumerate_expectation(&n, &x).unwrap();
        let mut rng = RngStream::new(77, streams::MC);
        let mom = output_moments(&n, &x, 1_000_000, &mut rng).unwrap();
        for ((m, e), se) in mom.mean.iter().zip(exact.iter()).zip(mom.std_errors().iter()) {
            assert!((m - e).abs() <= 4.0 * se, "{m} vs {e} (se {se})");
        }
    }

    #[test]
    fn error_rate_extremes() {
        let ds = toy_data();
        // predicts class 0 everywhere
        let layer = DenseLayer::new(Matrix::zeros(3, 3), Vector::new(vec![5.0, 0.0, 0.0]), Activation::Softmax, 1.0)
            .unwrap();
        let n = Network::new(3, vec![layer]).unwrap();
        let e = error_rate(&n, &ds, &InferenceConfig::standard()).unwrap();
        assert!((e - 200.0 / 3.0).abs() < 1e-12);
        let only0 = ds.subset(&[0]);
        assert_eq!(error_rate(&n, &only0, &InferenceConfig::standard()).unwrap(), 0.0);
        assert!(error_rate(&n, &ds.subset(&[]), &InferenceConfig::standard()).is_err());
    }

    #[test]
    fn constant_uniform_net_has_half_error_on_two_classes() {
        // all-zero weights: uniform output, ties go to class 0
        let layer = DenseLayer::new(Matrix::zeros(2, 2), Vector::zeros(2), Activation::Softmax, 1.0).unwrap();
        let n = Network::new(2, vec![layer]).unwrap();
        let ds = crate::data::synth_gaussians(2, 2, 500, 1.0, 5).unwrap();
        let mut order: Vec<usize> = (0..ds.len()).collect();
        RngStream::new(1, streams::SHUFFLE).shuffle(&mut order);
        let ds = ds.subset(&order);
        let e = error_rate(&n, &ds, &InferenceConfig::standard()).unwrap();
        // binomial 3σ for n = 1000: 3 · 50 / √1000 ≈ 4.74 points
        assert!((e - 50.0).abs() <= 4.75, "{e}");
    }

    #[test]
    fn gap_is_deterministic_and_zero_for_affine_nets() {
        let ds = toy_data();
        let affine = net(0.5, Activation::Identity);
        // softmax output is not affine; use an identity output layer
        let mut layers = affine.layers().to_vec();
        layers.last_mut().unwrap().activation = Activation::Identity;
        let affine = Network::new(3, layers).unwrap();
        let g = measure_gap(&affine, &ds, 200, 3).unwrap();
        assert!(g.delta_hat <= 3.0 * g.std_error, "{g:?}");

        let n = net(0.5, Activation::Tanh);
        assert_eq!(measure_gap(&n, &ds, 50, 9).unwrap(), measure_gap(&n, &ds, 50, 9).unwrap());
        assert!(measure_gap(&n, &ds, 1, 9).is_err());
    }
}
