//! Measured bound inputs versus the measured network gap.

use serde::{Deserialize, Serialize};

use super::bounds::{thm3_bound, thm3_uses_series, thm4_bound, BoundInputs, Regime};
use super::measure::{layer_output_variances, max_layer_norm, measure_layer_delta, network_delta, Estimator, InputPath};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::measure_gap;
use crate::network::{Network, ENUMERATION_CAP};

/// Exact enumeration is used only when `2^units · n` stays below this.
pub const EXACT_BUDGET: f64 = (1u64 << 28) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub mc_samples: usize,
    pub seed: u64,
    pub path: InputPath,
    /// Confidence parameter of the deviation bound.
    pub nu: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            mc_samples: 100,
            seed: 0,
            path: InputPath::Deterministic,
            nu: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub delta: f64,
    pub delta_std_error: f64,
    #[serde(rename = "B")]
    pub b: f64,
    /// `E_X[tr Var(H^(l) | X)]`
    pub variance: f64,
    pub keep_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub layers: Vec<LayerReport>,
    pub gamma: f64,
    pub sigma: f64,
    /// Monte-Carlo empirical gap over the dataset.
    pub delta_hat: f64,
    pub delta_hat_std_error: f64,
    /// Gap with the inner expectation exact when enumerable.
    pub delta_mean: f64,
    pub delta_mean_std_error: f64,
    pub thm3_bound: f64,
    pub thm4_bound: f64,
    pub regime: Regime,
    pub inputs: BoundInputs,
    pub path: InputPath,
    pub exact: bool,
    /// The bound was evaluated in its `Bγ → 1` series form.
    pub series_form: bool,
    /// `delta_mean ≤ thm3_bound + 3 · delta_mean_std_error`
    pub holds: bool,
}

impl GapReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are plain numbers and strings")
    }
}

/// [`validate_thm3_with`] under the default configuration.
pub fn validate_thm3(net: &Network, ds: &Dataset, mc_samples: usize, seed: u64) -> Result<GapReport> {
    validate_thm3_with(
        net,
        ds,
        &ValidationConfig {
            mc_samples,
            seed,
            ..ValidationConfig::default()
        },
    )
}

/// Measures per-layer `δ`, `B`, `γ`, `σ`, the output-norm bound and the
/// network gap, and checks the gap against the depth bound.
pub fn validate_thm3_with(net: &Network, ds: &Dataset, cfg: &ValidationConfig) -> Result<GapReport> {
    if ds.is_empty() {
        return Err(Error::Domain("validation over an empty dataset".into()));
    }
    let units = net.dropout_units();
    let exact = units <= ENUMERATION_CAP && 2f64.powi(units as i32) * ds.len() as f64 <= EXACT_BUDGET;
    let est = if exact {
        Estimator::Exact
    } else {
        Estimator::MonteCarlo {
            samples: cfg.mc_samples,
            seed: cfg.seed,
        }
    };

    let variances = layer_output_variances(net, ds, est)?;
    let mut layers = Vec::with_capacity(net.num_layers());
    for (l, layer) in net.layers().iter().enumerate() {
        let d = measure_layer_delta(net, l, ds, est, cfg.path)?;
        layers.push(LayerReport {
            delta: d.value,
            delta_std_error: d.std_error,
            b: layer.operator_norm(),
            variance: variances[l].value,
            keep_prob: layer.keep_prob,
        });
    }
    let max = |f: fn(&LayerReport) -> f64| layers.iter().map(f).fold(0.0, f64::max);
    let inputs = BoundInputs {
        b: max(|r| r.b),
        gamma: max(|r| r.keep_prob),
        sigma: max(|r| r.variance).sqrt(),
        delta: max(|r| r.delta),
        layers: net.num_layers(),
        alpha: ds.max_input_norm(),
        beta: max_layer_norm(net, ds, net.num_layers(), est)?,
        n: ds.len(),
        nu: cfg.nu,
    };
    inputs.validate()?;

    let hat = measure_gap(net, ds, cfg.mc_samples, cfg.seed)?;
    let mean = network_delta(net, ds, est)?;
    let thm3 = thm3_bound(&inputs);
    Ok(GapReport {
        layers,
        gamma: inputs.gamma,
        sigma: inputs.sigma,
        delta_hat: hat.delta_hat,
        delta_hat_std_error: hat.std_error,
        delta_mean: mean.value,
        delta_mean_std_error: mean.std_error,
        thm3_bound: thm3,
        thm4_bound: thm4_bound(&inputs),
        regime: Regime::of(inputs.contraction()),
        inputs,
        path: cfg.path,
        exact,
        series_form: thm3_uses_series(&inputs),
        holds: mean.value <= thm3 + 3.0 * mean.std_error,
    })
}
