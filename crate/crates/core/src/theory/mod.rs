//! Instruments for the expectation-linearity results: the Jensen gap between
//! the two training objectives, per-layer and network gaps, the depth and
//! deviation bounds, and the output-layer scaling construction.
//!
//! Every measurement can run exactly (all masks enumerated) or by Monte-Carlo
//! with per-example streams derived from the `THEORY` stream.

mod bounds;
mod measure;
mod report;
mod scaling;

pub use bounds::{thm3_bound, thm3_uses_series, thm4_bound, BoundInputs, Regime, SERIES_THRESHOLD};
pub use measure::{
    jensen_check, layer_output_variances, max_layer_norm, measure_layer_delta, network_delta, penalty,
    penalty_surrogate, Estimate, Estimator, InputPath,
};
pub use report::{validate_thm3, validate_thm3_with, GapReport, LayerReport, ValidationConfig, EXACT_BUDGET};
pub use scaling::{
    likelihood_gap, mean_kl_to_uniform, scale_to_linearize, scale_to_linearize_with, thm6_rhs, Linearized,
    BETA_MASK_SAMPLES,
};
