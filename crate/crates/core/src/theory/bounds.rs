//! Closed-form inference-gap bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this distance from 1, `(1 − r^{L−1}) / (1 − r)` is evaluated as the
/// finite geometric sum it equals.
pub const SERIES_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Largest layer Lipschitz constant.
    #[serde(rename = "B")]
    pub b: f64,
    /// Largest keep probability.
    pub gamma: f64,
    /// Square root of the largest expected conditional output variance.
    pub sigma: f64,
    /// Largest per-layer gap.
    pub delta: f64,
    #[serde(rename = "L")]
    pub layers: usize,
    /// Input norm bound.
    pub alpha: f64,
    /// Output norm bound.
    pub beta: f64,
    pub n: usize,
    pub nu: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = [self.b, self.sigma, self.delta, self.alpha, self.beta]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if !finite_nonneg {
            return Err(Error::Domain(format!("bound inputs must be finite and nonnegative: {self:?}")));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Domain(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(Error::Domain(format!("nu must lie in (0, 1), got {}", self.nu)));
        }
        if self.layers == 0 {
            return Err(Error::Domain("need at least one layer".into()));
        }
        Ok(())
    }

    /// `Bγ`
    pub fn contraction(&self) -> f64 {
        self.b * self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Contracting,
    Critical,
    Expanding,
}

impl Regime {
    /// Contracting iff `Bγ < 1`; critical within `1e-12` of 1.
    pub fn of(b_gamma: f64) -> Regime {
        if (b_gamma - 1.0).abs() <= 1e-12 {
            Regime::Critical
        } else if b_gamma < 1.0 {
            Regime::Contracting
        } else {
            Regime::Expanding
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Contracting => "contracting",
            Regime::Critical => "critical",
            Regime::Expanding => "expanding",
        })
    }
}

/// `Σ_{j<L−1} r^j`, in closed form away from `r = 1`.
fn geometric(r: f64, terms: usize) -> f64 {
    if (1.0 - r).abs() < SERIES_THRESHOLD {
        (0..terms).rev().fold(0.0, |acc, _| acc * r + 1.0)
    } else {
        (1.0 - r.powi(terms as i32)) / (1.0 - r)
    }
}

/// `(Bγ)^{L−1} δ + (δ + Bγσ)(1 − (Bγ)^{L−1}) / (1 − Bγ)`; at `Bγ = 1` this
/// is `δ + (δ + σ)(L − 1)`.
pub fn thm3_bound(inputs: &BoundInputs) -> f64 {
    let r = inputs.contraction();
    let k = inputs.layers.saturating_sub(1);
    r.powi(k as i32) * inputs.delta + (inputs.delta + r * inputs.sigma) * geometric(r, k)
}

/// Whether [`thm3_bound`] used the series form for these inputs.
pub fn thm3_uses_series(inputs: &BoundInputs) -> bool {
    inputs.layers > 1 && (1.0 - inputs.contraction()).abs() < SERIES_THRESHOLD
}

/// `2αB^L(γ^{L/2} + 1)/√n + β √(ln(1/ν)/n)`
pub fn thm4_bound(inputs: &BoundInputs) -> f64 {
    let n = inputs.n.max(1) as f64;
    let l = inputs.layers as f64;
    2.0 * inputs.alpha * inputs.b.powf(l) * (inputs.gamma.powf(l / 2.0) + 1.0) / n.sqrt()
        + inputs.beta * ((1.0 / inputs.nu).ln() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inputs(b: f64, gamma: f64, layers: usize, delta: f64, sigma: f64) -> BoundInputs {
        BoundInputs {
            b,
            gamma,
            sigma,
            delta,
            layers,
            alpha: 1.0,
            beta: 1.0,
            n: 10_000,
            nu: 0.01,
        }
    }

    #[test]
    fn thm3_examples() {
        assert!((thm3_bound(&inputs(1.0, 0.5, 3, 0.1, 0.2)) - 0.325).abs() < 1e-15);
        assert_eq!(thm3_bound(&inputs(3.0, 0.9, 1, 0.37, 5.0)), 0.37);
        assert_eq!(thm3_bound(&inputs(3.0, 0.9, 6, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn thm3_critical_limit_is_linear_in_depth() {
        for l in 1..8 {
            let at_one = thm3_bound(&inputs(2.0, 0.5, l, 0.1, 0.2));
            let expected = 0.1 + 0.3 * (l - 1) as f64;
            assert!((at_one - expected).abs() < 1e-12, "L={l}: {at_one}");
            // continuity across the series threshold
            let near = thm3_bound(&inputs(2.0, 0.5 + 1e-6, l, 0.1, 0.2));
            assert!((near - at_one).abs() < 1e-4);
        }
    }

    #[test]
    fn thm4_examples() {
        let i = inputs(1.0, 0.5, 2, 0.0, 0.0);
        let v = thm4_bound(&i);
        let oracle = 0.03 + (100f64.ln()).sqrt() / 100.0;
        assert!((v - oracle).abs() < 1e-15);
        assert!((v - 0.0514597).abs() < 1e-7);
        let quad = BoundInputs { n: 40_000, ..i };
        assert!((thm4_bound(&quad) - v / 2.0).abs() < 1e-15);
        let sure = BoundInputs { nu: 1.0 - 1e-15, ..i };
        assert!((thm4_bound(&sure) - 0.03).abs() < 1e-7);
    }

    #[test]
    fn regimes() {
        assert_eq!(Regime::of(0.5), Regime::Contracting);
        assert_eq!(Regime::of(1.0), Regime::Critical);
        assert_eq!(Regime::of(1.5), Regime::Expanding);
        assert_eq!(serde_json::to_string(&Regime::Expanding).unwrap(), "\"expanding\"");
    }

    #[test]
    fn validation() {
        assert!(inputs(1.0, 0.5, 2, 0.1, 0.1).validate().is_ok());
        assert!(inputs(1.0, 0.0, 2, 0.1, 0.1).validate().is_err());
        assert!(inputs(-1.0, 0.5, 2, 0.1, 0.1).validate().is_err());
        assert!(inputs(1.0, 0.5, 0, 0.1, 0.1).validate().is_err());
    }

    proptest! {
        #[test]
        fn thm3_is_monotone(
            b in 0.0f64..3.0, gamma in 0.05f64..1.0, layers in 1usize..8,
            delta in 0.0f64..1.0, sigma in 0.0f64..1.0, bump in 0.0f64..0.5,
        ) {
            let base = inputs(b, gamma, layers, delta, sigma);
            let v = thm3_bound(&base);
            let tol = 1e-9 * (1.0 + v.abs());
            let bumped = [
                BoundInputs { delta: delta + bump, ..base },
                BoundInputs { sigma: sigma + bump, ..base },
                BoundInputs { b: b + bump, ..base },
                BoundInputs { gamma: (gamma + bump).min(1.0), ..base },
                BoundInputs { layers: layers + 1, ..base },
            ];
            for up in bumped {
                let w = thm3_bound(&up);
                prop_assert!(w >= v - tol, "{:?}: {} < {}", up, w, v);
            }
        }

        #[test]
        fn thm3_matches_recursion(
            b in 0.0f64..3.0, gamma in 0.05f64..1.0, layers in 1usize..10,
            delta in 0.0f64..1.0, sigma in 0.0f64..1.0,
        ) {
            // Δ_1 = δ, Δ_{l+1} = δ + Bγσ + BγΔ_l
            let r = b * gamma;
            let mut d = delta;
            for _ in 1..layers {
                d = delta + r * sigma + r * d;
            }
            let v = thm3_bound(&inputs(b, gamma, layers, delta, sigma));
            prop_assert!((v - d).abs() <= 1e-9 * (1.0 + d.abs()), "{} vs {}", v, d);
        }
    }
}
