//! Exact and Monte-Carlo measurements of gaps, variances and norms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{enumerate_expectation, for_each_mask, for_each_mask_in, Network, ENUMERATION_CAP};
use crate::objective::{el_penalty_exact, PROB_FLOOR};
use crate::tensor::{streams, RngStream, Vector};

/// How an expectation over dropout masks is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

impl Estimator {
    /// Exact when every mask can be enumerated, Monte-Carlo otherwise.
    pub fn auto(net: &Network, samples: usize, seed: u64) -> Estimator {
        if net.dropout_units() <= ENUMERATION_CAP {
            Estimator::Exact
        } else {
            Estimator::MonteCarlo { samples, seed }
        }
    }

    fn check(self) -> Result<Self> {
        match self {
            Estimator::MonteCarlo { samples, .. } if samples < 2 => Err(Error::Domain(format!(
                "need at least 2 Monte-Carlo samples, got {samples}"
            ))),
            e => Ok(e),
        }
    }
}

/// Which forward dynamics produce the input distribution of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputPath {
    /// `h^(l−1)(x, E[S])`
    #[default]
    Deterministic,
    /// `H^(l−1)(x, S)` with all earlier masks random.
    Stochastic,
}

impl std::str::FromStr for InputPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "deterministic" => Ok(InputPath::Deterministic),
            "stochastic" => Ok(InputPath::Stochastic),
            other => Err(Error::Domain(format!("unknown input path `{other}`"))),
        }
    }
}

/// A value and its Monte-Carlo standard error (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, std_error: 0.0 }
    }
}

pub(crate) fn example_stream(seed: u64, index: usize) -> RngStream {
    RngStream::new(seed, streams::THEORY).derive(index as u64)
}

fn nonempty(ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        Err(Error::Domain("measurement over an empty dataset".into()))
    } else {
        Ok(())
    }
}

/// Means of per-example `(value, std_error)` rows, in index order.
fn average<F>(ds: &Dataset, f: F) -> Result<Estimate>
where
    F: Fn(usize, &[f64]) -> Result<(f64, f64)> + Sync,
{
    nonempty(ds)?;
    let rows: Vec<(f64, f64)> = (0..ds.len())
        .into_par_iter()
        .map(|i| f(i, ds.inputs()[i].as_slice()))
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    Ok(Estimate {
        value: rows.iter().map(|r| r.0).sum::<f64>() / n,
        std_error: rows.iter().map(|r| r.1).sum::<f64>() / n,
    })
}

/// Running mean and summed squared deviation of vectors.
#[derive(Debug, Clone)]
pub(crate) struct Welford {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub(crate) fn new(dim: usize) -> Self {
        Welford {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub(crate) fn push(&mut self, v: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(v) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    pub(crate) fn mean(&self) -> Vector {
        Vector::new(self.mean.clone())
    }

    /// Unbiased `tr Σ̂`.
    pub(crate) fn trace_variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        self.m2.iter().sum::<f64>() / (self.count - 1) as f64
    }

    /// Per-component standard error of the mean.
    pub(crate) fn std_errors(&self) -> Vec<f64> {
        let m = self.count.max(2) as f64;
        self.m2.iter().map(|s| (s / (m - 1.0) / m).sqrt()).collect()
    }

    /// `sqrt(tr Σ̂ / m)`
    pub(crate) fn mean_error(&self) -> f64 {
        (self.trace_variance() / self.count.max(1) as f64).sqrt()
    }
}

/// `(E_Γ[f_l(h ⊙ Γ)], f_l(h ⊙ p_l))` for one layer input, plus the
/// standard error of the first entry.
fn layer_expectation(
    net: &Network,
    l: usize,
    h: &[f64],
    est: Estimator,
    rng: &mut RngStream,
) -> Result<(Vector, Vector, f64)> {
    let layer = &net.layers()[l];
    let p = layer.keep_prob;
    let scaled: Vec<f64> = h.iter().map(|v| v * p).collect();
    let det = layer.forward(&scaled)?;
    let mut buf = vec![0.0; h.len()];
    match est {
        Estimator::Exact => {
            let mut acc = Vector::zeros(layer.output_dim());
            for_each_mask_in(net, l..l + 1, |prob, mask| {
                for ((b, v), g) in buf.iter_mut().zip(h).zip(mask.masks[l].iter()) {
                    *b = v * g;
                }
                let out = layer.forward(&buf)?;
                for (a, o) in acc.iter_mut().zip(out.iter()) {
                    *a += prob * o;
                }
                Ok(())
            })?;
            Ok((acc, det, 0.0))
        }
        Estimator::MonteCarlo { samples, .. } => {
            let mut w = Welford::new(layer.output_dim());
            for _ in 0..samples {
                for (b, v) in buf.iter_mut().zip(h) {
                    *b = if rng.bernoulli(p) { *v } else { 0.0 };
                }
                w.push(&layer.forward(&buf)?);
            }
            Ok((w.mean(), det, w.mean_error()))
        }
    }
}

/// `E_X ‖E_Γ[f_l(h ⊙ Γ)] − f_l(h ⊙ p_l)‖₂` for layer `l` (0-based), with the
/// layer input `h` drawn from `path`.
pub fn measure_layer_delta(
    net: &Network,
    l: usize,
    ds: &Dataset,
    est: Estimator,
    path: InputPath,
) -> Result<Estimate> {
    if l >= net.num_layers() {
        return Err(Error::Domain(format!("layer {l} out of range for {} layers", net.num_layers())));
    }
    let est = est.check()?;
    let seed = match est {
        Estimator::MonteCarlo { seed, .. } => seed,
        Estimator::Exact => 0,
    };
    average(ds, |i, x| {
        let mut rng = example_stream(seed, i);
        let gap_at = |h: &[f64], rng: &mut RngStream| -> Result<(f64, f64)> {
            let (mean, det, se) = layer_expectation(net, l, h, est, rng)?;
            Ok((mean.dist_sq(&det).sqrt(), se))
        };
        match (path, est) {
            (InputPath::Deterministic, _) => {
                let h = &net.forward_deterministic(x)?.layer_outputs[l];
                gap_at(h, &mut rng)
            }
            (InputPath::Stochastic, Estimator::Exact) => {
                let mut acc = 0.0;
                for_each_mask_in(net, 0..l, |prob, mask| {
                    let h = &net.forward_stochastic(x, mask)?.layer_outputs[l];
                    acc += prob * gap_at(h, &mut rng)?.0;
                    Ok(())
                })?;
                Ok((acc, 0.0))
            }
            (InputPath::Stochastic, Estimator::MonteCarlo { samples, .. }) => {
                let mut outer = Welford::new(1);
                let mut inner_se = 0.0;
                for _ in 0..samples {
                    let mask = net.sample_mask(&mut rng);
                    let h = net.forward_stochastic(x, &mask)?.layer_outputs[l].clone();
                    let (g, se) = gap_at(&h, &mut rng)?;
                    outer.push(&[g]);
                    inner_se += se;
                }
                Ok((outer.mean()[0], outer.mean_error() + inner_se / samples as f64))
            }
        }
    })
}

/// `E_X[tr Var(H^(l) | X)]` for the output of every layer `l`.
pub fn layer_output_variances(net: &Network, ds: &Dataset, est: Estimator) -> Result<Vec<Estimate>> {
    nonempty(ds)?;
    let est = est.check()?;
    let layers = net.num_layers();
    let rows: Vec<Vec<(f64, f64)>> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let x = ds.inputs()[i].as_slice();
            match est {
                Estimator::Exact => {
                    let mut means: Vec<Vector> =
                        net.layers().iter().map(|l| Vector::zeros(l.output_dim())).collect();
                    for_each_mask(net, |prob, mask| {
                        let t = net.forward_stochastic(x, mask)?;
                        for (m, h) in means.iter_mut().zip(&t.layer_outputs[1..]) {
                            m.iter_mut().zip(h.iter()).for_each(|(a, v)| *a += prob * v);
                        }
                        Ok(())
                    })?;
                    let mut vars = vec![0.0; layers];
                    for_each_mask(net, |prob, mask| {
                        let t = net.forward_stochastic(x, mask)?;
                        for ((v, m), h) in vars.iter_mut().zip(&means).zip(&t.layer_outputs[1..]) {
                            *v += prob * h.dist_sq(m);
                        }
                        Ok(())
                    })?;
                    Ok(vars.into_iter().map(|v| (v, 0.0)).collect())
                }
                Estimator::MonteCarlo { samples, seed } => {
                    let mut rng = example_stream(seed, i);
                    let mut kept: Vec<Vec<Vector>> = vec![Vec::with_capacity(samples); layers];
                    for _ in 0..samples {
                        let t = net.forward_stochastic(x, &net.sample_mask(&mut rng))?;
                        for (k, h) in kept.iter_mut().zip(t.layer_outputs.into_iter().skip(1)) {
                            k.push(h);
                        }
                    }
                    Ok(kept.iter().map(|hs| trace_variance_with_error(hs)).collect())
                }
            }
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    Ok((0..layers)
        .map(|l| Estimate {
            value: rows.iter().map(|r| r[l].0).sum::<f64>() / n,
            std_error: rows.iter().map(|r| r[l].1).sum::<f64>() / n,
        })
        .collect())
}

/// Unbiased `tr Σ̂` of the samples and the standard error of that estimate.
fn trace_variance_with_error(hs: &[Vector]) -> (f64, f64) {
    let m = hs.len() as f64;
    let mut w = Welford::new(hs[0].len());
    hs.iter().for_each(|h| w.push(h));
    let mean = w.mean();
    let mut dev = Welford::new(1);
    hs.iter().for_each(|h| dev.push(&[h.dist_sq(&mean) * m / (m - 1.0)]));
    (w.trace_variance(), dev.mean_error())
}

/// Network gap `E_X ‖E_S[H^(L)(X, S)] − h^(L)(X, E[S])‖₂`.
pub fn network_delta(net: &Network, ds: &Dataset, est: Estimator) -> Result<Estimate> {
    let est = est.check()?;
    average(ds, |i, x| {
        let det = net.output_deterministic(x)?;
        match est {
            Estimator::Exact => Ok((enumerate_expectation(net, x)?.dist_sq(&det).sqrt(), 0.0)),
            Estimator::MonteCarlo { samples, seed } => {
                let w = output_welford(net, x, samples, &mut example_stream(seed, i))?;
                Ok((w.mean().dist_sq(&det).sqrt(), w.mean_error()))
            }
        }
    })
}

pub(crate) fn output_welford(net: &Network, x: &[f64], samples: usize, rng: &mut RngStream) -> Result<Welford> {
    let mut w = Welford::new(net.output_dim());
    for _ in 0..samples {
        w.push(&net.output_stochastic(x, &net.sample_mask(rng))?);
    }
    Ok(w)
}

/// Penalty `V = (1/n) Σ ‖E_S[h^(L)(x_i, S)] − h^(L)(x_i, E[S])‖₂²`.
///
/// The Monte-Carlo form is the plug-in `‖ȳ − c‖²`, whose bias is
/// `tr Σ / m`; its reported error is `sqrt(4 (ȳ−c)ᵀ Σ̂ (ȳ−c) / m) + tr Σ̂ / m`.
pub fn penalty(net: &Network, ds: &Dataset, est: Estimator) -> Result<Estimate> {
    let est = est.check()?;
    average(ds, |i, x| match est {
        Estimator::Exact => Ok((el_penalty_exact(net, x)?, 0.0)),
        Estimator::MonteCarlo { samples, seed } => {
            let mut rng = example_stream(seed, i);
            let det = net.output_deterministic(x)?;
            let outs: Vec<Vector> = (0..samples)
                .map(|_| net.output_stochastic(x, &net.sample_mask(&mut rng)))
                .collect::<Result<_>>()?;
            let k = det.len();
            let m = samples as f64;
            let mut mean = vec![0.0; k];
            for h in &outs {
                mean.iter_mut().zip(h.iter()).for_each(|(a, v)| *a += v / m);
            }
            let dir: Vec<f64> = mean.iter().zip(det.iter()).map(|(a, c)| a - c).collect();
            let (mut proj, mut tr) = (0.0, 0.0);
            for h in &outs {
                let dev: Vec<f64> = h.iter().zip(&mean).map(|(v, a)| v - a).collect();
                proj += dev.iter().zip(&dir).map(|(d, u)| d * u).sum::<f64>().powi(2);
                tr += dev.iter().map(|d| d * d).sum::<f64>();
            }
            proj /= m - 1.0;
            tr /= m - 1.0;
            let v = dir.iter().map(|d| d * d).sum::<f64>();
            Ok((v, (4.0 * proj / m).sqrt() + tr / m))
        }
    })
}

/// Mean of the single-mask surrogate `‖h^(L)(x, s) − h^(L)(x, E[S])‖₂²`
/// over fresh masks; its expectation is `V + E_X[tr Var(H^(L) | X)]`.
pub fn penalty_surrogate(net: &Network, ds: &Dataset, samples: usize, seed: u64) -> Result<Estimate> {
    if samples < 2 {
        return Err(Error::Domain(format!("need at least 2 Monte-Carlo samples, got {samples}")));
    }
    average(ds, |i, x| {
        let mut rng = example_stream(seed, i);
        let det = net.output_deterministic(x)?;
        let mut w = Welford::new(1);
        for _ in 0..samples {
            w.push(&[net.output_stochastic(x, &net.sample_mask(&mut rng))?.dist_sq(&det)]);
        }
        Ok((w.mean()[0], w.mean_error()))
    })
}

/// `max ‖h^(idx)‖₂` over the dataset, the deterministic pass, and every mask
/// (exact) or `samples` sampled masks per example. `idx = 0` is the input.
pub fn max_layer_norm(net: &Network, ds: &Dataset, idx: usize, est: Estimator) -> Result<f64> {
    if idx > net.num_layers() {
        return Err(Error::Domain(format!("layer output {idx} out of range")));
    }
    nonempty(ds)?;
    let est = est.check()?;
    let per: Vec<f64> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let x = ds.inputs()[i].as_slice();
            let mut best = net.forward_deterministic(x)?.layer_outputs[idx].norm();
            match est {
                Estimator::Exact => for_each_mask_in(net, 0..idx, |_, mask| {
                    best = best.max(net.forward_stochastic(x, mask)?.layer_outputs[idx].norm());
                    Ok(())
                })?,
                Estimator::MonteCarlo { samples, seed } => {
                    let mut rng = example_stream(seed, i);
                    for _ in 0..samples {
                        let mask = net.sample_mask(&mut rng);
                        best = best.max(net.forward_stochastic(x, &mask)?.layer_outputs[idx].norm());
                    }
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().fold(0.0, f64::max))
}

/// `(−Σ log Σ_s Pr[s] p(y|x,s), −Σ Σ_s Pr[s] log p(y|x,s))` by enumeration.
/// The first never exceeds the second.
pub fn jensen_check(net: &Network, ds: &Dataset) -> Result<(f64, f64)> {
    if !net.has_softmax_output() {
        return Err(Error::Network("likelihood requires a softmax output layer".into()));
    }
    let rows: Vec<(f64, f64)> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = ds.get(i);
            let (mut marginal, mut expected) = (0.0, 0.0);
            for_each_mask(net, |prob, mask| {
                let p = net.output_stochastic(x, mask)?[y];
                marginal += prob * p;
                expected -= prob * p.max(PROB_FLOOR).ln();
                Ok(())
            })?;
            Ok((-marginal.max(PROB_FLOOR).ln(), expected))
        })
        .collect::<Result<_>>()?;
    Ok(rows.iter().fold((0.0, 0.0), |(a, b), r| (a + r.0, b + r.1)))
}
