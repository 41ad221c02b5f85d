//! Mini-batch SGD with momentum, per-epoch learning-rate decay, and max-norm
//! projection of incoming weight rows.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{error_rate, measure_gap, InferenceConfig};
use crate::network::{DenseLayer, MaskSample, Network};
use crate::objective::{loss_and_grad, Example, GradientSet};
use crate::tensor::{streams, Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentumKind {
    Standard,
    Nesterov,
}

impl std::str::FromStr for MomentumKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(MomentumKind::Standard),
            "nesterov" => Ok(MomentumKind::Nesterov),
            other => Err(Error::Domain(format!("unknown momentum kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for MomentumKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MomentumKind::Standard => "standard",
            MomentumKind::Nesterov => "nesterov",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub eta0: f64,
    /// Decay rate `ρ` in `η_t = η_0 / (1 + ρt)`.
    pub rho: f64,
    pub momentum: f64,
    pub momentum_kind: MomentumKind,
    pub max_norm: Option<f64>,
    /// Weight decay on weights only.
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Measure the inference gap every this many epochs (and at the last).
    pub gap_every: Option<usize>,
    pub gap_mc_samples: usize,
    /// Return the parameters with the lowest validation error instead of the
    /// final ones.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.0,
            eta0: 0.1,
            rho: 0.025,
            momentum: 0.9,
            momentum_kind: MomentumKind::Standard,
            max_norm: Some(3.5),
            l2: 0.0,
            batch_size: 200,
            epochs: 100,
            seed: 0,
            gap_every: None,
            gap_mc_samples: 100,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Domain(format!("invalid {what}: {v}")));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", self.lambda);
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return bad("eta0", self.eta0);
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad("rho", self.rho);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", self.momentum);
        }
        if let Some(c) = self.max_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad("max_norm", c);
            }
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2", self.l2);
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch_size must be positive".into()));
        }
        if self.gap_every == Some(0) {
            return Err(Error::Domain("gap_every must be positive".into()));
        }
        if self.gap_every.is_some() && self.gap_mc_samples < 2 {
            return Err(Error::Domain("gap_mc_samples must be at least 2".into()));
        }
        Ok(())
    }
}

/// `η_0 / (1 + ρt)` where `t` counts completed epochs.
pub fn lr_at_epoch(cfg: &TrainConfig, t: usize) -> f64 {
    cfg.eta0 / (1.0 + cfg.rho * t as f64)
}

/// Rescales every weight row whose L2 norm exceeds `c` to norm `c`.
pub fn max_norm_project(layer: &DenseLayer, c: f64) -> DenseLayer {
    let mut out = layer.clone();
    project_rows(&mut out.weights, c);
    out
}

fn project_rows(w: &mut Matrix, c: f64) {
    for r in 0..w.rows() {
        let row = w.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > c {
            let s = c / norm;
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Largest weight-row L2 norm across all layers.
pub fn max_row_norm(net: &Network) -> f64 {
    net.layers()
        .iter()
        .flat_map(|l| (0..l.weights.rows()).map(move |r| l.weights.row(r).iter().map(|v| v * v).sum::<f64>().sqrt()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub nll: f64,
    pub penalty: f64,
    pub total: f64,
    /// Standard-inference error in percent; `None` without a validation set.
    pub val_error: Option<f64>,
    pub delta_hat: Option<f64>,
    /// Largest row norm seen after any update during the epoch.
    pub max_row_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned when `keep_best` is set.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,nll,penalty,total,val_error,delta_hat";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.lr,
                r.nll,
                r.penalty,
                r.total,
                opt(r.val_error),
                opt(r.delta_hat)
            );
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

fn zero_velocity(net: &Network) -> GradientSet {
    GradientSet::zeros_like(net)
}

fn add_scaled(net: &mut Network, v: &GradientSet, s: f64) {
    for (layer, g) in net.layers_mut().iter_mut().zip(&v.layers) {
        for (w, d) in layer.weights.data_mut().iter_mut().zip(g.weights.data()) {
            *w += s * d;
        }
        for (b, d) in layer.bias.iter_mut().zip(g.bias.iter()) {
            *b += s * d;
        }
    }
}

/// Trains `net` on `train_set`; the shuffling order and dropout masks come
/// from the `SHUFFLE` and `MASK` streams of `cfg.seed`.
pub fn train(net: &Network, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<(Network, TrainLog)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Domain("empty training set".into()));
    }
    for ds in [train_set, val_set] {
        if !ds.is_empty() && ds.dim() != net.input_dim() {
            return Err(Error::dim("training data", net.input_dim(), ds.dim()));
        }
        if let Some(&y) = ds.labels().iter().find(|&&y| y >= net.output_dim()) {
            return Err(Error::Domain(format!("label {y} exceeds network output {}", net.output_dim())));
        }
    }

    let mut net = net.clone();
    if let Some(c) = cfg.max_norm {
        net.layers_mut().iter_mut().for_each(|l| project_rows(&mut l.weights, c));
    }
    let mut velocity = zero_velocity(&net);
    let mut shuffle_rng = RngStream::new(cfg.seed, streams::SHUFFLE);
    let mut mask_rng = RngStream::new(cfg.seed, streams::MASK);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Network)> = None;

    for t in 0..cfg.epochs {
        let epoch = t + 1;
        let lr = lr_at_epoch(cfg, t);
        shuffle_rng.shuffle(&mut order);
        let (mut nll, mut penalty, mut total, mut seen) = (0.0, 0.0, 0.0, 0usize);
        let mut max_norm_seen: f64 = 0.0;

        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Example<'_>> = chunk
                .iter()
                .map(|&i| {
                    let (x, y) = train_set.get(i);
                    (x.as_slice(), y)
                })
                .collect();
            let masks: Vec<MaskSample> = chunk.iter().map(|_| net.sample_mask(&mut mask_rng)).collect();

            let at = |e: Error| annotate(e, epoch, b + 1);
            let (loss, mut grads) = match cfg.momentum_kind {
                MomentumKind::Standard => loss_and_grad(&net, &batch, &masks, cfg.lambda).map_err(at)?,
                MomentumKind::Nesterov => {
                    let mut ahead = net.clone();
                    add_scaled(&mut ahead, &velocity, cfg.momentum);
                    loss_and_grad(&ahead, &batch, &masks, cfg.lambda).map_err(at)?
                }
            };
            if !loss.total.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("loss at epoch {epoch}, batch {}", b + 1),
                    layer: net.num_layers() - 1,
                });
            }
            if cfg.l2 > 0.0 {
                for (g, layer) in grads.layers.iter_mut().zip(net.layers()) {
                    for (gw, w) in g.weights.data_mut().iter_mut().zip(layer.weights.data()) {
                        *gw += cfg.l2 * w;
                    }
                }
            }
            for (v, g) in velocity.layers.iter_mut().zip(&grads.layers) {
                for (vw, gw) in v.weights.data_mut().iter_mut().zip(g.weights.data()) {
                    *vw = cfg.momentum * *vw - lr * gw;
                }
                for (vb, gb) in v.bias.iter_mut().zip(g.bias.iter()) {
                    *vb = cfg.momentum * *vb - lr * gb;
                }
            }
            add_scaled(&mut net, &velocity, 1.0);
            if let Some(c) = cfg.max_norm {
                net.layers_mut().iter_mut().for_each(|l| project_rows(&mut l.weights, c));
            }
            if let Some(layer) = net
                .layers()
                .iter()
                .position(|l| !l.bias.is_finite() || l.weights.data().iter().any(|v| !v.is_finite()))
            {
                return Err(Error::NonFinite {
                    context: format!("parameters after epoch {epoch}, batch {}", b + 1),
                    layer,
                });
            }
            max_norm_seen = max_norm_seen.max(max_row_norm(&net));

            let n = batch.len() as f64;
            nll += loss.nll * n;
            penalty += loss.penalty * n;
            total += loss.total * n;
            seen += batch.len();
        }

        let val_error = if val_set.is_empty() {
            None
        } else {
            Some(error_rate(&net, val_set, &InferenceConfig::standard())?)
        };
        let measure = cfg.gap_every.is_some_and(|k| epoch % k == 0 || epoch == cfg.epochs);
        let delta_hat = if measure {
            let ds = if val_set.is_empty() { train_set } else { val_set };
            Some(measure_gap(&net, ds, cfg.gap_mc_samples, cfg.seed)?.delta_hat)
        } else {
            None
        };
        let n = seen as f64;
        log.records.push(EpochRecord {
            epoch,
            lr,
            nll: nll / n,
            penalty: penalty / n,
            total: total / n,
            val_error,
            delta_hat,
            max_row_norm: max_norm_seen,
        });
        log::debug!("epoch {epoch}: lr {lr:.5} loss {:.5} val {:?}", total / n, val_error);

        if cfg.keep_best {
            if let Some(e) = val_error {
                if best.as_ref().is_none_or(|(b, _)| e < *b) {
                    best = Some((e, net.clone()));
                    log.best_epoch = Some(epoch);
                }
            }
        }
    }

    Ok((best.map_or(net, |(_, n)| n), log))
}

fn annotate(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { context, layer } => Error::NonFinite {
            context: format!("{context} at epoch {epoch}, batch {batch}"),
            layer,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{sigmoid, Activation, Architecture};
    use crate::tensor::Vector;

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at_epoch(&cfg, 0), 0.1);
        assert!((lr_at_epoch(&cfg, 40) - 0.05).abs() < 1e-15);
        let flat = TrainConfig { rho: 0.0, ..cfg };
        assert!((0..50).all(|t| lr_at_epoch(&flat, t) == 0.1));
    }

    #[test]
    fn max_norm_rows() {
        let w = Matrix::from_rows(&[vec![0.0, 7.0], vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let layer = DenseLayer::new(w, Vector::zeros(3), Activation::Relu, 1.0).unwrap();
        let p = max_norm_project(&layer, 3.5);
        assert_eq!(p.weights.row(0), &[0.0, 3.5]);
        assert_eq!(p.weights.row(1), layer.weights.row(1));
        assert_eq!(p.weights.row(2), &[0.0, 0.0]);
        let q = max_norm_project(&layer, 10.0);
        assert_eq!(q, layer);
    }

    #[test]
    fn single_logistic_step_matches_hand_gradient() {
        let w = Matrix::from_rows(&[vec![0.3], vec![-0.2]]).unwrap();
        let b = Vector::new(vec![0.1, 0.0]);
        let layer = DenseLayer::new(w, b, Activation::Softmax, 1.0).unwrap();
        let net = Network::new(1, vec![layer]).unwrap();
        let ds = Dataset::new(vec![Vector::new(vec![2.0])], vec![0], 2).unwrap();
        let cfg = TrainConfig {
            momentum: 0.0,
            max_norm: None,
            epochs: 1,
            batch_size: 1,
            eta0: 0.5,
            ..TrainConfig::default()
        };
        let (out, _) = train(&net, &ds, &ds.subset(&[]), &cfg).unwrap();
        let z0 = 0.3 * 2.0 + 0.1;
        let z1 = -0.2 * 2.0;
        let p0 = sigmoid(z0 - z1);
        let g = [p0 - 1.0, 1.0 - p0];
        let l = &out.layers()[0];
        assert!((l.weights.get(0, 0) - (0.3 - 0.5 * g[0] * 2.0)).abs() < 1e-15);
        assert!((l.weights.get(1, 0) - (-0.2 - 0.5 * g[1] * 2.0)).abs() < 1e-15);
        assert!((l.bias[0] - (0.1 - 0.5 * g[0])).abs() < 1e-15);
        assert!((l.bias[1] - (0.0 - 0.5 * g[1])).abs() < 1e-15);
    }

    fn small_setup(seed: u64) -> (Network, Dataset, Dataset) {
        let arch = Architecture {
            input_dim: 4,
            hidden: vec![8],
            hidden_activation: Activation::Relu,
            output_dim: 3,
            output_activation: Activation::Softmax,
            input_keep: 0.8,
            hidden_keep: 0.5,
        };
        let net = Network::glorot(&arch, &mut RngStream::new(seed, streams::INIT)).unwrap();
        let ds = crate::data::synth_gaussians(3, 4, 40, 3.0, seed).unwrap();
        let (train, val) = crate::data::split(&ds, 30, seed).unwrap();
        (net, train, val)
    }

    #[test]
    fn training_is_deterministic_and_respects_max_norm() {
        let (net, train_set, val) = small_setup(3);
        let cfg = TrainConfig {
            lambda: 1.0,
            eta0: 0.5,
            max_norm: Some(0.6),
            batch_size: 10,
            epochs: 5,
            seed: 11,
            gap_every: Some(2),
            gap_mc_samples: 10,
            ..TrainConfig::default()
        };
        let a = train(&net, &train_set, &val, &cfg).unwrap();
        let b = train(&net, &train_set, &val, &cfg).unwrap();
        assert_eq!(a, b);
        for r in &a.1.records {
            assert!(r.max_row_norm <= 0.6 + 1e-12);
        }
        let gaps: Vec<bool> = a.1.records.iter().map(|r| r.delta_hat.is_some()).collect();
        assert_eq!(gaps, vec![false, true, false, true, true]);
        let csv = a.1.to_csv();
        assert!(csv.starts_with("epoch,lr,nll,penalty,total,val_error,delta_hat\n1,0.5,"));
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn nesterov_and_l2_run_and_learn() {
        let (net, train_set, val) = small_setup(5);
        let cfg = TrainConfig {
            momentum_kind: MomentumKind::Nesterov,
            l2: 1e-3,
            batch_size: 10,
            epochs: 30,
            eta0: 0.2,
            keep_best: true,
            ..TrainConfig::default()
        };
        let (out, log) = train(&net, &train_set, &val, &cfg).unwrap();
        let first = log.records[0].total;
        assert!(log.last().unwrap().total < first);
        let best = log.best_epoch.unwrap();
        let best_err = log.records[best - 1].val_error.unwrap();
        assert_eq!(error_rate(&out, &val, &InferenceConfig::standard()).unwrap(), best_err);
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        let (net, train_set, val) = small_setup(1);
        let bad = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(train(&net, &train_set, &val, &bad).is_err());
        let wrong = crate::data::synth_gaussians(3, 5, 4, 1.0, 0).unwrap();
        assert!(train(&net, &wrong, &val, &TrainConfig::default()).is_err());
        assert!(train(&net, &train_set.subset(&[]), &val, &TrainConfig::default()).is_err());
    }

    #[test]
    fn divergence_is_reported_with_location() {
        let (net, train_set, val) = small_setup(2);
        let cfg = TrainConfig {
            eta0: 1e300,
            momentum: 0.0,
            max_norm: None,
            batch_size: 10,
            epochs: 3,
            ..TrainConfig::default()
        };
        match train(&net, &train_set, &val, &cfg) {
            Err(Error::NonFinite { context, .. }) => assert!(context.contains("epoch 1"), "{context}"),
            other => panic!("expected a non-finite error, got {other:?}"),
        }
    }
}
