//! Regularized dropout loss: negative log-likelihood under a sampled mask plus
//! `λ` times the squared gap between the sampled output and the deterministic
//! (mean-mask) output, with exact gradients through both forward passes.

use crate::error::{Error, Result};
use crate::network::{enumerate_expectation, Activation, MaskSample, Network};
use crate::tensor::{Matrix, Vector};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-300;

/// One labeled example borrowed from a dataset.
pub type Example<'a> = (&'a [f64], usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nll {
    pub value: f64,
    /// The predicted probability was below [`PROB_FLOOR`].
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub nll: f64,
    pub penalty: f64,
    pub total: f64,
    pub lambda: f64,
    /// Number of examples whose likelihood hit the floor.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub bias: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        GradientSet {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGradient {
                    weights: Matrix::zeros(l.output_dim(), l.input_dim()),
                    bias: Vector::zeros(l.output_dim()),
                })
                .collect(),
        }
    }

    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|g| !g.bias.is_finite() || g.weights.data().iter().any(|v| !v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|g| g.weights.data().iter().chain(g.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn require_softmax(net: &Network) -> Result<()> {
    if !net.has_softmax_output() {
        return Err(Error::Network("likelihood requires a softmax output layer".into()));
    }
    Ok(())
}

fn nll_from_output(h: &[f64], y: usize) -> Result<Nll> {
    let p = *h.get(y).ok_or_else(|| Error::Domain(format!("class {y} not below {}", h.len())))?;
    let clamped = p < PROB_FLOOR;
    if clamped {
        log::debug!("likelihood {p:e} for class {y} clamped to {PROB_FLOOR:e}");
    }
    Ok(Nll {
        value: -p.max(PROB_FLOOR).ln(),
        clamped,
    })
}

/// `-log h_L[y](x, s)` for a softmax network.
pub fn nll_loss(net: &Network, x: &[f64], y: usize, s: &MaskSample) -> Result<Nll> {
    require_softmax(net)?;
    let h = net.output_stochastic(x, s)?;
    nll_from_output(&h, y)
}

/// `‖E_S[h_L(x, S)] − h_L(x, E[S])‖²`, exact by mask enumeration.
pub fn el_penalty_exact(net: &Network, x: &[f64]) -> Result<f64> {
    let mean = enumerate_expectation(net, x)?;
    let det = net.output_deterministic(x)?;
    Ok(mean.dist_sq(&det))
}

/// Single-sample surrogate `‖h_L(x, s) − h_L(x, E[S])‖²`.
pub fn el_penalty_mc(net: &Network, x: &[f64], s: &MaskSample) -> Result<f64> {
    let h = net.output_stochastic(x, s)?;
    let det = net.output_deterministic(x)?;
    Ok(h.dist_sq(&det))
}

/// Input scaling of one forward pass: a sampled mask or the keep-probability.
#[derive(Clone, Copy)]
enum Gate<'a> {
    Mask(&'a MaskSample),
    Mean,
}

impl Gate<'_> {
    fn apply(&self, net: &Network, layer: usize, v: &[f64]) -> Vec<f64> {
        match self {
            Gate::Mask(s) => v.iter().zip(s.masks[layer].iter()).map(|(a, m)| a * m).collect(),
            Gate::Mean => {
                let p = net.layers()[layer].keep_prob;
                v.iter().map(|a| a * p).collect()
            }
        }
    }
}

/// Softmax vector-Jacobian product: `p ⊙ (g − ⟨p, g⟩)`.
fn softmax_vjp(p: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)).collect()
}

/// Accumulates `scale · ∂/∂θ` for one forward pass, given the gradient with
/// respect to the last pre-activation.
fn backprop(
    net: &Network,
    outputs: &[Vector],
    gate: Gate<'_>,
    mut dz: Vec<f64>,
    scale: f64,
    grads: &mut GradientSet,
) -> Result<()> {
    for l in (0..net.num_layers()).rev() {
        let layer = &net.layers()[l];
        let input = gate.apply(net, l, &outputs[l]);
        let g = &mut grads.layers[l];
        g.weights.add_outer(scale, &dz, &input);
        for (b, d) in g.bias.iter_mut().zip(&dz) {
            *b += scale * d;
        }
        if l == 0 {
            break;
        }
        let da = layer.weights.matvec_t(&dz)?;
        let dh = gate.apply(net, l, &da);
        let act = net.layers()[l - 1].activation;
        dz = dh
            .iter()
            .zip(outputs[l].iter())
            .map(|(d, &h)| d * act.derivative_from_output(h))
            .collect();
    }
    Ok(())
}

fn check_batch(batch: &[Example<'_>], masks: &[MaskSample], lambda: f64) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    if masks.len() != batch.len() {
        return Err(Error::dim("masks per batch", batch.len(), masks.len()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    Ok(())
}

/// Loss value only; same arithmetic as [`loss_and_grad`].
pub fn batch_loss(net: &Network, batch: &[Example<'_>], masks: &[MaskSample], lambda: f64) -> Result<LossBreakdown> {
    require_softmax(net)?;
    check_batch(batch, masks, lambda)?;
    let mut nll = 0.0;
    let mut penalty = 0.0;
    let mut clamped = 0;
    for (&(x, y), s) in batch.iter().zip(masks) {
        let h = net.output_stochastic(x, s)?;
        let det = net.output_deterministic(x)?;
        let n = nll_from_output(&h, y)?;
        nll += n.value;
        clamped += usize::from(n.clamped);
        penalty += h.dist_sq(&det);
    }
    Ok(breakdown(nll, penalty, batch.len(), lambda, clamped))
}

fn breakdown(nll_sum: f64, pen_sum: f64, n: usize, lambda: f64, clamped: usize) -> LossBreakdown {
    let nll = nll_sum / n as f64;
    let penalty = pen_sum / n as f64;
    LossBreakdown {
        nll,
        penalty,
        total: nll + lambda * penalty,
        lambda,
        clamped,
    }
}

/// Mean over the batch of `nll(x, y, s) + λ·‖h_L(x, s) − h_L(x, E[S])‖²` and
/// its exact gradient.
///
/// The stochastic and deterministic passes share all parameters, so both
/// contribute to every gradient entry. Examples are reduced in index order.
pub fn loss_and_grad(
    net: &Network,
    batch: &[Example<'_>],
    masks: &[MaskSample],
    lambda: f64,
) -> Result<(LossBreakdown, GradientSet)> {
    require_softmax(net)?;
    check_batch(batch, masks, lambda)?;
    let scale = 1.0 / batch.len() as f64;
    let mut grads = GradientSet::zeros_like(net);
    let mut nll = 0.0;
    let mut penalty = 0.0;
    let mut clamped = 0;

    for (&(x, y), s) in batch.iter().zip(masks) {
        let stoch = net.forward_stochastic(x, s)?;
        let det = net.forward_deterministic(x)?;
        let p = stoch.output();
        let q = det.output();

        let n = nll_from_output(p, y)?;
        nll += n.value;
        clamped += usize::from(n.clamped);
        penalty += p.dist_sq(q);

        // ∂(-log p_y)/∂z = p - e_y, zero once the floor is active
        let mut dz: Vec<f64> = if n.clamped {
            vec![0.0; p.len()]
        } else {
            let mut d = p.to_vec();
            d[y] -= 1.0;
            d
        };
        if lambda > 0.0 {
            let diff: Vec<f64> = p.iter().zip(q.iter()).map(|(a, b)| 2.0 * lambda * (a - b)).collect();
            for (d, v) in dz.iter_mut().zip(softmax_vjp(p, &diff)) {
                *d += v;
            }
            let neg: Vec<f64> = diff.iter().map(|v| -v).collect();
            let dz_det = softmax_vjp(q, &neg);
            backprop(net, &det.layer_outputs, Gate::Mean, dz_det, scale, &mut grads)?;
        }
        backprop(net, &stoch.layer_outputs, Gate::Mask(s), dz, scale, &mut grads)?;
    }

    if let Some(layer) = grads.first_non_finite_layer() {
        return Err(Error::NonFinite {
            context: "gradient".into(),
            layer,
        });
    }
    Ok((breakdown(nll, penalty, batch.len(), lambda, clamped), grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight { row: usize, col: usize },
    Bias { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_layer: usize,
    pub worst_param: ParamKind,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Denominator floor of [`relative_error`].
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// Relative error `|a − n| / max(|a|, |n|, 1e-3)`.
///
/// Below the floor the measure degrades to a scaled absolute error; exactly
/// zero entries (inputs dropped by the mask) would otherwise compare rounding
/// noise against zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares [`loss_and_grad`] with central differences of the total loss for
/// every parameter, masks held fixed.
pub fn check_gradients(
    net: &Network,
    batch: &[Example<'_>],
    masks: &[MaskSample],
    lambda: f64,
    step: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {step}")));
    }
    let (_, grads) = loss_and_grad(net, batch, masks, lambda)?;
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_layer: 0,
        worst_param: ParamKind::Bias { index: 0 },
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };

    let eval = |probe: &mut Network, l: usize, kind: ParamKind| -> Result<f64> {
        let read = |n: &Network| match kind {
            ParamKind::Weight { row, col } => n.layers()[l].weights.get(row, col),
            ParamKind::Bias { index } => n.layers()[l].bias[index],
        };
        let write = |n: &mut Network, v: f64| match kind {
            ParamKind::Weight { row, col } => n.layers_mut()[l].weights.set(row, col, v),
            ParamKind::Bias { index } => n.layers_mut()[l].bias[index] = v,
        };
        let orig = read(probe);
        write(probe, orig + step);
        let plus = batch_loss(probe, batch, masks, lambda)?.total;
        write(probe, orig - step);
        let minus = batch_loss(probe, batch, masks, lambda)?.total;
        write(probe, orig);
        Ok((plus - minus) / (2.0 * step))
    };

    for (l, layer) in net.layers().iter().enumerate() {
        let params = (0..layer.output_dim())
            .flat_map(|row| (0..layer.input_dim()).map(move |col| ParamKind::Weight { row, col }))
            .chain((0..layer.output_dim()).map(|index| ParamKind::Bias { index }));
        for kind in params {
            let analytic = match kind {
                ParamKind::Weight { row, col } => grads.layers[l].weights.get(row, col),
                ParamKind::Bias { index } => grads.layers[l].bias[index],
            };
            let numeric = eval(&mut probe, l, kind)?;
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err >= report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: err,
                    worst_layer: l,
                    worst_param: kind,
                    analytic,
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}

/// Whether every hidden ReLU pre-activation of both passes stays at least
/// `margin` away from the kink at 0, so finite differences are valid.
pub fn relu_kinks_avoided(net: &Network, batch: &[Example<'_>], masks: &[MaskSample], margin: f64) -> Result<bool> {
    for (&(x, _), s) in batch.iter().zip(masks) {
        for gate in [Gate::Mask(s), Gate::Mean] {
            let mut h = x.to_vec();
            for (l, layer) in net.layers().iter().enumerate() {
                let input = gate.apply(net, l, &h);
                let mut z = layer.weights.matvec(&input)?;
                for (zi, bi) in z.iter_mut().zip(layer.bias.iter()) {
                    *zi += bi;
                }
                if layer.activation == Activation::Relu && z.iter().any(|v| v.abs() <= margin) {
                    return Ok(false);
                }
                layer.activation.apply(&mut z);
                h = z.into_inner();
            }
        }
    }
    Ok(true)
}
