//! Exhaustive enumeration of dropout masks for small networks.

use std::ops::Range;

use super::{MaskSample, Network};
use crate::error::{Error, Result};
use crate::tensor::Vector;

/// Largest number of random mask entries we are willing to enumerate.
pub const ENUMERATION_CAP: usize = 24;

/// Visits every mask configuration with its probability. Positions with
/// `p = 1` are fixed at 1 and do not count toward the cap.
pub fn for_each_mask<F>(net: &Network, f: F) -> Result<()>
where
    F: FnMut(f64, &MaskSample) -> Result<()>,
{
    for_each_mask_in(net, 0..net.num_layers(), f)
}

/// Like [`for_each_mask`], but only the masks of `layers` vary; every other
/// mask is held at all-ones.
pub fn for_each_mask_in<F>(net: &Network, layers: Range<usize>, mut f: F) -> Result<()>
where
    F: FnMut(f64, &MaskSample) -> Result<()>,
{
    let mut positions = Vec::new();
    for l in layers {
        let layer = &net.layers()[l];
        if layer.keep_prob < 1.0 {
            positions.extend((0..layer.input_dim()).map(|i| (l, i, layer.keep_prob)));
        }
    }
    if positions.len() > ENUMERATION_CAP {
        return Err(Error::Capacity {
            units: positions.len(),
            cap: ENUMERATION_CAP,
        });
    }
    let mut mask = MaskSample::ones(net);
    for code in 0u64..(1u64 << positions.len()) {
        let mut prob = 1.0;
        for (bit, &(l, i, p)) in positions.iter().enumerate() {
            if code >> bit & 1 == 1 {
                mask.masks[l][i] = 1.0;
                prob *= p;
            } else {
                mask.masks[l][i] = 0.0;
                prob *= 1.0 - p;
            }
        }
        f(prob, &mask)?;
    }
    Ok(())
}

/// Exact `E_S[h_L(x, S)]` by summing over all mask configurations.
pub fn enumerate_expectation(net: &Network, x: &[f64]) -> Result<Vector> {
    let mut acc = Vector::zeros(net.output_dim());
    for_each_mask(net, |prob, mask| {
        let h = net.output_stochastic(x, mask)?;
        for (a, v) in acc.iter_mut().zip(h.iter()) {
            *a += prob * v;
        }
        Ok(())
    })?;
    Ok(acc)
}
