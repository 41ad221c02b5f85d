use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Vector;
use crate::error::{Error, Result};

/// Fixed stream ids, one per purpose, so that e.g. the mask sequence does not
/// shift when an unrelated consumer draws more numbers.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const MASK: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const DATA: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const MC: u64 = 6;
    pub const THEORY: u64 = 7;
}

/// A seeded ChaCha8 stream. `(seed, stream)` plus the call sequence fully
/// determines every output on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Child stream keyed by `index`; independent of how far `self` has been
    /// advanced. Used to give each example its own stream.
    pub fn derive(&self, index: u64) -> RngStream {
        let id = splitmix64(self.stream ^ splitmix64(index.wrapping_add(1)));
        RngStream::new(self.seed, id)
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random::<u64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// `true` with probability `p`; `p = 1` always keeps, `p = 0` never does.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform integer in `0..n` via rejection sampling on `u64`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Vector of independent Bernoulli(`p`) draws in `{0, 1}`.
pub fn bernoulli_vector(rng: &mut RngStream, len: usize, p: f64) -> Result<Vector> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("bernoulli probability {p} outside [0, 1]")));
    }
    Ok(Vector::new(
        (0..len)
            .map(|_| if rng.bernoulli(p) { 1.0 } else { 0.0 })
            .collect(),
    ))
}
