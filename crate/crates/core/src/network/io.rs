//! Little-endian binary container for trained networks.
//!
//! ```text
//! "ELDN" | version u32 | layer count u32
//! per layer: out u32 | in u32 | activation u8 | keep_prob f64
//!            | out·in f64 weights (row-major) | out f64 biases
//! ```

use std::fs;
use std::path::Path;

use super::{Activation, DenseLayer, Network};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Vector};

pub const MAGIC: &[u8; 4] = b"ELDN";
pub const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("truncated: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Network {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            out.extend_from_slice(&(layer.output_dim() as u32).to_le_bytes());
            out.extend_from_slice(&(layer.input_dim() as u32).to_le_bytes());
            out.push(layer.activation.tag());
            out.extend_from_slice(&layer.keep_prob.to_le_bytes());
            for w in layer.weights.data() {
                out.extend_from_slice(&w.to_le_bytes());
            }
            for b in layer.bias.iter() {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic, expected \"ELDN\"".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let start = r.pos;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let tag_at = r.pos;
            let tag = r.take(1)?[0];
            let activation = Activation::from_tag(tag).ok_or_else(|| Error::Format {
                offset: tag_at,
                message: format!("unknown activation tag {tag}"),
            })?;
            let keep_prob = r.f64()?;
            let mut w = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                w.push(r.f64()?);
            }
            let mut b = Vec::with_capacity(rows);
            for _ in 0..rows {
                b.push(r.f64()?);
            }
            let weights = Matrix::from_vec(rows, cols, w).map_err(|e| Error::Format {
                offset: start,
                message: e.to_string(),
            })?;
            let layer = DenseLayer::new(weights, Vector::new(b), activation, keep_prob).map_err(|e| {
                Error::Format {
                    offset: start,
                    message: e.to_string(),
                }
            })?;
            layers.push(layer);
        }
        if r.pos != buf.len() {
            return Err(Error::Format {
                offset: r.pos,
                message: "trailing bytes after last layer".into(),
            });
        }
        let input_dim = layers.first().map_or(0, DenseLayer::input_dim);
        Network::new(input_dim, layers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Network::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;
    use crate::tensor::{streams, RngStream};

    fn net() -> Network {
        let arch = Architecture {
            input_dim: 4,
            hidden: vec![3, 5],
            hidden_activation: Activation::Relu,
            output_dim: 2,
            output_activation: Activation::Softmax,
            input_keep: 0.8,
            hidden_keep: 0.5,
        };
        Network::glorot(&arch, &mut RngStream::new(1, streams::INIT)).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = net().to_bytes();
        assert_eq!(&bytes[..4], b"ELDN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        // first layer: out=3, in=4, relu, keep 0.8
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 4);
        assert_eq!(bytes[20], 3);
        assert_eq!(f64::from_le_bytes(bytes[21..29].try_into().unwrap()), 0.8);
        let expected_len = 12 + (9 + 8 + 8 * (12 + 3)) + (9 + 8 + 8 * (15 + 5)) + (9 + 8 + 8 * (10 + 2));
        assert_eq!(bytes.len(), expected_len);
    }

    #[test]
    fn round_trip() {
        let n = net();
        assert_eq!(Network::from_bytes(&n.to_bytes()).unwrap(), n);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = net().to_bytes();
        match Network::from_bytes(&bytes[..30]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 29),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Network::from_bytes(b"XXXX"), Err(Error::Format { offset: 0, .. })));
    }
}
