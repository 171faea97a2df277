//! Utterance text → fixed-width edge feature.
//!
//! [`HashingEncoder`] is a signed feature-hashing bag of tokens. Anything that
//! produces a `d_e`-vector per utterance can stand in for it through
//! [`EdgeEncoder`]; [`LookupEncoder`] serves vectors computed elsewhere.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub trait EdgeEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, utterance: &str) -> Result<Tensor>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub dim: usize,
    pub lowercase: bool,
    pub seed: u64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec { dim: 32, lowercase: true, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEncoder {
    spec: EncoderSpec,
}

impl HashingEncoder {
    pub fn new(spec: EncoderSpec) -> Self {
        HashingEncoder { spec }
    }

    pub fn try_new(spec: EncoderSpec) -> Result<Self> {
        if spec.dim == 0 {
            return Err(Error::InvalidArgument("encoder dimension must be at least 1".into()));
        }
        Ok(Self::new(spec))
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    /// `(bucket, sign)` for one token.
    pub fn slot(&self, token: &str) -> (usize, f64) {
        let h = token_hash(token.as_bytes(), self.spec.seed);
        let bucket = (h % self.spec.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        (bucket, sign)
    }

    pub fn encode_vec(&self, utterance: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.spec.dim];
        let mut add = |tok: &str| {
            let (b, s) = self.slot(tok);
            v[b] += s;
        };
        if self.spec.lowercase {
            for tok in utterance.split_whitespace() {
                add(&tok.to_lowercase());
            }
        } else {
            utterance.split_whitespace().for_each(&mut add);
        }
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EdgeEncoder for HashingEncoder {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn encode(&self, utterance: &str) -> Result<Tensor> {
        Tensor::vector(self.encode_vec(utterance))
    }
}

/// Convenience wrapper over [`HashingEncoder`].
pub fn encode_utterance(text: &str, spec: &EncoderSpec) -> Tensor {
    let v = HashingEncoder::new(*spec).encode_vec(text);
    Tensor::from_parts(vec![v.len()], v)
}

// FNV-1a with the seed folded into the offset basis, then a splitmix64
// finalizer so low bits are usable as a bucket.
fn token_hash(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ splitmix(seed);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Serves precomputed vectors keyed by utterance text.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupEncoder {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl LookupEncoder {
    pub fn new(dim: usize, vectors: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        for (k, v) in &vectors {
            if v.len() != dim {
                return Err(Error::Shape { op: "lookup_encoder", detail: format!("`{k}` has {} entries, expected {dim}", v.len()) });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { op: "lookup_encoder" });
            }
        }
        Ok(LookupEncoder { dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EdgeEncoder for LookupEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, utterance: &str) -> Result<Tensor> {
        self.vectors
            .get(utterance)
            .map(|v| Tensor::from_parts(vec![self.dim], v.clone()))
            .ok_or_else(|| Error::MissingEmbedding(format!("utterance `{utterance}`")))
    }
}
