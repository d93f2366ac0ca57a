//! Numeric primitives shared by every layer: the versioned model vector,
//! weighted averaging, and the seeded random streams.
//!
//! # Random streams
//!
//! A [`RngStream`] is named by a root seed and a slash-separated label path
//! (`"engine/client:3/round:7"`). Its 32-byte ChaCha20 key is
//! `SHA-256("aflsim/rng/v1" || seed as u64 LE || path as UTF-8)`, so a stream
//! depends only on `(seed, path)` and never on the order in which streams are
//! derived. ChaCha20 output is specified bit-for-bit, which keeps event logs
//! identical across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dense global model weights plus the number of aggregations applied so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVector {
    weights: Vec<f64>,
    version: u64,
}

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            version: 0,
        }
    }

    pub fn new(weights: Vec<f64>, version: u64) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self { weights, version })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Adds `delta` to the weights and bumps the version by one.
    ///
    /// A non-finite result is reported as [`Error::NonFiniteModel`] and the
    /// model is left untouched.
    pub fn apply_delta(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: delta.len(),
            });
        }
        let weights: Vec<f64> = self.weights.iter().zip(delta).map(|(w, d)| w + d).collect();
        let version = self.version + 1;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteModel { version });
        }
        Ok(Self { weights, version })
    }
}

/// `Σ wᵢ·vᵢ / Σ wᵢ`, accumulated in ascending index order.
pub fn weighted_mean<V: AsRef<[f64]>>(vectors: &[V], weights: &[f64]) -> Result<Vec<f64>> {
    let first = vectors.first().ok_or(Error::EmptyInput)?.as_ref();
    if weights.len() != vectors.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.len(),
            found: weights.len(),
        });
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, w)| !(**w > 0.0)) {
        return Err(Error::NonPositiveWeight { index, value });
    }
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    let mut total = 0.0;
    for (v, &w) in vectors.iter().zip(weights) {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += w * x;
        }
        total += w;
    }
    for a in &mut acc {
        *a /= total;
    }
    Ok(acc)
}

pub fn l2_norm_sq(v: &[f64]) -> Result<f64> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(v.iter().map(|x| x * x).sum())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A named, reproducible source of randomness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    path: String,
}

impl RngStream {
    pub fn root(seed: u64) -> Self {
        Self {
            seed,
            path: String::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    /// Child stream named `label` under this one.
    pub fn derive(&self, label: &str) -> Self {
        let path = if self.path.is_empty() {
            label.to_string()
        } else {
            format!("{}/{}", self.path, label)
        };
        Self { seed: self.seed, path }
    }

    pub fn key(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"aflsim/rng/v1");
        hasher.update(self.seed.to_le_bytes());
        hasher.update(self.path.as_bytes());
        hasher.finalize().into()
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.key())
    }
}

/// Free-function form of [`RngStream::derive`].
pub fn rng_derive(parent: &RngStream, label: &str) -> RngStream {
    parent.derive(label)
}
