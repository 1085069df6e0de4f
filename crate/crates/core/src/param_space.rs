//! Flat parameter vectors with named segment views, and the seeded random
//! source shared by problem generation and initialization.
//!
//! Every optimizer in this crate treats the trainable parameters as one flat
//! `f64` vector. Problems that have several factors (`U`, `V`, ...) describe
//! them with a [`Layout`]: an ordered list of contiguous, disjoint segments
//! that exactly cover the vector.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered, contiguous segment table for a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
    len: usize,
}

impl Layout {
    /// Builds a layout from `(name, length)` pairs laid out back to back.
    pub fn new<S: Into<String>>(parts: impl IntoIterator<Item = (S, usize)>) -> Self {
        let mut offset = 0;
        let segments = parts
            .into_iter()
            .map(|(name, len)| {
                let seg = Segment {
                    name: name.into(),
                    offset,
                    len,
                };
                offset += len;
                seg
            })
            .collect();
        Layout {
            segments,
            len: offset,
        }
    }

    /// A single unnamed segment `theta` of length `n`.
    pub fn flat(n: usize) -> Self {
        Layout::new([("theta", n)])
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Flat parameter vector θ.
#[derive(Clone, PartialEq)]
pub struct ParamVector {
    data: Vec<f64>,
    layout: Arc<Layout>,
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamVector")
            .field("data", &self.data)
            .field("segments", &self.layout.segments)
            .finish()
    }
}

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        ParamVector::from_vec(vec![0.0; n])
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        let layout = Arc::new(Layout::flat(data.len()));
        ParamVector { data, layout }
    }

    pub fn with_layout(data: Vec<f64>, layout: Arc<Layout>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::LengthMismatch {
                expected: layout.len(),
                actual: data.len(),
            });
        }
        Ok(ParamVector { data, layout })
    }

    /// Zero vector sharing this vector's layout.
    pub fn zeros_like(&self) -> Self {
        ParamVector {
            data: vec![0.0; self.data.len()],
            layout: Arc::clone(&self.layout),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .segment(name)
            .map(|s| &self.data[s.offset..s.offset + s.len])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let seg = self.layout.segment(name)?.clone();
        Some(&mut self.data[seg.offset..seg.offset + seg.len])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Euclidean norm without a finiteness check; NaN propagates.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Euclidean norm, rejecting corrupted (non-finite) input.
    pub fn l2_norm(&self) -> Result<f64> {
        if !self.is_finite() {
            return Err(Error::NonFinite {
                context: "l2_norm input",
            });
        }
        Ok(self.norm())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    /// `‖self − other‖₂`, panicking on length mismatch.
    pub fn distance(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.len(), other.len(), "distance: length mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.len(), other.len(), "dot: length mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, a: f64) -> ParamVector {
        self.map(|x| a * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ParamVector {
        ParamVector {
            data: self.data.iter().map(|&x| f(x)).collect(),
            layout: Arc::clone(&self.layout),
        }
    }

    /// `self += a·x`.
    pub fn axpy_assign(&mut self, a: f64, x: &ParamVector) {
        assert_eq!(self.len(), x.len(), "axpy_assign: length mismatch");
        for (s, xi) in self.data.iter_mut().zip(&x.data) {
            *s += a * xi;
        }
    }

    fn check_same_len(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(())
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(data: Vec<f64>) -> Self {
        ParamVector::from_vec(data)
    }
}

/// Elementwise `a·x + b·y`, keeping the layout of `x`.
pub fn axpby(a: f64, x: &ParamVector, b: f64, y: &ParamVector) -> Result<ParamVector> {
    x.check_same_len(y)?;
    Ok(ParamVector {
        data: x
            .data
            .iter()
            .zip(&y.data)
            .map(|(xi, yi)| a * xi + b * yi)
            .collect(),
        layout: Arc::clone(&x.layout),
    })
}

/// Seeded random source (ChaCha8 keyed by a 64-bit seed).
///
/// `Rng::new(seed)` and `Rng::stream(seed, k)` give reproducible, mutually
/// independent streams; problem data and parameter initialization draw from
/// different streams of the same seed.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng::stream(seed, 0)
    }

    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// `+1.0` or `-1.0` with equal probability.
    pub fn sign(&mut self) -> f64 {
        if self.inner.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        // std validity is checked by the callers that accept user input
        Normal::new(mean, std)
            .expect("normal: std must be finite and non-negative")
            .sample(&mut self.inner)
    }

    /// `n` independent N(mean, std²) draws.
    pub fn gaussian_fill(&mut self, n: usize, mean: f64, std: f64) -> Result<ParamVector> {
        if n == 0 {
            return Err(Error::InvalidConfig("gaussian_fill: n must be >= 1".into()));
        }
        if !(std >= 0.0 && std.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gaussian_fill: need finite mean and std >= 0, got mean={mean}, std={std}"
            )));
        }
        let dist = Normal::new(mean, std).expect("validated above");
        Ok(ParamVector::from_vec(
            (0..n).map(|_| dist.sample(&mut self.inner)).collect(),
        ))
    }

    /// `amount` distinct indices from `0..len`, in ascending order.
    pub fn sample_indices(&mut self, len: usize, amount: usize) -> Vec<usize> {
        let mut idx = index::sample(&mut self.inner, len, amount).into_vec();
        idx.sort_unstable();
        idx
    }
}
