//! Synthetic providers for exercising the decoder without a model.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DecodeError, LogProbProvider};
use crate::autodiff::log_sum_exp;
use crate::detsim::{event_seed, PixelMap};

fn log_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let z = log_sum_exp(&v);
    v.iter_mut().for_each(|x| *x -= z);
    v
}

/// Same distribution at every position.
#[derive(Clone, Debug)]
pub struct UniformProvider {
    pub vocab_size: usize,
}

impl LogProbProvider for UniformProvider {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_log_probs(&self, _: &[usize], _: Option<(&PixelMap, &PixelMap)>) -> Result<Vec<f64>, DecodeError> {
        Ok(vec![-(self.vocab_size as f64).ln(); self.vocab_size])
    }
}

/// Explicit distributions keyed by the full context; uniform elsewhere.
#[derive(Clone, Debug, Default)]
pub struct TableProvider {
    pub vocab_size: usize,
    table: BTreeMap<Vec<usize>, Vec<f64>>,
}

impl TableProvider {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            table: BTreeMap::new(),
        }
    }

    /// Puts `mass[i]` on token `tokens[i]` and spreads the remainder
    /// uniformly over the other tokens.
    pub fn set(&mut self, context: Vec<usize>, tokens: &[usize], mass: &[f64]) {
        let used: f64 = mass.iter().sum();
        let rest = (1.0 - used).max(0.0) / (self.vocab_size - tokens.len()).max(1) as f64;
        let mut p = vec![rest; self.vocab_size];
        for (&t, &m) in tokens.iter().zip(mass) {
            p[t] = m;
        }
        self.table.insert(context, log_normalize(p.iter().map(|v| v.ln()).collect()));
    }
}

impl LogProbProvider for TableProvider {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_log_probs(&self, context: &[usize], _: Option<(&PixelMap, &PixelMap)>) -> Result<Vec<f64>, DecodeError> {
        Ok(self
            .table
            .get(context)
            .cloned()
            .unwrap_or_else(|| vec![-(self.vocab_size as f64).ln(); self.vocab_size]))
    }
}

/// Deterministic pseudo-random distribution per context. Larger
/// `sharpness` gives peakier distributions.
#[derive(Clone, Debug)]
pub struct RandomProvider {
    pub vocab_size: usize,
    pub seed: u64,
    pub sharpness: f64,
}

impl LogProbProvider for RandomProvider {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_log_probs(&self, context: &[usize], _: Option<(&PixelMap, &PixelMap)>) -> Result<Vec<f64>, DecodeError> {
        let key = context.iter().fold(self.seed, |h, &t| event_seed(h, t as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let logits = (0..self.vocab_size)
            .map(|_| self.sharpness * rng.random_range(-1.0..1.0))
            .collect();
        Ok(log_normalize(logits))
    }
}

/// Returns a vector of the wrong length.
#[derive(Clone, Debug)]
pub struct TruncatedProvider {
    pub vocab_size: usize,
}

impl LogProbProvider for TruncatedProvider {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_log_probs(&self, _: &[usize], _: Option<(&PixelMap, &PixelMap)>) -> Result<Vec<f64>, DecodeError> {
        Ok(vec![-((self.vocab_size - 1) as f64).ln(); self.vocab_size - 1])
    }
}
