//! Prefix-constrained decoding over an abstract next-token distribution,
//! first-token class scoring and temperature-scaled class confidence.

pub mod mock;
mod provider;
mod scores;
mod vocab;

pub use provider::{ModelProvider, PROVIDER_EPSILON};
pub use scores::{decode_entries, read_scores, write_scores, ScoreRecord, SCORES_HEADER};
pub use vocab::{ConstraintSpec, Vocabulary, ANSWER_PREFIX, DEFAULT_PROMPT};

use crate::autodiff::log_sum_exp;
use crate::detsim::PixelMap;
use crate::model::ModelError;
use crate::NUM_CLASSES;

pub const DEFAULT_TEMPERATURE: f64 = 5.0;
pub const DEFAULT_BEAM_WIDTH: usize = 3;

/// Providers must return log-probabilities that log-sum-exp to zero within this.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("provider interface: {0}")]
    Interface(String),
    #[error("constraint: {0}")]
    Config(String),
    #[error("domain: {0}")]
    Domain(String),
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Next-token log-probabilities over the full vocabulary.
pub trait LogProbProvider: Sync {
    fn vocab_size(&self) -> usize;

    fn next_log_probs(
        &self,
        context: &[usize],
        images: Option<(&PixelMap, &PixelMap)>,
    ) -> Result<Vec<f64>, DecodeError>;
}

fn checked_log_probs(
    provider: &dyn LogProbProvider,
    context: &[usize],
    images: Option<(&PixelMap, &PixelMap)>,
) -> Result<Vec<f64>, DecodeError> {
    let lp = provider.next_log_probs(context, images)?;
    if lp.len() != provider.vocab_size() {
        return Err(DecodeError::Interface(format!(
            "expected {} log-probabilities, got {}",
            provider.vocab_size(),
            lp.len()
        )));
    }
    let total = log_sum_exp(&lp);
    if !(total.abs() <= NORMALIZATION_TOLERANCE) {
        return Err(DecodeError::Interface(format!("log-probabilities log-sum-exp to {total}, not 0")));
    }
    Ok(lp)
}

/// Result of a constrained generation.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub class_index: usize,
    /// Generated tokens after the prompt: prefix then label.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

#[derive(Clone, Debug)]
struct Hypothesis {
    tokens: Vec<usize>,
    score: f64,
}

fn better(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search restricted to the forced prefix followed by one allowed
/// label. Hypotheses are ranked by cumulative log-probability; the best
/// completed one wins.
pub fn constrained_generate(
    provider: &dyn LogProbProvider,
    prompt: &[usize],
    images: Option<(&PixelMap, &PixelMap)>,
    constraint: &ConstraintSpec,
    beam_width: usize,
) -> Result<Generation, DecodeError> {
    if beam_width == 0 {
        return Err(DecodeError::Config("beam width must be at least 1".into()));
    }
    constraint.validate(provider.vocab_size())?;
    let mut beams = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<(usize, Hypothesis)> = Vec::new();
    let mut context = prompt.to_vec();
    while !beams.is_empty() {
        let mut candidates = Vec::new();
        for h in &beams {
            context.truncate(prompt.len());
            context.extend_from_slice(&h.tokens);
            let lp = checked_log_probs(provider, &context, images)?;
            for t in constraint.allowed_next(&h.tokens) {
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                candidates.push(Hypothesis {
                    tokens,
                    score: h.score + lp[t],
                });
            }
        }
        candidates.sort_by(better);
        candidates.truncate(beam_width);
        beams.clear();
        for c in candidates {
            match constraint.completed_class(&c.tokens) {
                Some(k) => finished.push((k, c)),
                None => beams.push(c),
            }
        }
    }
    let (class_index, best) = finished
        .into_iter()
        .min_by(|a, b| better(&a.1, &b.1))
        .expect("every path terminates in a label");
    Ok(Generation {
        class_index,
        tokens: best.tokens,
        log_prob: best.score,
    })
}

/// Log-probability of each class's first label token at the branch
/// position. `context` must already end with the forced prefix.
pub fn first_token_class_logprobs(
    provider: &dyn LogProbProvider,
    context: &[usize],
    images: Option<(&PixelMap, &PixelMap)>,
    constraint: &ConstraintSpec,
) -> Result<[f64; NUM_CLASSES], DecodeError> {
    constraint.validate(provider.vocab_size())?;
    let lp = checked_log_probs(provider, context, images)?;
    Ok(constraint.first_tokens().map(|t| lp[t]))
}

/// Total log-probability of each full label sequence after the prefix.
pub fn label_sequence_logprobs(
    provider: &dyn LogProbProvider,
    context: &[usize],
    images: Option<(&PixelMap, &PixelMap)>,
    constraint: &ConstraintSpec,
) -> Result<[f64; NUM_CLASSES], DecodeError> {
    constraint.validate(provider.vocab_size())?;
    let mut out = [0.0; NUM_CLASSES];
    for (k, label) in constraint.labels.iter().enumerate() {
        let mut ctx = context.to_vec();
        for &t in label {
            out[k] += checked_log_probs(provider, &ctx, images)?[t];
            ctx.push(t);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassConfidence {
    pub probabilities: [f64; NUM_CLASSES],
    pub temperature: f64,
    pub log_probs: [f64; NUM_CLASSES],
}

impl ClassConfidence {
    pub fn argmax(&self) -> usize {
        argmax_index(&self.probabilities)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_index(v: &[f64]) -> usize {
    (1..v.len()).fold(0, |best, k| if v[k] > v[best] { k } else { best })
}

/// `softmax(T * log p)`, i.e. `p^T` renormalised.
pub fn class_confidence(log_probs: [f64; NUM_CLASSES], temperature: f64) -> Result<ClassConfidence, DecodeError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(DecodeError::Domain(format!("temperature must be positive, got {temperature}")));
    }
    if let Some(bad) = log_probs.iter().find(|v| !v.is_finite()) {
        return Err(DecodeError::Domain(format!("log-probability {bad} is not finite")));
    }
    let z = log_probs.map(|l| temperature * l);
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    Ok(ClassConfidence {
        probabilities: e.map(|v| v / s),
        temperature,
        log_probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_temperature_example() {
        let lp = [0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()];
        let c = class_confidence(lp, 5.0).unwrap();
        let expected = [0.9191, 0.0715, 0.0094];
        for k in 0..3 {
            assert!((c.probabilities[k] - expected[k]).abs() < 1e-3);
        }
        let c1 = class_confidence(lp, 1.0).unwrap();
        for (k, p) in [0.5, 0.3, 0.2].iter().enumerate() {
            assert!((c1.probabilities[k] - p).abs() < 1e-15);
        }
        assert!(class_confidence(lp, 0.0).is_err());
        assert!(class_confidence(lp, -1.0).is_err());
    }

    #[test]
    fn equal_inputs_are_uniform() {
        for t in [0.1, 1.0, 7.0] {
            let c = class_confidence([-2.0; 3], t).unwrap();
            assert!(c.probabilities.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        }
    }
}
