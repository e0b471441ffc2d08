use super::{ConstraintSpec, DecodeError, LogProbProvider, Vocabulary};
use crate::detsim::PixelMap;
use crate::model::{Mode, Model};
use crate::NUM_CLASSES;

/// Mass spread over tokens the provider would otherwise rule out.
pub const PROVIDER_EPSILON: f64 = 1e-6;

/// Exposes a trained classifier as a next-token distribution: the forced
/// prefix is near-certain, the branch position carries the classifier's
/// class probabilities on the label first tokens, and the rest of the
/// chosen label is near-certain.
#[derive(Clone, Debug)]
pub struct ModelProvider<'m> {
    model: &'m Model,
    vocab_size: usize,
    constraint: ConstraintSpec,
    prompt: Vec<usize>,
    epsilon: f64,
}

impl<'m> ModelProvider<'m> {
    pub fn new(
        model: &'m Model,
        vocab: &Vocabulary,
        constraint: ConstraintSpec,
        prompt: Vec<usize>,
    ) -> Result<Self, DecodeError> {
        constraint.validate(vocab.len())?;
        if vocab.len() <= NUM_CLASSES {
            return Err(DecodeError::Vocabulary("vocabulary too small for label smoothing".into()));
        }
        Ok(Self {
            model,
            vocab_size: vocab.len(),
            constraint,
            prompt,
            epsilon: PROVIDER_EPSILON,
        })
    }

    pub fn prompt(&self) -> &[usize] {
        &self.prompt
    }

    /// Classifier log-softmax for one image pair.
    pub fn class_log_probs(&self, xz: &PixelMap, yz: &PixelMap) -> Result<[f64; NUM_CLASSES], DecodeError> {
        let logits = self.model.forward(xz, yz, Mode::Eval)?;
        let lse = crate::autodiff::log_sum_exp(&logits);
        Ok(logits.map(|l| l - lse))
    }

    fn forced(&self, token: usize) -> Vec<f64> {
        let mut lp = vec![(self.epsilon / (self.vocab_size - 1) as f64).ln(); self.vocab_size];
        lp[token] = (1.0 - self.epsilon).ln();
        lp
    }
}

impl LogProbProvider for ModelProvider<'_> {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_log_probs(
        &self,
        context: &[usize],
        images: Option<(&PixelMap, &PixelMap)>,
    ) -> Result<Vec<f64>, DecodeError> {
        let generated = context
            .strip_prefix(self.prompt.as_slice())
            .ok_or_else(|| DecodeError::Interface("context does not start with the provider's prompt".into()))?;
        let prefix = &self.constraint.prefix;
        if generated.len() < prefix.len() {
            return Ok(self.forced(prefix[generated.len()]));
        }
        if generated.len() == prefix.len() {
            let (xz, yz) = images.ok_or_else(|| DecodeError::Interface("branch position needs an image pair".into()))?;
            let class_lp = self.class_log_probs(xz, yz)?;
            let rest = (self.epsilon / (self.vocab_size - NUM_CLASSES) as f64).ln();
            let mut lp = vec![rest; self.vocab_size];
            let keep = (1.0 - self.epsilon).ln();
            for (k, t) in self.constraint.first_tokens().into_iter().enumerate() {
                lp[t] = class_lp[k] + keep;
            }
            return Ok(lp);
        }
        let after = &generated[prefix.len()..];
        let label = self
            .constraint
            .labels
            .iter()
            .find(|l| l[0] == after[0] && l.starts_with(after) && l.len() > after.len())
            .ok_or_else(|| DecodeError::Interface("context leaves the constrained label set".into()))?;
        Ok(self.forced(label[after.len()]))
    }
}
