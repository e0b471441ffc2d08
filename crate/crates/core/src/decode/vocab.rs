use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::DecodeError;
use crate::{EventClass, NUM_CLASSES};

/// Forced answer prefix emitted before the class label.
pub const ANSWER_PREFIX: &str = "I classify the pixel maps as";

/// Instruction tokens placed before the answer. They carry no semantics.
pub const DEFAULT_PROMPT: &str = "<bos> <system> You are an expert in neutrino physics event \
classification . </system> <user> <image_xz> <image_yz> Which interaction produced these two \
LArTPC views : nu_e CC , nu_mu CC or NC ? </user> <assistant>";

const LABELS: [&str; NUM_CLASSES] = ["nu_e CC", "nu_mu CC", "NC"];

/// Bijective token table with dense ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self, DecodeError> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(DecodeError::Vocabulary(format!("invalid token {t:?}")));
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(DecodeError::Vocabulary(format!("duplicate token {t:?}")));
            }
        }
        if tokens.is_empty() {
            return Err(DecodeError::Vocabulary("empty vocabulary".into()));
        }
        Ok(Self { tokens, ids })
    }

    /// Every word of the default prompt, prefix and labels plus `<eos>` and
    /// a handful of filler words.
    pub fn standard() -> Self {
        let mut words: Vec<&str> = vec!["<eos>"];
        let filler = "track shower muon electron proton pion vertex energy event the a of and is";
        for w in DEFAULT_PROMPT
            .split_whitespace()
            .chain(ANSWER_PREFIX.split_whitespace())
            .chain(LABELS.iter().flat_map(|l| l.split_whitespace()))
            .chain(filler.split_whitespace())
        {
            if !words.contains(&w) {
                words.push(w);
            }
        }
        Self::new(words).expect("standard vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Splits on whitespace and maps each word to its id.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, DecodeError> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| DecodeError::Vocabulary(format!("unknown token {w:?}"))))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Forced prefix followed by exactly one of the class label sequences.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub prefix: Vec<usize>,
    /// Indexed by [`EventClass::index`].
    pub labels: [Vec<usize>; NUM_CLASSES],
}

impl ConstraintSpec {
    pub fn standard(vocab: &Vocabulary) -> Result<Self, DecodeError> {
        let labels = [vocab.encode(LABELS[0])?, vocab.encode(LABELS[1])?, vocab.encode(LABELS[2])?];
        let spec = Self {
            prefix: vocab.encode(ANSWER_PREFIX)?,
            labels,
        };
        spec.validate(vocab.len())?;
        Ok(spec)
    }

    pub fn validate(&self, vocab_size: usize) -> Result<(), DecodeError> {
        for (k, label) in self.labels.iter().enumerate() {
            if label.is_empty() {
                return Err(DecodeError::Config(format!("label for class {k} is empty")));
            }
        }
        for a in 0..NUM_CLASSES {
            for b in a + 1..NUM_CLASSES {
                if self.labels[a][0] == self.labels[b][0] {
                    return Err(DecodeError::Config(format!(
                        "classes {} and {} share first token {}; first-token scoring is ill-defined",
                        EventClass::ALL[a],
                        EventClass::ALL[b],
                        self.labels[a][0]
                    )));
                }
            }
        }
        if let Some(&t) = self.prefix.iter().chain(self.labels.iter().flatten()).find(|&&t| t >= vocab_size) {
            return Err(DecodeError::Config(format!("token {t} outside vocabulary of {vocab_size}")));
        }
        Ok(())
    }

    pub fn first_tokens(&self) -> [usize; NUM_CLASSES] {
        std::array::from_fn(|k| self.labels[k][0])
    }

    /// Full continuation (prefix then label) for class `k`.
    pub fn continuation(&self, k: usize) -> Vec<usize> {
        self.prefix.iter().chain(&self.labels[k]).copied().collect()
    }

    /// Tokens that may follow `generated` without leaving the constraint.
    pub fn allowed_next(&self, generated: &[usize]) -> Vec<usize> {
        let mut next: Vec<usize> = (0..NUM_CLASSES)
            .map(|k| self.continuation(k))
            .filter(|c| c.len() > generated.len() && c.starts_with(generated))
            .map(|c| c[generated.len()])
            .collect();
        next.sort_unstable();
        next.dedup();
        next
    }

    /// Class whose full continuation equals `generated`, if any.
    pub fn completed_class(&self, generated: &[usize]) -> Option<usize> {
        (0..NUM_CLASSES).find(|&k| self.continuation(k) == generated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_vocab_roundtrips() {
        let v = Vocabulary::standard();
        let ids = v.encode(ANSWER_PREFIX).unwrap();
        assert_eq!(v.decode(&ids), ANSWER_PREFIX);
        assert!(v.encode("quark").is_err());
        for i in 0..v.len() {
            assert_eq!(v.id(v.token(i).unwrap()), Some(i));
        }
    }

    #[test]
    fn duplicate_tokens_rejected() {
        assert!(Vocabulary::new(["a", "b", "a"]).is_err());
    }

    #[test]
    fn shared_first_token_rejected() {
        let v = Vocabulary::new(["x", "CC", "nu", "NC"]).unwrap();
        let spec = ConstraintSpec {
            prefix: vec![0],
            labels: [vec![2, 1], vec![2, 3], vec![3]],
        };
        assert!(matches!(spec.validate(v.len()), Err(DecodeError::Config(_))));
    }

    #[test]
    fn allowed_tokens_follow_the_trie() {
        let v = Vocabulary::standard();
        let c = ConstraintSpec::standard(&v).unwrap();
        assert_eq!(c.allowed_next(&[]), vec![c.prefix[0]]);
        let mut firsts = c.first_tokens().to_vec();
        firsts.sort_unstable();
        assert_eq!(c.allowed_next(&c.prefix), firsts);
        assert!(c.allowed_next(&c.continuation(2)).is_empty());
        assert_eq!(c.completed_class(&c.continuation(1)), Some(1));
    }
}
