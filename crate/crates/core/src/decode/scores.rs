use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::{
    class_confidence, constrained_generate, first_token_class_logprobs, ConstraintSpec, DecodeError, ModelProvider,
    Vocabulary,
};
use crate::detsim::DatasetEntry;
use crate::model::Model;
use crate::{EventClass, NUM_CLASSES};

/// Tab-separated column order of the scores file.
pub const SCORES_HEADER: &str =
    "event_id\ttruth\tpredicted\tp_nue_cc\tp_numu_cc\tp_nc\tlogp_nue_cc\tlogp_numu_cc\tlogp_nc";

/// Per-event decoding result.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub event_id: u64,
    pub truth: EventClass,
    pub predicted: EventClass,
    /// Temperature-scaled class confidences.
    pub probabilities: [f64; NUM_CLASSES],
    /// Raw first-token log-probabilities.
    pub log_probs: [f64; NUM_CLASSES],
}

/// Runs constrained generation and first-token scoring on every entry,
/// in parallel, preserving input order.
pub fn decode_entries(
    model: &Model,
    entries: &[DatasetEntry],
    vocab: &Vocabulary,
    constraint: &ConstraintSpec,
    prompt: &[usize],
    temperature: f64,
    beam_width: usize,
) -> Result<Vec<ScoreRecord>, DecodeError> {
    let provider = ModelProvider::new(model, vocab, constraint.clone(), prompt.to_vec())?;
    let branch_context: Vec<usize> = prompt.iter().chain(&constraint.prefix).copied().collect();
    entries
        .par_iter()
        .map(|e| {
            let images = Some((&e.xz, &e.yz));
            let generation = constrained_generate(&provider, prompt, images, constraint, beam_width)?;
            let log_probs = first_token_class_logprobs(&provider, &branch_context, images, constraint)?;
            let conf = class_confidence(log_probs, temperature)?;
            Ok(ScoreRecord {
                event_id: e.record.event_id,
                truth: e.record.class,
                predicted: EventClass::ALL[generation.class_index],
                probabilities: conf.probabilities,
                log_probs,
            })
        })
        .collect()
}

pub fn write_scores(path: impl AsRef<Path>, records: &[ScoreRecord]) -> Result<(), DecodeError> {
    let path = path.as_ref();
    let mut out = String::from(SCORES_HEADER);
    out.push('\n');
    for r in records {
        write!(out, "{}\t{}\t{}", r.event_id, r.truth.key(), r.predicted.key()).expect("string write");
        for v in r.probabilities.iter().chain(&r.log_probs) {
            write!(out, "\t{v}").expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| DecodeError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>, DecodeError> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| DecodeError::Io { path: p.clone(), source })?;
    let mut lines = text.lines();
    if lines.next() != Some(SCORES_HEADER) {
        return Err(DecodeError::Format {
            path: p,
            reason: "missing or unexpected header".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| DecodeError::Format {
                path: p.clone(),
                reason: format!("line {}: {what}", i + 2),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 + 2 * NUM_CLASSES {
                return Err(bad("wrong column count"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            Ok(ScoreRecord {
                event_id: f[0].parse().map_err(|_| bad("bad event id"))?,
                truth: f[1].parse().map_err(|_| bad("bad truth class"))?,
                predicted: f[2].parse().map_err(|_| bad("bad predicted class"))?,
                probabilities: [num(f[3])?, num(f[4])?, num(f[5])?],
                log_probs: [num(f[6])?, num(f[7])?, num(f[8])?],
            })
        })
        .collect()
}
