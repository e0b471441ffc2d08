//! Classification metrics: confusion matrices, micro/macro aggregates,
//! one-vs-rest ROC curves, plus the reduced-resolution evaluation harness.

mod generalize;
mod report;

pub use generalize::{downsample_pixelmap, evaluate_model, generalization_eval, upsample_pixelmap, ResolutionMode};
pub use report::{emit_report, parse_scalars_csv, ReportFormat, CONFUSION_CSV, METRICS_CSV, REPORT_JSONL, REPORT_TXT, ROC_CSV};

use serde::{Deserialize, Serialize};

use crate::decode::ScoreRecord;
use crate::{EventClass, NUM_CLASSES};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no prediction records")]
    Empty,
    #[error("ROC undefined for class {class}: {reason}")]
    DegenerateClass { class: EventClass, reason: &'static str },
    #[error("downsample factor {factor} does not divide {width}x{height}")]
    Factor { factor: usize, width: usize, height: usize },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub event_id: u64,
    pub truth: EventClass,
    pub predicted: EventClass,
    pub scores: [f64; NUM_CLASSES],
}

impl PredictionRecord {
    /// Predicted class is the arg-max score (lowest index on ties).
    pub fn from_scores(event_id: u64, truth: EventClass, scores: [f64; NUM_CLASSES]) -> Self {
        Self {
            event_id,
            truth,
            predicted: EventClass::ALL[crate::decode::argmax_index(&scores)],
            scores,
        }
    }
}

impl From<&ScoreRecord> for PredictionRecord {
    fn from(r: &ScoreRecord) -> Self {
        Self {
            event_id: r.event_id,
            truth: r.truth,
            predicted: r.predicted,
            scores: r.probabilities,
        }
    }
}

pub type Matrix = [[f64; NUM_CLASSES]; NUM_CLASSES];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    /// `counts[truth][predicted]`
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
    /// Rows normalised by truth totals.
    pub recall: Matrix,
    /// Columns normalised by prediction totals.
    pub precision: Matrix,
    /// Classes with no truth instances (all-zero recall row).
    pub empty_truth: [bool; NUM_CLASSES],
    /// Classes never predicted (all-zero precision column).
    pub empty_prediction: [bool; NUM_CLASSES],
}

pub fn confusion_matrices(records: &[PredictionRecord]) -> Confusion {
    let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for r in records {
        counts[r.truth.index()][r.predicted.index()] += 1;
    }
    let truth_tot: [u64; NUM_CLASSES] = std::array::from_fn(|t| counts[t].iter().sum());
    let pred_tot: [u64; NUM_CLASSES] = std::array::from_fn(|p| (0..NUM_CLASSES).map(|t| counts[t][p]).sum());
    let mut recall = [[0.0; NUM_CLASSES]; NUM_CLASSES];
    let mut precision = [[0.0; NUM_CLASSES]; NUM_CLASSES];
    for t in 0..NUM_CLASSES {
        for p in 0..NUM_CLASSES {
            if truth_tot[t] > 0 {
                recall[t][p] = counts[t][p] as f64 / truth_tot[t] as f64;
            }
            if pred_tot[p] > 0 {
                precision[t][p] = counts[t][p] as f64 / pred_tot[p] as f64;
            }
        }
    }
    Confusion {
        counts,
        recall,
        precision,
        empty_truth: truth_tot.map(|n| n == 0),
        empty_prediction: pred_tot.map(|n| n == 0),
    }
}

/// Scalar aggregates derived from the confusion counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub accuracy: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
}

pub fn aggregate_metrics(records: &[PredictionRecord]) -> Result<Aggregates, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let c = confusion_matrices(records);
    let total = records.len() as f64;
    let correct: u64 = (0..NUM_CLASSES).map(|k| c.counts[k][k]).sum();
    let accuracy = correct as f64 / total;
    // pooled one-vs-rest counts: every error is one FP and one FN
    let tp = correct as f64;
    let fp = total - tp;
    let fn_ = total - tp;
    let micro_precision = tp / (tp + fp);
    let micro_recall = tp / (tp + fn_);
    let n = NUM_CLASSES as f64;
    let macro_precision = (0..NUM_CLASSES).map(|k| c.precision[k][k]).sum::<f64>() / n;
    let macro_recall = (0..NUM_CLASSES).map(|k| c.recall[k][k]).sum::<f64>() / n;
    Ok(Aggregates {
        accuracy,
        micro_precision,
        micro_recall,
        macro_precision,
        macro_recall,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    #[serde(with = "signed_infinity")]
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub class: EventClass,
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// One-vs-rest ROC on the class's score, swept from `+inf` to `-inf` over
/// every distinct score. The trapezoidal area gives tied pairs half credit.
pub fn roc_auc(records: &[PredictionRecord], class: EventClass) -> Result<RocCurve, EvalError> {
    let k = class.index();
    let mut scored: Vec<(f64, bool)> = records.iter().map(|r| (r.scores[k], r.truth == class)).collect();
    let pos = scored.iter().filter(|s| s.1).count();
    let neg = scored.len() - pos;
    if pos == 0 {
        return Err(EvalError::DegenerateClass { class, reason: "no positive records" });
    }
    if neg == 0 {
        return Err(EvalError::DegenerateClass { class, reason: "no negative records" });
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].0;
        let (tp0, fp0) = (tp, fp);
        while i < scored.len() && scored[i].0 == t {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: t,
        });
    }
    points.push(RocPoint {
        fpr: 1.0,
        tpr: 1.0,
        threshold: f64::NEG_INFINITY,
    });
    Ok(RocCurve {
        class,
        points,
        auc: auc / (pos as f64 * neg as f64),
    })
}

/// Full evaluation summary for one record set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub downsample_factor: usize,
    pub events: usize,
    pub aggregates: Aggregates,
    pub auc: [f64; NUM_CLASSES],
    pub macro_auc: f64,
    pub confusion: Confusion,
    pub roc: Vec<RocCurve>,
}

impl MetricsReport {
    /// Column names of the scalar table, in emission order.
    pub const SCALAR_NAMES: [&'static str; 11] = [
        "events",
        "downsample_factor",
        "accuracy",
        "micro_precision",
        "micro_recall",
        "macro_precision",
        "macro_recall",
        "auc_nue_cc",
        "auc_numu_cc",
        "auc_nc",
        "macro_auc",
    ];

    pub fn build(label: impl Into<String>, records: &[PredictionRecord], downsample_factor: usize) -> Result<Self, EvalError> {
        let aggregates = aggregate_metrics(records)?;
        let roc = EventClass::ALL
            .iter()
            .map(|&c| roc_auc(records, c))
            .collect::<Result<Vec<_>, _>>()?;
        let auc: [f64; NUM_CLASSES] = std::array::from_fn(|k| roc[k].auc);
        Ok(Self {
            label: label.into(),
            downsample_factor,
            events: records.len(),
            aggregates,
            macro_auc: auc.iter().sum::<f64>() / NUM_CLASSES as f64,
            auc,
            confusion: confusion_matrices(records),
            roc,
        })
    }

    pub fn scalars(&self) -> [(&'static str, f64); 11] {
        let a = &self.aggregates;
        let values = [
            self.events as f64,
            self.downsample_factor as f64,
            a.accuracy,
            a.micro_precision,
            a.micro_recall,
            a.macro_precision,
            a.macro_recall,
            self.auc[0],
            self.auc[1],
            self.auc[2],
            self.macro_auc,
        ];
        std::array::from_fn(|i| (Self::SCALAR_NAMES[i], values[i]))
    }
}

mod signed_infinity {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}
