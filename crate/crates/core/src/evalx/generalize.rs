use serde::{Deserialize, Serialize};

use super::{EvalError, MetricsReport, PredictionRecord};
use crate::detsim::{DatasetEntry, PixelMap};
use crate::model::Model;

/// How reduced-resolution images reach a fixed-size model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionMode {
    /// Mean-pool by the factor, then block-replicate back to the model's
    /// input size.
    #[default]
    Rerender,
    /// Feed the pooled image as is; the model must accept the smaller size.
    Direct,
}

/// `factor x factor` mean pooling.
pub fn downsample_pixelmap(map: &PixelMap, factor: usize) -> Result<PixelMap, EvalError> {
    if factor == 0 || map.width % factor != 0 || map.height % factor != 0 {
        return Err(EvalError::Factor {
            factor,
            width: map.width,
            height: map.height,
        });
    }
    if factor == 1 {
        return Ok(map.clone());
    }
    let (w, h) = (map.width / factor, map.height / factor);
    let area = (factor * factor) as f64;
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let mut s = 0.0f64;
            for dr in 0..factor {
                let row = (r * factor + dr) * map.width + c * factor;
                s += map.intensities[row..row + factor].iter().map(|&v| v as f64).sum::<f64>();
            }
            out.push((s / area) as f32);
        }
    }
    Ok(PixelMap::new(map.view, w, h, out, map.raw_energy_total))
}

/// Nearest-neighbour block replication.
pub fn upsample_pixelmap(map: &PixelMap, factor: usize) -> PixelMap {
    if factor == 1 {
        return map.clone();
    }
    let (w, h) = (map.width * factor, map.height * factor);
    let data = (0..w * h).map(|i| map.get(i / w / factor, i % w / factor)).collect();
    PixelMap::new(map.view, w, h, data, map.raw_energy_total)
}

fn records(model: &Model, entries: &[DatasetEntry], pairs: &[(&PixelMap, &PixelMap)]) -> Result<Vec<PredictionRecord>, EvalError> {
    let probs = model.predict_proba(pairs)?;
    Ok(entries
        .iter()
        .zip(probs)
        .map(|(e, p)| PredictionRecord::from_scores(e.record.event_id, e.record.class, p))
        .collect())
}

/// Eval-mode classifier predictions and the resulting report.
pub fn evaluate_model(
    model: &Model,
    entries: &[DatasetEntry],
    label: &str,
) -> Result<(Vec<PredictionRecord>, MetricsReport), EvalError> {
    let pairs: Vec<_> = entries.iter().map(|e| (&e.xz, &e.yz)).collect();
    let recs = records(model, entries, &pairs)?;
    let report = MetricsReport::build(label, &recs, 1)?;
    Ok((recs, report))
}

/// Re-evaluates on images degraded by `factor`.
pub fn generalization_eval(
    model: &Model,
    entries: &[DatasetEntry],
    factor: usize,
    mode: ResolutionMode,
    label: &str,
) -> Result<(Vec<PredictionRecord>, MetricsReport), EvalError> {
    let degrade = |m: &PixelMap| -> Result<PixelMap, EvalError> {
        let small = downsample_pixelmap(m, factor)?;
        Ok(match mode {
            ResolutionMode::Rerender => upsample_pixelmap(&small, factor),
            ResolutionMode::Direct => small,
        })
    };
    let degraded = entries
        .iter()
        .map(|e| Ok((degrade(&e.xz)?, degrade(&e.yz)?)))
        .collect::<Result<Vec<_>, EvalError>>()?;
    let pairs: Vec<_> = degraded.iter().map(|(a, b)| (a, b)).collect();
    let recs = records(model, entries, &pairs)?;
    let report = MetricsReport::build(label, &recs, factor)?;
    Ok((recs, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detsim::View;

    #[test]
    fn block_mean() {
        let m = PixelMap::new(View::XZ, 2, 2, vec![0.2, 0.4, 0.6, 0.8], 1.0);
        let d = downsample_pixelmap(&m, 2).unwrap();
        assert_eq!(d.intensities, vec![0.5]);
        assert_eq!(downsample_pixelmap(&m, 1).unwrap(), m);
        assert!(matches!(downsample_pixelmap(&m, 3), Err(EvalError::Factor { .. })));
    }

    #[test]
    fn upsample_replicates() {
        let m = PixelMap::new(View::YZ, 2, 1, vec![1.0, 2.0], 0.0);
        let u = upsample_pixelmap(&m, 2);
        assert_eq!((u.width, u.height), (4, 2));
        assert_eq!(u.intensities, vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
