//! Scores a synthetic set of predictions and writes every report format.
//!
//! ```bash
//! cargo run -p nupix --example evaluate_metrics -- /tmp/nupix-report
//! ```

use nupix::evalx::{emit_report, MetricsReport, PredictionRecord, ReportFormat};
use nupix::EventClass;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "/tmp/nupix-report".into());
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    // A noisy classifier: the true class gets a head start.
    let records: Vec<PredictionRecord> = (0..600)
        .map(|i| {
            let truth = EventClass::ALL[i % 3];
            let mut raw: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            raw[truth.index()] += 0.6;
            let s: f64 = raw.iter().sum();
            PredictionRecord::from_scores(i as u64, truth, raw.map(|v| v / s))
        })
        .collect();

    let report = MetricsReport::build("synthetic", &records, 1)?;
    for format in ReportFormat::ALL {
        for path in emit_report(&report, &dir, format)? {
            println!("wrote {}", path.display());
        }
    }
    println!("\n{}", std::fs::read_to_string(format!("{dir}/report.txt"))?);
    Ok(())
}
