//! Generates (or reuses) a 3,600-event desk dataset, trains the desk model
//! on a 3000/300/300 split and reports test accuracy.
//!
//! ```bash
//! cargo run -p nupix --release --example train_desk -- /tmp/nupix-desk 30
//! ```

use std::path::PathBuf;

use nupix::detsim::{generate_dataset, read_dataset, GenerationSpec, MANIFEST_FILE};
use nupix::model::{build_model, ModelConfig};
use nupix::trainer::{split_dataset, train_with, SampleValidator, Samples, SplitFractions, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "/tmp/nupix-desk".into()));
    let max_epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);

    if !dir.join(MANIFEST_FILE).exists() {
        let t = std::time::Instant::now();
        let summary = generate_dataset(&GenerationSpec::desk(1, 3600), &dir)?;
        println!("generated {} events in {:.1}s", summary.events, t.elapsed().as_secs_f64());
    }
    let (_, entries) = read_dataset(&dir)?;
    let classes: Vec<_> = entries.iter().map(|e| e.record.class).collect();
    let fractions = SplitFractions { train: 10.0 / 12.0, val: 1.0 / 12.0, test: 1.0 / 12.0 };
    let split = split_dataset(&classes, fractions, 1)?;
    println!("split {}/{}/{}", split.train.len(), split.val.len(), split.test.len());

    let config = TrainConfig { max_epochs, split: fractions, seed: 1, ..TrainConfig::desk() };
    let model = build_model(&ModelConfig::desk(), 1)?;
    let train_set = Samples::from_entries(&entries, &split.train);
    let mut validator = SampleValidator(Samples::from_entries(&entries, &split.val));
    let (model, history) = train_with(model, &train_set, &mut validator, &config, &mut |r| {
        println!(
            "epoch {:3}  train {:.4}  val {:.4}  acc {:.3}  ({:.1}s)",
            r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.seconds
        );
    })?;
    println!("best epoch {} (val loss {:.4})", history.best_epoch, history.best_val_loss);

    let test = Samples::from_entries(&entries, &split.test);
    let (loss, acc) = model.evaluate(&test.pairs, &test.labels)?;
    println!("test loss {loss:.4}  accuracy {acc:.3}");
    Ok(())
}
