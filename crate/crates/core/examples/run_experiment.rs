//! Runs the whole pipeline from an optional TOML config.
//!
//! ```bash
//! cargo run --release -p nupix --example run_experiment -- experiment.toml /tmp/nupix-runs
//! ```
//!
//! With no config the desk experiment runs: 3,600 events, early-stopped
//! training, constrained decoding of the test split and all reports.

use std::path::PathBuf;

use nupix::pipeline::{run_pipeline, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(p) if p != "-" => ExperimentConfig::load(p)?,
        _ => ExperimentConfig::default(),
    };
    let root = PathBuf::from(args.next().unwrap_or_else(|| "/tmp/nupix-runs".into()));
    let (summary, layout) = run_pipeline(&cfg, &root, &mut |line| println!("{line}"))?;

    println!("\nartifacts: {}", layout.root.display());
    for (name, value) in summary.test.names.iter().zip(&summary.test.values) {
        println!("  {name:<18}{value:>10.4}");
    }
    for g in &summary.generalization {
        println!("  downsample x{}: accuracy {:.4} ({:+.4})", g.factor, g.accuracy, g.accuracy_delta);
    }
    Ok(())
}
