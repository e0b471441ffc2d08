//! Generates a small dataset, reads it back and prints per-class statistics.
//!
//! ```bash
//! cargo run -p nupix --example render_dataset -- /tmp/nupix-small 90
//! ```

use nupix::detsim::{generate_dataset, read_dataset, GenerationSpec};
use nupix::EventClass;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "/tmp/nupix-small".into());
    let events: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(90);

    let spec = GenerationSpec {
        calibration_events: 200,
        ..GenerationSpec::desk(11, events)
    };
    if std::path::Path::new(&dir).exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    let summary = generate_dataset(&spec, &dir)?;
    println!("wrote {} events to {dir}, normalisation {:?}", summary.events, summary.norm_scale);

    let (_, entries) = read_dataset(&dir)?;
    println!("\n{:<10}{:>8}{:>14}{:>14}{:>16}", "class", "events", "mean E_nu", "lit pixels", "mean intensity");
    for class in EventClass::ALL {
        let of: Vec<_> = entries.iter().filter(|e| e.record.class == class).collect();
        let n = of.len().max(1) as f64;
        let energy: f64 = of.iter().map(|e| e.record.neutrino_energy).sum::<f64>() / n;
        let lit: f64 = of
            .iter()
            .map(|e| e.xz.intensities.iter().chain(&e.yz.intensities).filter(|&&v| v > 0.0).count() as f64)
            .sum::<f64>()
            / n;
        let mean: f64 = of
            .iter()
            .map(|e| e.xz.intensities.iter().chain(&e.yz.intensities).map(|&v| v as f64).sum::<f64>())
            .sum::<f64>()
            / n
            / (2 * spec.geometry.image_size * spec.geometry.image_size) as f64;
        println!("{:<10}{:>8}{energy:>14.2}{lit:>14.1}{mean:>16.5}", class.key(), of.len());
    }
    Ok(())
}
