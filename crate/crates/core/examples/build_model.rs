//! Builds the desk and full-size Siamese models and lists their parameters.
//!
//! ```bash
//! cargo run -p nupix --example build_model
//! ```

use nupix::detsim::{PixelMap, View};
use nupix::model::{build_model, Mode, ModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig::desk();
    let model = build_model(&cfg, 42)?;
    println!("desk model: {} parameters\n", model.parameter_count());
    for (name, t) in model.named_parameters() {
        println!("  {name:<28} {:?}", t.shape());
    }

    let size = cfg.input_size;
    let blank = PixelMap::new(View::XZ, size, size, vec![0.0; size * size], 0.0);
    let track = PixelMap::new(
        View::YZ,
        size,
        size,
        (0..size * size).map(|i| if i % size == i / size { 0.8 } else { 0.0 }).collect(),
        1.0,
    );
    let logits = model.forward(&blank, &track, Mode::Eval)?;
    println!("\nlogits for an empty XZ view and a diagonal YZ track: {logits:?}");

    let mut separate = cfg.clone();
    separate.shared_branch = false;
    println!("\nseparate branches: {} parameters", build_model(&separate, 42)?.parameter_count());
    println!("full-size config:  {} parameters", build_model(&ModelConfig::full_scale(), 42)?.parameter_count());
    Ok(())
}
