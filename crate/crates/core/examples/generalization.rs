//! Re-evaluates a trained checkpoint on coarsened pixel maps.
//!
//! ```bash
//! cargo run --release -p nupix --example train_desk
//! cargo run --release -p nupix --example generalization -- runs/<dir>/model.ckpt runs/<dir>/data
//! ```

use nupix::detsim::read_dataset;
use nupix::evalx::{generalization_eval, ResolutionMode};
use nupix::trainer::load_checkpoint;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let (Some(ckpt), Some(data)) = (args.next(), args.next()) else {
        return Err("usage: generalization <model.ckpt> <dataset dir>".into());
    };
    let model = load_checkpoint(&ckpt)?;
    let (_, entries) = read_dataset(&data)?;
    let size = entries.first().ok_or("empty dataset")?.xz.width;

    println!("{:>8}{:>10}{:>12}{:>12}", "factor", "accuracy", "macro AUC", "delta acc");
    let mut base = None;
    for factor in [1, 2, 4, 8].into_iter().filter(|f| size % f == 0) {
        let (_, r) = generalization_eval(&model, &entries, factor, ResolutionMode::Rerender, "generalization")?;
        let acc = r.aggregates.accuracy;
        let b = *base.get_or_insert(acc);
        println!("{factor:>8}{acc:>10.4}{:>12.4}{:>+12.4}", r.macro_auc, acc - b);
    }
    Ok(())
}
