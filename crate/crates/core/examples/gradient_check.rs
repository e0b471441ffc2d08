//! Checks reverse-mode gradients of a small conv network against central
//! differences and prints the worst relative error per input.
//!
//! ```bash
//! cargo run -p nupix --example gradient_check
//! ```

use nupix::autodiff::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Depthwise 3x3 conv, hard-swish, pointwise conv, ReLU6, pooling and a
/// linear layer reduced to a scalar.
fn network(inputs: &[Tensor]) -> f64 {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    loss(&vars).value().item()
}

fn loss<'t>(v: &[nupix::autodiff::Var<'t>]) -> nupix::autodiff::Var<'t> {
    let h = v[0].conv2d(v[1], 1, 1, 4).unwrap().add_bias(v[2]).unwrap().hard_swish();
    let h = h.conv2d(v[3], 1, 0, 1).unwrap().relu6();
    let pooled = h.global_avg_pool().unwrap();
    pooled.linear(v[4]).unwrap().sigmoid().sum()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let names = ["input", "depthwise", "bias", "pointwise", "linear"];
    let inputs = vec![
        random(&mut rng, &[2, 4, 6, 6]),
        random(&mut rng, &[4, 1, 3, 3]),
        random(&mut rng, &[4]),
        random(&mut rng, &[5, 4, 1, 1]),
        random(&mut rng, &[3, 5]),
    ];

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = loss(&vars);
    let grads = tape.backward(out)?;

    for (k, name) in names.iter().enumerate() {
        let analytic = grads.get(vars[k]);
        let mut worst = 0.0f64;
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (network(&plus) - network(&minus)) / (2.0 * STEP);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(rel);
        }
        println!("{name:<10} {:>4} entries  max relative error {worst:.2e}", inputs[k].numel());
    }
    Ok(())
}
