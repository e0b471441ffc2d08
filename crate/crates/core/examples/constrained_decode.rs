//! Constrained decoding against a hand-built token distribution, then the
//! temperature-sharpened class confidence.
//!
//! ```bash
//! cargo run -p nupix --example constrained_decode
//! ```

use nupix::decode::mock::TableProvider;
use nupix::decode::{
    class_confidence, constrained_generate, first_token_class_logprobs, ConstraintSpec, Vocabulary, DEFAULT_PROMPT,
};
use nupix::EventClass;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::standard();
    let constraint = ConstraintSpec::standard(&vocab)?;
    let prompt = vocab.encode(DEFAULT_PROMPT)?;

    // Force the answer prefix, then split mass 0.5 / 0.3 / 0.2 over the labels.
    let mut provider = TableProvider::new(vocab.len());
    let mut context = prompt.clone();
    for &t in &constraint.prefix {
        provider.set(context.clone(), &[t], &[0.999]);
        context.push(t);
    }
    provider.set(context.clone(), &constraint.first_tokens(), &[0.5, 0.3, 0.2]);
    for label in &constraint.labels {
        let mut ctx = context.clone();
        for &t in label {
            if ctx.len() > context.len() {
                provider.set(ctx.clone(), &[t], &[0.999]);
            }
            ctx.push(t);
        }
    }

    let generation = constrained_generate(&provider, &prompt, None, &constraint, 3)?;
    println!(
        "generated: \"{}\" (class {}, log p = {:.4})",
        vocab.decode(&generation.tokens),
        EventClass::ALL[generation.class_index].label(),
        generation.log_prob
    );

    let lp = first_token_class_logprobs(&provider, &context, None, &constraint)?;
    println!("\nfirst-token log-probabilities: {lp:.4?}\n");
    println!("{:>12}{:>10}{:>10}{:>10}", "temperature", "nue_cc", "numu_cc", "nc");
    for t in [0.5, 1.0, 2.0, 5.0, 10.0] {
        let c = class_confidence(lp, t)?;
        let p = c.probabilities;
        println!("{t:>12}{:>10.4}{:>10.4}{:>10.4}", p[0], p[1], p[2]);
    }
    Ok(())
}
