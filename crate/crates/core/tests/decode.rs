mod common;

use nupix::decode::mock::{RandomProvider, TableProvider, TruncatedProvider, UniformProvider};
use nupix::decode::{
    class_confidence, constrained_generate, first_token_class_logprobs, label_sequence_logprobs, read_scores,
    write_scores, ConstraintSpec, DecodeError, ModelProvider, ScoreRecord, Vocabulary, ANSWER_PREFIX,
    DEFAULT_PROMPT, SCORES_HEADER,
};
use nupix::detsim::{PixelMap, View};
use nupix::model::{build_model, Mode, ModelConfig};
use nupix::EventClass;
use proptest::prelude::*;
use rand::Rng;

fn setup() -> (Vocabulary, ConstraintSpec, Vec<usize>) {
    let v = Vocabulary::standard();
    let c = ConstraintSpec::standard(&v).unwrap();
    let p = v.encode(DEFAULT_PROMPT).unwrap();
    (v, c, p)
}

#[test]
fn beam_search_matches_enumeration() {
    let (v, c, prompt) = setup();
    let prefix = v.encode(ANSWER_PREFIX).unwrap();
    let mut r = common::rng(21);
    let mut mismatches = 0;
    for seed in 0..1000u64 {
        let provider = RandomProvider {
            vocab_size: v.len(),
            seed,
            sharpness: r.random_range(0.5..6.0),
        };
        let beam = r.random_range(3..6);
        let g = constrained_generate(&provider, &prompt, None, &c, beam).unwrap();
        let (k, score) = common::brute_force_decode(&provider, &prompt, &c);
        if g.class_index != k || (g.log_prob - score).abs() > 1e-12 {
            mismatches += 1;
        }
        assert!(g.tokens.starts_with(&prefix));
        let tail = &g.tokens[prefix.len()..];
        assert_eq!(c.labels.iter().filter(|l| l.as_slice() == tail).count(), 1);
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn narrow_beam_stays_inside_constraint() {
    let (_, c, prompt) = setup();
    for seed in 0..50u64 {
        let provider = RandomProvider {
            vocab_size: Vocabulary::standard().len(),
            seed,
            sharpness: 4.0,
        };
        let g = constrained_generate(&provider, &prompt, None, &c, 1).unwrap();
        assert_eq!(g.tokens, c.continuation(g.class_index));
    }
}

#[test]
fn off_constraint_mass_is_ignored() {
    // 0.9 of every distribution sits on a token the constraint never allows
    let (v, c, prompt) = setup();
    let junk = v.id("<bos>").unwrap();
    let mut provider = TableProvider::new(v.len());
    let mut ctx = prompt.clone();
    for &t in &c.prefix {
        provider.set(ctx.clone(), &[junk, t], &[0.9, 0.05]);
        ctx.push(t);
    }
    provider.set(ctx.clone(), &[junk, c.labels[1][0], c.labels[0][0]], &[0.9, 0.06, 0.02]);
    let g = constrained_generate(&provider, &prompt, None, &c, 3).unwrap();
    assert_eq!(g.class_index, 1);
    assert!(!g.tokens.contains(&junk));
    assert_eq!(v.decode(&g.tokens), format!("{ANSWER_PREFIX} {}", v.decode(&c.labels[1])));
}

#[test]
fn uniform_provider_gives_log_vocab() {
    let (v, c, prompt) = setup();
    let ctx: Vec<usize> = prompt.iter().chain(&c.prefix).copied().collect();
    let lp = first_token_class_logprobs(&UniformProvider { vocab_size: v.len() }, &ctx, None, &c).unwrap();
    for l in lp {
        assert!((l + (v.len() as f64).ln()).abs() < 1e-12);
    }
    let conf = class_confidence(lp, 5.0).unwrap();
    for p in conf.probabilities {
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn worked_example() {
    let lp = [0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()];
    let c = class_confidence(lp, 5.0).unwrap();
    for (got, want) in c.probabilities.iter().zip([0.9191, 0.0715, 0.0094]) {
        assert!((got - want).abs() < 1e-3, "{got} vs {want}");
    }
    assert_eq!(c.argmax(), 0);
}

#[test]
fn table_provider_first_token_and_sequence() {
    let (v, c, prompt) = setup();
    let mut provider = TableProvider::new(v.len());
    let ctx: Vec<usize> = prompt.iter().chain(&c.prefix).copied().collect();
    provider.set(ctx.clone(), &c.first_tokens(), &[0.5, 0.3, 0.2]);
    let lp = first_token_class_logprobs(&provider, &ctx, None, &c).unwrap();
    assert!((lp[0] - 0.5f64.ln()).abs() < 1e-12 && (lp[2] - 0.2f64.ln()).abs() < 1e-12);
    // later label tokens are uniform, so multi-token labels pay -ln V each
    let seq = label_sequence_logprobs(&provider, &ctx, None, &c).unwrap();
    for k in 0..3 {
        let extra = (c.labels[k].len() - 1) as f64 * (v.len() as f64).ln();
        assert!((seq[k] - (lp[k] - extra)).abs() < 1e-9);
    }
}

#[test]
fn interface_and_domain_errors() {
    let (v, c, prompt) = setup();
    let bad = TruncatedProvider { vocab_size: v.len() };
    assert!(matches!(constrained_generate(&bad, &prompt, None, &c, 3), Err(DecodeError::Interface(_))));
    assert!(matches!(
        constrained_generate(&UniformProvider { vocab_size: v.len() }, &prompt, None, &c, 0),
        Err(DecodeError::Config(_))
    ));
    assert!(matches!(class_confidence([-1.0, -1.0, -1.0], 0.0), Err(DecodeError::Domain(_))));
    assert!(matches!(class_confidence([-1.0, f64::NAN, -1.0], 1.0), Err(DecodeError::Domain(_))));
    let clash = ConstraintSpec {
        prefix: c.prefix.clone(),
        labels: [c.labels[0].clone(), c.labels[0].clone(), c.labels[2].clone()],
    };
    assert!(matches!(clash.validate(v.len()), Err(DecodeError::Config(_))));
    assert!(matches!(v.encode("I classify quarks"), Err(DecodeError::Vocabulary(_))));
}

fn power_oracle(p: [f64; 3], t: f64) -> [f64; 3] {
    let w = p.map(|x| x.powf(t));
    let s: f64 = w.iter().sum();
    w.map(|x| x / s)
}

fn simplex() -> impl Strategy<Value = [f64; 3]> {
    (0.001..1.0f64, 0.001..1.0f64, 0.001..1.0f64).prop_map(|(a, b, c)| {
        let s = a + b + c;
        [a / s, b / s, c / s]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn confidence_is_renormalised_power(p in simplex(), t in 0.1..20.0f64) {
        let got = class_confidence(p.map(f64::ln), t).unwrap().probabilities;
        let want = power_oracle(p, t);
        for k in 0..3 {
            prop_assert!((got[k] - want[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_is_temperature_invariant(p in simplex()) {
        let base = class_confidence(p.map(f64::ln), 1.0).unwrap().argmax();
        for t in [0.5, 1.0, 5.0, 20.0] {
            prop_assert_eq!(class_confidence(p.map(f64::ln), t).unwrap().argmax(), base);
        }
    }

    #[test]
    fn higher_temperature_sharpens(p in simplex(), t in 0.2..10.0f64, dt in 0.1..10.0f64) {
        let lo = class_confidence(p.map(f64::ln), t).unwrap().probabilities;
        let hi = class_confidence(p.map(f64::ln), t + dt).unwrap().probabilities;
        let max = |v: [f64; 3]| v.iter().copied().fold(0.0, f64::max);
        prop_assert!(max(hi) >= max(lo) - 1e-12);
    }

    #[test]
    fn shifting_log_probs_changes_nothing(p in simplex(), shift in -50.0..0.0f64) {
        let a = class_confidence(p.map(f64::ln), 3.0).unwrap().probabilities;
        let b = class_confidence(p.map(|x| x.ln() + shift), 3.0).unwrap().probabilities;
        for k in 0..3 {
            prop_assert!((a[k] - b[k]).abs() < 1e-12);
        }
    }
}

fn random_map(r: &mut impl Rng, view: View, size: usize) -> PixelMap {
    let data = (0..size * size).map(|_| if r.random_bool(0.1) { r.random_range(0.0..1.0) } else { 0.0 }).collect();
    PixelMap::new(view, size, size, data, 1.0)
}

#[test]
fn model_provider_agrees_with_classifier() {
    let (v, c, prompt) = setup();
    let cfg = ModelConfig::desk();
    let model = build_model(&cfg, 8).unwrap();
    let provider = ModelProvider::new(&model, &v, c.clone(), prompt.clone()).unwrap();
    let ctx: Vec<usize> = prompt.iter().chain(&c.prefix).copied().collect();
    let mut r = common::rng(4);
    for _ in 0..20 {
        let (xz, yz) = (random_map(&mut r, View::XZ, 64), random_map(&mut r, View::YZ, 64));
        let logits = model.forward(&xz, &yz, Mode::Eval).unwrap();
        let soft = nupix::autodiff::softmax_rows(&nupix::autodiff::Tensor::new(vec![1, 3], logits.to_vec()).unwrap());
        let lp = first_token_class_logprobs(&provider, &ctx, Some((&xz, &yz)), &c).unwrap();
        let conf = class_confidence(lp, 1.0).unwrap();
        for k in 0..3 {
            assert!((conf.probabilities[k] - soft.data()[k]).abs() < 1e-6);
        }
        let g = constrained_generate(&provider, &prompt, Some((&xz, &yz)), &c, 3).unwrap();
        assert_eq!(g.class_index, nupix::decode::argmax_index(&logits));
    }
}

#[test]
fn scores_roundtrip() {
    let records: Vec<ScoreRecord> = (0..5)
        .map(|i| ScoreRecord {
            event_id: i,
            truth: EventClass::ALL[i as usize % 3],
            predicted: EventClass::ALL[(i as usize + 1) % 3],
            probabilities: [0.1 * i as f64, 0.2, 1.0 / 3.0],
            log_probs: [-1.5, -0.25, -std::f64::consts::PI],
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.tsv");
    write_scores(&path, &records).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), SCORES_HEADER);
    assert_eq!(read_scores(&path).unwrap(), records);
}
