//! Dense tensors with a reverse-mode differentiation tape, plus the
//! operators needed by the Siamese classifier: grouped convolution,
//! ReLU6 / hard-swish / sigmoid, squeeze-and-excitation, dense layers,
//! channel concatenation, dropout and softmax cross-entropy.

mod adam;
pub mod conv;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use conv::conv_output_len;
pub use tape::{log_sum_exp, softmax_rows, Gradients, Tape, Var};
pub use tensor::Tensor;

use rand::Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} elements, buffer has {len}", shape.iter().product::<usize>())]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("invalid shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("squeeze-excitation: {channels} channels not divisible by reduction {reduction}")]
    IndivisibleChannels { channels: usize, reduction: usize },
    #[error("{0}")]
    InvalidArgument(String),
}

/// Parameters of a squeeze-and-excitation gate.
#[derive(Clone, Copy, Debug)]
pub struct SeWeights<'t> {
    /// `[C/r, C]`
    pub reduce_w: Var<'t>,
    pub reduce_b: Var<'t>,
    /// `[C, C/r]`
    pub expand_w: Var<'t>,
    pub expand_b: Var<'t>,
}

/// Squeeze-and-excitation: global average pool, ReLU6 bottleneck, sigmoid
/// expansion, then channel-wise rescaling of `features`.
pub fn se_block<'t>(
    features: Var<'t>,
    weights: SeWeights<'t>,
    reduction: usize,
) -> Result<Var<'t>, TensorError> {
    let shape = features.shape();
    if shape.len() != 4 {
        return Err(TensorError::RankMismatch {
            op: "se_block",
            expected: 4,
            shape,
        });
    }
    let channels = shape[1];
    if reduction == 0 || channels % reduction != 0 {
        return Err(TensorError::IndivisibleChannels { channels, reduction });
    }
    let squeezed = features.global_avg_pool()?;
    let hidden = squeezed
        .linear(weights.reduce_w)?
        .add_bias(weights.reduce_b)?
        .relu6();
    let gate = hidden
        .linear(weights.expand_w)?
        .add_bias(weights.expand_b)?
        .sigmoid();
    features.channel_scale(gate)
}

/// Inverted dropout: zeroes each element with probability `rate` and scales
/// survivors by `1 / (1 - rate)`.
pub fn dropout<'t>(x: Var<'t>, rate: f64, rng: &mut impl Rng) -> Result<Var<'t>, TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
    }
    let n: usize = x.shape().iter().product();
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    x.dropout_with_mask(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_se(tape: &Tape, c: usize, r: usize) -> SeWeights<'_> {
        SeWeights {
            reduce_w: tape.leaf(Tensor::zeros(&[c / r, c])),
            reduce_b: tape.leaf(Tensor::zeros(&[c / r])),
            expand_w: tape.leaf(Tensor::zeros(&[c, c / r])),
            expand_b: tape.leaf(Tensor::zeros(&[c])),
        }
    }

    #[test]
    fn zero_se_weights_halve_input() {
        let tape = Tape::new();
        let x = Tensor::from_fn(&[2, 4, 3, 3], |i| (i as f64).cos());
        let xv = tape.leaf(x.clone());
        let y = se_block(xv, zero_se(&tape, 4, 2), 2).unwrap().value();
        assert_eq!(y.shape(), x.shape());
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn se_rejects_indivisible_channels() {
        let tape = Tape::new();
        let xv = tape.leaf(Tensor::zeros(&[1, 6, 2, 2]));
        let w = zero_se(&tape, 4, 2);
        assert_eq!(
            se_block(xv, w, 4).unwrap_err(),
            TensorError::IndivisibleChannels { channels: 6, reduction: 4 }
        );
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        use rand::SeedableRng;
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 5], |i| i as f64));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let y = dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(y.value(), x.value());
        let z = dropout(x, 0.5, &mut rng).unwrap().value();
        assert!(z.data().iter().zip(x.value().data()).all(|(a, b)| *a == 0.0 || *a == 2.0 * b));
    }
}
