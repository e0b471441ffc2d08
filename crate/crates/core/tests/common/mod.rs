//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use nupix::autodiff::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Evaluates `f` on fresh leaves and returns the scalar loss.
pub fn eval_scalar<F>(inputs: &[Tensor], f: &F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    f(&tape, &vars).value().item()
}

/// Relative error between an analytic and a numeric derivative.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-7);
    (analytic - numeric).abs() / denom
}

/// Compares tape gradients against central finite differences for every
/// element of every input. Returns the largest relative error.
pub fn max_gradient_error<F>(inputs: &[Tensor], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]);
        for i in 0..input.numel() {
            let numeric = central_difference(inputs, k, i, &f);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

pub fn central_difference<F>(inputs: &[Tensor], k: usize, i: usize, f: &F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let mut plus = inputs.to_vec();
    plus[k].data_mut()[i] += FD_STEP;
    let mut minus = inputs.to_vec();
    minus[k].data_mut()[i] -= FD_STEP;
    (eval_scalar(&plus, f) - eval_scalar(&minus, f)) / (2.0 * FD_STEP)
}

/// Contracts `out` with a fixed pseudo-random weight tensor so that every
/// output element contributes an O(1) gradient.
pub fn weighted_sum<'t>(tape: &'t Tape, out: Var<'t>, seed: u64) -> Var<'t> {
    let mut r = rng(seed);
    let w = random_tensor(&mut r, &out.shape(), 1.0);
    out.mul(tape.leaf(w)).unwrap().sum()
}

/// Straightforward six-loop convolution used as an oracle.
pub fn brute_force_conv(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor {
    let [n, c, h, w]: [usize; 4] = input.shape().try_into().unwrap();
    let [o, ipg, kh, kw]: [usize; 4] = kernel.shape().try_into().unwrap();
    let opg = o / groups;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[n, o, oh, ow]);
    for b in 0..n {
        for oc in 0..o {
            let g = oc / opg;
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for icg in 0..ipg {
                        let ic = g * ipg + icg;
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (x * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let iv = input.data()[((b * c + ic) * h + iy as usize) * w + ix as usize];
                                let kv = kernel.data()[((oc * ipg + icg) * kh + i) * kw + j];
                                acc += iv * kv;
                            }
                        }
                    }
                    out.data_mut()[((b * o + oc) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    out
}

/// Builds a random depth-`depth` chain of primitives over `[2, 4, 5, 5]`
/// feature maps, finished by pooling, a dense layer and softmax
/// cross-entropy. Returns the parameter tensors and the loss closure.
pub fn random_composition(
    seed: u64,
    depth: usize,
) -> (Vec<Tensor>, impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>) {
    use nupix::autodiff::{se_block, SeWeights};

    let mut r = rng(seed);
    let ops: Vec<usize> = (0..depth).map(|_| r.random_range(0..8)).collect();
    let mut inputs = vec![random_tensor(&mut r, &[2, 4, 5, 5], 1.0)];
    // per-op parameter slots, appended in op order
    for &op in &ops {
        match op {
            0 => inputs.push(random_tensor(&mut r, &[4, 4, 3, 3], 0.4)),
            1 => inputs.push(random_tensor(&mut r, &[4, 1, 3, 3], 0.6)),
            2 => inputs.push(random_tensor(&mut r, &[4], 1.0)),
            6 => {
                inputs.push(random_tensor(&mut r, &[2, 4], 0.7));
                inputs.push(random_tensor(&mut r, &[2], 0.5));
                inputs.push(random_tensor(&mut r, &[4, 2], 0.7));
                inputs.push(random_tensor(&mut r, &[4], 0.5));
            }
            7 => inputs.push(random_tensor(&mut r, &[4, 8, 1, 1], 0.5)),
            _ => {}
        }
    }
    inputs.push(random_tensor(&mut r, &[3, 4], 0.8));
    inputs.push(random_tensor(&mut r, &[3], 0.3));

    let f = constrain(move |_tape, vars| {
        let mut x = vars[0];
        let mut k = 1;
        for &op in &ops {
            x = match op {
                0 => {
                    k += 1;
                    x.conv2d(vars[k - 1], 1, 1, 1).unwrap()
                }
                1 => {
                    k += 1;
                    x.conv2d(vars[k - 1], 1, 1, 4).unwrap()
                }
                2 => {
                    k += 1;
                    x.add_bias(vars[k - 1]).unwrap()
                }
                3 => x.hard_swish(),
                4 => x.sigmoid(),
                5 => x.scale(2.0).relu6(),
                6 => {
                    k += 4;
                    let w = SeWeights {
                        reduce_w: vars[k - 4],
                        reduce_b: vars[k - 3],
                        expand_w: vars[k - 2],
                        expand_b: vars[k - 1],
                    };
                    se_block(x, w, 2).unwrap()
                }
                _ => {
                    k += 1;
                    let doubled = x.concat_channels(x.sigmoid()).unwrap();
                    doubled.conv2d(vars[k - 1], 1, 0, 1).unwrap()
                }
            };
        }
        let pooled = x.global_avg_pool().unwrap();
        let logits = pooled.linear(vars[k]).unwrap().add_bias(vars[k + 1]).unwrap();
        logits.softmax_cross_entropy(&[2, 0]).unwrap()
    });
    (inputs, f)
}

/// Pins a closure to the higher-ranked signature used by the gradient checks.
pub fn constrain<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    f
}

/// Detector with anodes at x = +-1.1 m and a central cathode, so a deposit
/// at x = 0.1 m drifts exactly 1 m.
pub fn one_metre_geometry() -> nupix::detsim::DetectorGeometry {
    nupix::detsim::DetectorGeometry::new([2.4, 2.0, 7.0], vec![-1.1, 1.1], vec![0.0], [1.0, 5.0, 5.0], 50.0, 64)
        .expect("valid geometry")
}

/// Smearing widths in mm recovered from voxelised deposits at `x_m`, with
/// positions jittered uniformly within one voxel. The jitter adds
/// `pitch^2 / 12` to the measured variance, which is subtracted.
pub fn measured_sigmas(x_m: f64, samples: usize, seed: u64) -> [f64; 3] {
    use nupix::detsim::{smear_and_voxelize, DiffusionModel, EnergyDeposit};
    let geom = one_metre_geometry();
    let model = DiffusionModel::default();
    let pitch = geom.voxel_pitch_mm;
    let mut r = rng(seed);
    let mut second = [0.0f64; 3];
    for _ in 0..samples {
        let position = [
            x_m + r.random_range(-0.5..0.5) * pitch[0] * 1e-3,
            0.0123 + r.random_range(-0.5..0.5) * pitch[1] * 1e-3,
            0.4567 + r.random_range(-0.5..0.5) * pitch[2] * 1e-3,
        ];
        let grid = smear_and_voxelize(&[EnergyDeposit { position, energy: 1.0 }], &model, &geom).unwrap();
        let truth = geom.to_local_mm(position);
        for (idx, e) in grid.iter() {
            for a in 0..3 {
                let centre = (idx[a] as f64 + 0.5) * pitch[a];
                second[a] += e * (centre - truth[a]).powi(2);
            }
        }
    }
    std::array::from_fn(|a| (second[a] / samples as f64 - pitch[a] * pitch[a] / 12.0).sqrt())
}

/// Probability that a random positive outranks a random negative, ties
/// counted as one half.
pub fn pairwise_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Best full continuation by exhaustive enumeration: `(class, log p)`, ties
/// going to the lexicographically smaller token sequence.
pub fn brute_force_decode(
    provider: &dyn nupix::decode::LogProbProvider,
    prompt: &[usize],
    constraint: &nupix::decode::ConstraintSpec,
) -> (usize, f64) {
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for k in 0..nupix::NUM_CLASSES {
        let cont = constraint.continuation(k);
        let mut ctx = prompt.to_vec();
        let mut total = 0.0;
        for &t in &cont {
            total += provider.next_log_probs(&ctx, None).unwrap()[t];
            ctx.push(t);
        }
        let better = match &best {
            None => true,
            Some((_, s, toks)) => total > *s || (total == *s && cont < *toks),
        };
        if better {
            best = Some((k, total, cont));
        }
    }
    let (k, s, _) = best.unwrap();
    (k, s)
}
