//! Siamese dual-branch classifier built from inverted residual blocks.
//!
//! Each view passes through a stem convolution and a stack of branch
//! stages. The two feature maps are concatenated along channels (XZ first),
//! refined by merge stages, pooled, and classified by a small dense head.

mod config;

pub use config::{Activation, ModelConfig, StageSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::autodiff::{dropout, se_block, softmax_rows, SeWeights, Tape, Tensor, TensorError, Var};
use crate::detsim::PixelMap;
use crate::NUM_CLASSES;

/// Pairs per tape when running inference.
const EVAL_CHUNK: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("cannot parse model config: {0}")]
    Parse(String),
    #[error("image is {width}x{height}, model expects {expected}x{expected}")]
    InputSize { expected: usize, width: usize, height: usize },
    #[error("parameter {name}: expected shape {expected:?}, got {got:?}")]
    ParameterShape { name: String, expected: Vec<usize>, got: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout masks are drawn from a generator seeded with this value.
    Train { dropout_seed: u64 },
}

#[derive(Clone, Copy, Debug)]
struct Affine {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct SeLayout {
    reduce: Affine,
    expand: Affine,
}

#[derive(Clone, Debug)]
struct BlockLayout {
    spec: StageSpec,
    expand: Option<Affine>,
    depthwise: Affine,
    se: Option<SeLayout>,
    project: Affine,
}

#[derive(Clone, Debug)]
struct BranchLayout {
    stem: Affine,
    blocks: Vec<BlockLayout>,
}

#[derive(Clone, Debug)]
struct Layout {
    branches: [BranchLayout; 2],
    merge: Vec<BlockLayout>,
    hidden: Vec<Affine>,
    out: Affine,
}

/// Parameter handles for one inverted residual block.
#[derive(Clone, Copy, Debug)]
pub struct BlockParams<'t> {
    /// 1x1 expansion `(weight, bias)`; absent when the expansion factor is 1.
    pub expand: Option<(Var<'t>, Var<'t>)>,
    pub depthwise: (Var<'t>, Var<'t>),
    pub se: Option<SeWeights<'t>>,
    pub project: (Var<'t>, Var<'t>),
}

fn activate<'t>(x: Var<'t>, act: Activation) -> Var<'t> {
    match act {
        Activation::Relu6 => x.relu6(),
        Activation::HardSwish => x.hard_swish(),
    }
}

/// 1x1 expand, depthwise kxk, optional squeeze-excitation, linear 1x1
/// projection. The input is added back when stride is 1 and the channel
/// count is unchanged.
pub fn inverted_residual<'t>(
    input: Var<'t>,
    spec: &StageSpec,
    params: &BlockParams<'t>,
    se_reduction: usize,
) -> Result<Var<'t>, TensorError> {
    let in_channels = input.shape()[1];
    let mut h = input;
    if let Some((w, b)) = params.expand {
        h = activate(h.conv2d(w, 1, 0, 1)?.add_bias(b)?, spec.activation);
    }
    let hidden = h.shape()[1];
    let (dw, db) = params.depthwise;
    h = activate(
        h.conv2d(dw, spec.stride, spec.kernel / 2, hidden)?.add_bias(db)?,
        spec.activation,
    );
    if let Some(se) = params.se {
        h = se_block(h, se, se_reduction)?;
    }
    let (pw, pb) = params.project;
    h = h.conv2d(pw, 1, 0, 1)?.add_bias(pb)?;
    if spec.stride == 1 && in_channels == spec.out_channels {
        h = h.add(input)?;
    }
    Ok(h)
}

struct Builder {
    names: Vec<String>,
    values: Vec<Tensor>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let value = Tensor::from_fn(shape, |_| normal.sample(&mut self.rng));
        self.push(name, value)
    }

    fn push(&mut self, name: String, value: Tensor) -> usize {
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    fn conv(&mut self, prefix: &str, out: usize, in_per_group: usize, k: usize) -> Affine {
        let w = self.weight(format!("{prefix}.weight"), &[out, in_per_group, k, k], in_per_group * k * k);
        let b = self.push(format!("{prefix}.bias"), Tensor::zeros(&[out]));
        Affine { w, b }
    }

    fn dense(&mut self, prefix: &str, out: usize, inp: usize) -> Affine {
        let w = self.weight(format!("{prefix}.weight"), &[out, inp], inp);
        let b = self.push(format!("{prefix}.bias"), Tensor::zeros(&[out]));
        Affine { w, b }
    }

    fn block(&mut self, prefix: &str, spec: StageSpec, in_ch: usize, reduction: usize) -> BlockLayout {
        let hidden = in_ch * spec.expansion;
        let expand = (spec.expansion != 1).then(|| self.conv(&format!("{prefix}.expand"), hidden, in_ch, 1));
        let depthwise = self.conv(&format!("{prefix}.depthwise"), hidden, 1, spec.kernel);
        let se = spec.se.then(|| {
            let squeezed = hidden / reduction;
            SeLayout {
                reduce: self.dense(&format!("{prefix}.se.reduce"), squeezed, hidden),
                expand: self.dense(&format!("{prefix}.se.expand"), hidden, squeezed),
            }
        });
        let project = self.conv(&format!("{prefix}.project"), spec.out_channels, hidden, 1);
        BlockLayout {
            spec,
            expand,
            depthwise,
            se,
            project,
        }
    }

    fn branch(&mut self, prefix: &str, cfg: &ModelConfig) -> BranchLayout {
        let stem = self.conv(&format!("{prefix}.stem"), cfg.stem_channels, 1, cfg.stem_kernel);
        let mut in_ch = cfg.stem_channels;
        let blocks = cfg
            .branch_stages
            .iter()
            .enumerate()
            .map(|(i, &spec)| {
                let b = self.block(&format!("{prefix}.block{i}"), spec, in_ch, cfg.se_reduction);
                in_ch = spec.out_channels;
                b
            })
            .collect();
        BranchLayout { stem, blocks }
    }
}

/// Trainable Siamese classifier. Parameters are stored in creation order.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    names: Vec<String>,
    values: Vec<Tensor>,
    layout: Layout,
}

/// Builds a model with He fan-in normal weights and zero biases drawn from
/// `seed`, which is also recorded in the returned model's config.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model, ModelError> {
    let mut config = config.clone();
    config.init_seed = seed;
    Model::new(config)
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut b = Builder {
            names: Vec::new(),
            values: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.init_seed),
        };
        let branches = if config.shared_branch {
            let br = b.branch("branch", &config);
            [br.clone(), br]
        } else {
            [b.branch("branch_xz", &config), b.branch("branch_yz", &config)]
        };
        let mut in_ch = config.merged_channels();
        let merge = config
            .merge_stages
            .iter()
            .enumerate()
            .map(|(i, &spec)| {
                let blk = b.block(&format!("merge.block{i}"), spec, in_ch, config.se_reduction);
                in_ch = spec.out_channels;
                blk
            })
            .collect();
        let hidden = config
            .head_hidden
            .iter()
            .enumerate()
            .map(|(i, &width)| {
                let d = b.dense(&format!("head.fc{i}"), width, in_ch);
                in_ch = width;
                d
            })
            .collect();
        let out = b.dense("head.out", config.num_classes, in_ch);
        Ok(Self {
            config,
            names: b.names,
            values: b.values,
            layout: Layout {
                branches,
                merge,
                hidden,
                out,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn shared_branch(&self) -> bool {
        self.config.shared_branch
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.values
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn named_parameters(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replaces every parameter, checking shapes against the current set.
    pub fn set_parameters(&mut self, values: Vec<Tensor>) -> Result<(), ModelError> {
        if values.len() != self.values.len() {
            return Err(ModelError::Config(vec![format!(
                "expected {} parameter tensors, got {}",
                self.values.len(),
                values.len()
            )]));
        }
        for ((name, old), new) in self.names.iter().zip(&self.values).zip(&values) {
            if old.shape() != new.shape() {
                return Err(ModelError::ParameterShape {
                    name: name.clone(),
                    expected: old.shape().to_vec(),
                    got: new.shape().to_vec(),
                });
            }
        }
        self.values = values;
        Ok(())
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn leaves<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.values.iter().map(|v| tape.leaf(v.clone())).collect()
    }

    /// Stacks single-channel images into an `[N, 1, H, W]` tensor.
    pub fn images_to_tensor(&self, maps: &[&PixelMap]) -> Result<Tensor, ModelError> {
        let s = self.config.input_size;
        let mut data = Vec::with_capacity(maps.len() * s * s);
        for m in maps {
            if m.width != s || m.height != s {
                return Err(ModelError::InputSize {
                    expected: s,
                    width: m.width,
                    height: m.height,
                });
            }
            data.extend(m.intensities.iter().map(|&v| v as f64));
        }
        Ok(Tensor::new(vec![maps.len(), 1, s, s], data)?)
    }

    fn block_params<'t>(blk: &BlockLayout, p: &[Var<'t>]) -> BlockParams<'t> {
        BlockParams {
            expand: blk.expand.map(|a| (p[a.w], p[a.b])),
            depthwise: (p[blk.depthwise.w], p[blk.depthwise.b]),
            se: blk.se.map(|s| SeWeights {
                reduce_w: p[s.reduce.w],
                reduce_b: p[s.reduce.b],
                expand_w: p[s.expand.w],
                expand_b: p[s.expand.b],
            }),
            project: (p[blk.project.w], p[blk.project.b]),
        }
    }

    fn run_branch<'t>(&self, layout: &BranchLayout, p: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>, TensorError> {
        let cfg = &self.config;
        let mut h = x
            .conv2d(p[layout.stem.w], cfg.stem_stride, cfg.stem_kernel / 2, 1)?
            .add_bias(p[layout.stem.b])?
            .relu6();
        for blk in &layout.blocks {
            h = inverted_residual(h, &blk.spec, &Self::block_params(blk, p), cfg.se_reduction)?;
        }
        Ok(h)
    }

    /// Records a forward pass on the tape and returns `[N, classes]` logits.
    ///
    /// `params` supplies every parameter; the YZ branch reads its weights
    /// from `yz_params` instead, which lets callers separate the per-view
    /// gradient contributions of a shared branch. Pass the same slice twice
    /// for the ordinary forward.
    pub fn forward_tape<'t>(
        &self,
        params: &[Var<'t>],
        yz_params: &[Var<'t>],
        xz: Var<'t>,
        yz: Var<'t>,
        mode: Mode,
    ) -> Result<Var<'t>, ModelError> {
        let cfg = &self.config;
        let a = self.run_branch(&self.layout.branches[0], params, xz)?;
        let b = self.run_branch(&self.layout.branches[1], yz_params, yz)?;
        let mut h = a.concat_channels(b)?;
        for blk in &self.layout.merge {
            h = inverted_residual(h, &blk.spec, &Self::block_params(blk, params), cfg.se_reduction)?;
        }
        h = h.global_avg_pool()?;
        let mut rng = match mode {
            Mode::Train { dropout_seed } => Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
            Mode::Eval => None,
        };
        for d in &self.layout.hidden {
            h = h.linear(params[d.w])?.add_bias(params[d.b])?.hard_swish();
            if let Some(rng) = rng.as_mut().filter(|_| cfg.dropout > 0.0) {
                h = dropout(h, cfg.dropout, rng)?;
            }
        }
        Ok(h.linear(params[self.layout.out.w])?.add_bias(params[self.layout.out.b])?)
    }

    fn batch_tensors(&self, pairs: &[(&PixelMap, &PixelMap)]) -> Result<(Tensor, Tensor), ModelError> {
        let xs: Vec<&PixelMap> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<&PixelMap> = pairs.iter().map(|p| p.1).collect();
        Ok((self.images_to_tensor(&xs)?, self.images_to_tensor(&ys)?))
    }

    /// `[N, classes]` logits for a batch of `(XZ, YZ)` pairs.
    pub fn logits(&self, pairs: &[(&PixelMap, &PixelMap)], mode: Mode) -> Result<Tensor, ModelError> {
        let (x, y) = self.batch_tensors(pairs)?;
        let tape = Tape::new();
        let p = self.leaves(&tape);
        let out = self.forward_tape(&p, &p, tape.leaf(x), tape.leaf(y), mode)?;
        Ok(out.value())
    }

    /// Logits for a single pair.
    pub fn forward(&self, xz: &PixelMap, yz: &PixelMap, mode: Mode) -> Result<[f64; NUM_CLASSES], ModelError> {
        let t = self.logits(&[(xz, yz)], mode)?;
        Ok(std::array::from_fn(|k| t.data()[k]))
    }

    /// Mean cross-entropy over the batch and its gradient for every parameter.
    pub fn loss_and_gradients(
        &self,
        pairs: &[(&PixelMap, &PixelMap)],
        labels: &[usize],
        mode: Mode,
    ) -> Result<(f64, Vec<Tensor>), ModelError> {
        let (x, y) = self.batch_tensors(pairs)?;
        let tape = Tape::new();
        let p = self.leaves(&tape);
        let logits = self.forward_tape(&p, &p, tape.leaf(x), tape.leaf(y), mode)?;
        let loss = logits.softmax_cross_entropy(labels)?;
        let mut grads = tape.backward(loss)?;
        let loss = loss.value().item();
        Ok((loss, p.iter().map(|&v| grads.take(v)).collect()))
    }

    /// Eval-mode class probabilities, computed in parallel chunks.
    pub fn predict_proba(&self, pairs: &[(&PixelMap, &PixelMap)]) -> Result<Vec<[f64; NUM_CLASSES]>, ModelError> {
        let chunks: Vec<Vec<[f64; NUM_CLASSES]>> = pairs
            .par_chunks(EVAL_CHUNK)
            .map(|chunk| {
                let probs = softmax_rows(&self.logits(chunk, Mode::Eval)?);
                Ok(probs
                    .data()
                    .chunks(NUM_CLASSES)
                    .map(|r| std::array::from_fn(|k| r[k]))
                    .collect())
            })
            .collect::<Result<_, ModelError>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Mean cross-entropy and accuracy in eval mode.
    pub fn evaluate(&self, pairs: &[(&PixelMap, &PixelMap)], labels: &[usize]) -> Result<(f64, f64), ModelError> {
        let probs = self.predict_proba(pairs)?;
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (p, &y) in probs.iter().zip(labels) {
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
            let argmax = (0..NUM_CLASSES).fold(0, |best, k| if p[k] > p[best] { k } else { best });
            correct += usize::from(argmax == y);
        }
        let n = labels.len().max(1) as f64;
        Ok((loss / n, correct as f64 / n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detsim::View;

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_size: 16,
            stem_channels: 4,
            branch_stages: vec![
                StageSpec::new(1, 4, 3, 1, false, Activation::Relu6),
                StageSpec::new(2, 8, 3, 2, true, Activation::HardSwish),
            ],
            merge_stages: vec![StageSpec::new(2, 8, 3, 1, true, Activation::HardSwish)],
            head_hidden: vec![8],
            ..ModelConfig::desk()
        }
    }

    #[test]
    fn names_are_unique() {
        for shared in [true, false] {
            let cfg = ModelConfig { shared_branch: shared, ..ModelConfig::desk() };
            let m = Model::new(cfg).unwrap();
            let mut names = m.names().to_vec();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), m.names().len());
        }
    }

    #[test]
    fn wrong_image_size_is_error() {
        let m = Model::new(tiny()).unwrap();
        let a = PixelMap::zeros(View::XZ, 16);
        let b = PixelMap::zeros(View::YZ, 8);
        assert!(matches!(m.forward(&a, &b, Mode::Eval), Err(ModelError::InputSize { .. })));
    }

    #[test]
    fn zero_images_give_stable_logits() {
        let m = Model::new(tiny()).unwrap();
        let a = PixelMap::zeros(View::XZ, 16);
        let b = PixelMap::zeros(View::YZ, 16);
        let l1 = m.forward(&a, &b, Mode::Eval).unwrap();
        let l2 = m.forward(&a, &b, Mode::Eval).unwrap();
        assert_eq!(l1, l2);
        // with zero biases every activation stays zero
        assert_eq!(l1, [0.0; 3]);
    }

    #[test]
    fn set_parameters_checks_shapes() {
        let mut m = Model::new(tiny()).unwrap();
        let mut vals = m.parameters().to_vec();
        vals[0] = Tensor::zeros(&[1]);
        assert!(m.set_parameters(vals).is_err());
    }
}
