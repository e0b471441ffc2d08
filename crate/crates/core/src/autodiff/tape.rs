//! Reverse-mode differentiation tape.
//!
//! Every operation appends one node holding its forward value and the
//! parent references needed to run its adjoint. Nodes are appended in
//! evaluation order, so the node vector is already topologically sorted and
//! `backward` is a single reverse sweep.

use std::cell::RefCell;

use super::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use super::{Tensor, TensorError};

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    AddBias { x: usize, bias: usize },
    Conv2d { input: usize, kernel: usize, geom: ConvGeometry },
    Relu6(usize),
    HardSwish(usize),
    Sigmoid(usize),
    GlobalAvgPool(usize),
    ChannelScale { x: usize, gate: usize },
    Linear { x: usize, weight: usize },
    ConcatChannels(usize, usize),
    Dropout { x: usize, mask: Vec<f64> },
    Reshape(usize),
    SoftmaxCrossEntropy { logits: usize, labels: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros if the node does not influence the loss.
    pub fn get(&self, var: Var<'_>) -> Tensor {
        self.get_id(var.id)
    }

    pub fn get_id(&self, id: usize) -> Tensor {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id]),
        }
    }

    pub fn take(&mut self, var: Var<'_>) -> Tensor {
        match self.grads[var.id].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[var.id]),
        }
    }
}

fn relu6(v: f64) -> f64 {
    v.clamp(0.0, 6.0)
}

// Kinks take the left-continuous subgradient.
fn relu6_grad(v: f64) -> f64 {
    if v > 0.0 && v < 6.0 {
        1.0
    } else {
        0.0
    }
}

fn hard_swish(v: f64) -> f64 {
    v * relu6(v + 3.0) / 6.0
}

fn hard_swish_grad(v: f64) -> f64 {
    if v <= -3.0 {
        0.0
    } else if v < 3.0 {
        (2.0 * v + 3.0) / 6.0
    } else {
        1.0
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Registers an input or parameter.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    fn unary(&self, x: usize, f: impl Fn(f64) -> f64, op: Op) -> Var<'_> {
        let value = self.nodes.borrow()[x].value.map(f);
        self.push(value, op)
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, TensorError> {
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.id].value.shape().to_vec();
        if nodes[loss.id].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: loss_shape });
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::filled(&loss_shape, 1.0));

        fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(val(*b).data()).map(|(g, y)| g * y).collect(),
                    )?;
                    let gb = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(val(*a).data()).map(|(g, x)| g * x).collect(),
                    )?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.map(|v| v * s)),
                Op::Sum(a) => {
                    let x = val(*a);
                    accumulate(&mut grads, *a, Tensor::filled(x.shape(), g.item()));
                }
                Op::AddBias { x, bias } => {
                    let shape = val(*x).shape();
                    let (n, c) = (shape[0], shape[1]);
                    let inner = g.numel() / (n * c);
                    let mut gb = vec![0.0; c];
                    for (chunk_idx, chunk) in g.data().chunks(inner).enumerate() {
                        gb[chunk_idx % c] += chunk.iter().sum::<f64>();
                    }
                    accumulate(&mut grads, *bias, Tensor::new(vec![c], gb)?);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Conv2d { input, kernel, geom } => {
                    let (gi, gk) = conv2d_backward(geom, val(*input).data(), val(*kernel).data(), g.data());
                    accumulate(&mut grads, *input, Tensor::new(val(*input).shape().to_vec(), gi)?);
                    accumulate(&mut grads, *kernel, Tensor::new(val(*kernel).shape().to_vec(), gk)?);
                }
                Op::Relu6(a) => {
                    let gx = zip_map(&g, val(*a), |g, x| g * relu6_grad(x));
                    accumulate(&mut grads, *a, gx);
                }
                Op::HardSwish(a) => {
                    let gx = zip_map(&g, val(*a), |g, x| g * hard_swish_grad(x));
                    accumulate(&mut grads, *a, gx);
                }
                Op::Sigmoid(a) => {
                    let gx = zip_map(&g, &node.value, |g, y| g * y * (1.0 - y));
                    accumulate(&mut grads, *a, gx);
                }
                Op::GlobalAvgPool(a) => {
                    let shape = val(*a).shape().to_vec();
                    let plane = shape[2] * shape[3];
                    let inv = 1.0 / plane as f64;
                    let mut gx = Vec::with_capacity(val(*a).numel());
                    for &gv in g.data() {
                        gx.extend(std::iter::repeat_n(gv * inv, plane));
                    }
                    accumulate(&mut grads, *a, Tensor::new(shape, gx)?);
                }
                Op::ChannelScale { x, gate } => {
                    let xv = val(*x);
                    let gate_v = val(*gate);
                    let plane = xv.shape()[2] * xv.shape()[3];
                    let mut gx = vec![0.0; xv.numel()];
                    let mut gg = vec![0.0; gate_v.numel()];
                    for (nc, s) in gate_v.data().iter().enumerate() {
                        let range = nc * plane..(nc + 1) * plane;
                        let mut acc = 0.0;
                        for ((gxo, &go), &xi) in gx[range.clone()]
                            .iter_mut()
                            .zip(&g.data()[range.clone()])
                            .zip(&xv.data()[range])
                        {
                            *gxo = go * s;
                            acc += go * xi;
                        }
                        gg[nc] = acc;
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), gx)?);
                    accumulate(&mut grads, *gate, Tensor::new(gate_v.shape().to_vec(), gg)?);
                }
                Op::Linear { x, weight } => {
                    let xv = val(*x);
                    let wv = val(*weight);
                    let (n, din) = (xv.shape()[0], xv.shape()[1]);
                    let dout = wv.shape()[0];
                    let mut gx = vec![0.0; n * din];
                    let mut gw = vec![0.0; dout * din];
                    for r in 0..n {
                        let xr = &xv.data()[r * din..(r + 1) * din];
                        let gxr = &mut gx[r * din..(r + 1) * din];
                        for o in 0..dout {
                            let go = g.data()[r * dout + o];
                            let wr = &wv.data()[o * din..(o + 1) * din];
                            let gwr = &mut gw[o * din..(o + 1) * din];
                            for i in 0..din {
                                gxr[i] += go * wr[i];
                                gwr[i] += go * xr[i];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(vec![n, din], gx)?);
                    accumulate(&mut grads, *weight, Tensor::new(vec![dout, din], gw)?);
                }
                Op::ConcatChannels(a, b) => {
                    let sa = val(*a).shape().to_vec();
                    let sb = val(*b).shape().to_vec();
                    let n = sa[0];
                    let la = val(*a).numel() / n;
                    let lb = val(*b).numel() / n;
                    let mut ga = Vec::with_capacity(n * la);
                    let mut gb = Vec::with_capacity(n * lb);
                    for row in g.data().chunks(la + lb) {
                        ga.extend_from_slice(&row[..la]);
                        gb.extend_from_slice(&row[la..]);
                    }
                    accumulate(&mut grads, *a, Tensor::new(sa, ga)?);
                    accumulate(&mut grads, *b, Tensor::new(sb, gb)?);
                }
                Op::Dropout { x, mask } => {
                    let gx = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(mask).map(|(g, m)| g * m).collect(),
                    )?;
                    accumulate(&mut grads, *x, gx);
                }
                Op::Reshape(a) => {
                    let shape = val(*a).shape().to_vec();
                    accumulate(&mut grads, *a, g.reshape(&shape)?);
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let shape = val(*logits).shape().to_vec();
                    let (n, k) = (shape[0], shape[1]);
                    let scale = g.item() / n as f64;
                    let mut gl = probs.clone();
                    for (r, &label) in labels.iter().enumerate() {
                        gl[r * k + label] -= 1.0;
                    }
                    gl.iter_mut().for_each(|v| *v *= scale);
                    accumulate(&mut grads, *logits, Tensor::new(shape, gl)?);
                }
            }
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map on equal shapes")
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables recorded on different tapes"
        );
    }

    fn check_same_shape(&self, other: &Var<'_>, op: &'static str) -> Result<(), TensorError> {
        self.same_tape(other);
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(TensorError::ShapeMismatch { op, left: a, right: b });
        }
        Ok(())
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.check_same_shape(&other, "add")?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            zip_map(&nodes[self.id].value, &nodes[other.id].value, |a, b| a + b)
        };
        Ok(self.tape.push(value, Op::Add(self.id, other.id)))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.check_same_shape(&other, "mul")?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            zip_map(&nodes[self.id].value, &nodes[other.id].value, |a, b| a * b)
        };
        Ok(self.tape.push(value, Op::Mul(self.id, other.id)))
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        self.tape.unary(self.id, |v| v * factor, Op::Scale(self.id, factor))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.tape.nodes.borrow()[self.id].value.sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn relu6(&self) -> Var<'t> {
        self.tape.unary(self.id, relu6, Op::Relu6(self.id))
    }

    pub fn hard_swish(&self) -> Var<'t> {
        self.tape.unary(self.id, hard_swish, Op::HardSwish(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.tape.unary(self.id, sigmoid, Op::Sigmoid(self.id))
    }

    /// Adds a per-channel bias (dimension 1) to an `N x C x ...` tensor.
    pub fn add_bias(&self, bias: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.same_tape(&bias);
        let (xs, bs) = (self.shape(), bias.shape());
        if xs.len() < 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(TensorError::ShapeMismatch { op: "add_bias", left: xs, right: bs });
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let b = nodes[bias.id].value.data();
            let c = xs[1];
            let inner: usize = xs[2..].iter().product();
            let mut out = x.clone();
            for (i, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
                let bv = b[i % c];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
            out
        };
        Ok(self.tape.push(value, Op::AddBias { x: self.id, bias: bias.id }))
    }

    /// Grouped 2-D convolution of an NCHW input with an OIHW kernel.
    pub fn conv2d(
        &self,
        kernel: Var<'t>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var<'t>, TensorError> {
        self.same_tape(&kernel);
        let geom = ConvGeometry::new(&self.shape(), &kernel.shape(), stride, padding, groups)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let out = conv2d_forward(&geom, nodes[self.id].value.data(), nodes[kernel.id].value.data());
            Tensor::new(geom.output_shape().to_vec(), out)?
        };
        Ok(self.tape.push(
            value,
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                geom,
            },
        ))
    }

    /// NCHW -> NC mean over the spatial plane.
    pub fn global_avg_pool(&self) -> Result<Var<'t>, TensorError> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(TensorError::RankMismatch { op: "global_avg_pool", expected: 4, shape });
        }
        let plane = shape[2] * shape[3];
        let value = {
            let nodes = self.tape.nodes.borrow();
            let data = nodes[self.id]
                .value
                .data()
                .chunks(plane)
                .map(|c| c.iter().sum::<f64>() / plane as f64)
                .collect();
            Tensor::new(vec![shape[0], shape[1]], data)?
        };
        Ok(self.tape.push(value, Op::GlobalAvgPool(self.id)))
    }

    /// Multiplies each `(n, c)` plane of an NCHW tensor by `gate[n, c]`.
    pub fn channel_scale(&self, gate: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.same_tape(&gate);
        let (xs, gs) = (self.shape(), gate.shape());
        if xs.len() != 4 || gs != [xs[0], xs[1]] {
            return Err(TensorError::ShapeMismatch { op: "channel_scale", left: xs, right: gs });
        }
        let plane = xs[2] * xs[3];
        let value = {
            let nodes = self.tape.nodes.borrow();
            let g = nodes[gate.id].value.data();
            let mut out = nodes[self.id].value.clone();
            for (chunk, s) in out.data_mut().chunks_mut(plane).zip(g) {
                chunk.iter_mut().for_each(|v| *v *= s);
            }
            out
        };
        Ok(self.tape.push(value, Op::ChannelScale { x: self.id, gate: gate.id }))
    }

    /// `x[N, in] * weight[out, in]^T`.
    pub fn linear(&self, weight: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.same_tape(&weight);
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(TensorError::ShapeMismatch { op: "linear", left: xs, right: ws });
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = nodes[self.id].value.data();
            let w = nodes[weight.id].value.data();
            let mut out = vec![0.0; n * dout];
            for r in 0..n {
                let xr = &x[r * din..(r + 1) * din];
                for o in 0..dout {
                    let wr = &w[o * din..(o + 1) * din];
                    out[r * dout + o] = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
                }
            }
            Tensor::new(vec![n, dout], out)?
        };
        Ok(self.tape.push(value, Op::Linear { x: self.id, weight: weight.id }))
    }

    /// Concatenates two NCHW tensors along the channel axis (`self` first).
    pub fn concat_channels(&self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.same_tape(&other);
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 4 || b.len() != 4 || a[0] != b[0] || a[2..] != b[2..] {
            return Err(TensorError::ShapeMismatch { op: "concat_channels", left: a, right: b });
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            let n = a[0];
            let (av, bv) = (&nodes[self.id].value, &nodes[other.id].value);
            let mut data = Vec::with_capacity(av.numel() + bv.numel());
            for i in 0..n {
                data.extend_from_slice(av.outer(i));
                data.extend_from_slice(bv.outer(i));
            }
            Tensor::new(vec![n, a[1] + b[1], a[2], a[3]], data)?
        };
        Ok(self.tape.push(value, Op::ConcatChannels(self.id, other.id)))
    }

    /// Inverted dropout with a caller-supplied keep mask already scaled by `1/(1-p)`.
    pub fn dropout_with_mask(&self, mask: Vec<f64>) -> Result<Var<'t>, TensorError> {
        let shape = self.shape();
        if mask.len() != shape.iter().product::<usize>() {
            return Err(TensorError::LengthMismatch { shape, len: mask.len() });
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            Tensor::new(shape, x.data().iter().zip(&mask).map(|(a, m)| a * m).collect())?
        };
        Ok(self.tape.push(value, Op::Dropout { x: self.id, mask }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>, TensorError> {
        let value = self.value().reshape(shape)?;
        Ok(self.tape.push(value, Op::Reshape(self.id)))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Var<'t>, TensorError> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: shape,
                right: vec![labels.len()],
            });
        }
        let (n, k) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::LabelOutOfRange { label: bad, classes: k });
        }
        let logits = self.value();
        let mut probs = Vec::with_capacity(n * k);
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = logits.outer(r);
            let lse = log_sum_exp(row);
            loss -= row[label] - lse;
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        loss /= n as f64;
        Ok(self.tape.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax of an `N x K` tensor.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let lse = log_sum_exp(row);
        row.iter_mut().for_each(|v| *v = (*v - lse).exp());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values() {
        assert_eq!(relu6(7.0), 6.0);
        assert_eq!(relu6(-1.0), 0.0);
        assert_eq!(hard_swish(3.0), 3.0);
        assert_eq!(hard_swish(-3.0), 0.0);
        assert_eq!(relu6_grad(7.0), 0.0);
        assert_eq!(relu6_grad(2.0), 1.0);
        assert_eq!(relu6_grad(0.0), 0.0);
        assert_eq!(relu6_grad(6.0), 0.0);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![4], vec![1.0, -2.0, 0.5, 3.0]).unwrap());
        let loss = x.mul(x).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).data(), &[2.0, -4.0, 1.0, 6.0]);
    }

    #[test]
    fn unused_node_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::filled(&[3], 2.0));
        let unused = tape.leaf(Tensor::filled(&[2, 2], 1.0));
        let loss = x.sum();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::filled(&[3], 2.0));
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn uniform_logits_give_ln3() {
        let tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(&[2, 3]));
        let loss = logits.softmax_cross_entropy(&[0, 2]).unwrap();
        assert!((loss.value().item() - 3f64.ln()).abs() < 1e-15);
        assert!(matches!(
            logits.softmax_cross_entropy(&[0, 3]),
            Err(TensorError::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn confident_logit_drives_loss_to_zero() {
        let tape = Tape::new();
        let logits = tape.leaf(Tensor::new(vec![1, 3], vec![60.0, 0.0, 0.0]).unwrap());
        let loss = logits.softmax_cross_entropy(&[0]).unwrap();
        assert!(loss.value().item() < 1e-20);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let tape = Tape::new();
        let x = Tensor::from_fn(&[2, 1, 4, 4], |i| (i as f64 * 0.37).sin());
        let xv = tape.leaf(x.clone());
        let k = tape.leaf(Tensor::filled(&[1, 1, 1, 1], 1.0));
        let y = xv.conv2d(k, 1, 0, 1).unwrap();
        assert_eq!(y.value(), x);
    }

    #[test]
    fn conv_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]));
        let k = tape.leaf(Tensor::zeros(&[1, 3, 3, 3]));
        let msg = x.conv2d(k, 1, 0, 1).unwrap_err().to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
    }
}
