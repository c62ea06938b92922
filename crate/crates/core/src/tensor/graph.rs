//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every op applied during a forward pass in topological
//! order; [`Graph::backward`] replays the tape in reverse, accumulating
//! gradients into the leaves. One backward pass per tape: after it runs the
//! tape is sealed and both further recording and a second backward are errors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvDims};
use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<T: Scalar> {
    Leaf,
    Conv2d { input: NodeId, weight: NodeId, bias: Option<NodeId>, dims: ConvDims },
    Linear { input: NodeId, weight: NodeId, bias: NodeId },
    LeakyRelu { input: NodeId, slope: T },
    Relu { input: NodeId },
    Sigmoid { input: NodeId },
    GlobalAvgPool { input: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Abs { input: NodeId },
    Scale { input: NodeId, factor: T },
    Sum { input: NodeId },
    Dropout { input: NodeId, mask: Vec<T> },
    ConcatChannels { a: NodeId, b: NodeId },
}

struct Node<T: Scalar> {
    shape: Shape,
    value: Vec<T>,
    needs_grad: bool,
    grad: Option<Vec<T>>,
    op: Op<T>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    sealed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), sealed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a tensor as a leaf; `requires_grad` is taken from the tensor.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Result<NodeId> {
        self.push(t.shape(), t.data().to_vec(), t.requires_grad, Op::Leaf)
    }

    /// Leaf that never receives a gradient (inputs, targets, projections).
    pub fn constant(&mut self, t: &Tensor<T>) -> Result<NodeId> {
        self.push(t.shape(), t.data().to_vec(), false, Op::Leaf)
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn value_tensor(&self, id: NodeId) -> Tensor<T> {
        Tensor::new(self.shape(id), self.value(id).to_vec()).expect("node buffers are consistent")
    }

    /// Gradient of a leaf after [`Graph::backward`] has run.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Smallest |x| fed into any kinked op (LeakyReLU, ReLU, Abs) on this
    /// tape, or None when no such op was recorded. Finite-difference checks
    /// use this to verify the evaluation point is clear of the kinks.
    pub fn kink_margin(&self) -> Option<f64> {
        let mut margin: Option<f64> = None;
        for node in &self.nodes {
            let input = match node.op {
                Op::LeakyRelu { input, .. } | Op::Relu { input } | Op::Abs { input } => input,
                _ => continue,
            };
            for v in self.value(input) {
                let m = v.abs().as_f64();
                if margin.map(|cur| m < cur).unwrap_or(true) {
                    margin = Some(m);
                }
            }
        }
        margin
    }

    pub fn assert_finite(&self, id: NodeId, context: &str) -> Result<()> {
        if self.nodes[id.0].value.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { context: context.to_string() })
        }
    }

    fn push(&mut self, shape: Shape, value: Vec<T>, needs_grad: bool, op: Op<T>) -> Result<NodeId> {
        if self.sealed {
            return Err(Error::TapeConsumed);
        }
        debug_assert_eq!(shape.numel(), value.len());
        self.nodes.push(Node { shape, value, needs_grad, grad: None, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ---- forward ops -----------------------------------------------------

    /// Stride-1 cross-correlation with square odd kernel and optional bias.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        padding: usize,
        dilation: usize,
    ) -> Result<NodeId> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        if dilation == 0 {
            return Err(Error::invalid("conv2d", "dilation must be >= 1"));
        }
        if ws.h != ws.w || ws.h % 2 == 0 {
            return Err(Error::invalid("conv2d", format!("kernel must be square and odd, got {ws}")));
        }
        if ws.c != xs.c {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {} != weight in-channels {}", xs.c, ws.c),
            ));
        }
        let k = ws.h;
        let out_h = kernels::conv_out_extent(xs.h, k, padding, dilation)
            .ok_or_else(|| Error::invalid("conv2d", format!("empty output for input {xs}, k={k}, padding={padding}, dilation={dilation}")))?;
        let out_w = kernels::conv_out_extent(xs.w, k, padding, dilation)
            .ok_or_else(|| Error::invalid("conv2d", format!("empty output for input {xs}, k={k}, padding={padding}, dilation={dilation}")))?;
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != Shape::new(1, ws.n, 1, 1) {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias must be [1, {}, 1, 1], got {bs}", ws.n),
                ));
            }
        }
        let dims = ConvDims {
            batch: xs.n,
            c_in: xs.c,
            c_out: ws.n,
            h: xs.h,
            w: xs.w,
            k,
            padding,
            dilation,
            out_h,
            out_w,
        };
        let value = kernels::conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            &dims,
        );
        let needs =
            self.needs(input) || self.needs(weight) || bias.map(|b| self.needs(b)).unwrap_or(false);
        self.push(dims.out_shape(), value, needs, Op::Conv2d { input, weight, bias, dims })
    }

    /// Affine map along the channel axis at every spatial location.
    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let bs = self.shape(bias);
        if ws.h != 1 || ws.w != 1 {
            return Err(Error::shape("linear", format!("weight must be [Cout, Cin, 1, 1], got {ws}")));
        }
        if ws.c != xs.c {
            return Err(Error::shape(
                "linear",
                format!("input channels {} != weight in-features {}", xs.c, ws.c),
            ));
        }
        if bs != Shape::new(1, ws.n, 1, 1) {
            return Err(Error::shape("linear", format!("bias must be [1, {}, 1, 1], got {bs}", ws.n)));
        }
        let spatial = xs.h * xs.w;
        let value = kernels::linear_forward(
            self.value(input),
            self.value(weight),
            self.value(bias),
            xs.n,
            xs.c,
            ws.n,
            spatial,
        );
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        self.push(
            Shape::new(xs.n, ws.n, xs.h, xs.w),
            value,
            needs,
            Op::Linear { input, weight, bias },
        )
    }

    pub fn leaky_relu(&mut self, input: NodeId, slope: f64) -> Result<NodeId> {
        let s = T::from_f64(slope);
        let value = self.nodes[input.0]
            .value
            .iter()
            .map(|&x| if x > T::zero() { x } else { s * x })
            .collect();
        let needs = self.needs(input);
        self.push(self.shape(input), value, needs, Op::LeakyRelu { input, slope: s })
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let value = self.nodes[input.0]
            .value
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let needs = self.needs(input);
        self.push(self.shape(input), value, needs, Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: NodeId) -> Result<NodeId> {
        let value = self.nodes[input.0].value.iter().map(|&x| sigmoid(x)).collect();
        let needs = self.needs(input);
        self.push(self.shape(input), value, needs, Op::Sigmoid { input })
    }

    /// Per-(n, c) spatial mean: [N, C, H, W] -> [N, C, 1, 1].
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let s = self.shape(input);
        let hw = s.h * s.w;
        if hw == 0 {
            return Err(Error::invalid("global_avg_pool", "empty spatial extent"));
        }
        let src = &self.nodes[input.0].value;
        let mut value = Vec::with_capacity(s.n * s.c);
        for nc in 0..s.n * s.c {
            let mut acc = 0.0f64;
            for &v in &src[nc * hw..(nc + 1) * hw] {
                acc += v.as_f64();
            }
            value.push(T::from_f64(acc / hw as f64));
        }
        let needs = self.needs(input);
        self.push(Shape::new(s.n, s.c, 1, 1), value, needs, Op::GlobalAvgPool { input })
    }

    /// Checks elementwise operand shapes; the only broadcast allowed is a
    /// [N, C, 1, 1] gate against [N, C, H, W].
    fn elementwise_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Shape> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb || sb.is_gate_of(&sa) {
            Ok(sa)
        } else if sa.is_gate_of(&sb) {
            Ok(sb)
        } else {
            Err(Error::shape(op, format!("{sa} vs {sb}")))
        }
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
        make: impl Fn(NodeId, NodeId) -> Op<T>,
    ) -> Result<NodeId> {
        let out_shape = self.elementwise_shape(op_name, a, b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        let hw = out_shape.h * out_shape.w;
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let value: Vec<T> = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else if sb.is_gate_of(&sa) {
            (0..out_shape.numel()).map(|i| f(va[i], vb[i / hw])).collect()
        } else {
            (0..out_shape.numel()).map(|i| f(va[i / hw], vb[i])).collect()
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(out_shape, value, needs, make(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn abs(&mut self, input: NodeId) -> Result<NodeId> {
        let value = self.nodes[input.0].value.iter().map(|&x| x.abs()).collect();
        let needs = self.needs(input);
        self.push(self.shape(input), value, needs, Op::Abs { input })
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> Result<NodeId> {
        let s = T::from_f64(factor);
        let value = self.nodes[input.0].value.iter().map(|&x| s * x).collect();
        let needs = self.needs(input);
        self.push(self.shape(input), value, needs, Op::Scale { input, factor: s })
    }

    /// Full reduction to a [1, 1, 1, 1] scalar, accumulated in f64.
    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        let mut acc = 0.0f64;
        for v in &self.nodes[input.0].value {
            acc += v.as_f64();
        }
        let needs = self.needs(input);
        self.push(Shape::scalar(), vec![T::from_f64(acc)], needs, Op::Sum { input })
    }

    /// Inverted dropout: zero with probability p, survivors scaled by 1/(1-p).
    /// In eval mode (`training == false`) this is the identity and draws nothing.
    pub fn dropout(
        &mut self,
        input: NodeId,
        p: f64,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("p must be in [0, 1), got {p}")));
        }
        if !training {
            let value = self.nodes[input.0].value.clone();
            let needs = self.needs(input);
            let mask = vec![T::one(); value.len()];
            return self.push(self.shape(input), value, needs, Op::Dropout { input, mask });
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.nodes[input.0].value.len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep_scale })
            .collect();
        let value = self.nodes[input.0].value.iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let needs = self.needs(input);
        self.push(self.shape(input), value, needs, Op::Dropout { input, mask })
    }

    /// Concatenates along the channel axis; used by the concat fusion baseline.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(Error::shape("concat_channels", format!("{sa} vs {sb}")));
        }
        let out = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let hw = sa.h * sa.w;
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let mut value = Vec::with_capacity(out.numel());
        for n in 0..sa.n {
            value.extend_from_slice(&va[n * sa.c * hw..(n + 1) * sa.c * hw]);
            value.extend_from_slice(&vb[n * sb.c * hw..(n + 1) * sb.c * hw]);
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(out, value, needs, Op::ConcatChannels { a, b })
    }

    // ---- backward --------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// requires-grad leaf (zeros where the loss does not depend on it) and
    /// seals the tape.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.sealed {
            return Err(Error::TapeConsumed);
        }
        let loss_shape = self.shape(loss);
        if !loss_shape.is_scalar() {
            return Err(Error::NonScalarLoss { shape: loss_shape });
        }
        self.sealed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(go) = grads[i].take() else { continue };
            self.backprop_node(i, &go, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].grad = Some(go);
            }
        }
        // Leaves untouched by the loss still get a zero gradient.
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.needs_grad && node.grad.is_none() {
                node.grad = Some(vec![T::zero(); node.shape.numel()]);
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], target: NodeId, contribution: Vec<T>) {
        if !self.needs(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => {
                for (dst, src) in existing.iter_mut().zip(contribution) {
                    *dst += src;
                }
            }
            slot => *slot = Some(contribution),
        }
    }

    /// Reduces a full-shape gradient onto a [N, C, 1, 1] gate operand.
    fn reduce_to_gate(full: &[T], shape: Shape) -> Vec<T> {
        let hw = shape.h * shape.w;
        let mut out = Vec::with_capacity(shape.n * shape.c);
        for nc in 0..shape.n * shape.c {
            let mut acc = T::zero();
            for &v in &full[nc * hw..(nc + 1) * hw] {
                acc += v;
            }
            out.push(acc);
        }
        out
    }

    fn binary_grads(
        &self,
        a: NodeId,
        b: NodeId,
        out_shape: Shape,
        grad_for: impl Fn(bool, usize) -> T, // (is_a, flat index into out) -> dL/d(operand element)
    ) -> (Option<Vec<T>>, Option<Vec<T>>) {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let full = |is_a: bool| (0..out_shape.numel()).map(|i| grad_for(is_a, i)).collect::<Vec<T>>();
        let ga = self.needs(a).then(|| {
            let g = full(true);
            if sa == out_shape {
                g
            } else {
                Self::reduce_to_gate(&g, out_shape)
            }
        });
        let gb = self.needs(b).then(|| {
            let g = full(false);
            if sb == out_shape {
                g
            } else {
                Self::reduce_to_gate(&g, out_shape)
            }
        });
        (ga, gb)
    }

    fn backprop_node(&self, idx: usize, go: &[T], grads: &mut [Option<Vec<T>>]) {
        let out_shape = self.nodes[idx].shape;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, dims } => {
                let (input, weight, bias, dims) = (*input, *weight, *bias, *dims);
                let want_bias = bias.map(|b| self.needs(b)).unwrap_or(false);
                let (gx, gw, gb) = kernels::conv2d_backward(
                    self.value(input),
                    self.value(weight),
                    go,
                    &dims,
                    want_bias,
                );
                self.accumulate(grads, input, gx);
                self.accumulate(grads, weight, gw);
                if let (Some(b), Some(gb)) = (bias, gb) {
                    self.accumulate(grads, b, gb);
                }
            }
            Op::Linear { input, weight, bias } => {
                let (input, weight, bias) = (*input, *weight, *bias);
                let xs = self.shape(input);
                let c_out = self.shape(weight).n;
                let (gx, gw, gb) = kernels::linear_backward(
                    self.value(input),
                    self.value(weight),
                    go,
                    xs.n,
                    xs.c,
                    c_out,
                    xs.h * xs.w,
                );
                self.accumulate(grads, input, gx);
                self.accumulate(grads, weight, gw);
                self.accumulate(grads, bias, gb);
            }
            Op::LeakyRelu { input, slope } => {
                let (input, slope) = (*input, *slope);
                // Derivative at exactly 0 is the slope.
                let x = self.value(input);
                let g = go
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > T::zero() { g } else { g * slope })
                    .collect();
                self.accumulate(grads, input, g);
            }
            Op::Relu { input } => {
                let input = *input;
                let x = self.value(input);
                let g = go
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, input, g);
            }
            Op::Sigmoid { input } => {
                let input = *input;
                let y = &self.nodes[idx].value;
                let g = go.iter().zip(y).map(|(&g, &y)| g * y * (T::one() - y)).collect();
                self.accumulate(grads, input, g);
            }
            Op::GlobalAvgPool { input } => {
                let input = *input;
                let s = self.shape(input);
                let hw = s.h * s.w;
                let inv = T::from_f64(1.0 / hw as f64);
                let mut g = Vec::with_capacity(s.numel());
                for nc in 0..s.n * s.c {
                    let v = go[nc] * inv;
                    g.extend(std::iter::repeat(v).take(hw));
                }
                self.accumulate(grads, input, g);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                let (ga, gb) = self.binary_grads(a, b, out_shape, |_, i| go[i]);
                if let Some(g) = ga {
                    self.accumulate(grads, a, g);
                }
                if let Some(g) = gb {
                    self.accumulate(grads, b, g);
                }
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                let (ga, gb) =
                    self.binary_grads(a, b, out_shape, |is_a, i| if is_a { go[i] } else { -go[i] });
                if let Some(g) = ga {
                    self.accumulate(grads, a, g);
                }
                if let Some(g) = gb {
                    self.accumulate(grads, b, g);
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let sa = self.shape(a);
                let sb = self.shape(b);
                let hw = out_shape.h * out_shape.w;
                let va = self.value(a);
                let vb = self.value(b);
                let fetch = |side_shape: Shape, v: &[T], i: usize| {
                    if side_shape == out_shape {
                        v[i]
                    } else {
                        v[i / hw]
                    }
                };
                let (ga, gb) = self.binary_grads(a, b, out_shape, |is_a, i| {
                    if is_a {
                        go[i] * fetch(sb, vb, i)
                    } else {
                        go[i] * fetch(sa, va, i)
                    }
                });
                if let Some(g) = ga {
                    self.accumulate(grads, a, g);
                }
                if let Some(g) = gb {
                    self.accumulate(grads, b, g);
                }
            }
            Op::Abs { input } => {
                let input = *input;
                // Subgradient 0 at exact zero.
                let x = self.value(input);
                let g = go
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| {
                        if x > T::zero() {
                            g
                        } else if x < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.accumulate(grads, input, g);
            }
            Op::Scale { input, factor } => {
                let (input, factor) = (*input, *factor);
                let g = go.iter().map(|&g| g * factor).collect();
                self.accumulate(grads, input, g);
            }
            Op::Sum { input } => {
                let input = *input;
                let g = vec![go[0]; self.shape(input).numel()];
                self.accumulate(grads, input, g);
            }
            Op::Dropout { input, mask } => {
                let input = *input;
                let g = go.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                self.accumulate(grads, input, g);
            }
            Op::ConcatChannels { a, b } => {
                let (a, b) = (*a, *b);
                let sa = self.shape(a);
                let sb = self.shape(b);
                let hw = sa.h * sa.w;
                let mut ga = Vec::with_capacity(sa.numel());
                let mut gb = Vec::with_capacity(sb.numel());
                for n in 0..sa.n {
                    let base = n * (sa.c + sb.c) * hw;
                    ga.extend_from_slice(&go[base..base + sa.c * hw]);
                    gb.extend_from_slice(&go[base + sa.c * hw..base + (sa.c + sb.c) * hw]);
                }
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t(shape: [usize; 4], data: &[f64]) -> Tensor<f64> {
        Tensor::new(Shape::from_array(shape), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_scalar_product() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&t([1, 1, 1, 1], &[1.0])).unwrap();
        let w = g.constant(&t([1, 1, 1, 1], &[2.0])).unwrap();
        let y = g.conv2d(x, w, None, 0, 1).unwrap();
        assert_eq!(g.value(y), &[2.0]);
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = g
            .constant(&Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, h, w| (h * 4 + w) as f64))
            .unwrap();
        let mut kernel = Tensor::zeros(Shape::new(1, 1, 3, 3));
        kernel.set(0, 0, 1, 1, 1.0);
        let w = g.constant(&kernel).unwrap();
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn conv_rejects_even_kernel_and_bad_dilation() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&Tensor::zeros(Shape::new(1, 1, 4, 4))).unwrap();
        let w_even = g.constant(&Tensor::zeros(Shape::new(1, 1, 2, 2))).unwrap();
        assert!(g.conv2d(x, w_even, None, 0, 1).is_err());
        let w = g.constant(&Tensor::zeros(Shape::new(1, 1, 3, 3))).unwrap();
        assert!(g.conv2d(x, w, None, 0, 0).is_err());
        let w_mismatch = g.constant(&Tensor::zeros(Shape::new(1, 2, 3, 3))).unwrap();
        assert!(g.conv2d(x, w_mismatch, None, 1, 1).is_err());
    }

    #[test]
    fn linear_examples() {
        let mut g = Graph::<f64>::new();
        // Input channel vector [1, 2] at a single location.
        let x = g.constant(&t([1, 2, 1, 1], &[1.0, 2.0])).unwrap();
        let w = g.constant(&t([2, 2, 1, 1], &[1.0, 1.0, 2.0, 0.0])).unwrap();
        let b = g.constant(&t([1, 2, 1, 1], &[0.5, -0.5])).unwrap();
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y), &[3.5, 1.5]);

        // Zero weights: every location outputs the bias.
        let x2 = g.constant(&Tensor::full(Shape::new(1, 2, 2, 2), 3.0)).unwrap();
        let w0 = g.constant(&Tensor::zeros(Shape::new(2, 2, 1, 1))).unwrap();
        let y2 = g.linear(x2, w0, b).unwrap();
        assert_eq!(g.value(y2), &[0.5, 0.5, 0.5, 0.5, -0.5, -0.5, -0.5, -0.5]);

        // Identity weight, zero bias: output equals input.
        let eye = g.constant(&t([2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let b0 = g.constant(&Tensor::zeros(Shape::new(1, 2, 1, 1))).unwrap();
        let y3 = g.linear(x2, eye, b0).unwrap();
        assert_eq!(g.value(y3), g.value(x2));
    }

    #[test]
    fn activation_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&t([1, 1, 1, 4], &[-1.0, 0.0, 2.0, -3.0])).unwrap();
        let lr = g.leaky_relu(x, 0.1).unwrap();
        for (got, want) in g.value(lr).iter().zip([-0.1, 0.0, 2.0, -0.3]) {
            assert!((got - want).abs() < 1e-15);
        }
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r), &[0.0, 0.0, 2.0, 0.0]);
        let z = g.constant(&Tensor::scalar(0.0)).unwrap();
        let s = g.sigmoid(z).unwrap();
        assert_eq!(g.value(s), &[0.5]);
    }

    #[test]
    fn global_avg_pool_means() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y), &[2.5]);
        let c = g.constant(&Tensor::full(Shape::new(2, 3, 4, 4), 7.25)).unwrap();
        let yc = g.global_avg_pool(c).unwrap();
        assert!(g.value(yc).iter().all(|&v| v == 7.25));
    }

    #[test]
    fn elementwise_identities_and_gate_broadcast() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&t([1, 2, 1, 2], &[1.0, -2.0, 3.0, 0.5])).unwrap();
        let zeros = g.constant(&Tensor::zeros(Shape::new(1, 2, 1, 2))).unwrap();
        let ones = g.constant(&Tensor::full(Shape::new(1, 2, 1, 2), 1.0)).unwrap();
        let a = g.add(x, zeros).unwrap();
        assert_eq!(g.value(a), g.value(x));
        let m = g.mul(x, ones).unwrap();
        assert_eq!(g.value(m), g.value(x));

        let gate = g.constant(&Tensor::full(Shape::new(1, 2, 1, 1), 0.5)).unwrap();
        let scaled = g.mul(x, gate).unwrap();
        assert_eq!(g.value(scaled), &[0.5, -1.0, 1.5, 0.25]);

        let bad = g.constant(&Tensor::zeros(Shape::new(1, 3, 1, 2))).unwrap();
        assert!(g.add(x, bad).is_err());
    }

    #[test]
    fn dropout_eval_and_p_zero_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::<f64>::new();
        let x = g.constant(&t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let eval = g.dropout(x, 0.9, false, &mut rng).unwrap();
        assert_eq!(g.value(eval), g.value(x));
        let p0 = g.dropout(x, 0.0, true, &mut rng).unwrap();
        assert_eq!(g.value(p0), g.value(x));
        assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn concat_channels_splits_back() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(&t([1, 1, 1, 2], &[1.0, 2.0])).unwrap();
        let b = g.constant(&t([1, 2, 1, 2], &[3.0, 4.0, 5.0, 6.0])).unwrap();
        let y = g.concat_channels(a, b).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 3, 1, 2));
        assert_eq!(g.value(y), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut g = Graph::<f64>::new();
        let xt = t([1, 1, 2, 2], &[1.0, -2.0, 0.5, 3.0]).requires_grad();
        let x = g.leaf(&xt).unwrap();
        let loss = g.sum(x).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_quadratic_gives_two_x() {
        let mut g = Graph::<f64>::new();
        let xt = t([1, 1, 2, 2], &[1.0, -2.0, 0.5, 3.0]).requires_grad();
        let x = g.leaf(&xt).unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 1.0, 6.0]);
    }

    #[test]
    fn backward_zero_grad_for_unreached_leaf() {
        let mut g = Graph::<f64>::new();
        let xt = t([1, 1, 1, 2], &[1.0, 2.0]).requires_grad();
        let yt = t([1, 1, 1, 2], &[3.0, 4.0]).requires_grad();
        let x = g.leaf(&xt).unwrap();
        let y = g.leaf(&yt).unwrap();
        let loss = g.sum(x).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(y).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_requires_scalar_and_fresh_tape() {
        let mut g = Graph::<f64>::new();
        let xt = t([1, 1, 1, 2], &[1.0, 2.0]).requires_grad();
        let x = g.leaf(&xt).unwrap();
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss { .. })));
        let loss = g.sum(x).unwrap();
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::TapeConsumed)));
        // Recording after backward is also a stale-tape error.
        assert!(matches!(g.relu(x), Err(Error::TapeConsumed)));
    }
}
