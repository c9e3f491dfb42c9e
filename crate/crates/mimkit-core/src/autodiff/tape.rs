//! Recorded computation graph with reverse-mode gradients.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Interprets a shape as (rows, batch, time) so reductions and
/// elementwise ops treat every rank uniformly.
fn rbt(shape: &[usize]) -> (usize, usize, usize) {
    match shape.len() {
        3 => (shape[0], shape[1], shape[2]),
        2 => (shape[0], shape[1], 1),
        1 => (1, shape[0], 1),
        _ => (1, 1, 1),
    }
}

enum Op<F> {
    Leaf,
    Conv1d {
        x: NodeId,
        w: NodeId,
        bias: NodeId,
        kernel: usize,
        stride: usize,
        pad_left: usize,
        /// im2col matrix `[c_in * kernel, batch * t_out]`, kept for backward.
        cols: Vec<F>,
    },
    LeakyRelu { x: NodeId, slope: F },
    MaxPool2 { x: NodeId, argmax: Vec<u32> },
    AvgPool2 { x: NodeId },
    GlobalMaxPool { x: NodeId, argmax: Vec<u32> },
    GlobalAvgPool { x: NodeId },
    Upsample2 { x: NodeId },
    Dropout { x: NodeId, mask: Option<Vec<F>> },
    ConcatChannels { xs: Vec<NodeId> },
    TileTime { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: F },
    AddScalar { x: NodeId },
    Square { x: NodeId },
    Sqrt { x: NodeId },
    SumPerElement { x: NodeId },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
    SliceElements { x: NodeId, start: usize },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`NodeId`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of the loss with respect to the given node, if tracked.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.grads[id.0].as_ref()
    }

    /// Moves a gradient out, leaving `None` behind.
    pub fn take(&mut self, id: NodeId) -> Option<Tensor<F>> {
        self.grads[id.0].take()
    }
}

/// Append-only record of a computation; nodes are stored in topological
/// order by construction.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    training: bool,
}

impl<F: Scalar> Tape<F> {
    pub fn new(training: bool) -> Self {
        Tape {
            nodes: Vec::new(),
            training,
        }
    }

    /// Whether dropout is active.
    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> NodeId {
        // Finiteness is enforced at the loss level so diverged training
        // can be detected and reported instead of crashing mid-graph.
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Constant input; no gradient is tracked.
    pub fn leaf(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input (parameter or refined encoding).
    pub fn param(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// 1-D convolution with reflected padding chosen so `t_out` equals
    /// `ceil(t / stride)` for the kernel/stride pairs in use.
    ///
    /// `x: [c_in, batch, t]`, `w: [c_out, c_in, kernel]`, `bias: [c_out]`.
    pub fn conv1d_reflect(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: NodeId,
        kernel: usize,
        stride: usize,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(bias);
        if xv.shape().len() != 3 || wv.shape().len() != 3 {
            return Err(Error::dim("conv1d_reflect expects rank-3 input and weights"));
        }
        let (c_in, b, t) = (xv.channels(), xv.batch(), xv.time());
        let (c_out, wc_in, wk) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if wc_in != c_in {
            return Err(Error::dim(format!(
                "conv input has {c_in} channels, weights expect {wc_in}"
            )));
        }
        if wk != kernel || kernel < stride || stride == 0 {
            return Err(Error::dim(format!(
                "bad kernel/stride ({kernel}, {stride}) for weight kernel {wk}"
            )));
        }
        if bv.len() != c_out {
            return Err(Error::dim(format!(
                "bias has {} entries, expected {c_out}",
                bv.len()
            )));
        }
        let pad_left = (kernel - stride + 1) / 2;
        let pad_right = (kernel - stride) / 2;
        if pad_left >= t.max(1) {
            return Err(Error::dim(format!(
                "sequence length {t} too short to reflect-pad by {pad_left}"
            )));
        }
        let t_out = (t + pad_left + pad_right - kernel) / stride + 1;

        // im2col with the reflection folded into the index map.
        let rows = c_in * kernel;
        let n = b * t_out;
        let mut cols = vec![F::ZERO; rows * n];
        let xd = xv.data();
        for c in 0..c_in {
            for kk in 0..kernel {
                let row = c * kernel + kk;
                let out_row = &mut cols[row * n..(row + 1) * n];
                for bb in 0..b {
                    let src = &xd[(c * b + bb) * t..(c * b + bb + 1) * t];
                    let dst = &mut out_row[bb * t_out..(bb + 1) * t_out];
                    for (tt, slot) in dst.iter_mut().enumerate() {
                        let q = (tt * stride + kk) as isize - pad_left as isize;
                        let qm = reflect_index(q, t);
                        *slot = src[qm];
                    }
                }
            }
        }

        let mut out = vec![F::ZERO; c_out * n];
        F::gemm(c_out, rows, n, F::ONE, wv.data(), &cols, F::ZERO, &mut out);
        let bd = bv.data();
        for o in 0..c_out {
            let bias_o = bd[o];
            for v in &mut out[o * n..(o + 1) * n] {
                *v += bias_o;
            }
        }

        let needs = self.needs(x) || self.needs(w) || self.needs(bias);
        let value = Tensor::from_vec(&[c_out, b, t_out], out)?;
        // cols are only needed when a backward pass will run.
        let cols = if needs { cols } else { Vec::new() };
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                w,
                bias,
                kernel,
                stride,
                pad_left,
                cols,
            },
            needs,
        ))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let s = F::from_f64(slope);
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| if v > F::ZERO { v } else { v * s })
            .collect();
        let value = Tensor::from_vec(xv.shape(), data).expect("shape preserved");
        let needs = self.needs(x);
        self.push(value, Op::LeakyRelu { x, slope: s }, needs)
    }

    /// `max(0, x)` — the hinge used by the margin losses.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.leaky_relu(x, 0.0)
    }

    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        self.pool2(x, true)
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        self.pool2(x, false)
    }

    fn pool2(&mut self, x: NodeId, is_max: bool) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 3 {
            return Err(Error::dim("pool expects a rank-3 tensor"));
        }
        let (c, b, t) = (xv.channels(), xv.batch(), xv.time());
        if t % 2 != 0 || t == 0 {
            return Err(Error::dim(format!("pool width 2 needs even length, got {t}")));
        }
        let t_out = t / 2;
        let xd = xv.data();
        let mut out = vec![F::ZERO; c * b * t_out];
        let mut argmax = if is_max { vec![0u32; c * b * t_out] } else { Vec::new() };
        let half = F::from_f64(0.5);
        for cb in 0..c * b {
            let src = &xd[cb * t..(cb + 1) * t];
            for tt in 0..t_out {
                let (a0, a1) = (src[2 * tt], src[2 * tt + 1]);
                if is_max {
                    let pick = if a1 > a0 { 1 } else { 0 };
                    argmax[cb * t_out + tt] = (2 * tt + pick) as u32;
                    out[cb * t_out + tt] = if pick == 1 { a1 } else { a0 };
                } else {
                    out[cb * t_out + tt] = (a0 + a1) * half;
                }
            }
        }
        let needs = self.needs(x);
        let value = Tensor::from_vec(&[c, b, t_out], out)?;
        let op = if is_max {
            Op::MaxPool2 { x, argmax }
        } else {
            Op::AvgPool2 { x }
        };
        Ok(self.push(value, op, needs))
    }

    pub fn global_max_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.global_pool(x, true)
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.global_pool(x, false)
    }

    fn global_pool(&mut self, x: NodeId, is_max: bool) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 3 {
            return Err(Error::dim("global pool expects a rank-3 tensor"));
        }
        let (c, b, t) = (xv.channels(), xv.batch(), xv.time());
        if t == 0 {
            return Err(Error::dim("global pool over empty time axis"));
        }
        let xd = xv.data();
        let mut out = vec![F::ZERO; c * b];
        let mut argmax = if is_max { vec![0u32; c * b] } else { Vec::new() };
        let inv_t = F::from_f64(1.0 / t as f64);
        for cb in 0..c * b {
            let src = &xd[cb * t..(cb + 1) * t];
            if is_max {
                let (mut best, mut best_i) = (src[0], 0usize);
                for (i, &v) in src.iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        best_i = i;
                    }
                }
                out[cb] = best;
                argmax[cb] = best_i as u32;
            } else {
                let mut acc = F::ZERO;
                for &v in src {
                    acc += v;
                }
                out[cb] = acc * inv_t;
            }
        }
        let needs = self.needs(x);
        let value = Tensor::from_vec(&[c, b, 1], out)?;
        let op = if is_max {
            Op::GlobalMaxPool { x, argmax }
        } else {
            Op::GlobalAvgPool { x }
        };
        Ok(self.push(value, op, needs))
    }

    /// Nearest-neighbour upsampling by 2 along time.
    pub fn upsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 3 {
            return Err(Error::dim("upsample expects a rank-3 tensor"));
        }
        let (c, b, t) = (xv.channels(), xv.batch(), xv.time());
        let xd = xv.data();
        let mut out = vec![F::ZERO; c * b * t * 2];
        for cb in 0..c * b {
            let src = &xd[cb * t..(cb + 1) * t];
            let dst = &mut out[cb * 2 * t..(cb + 1) * 2 * t];
            for tt in 0..t {
                dst[2 * tt] = src[tt];
                dst[2 * tt + 1] = src[tt];
            }
        }
        let needs = self.needs(x);
        let value = Tensor::from_vec(&[c, b, 2 * t], out)?;
        Ok(self.push(value, Op::Upsample2 { x }, needs))
    }

    /// Inverted dropout; identity when the tape is in evaluation mode.
    pub fn dropout(&mut self, x: NodeId, rate: f64, seed: u64) -> NodeId {
        let xv = self.value(x);
        if !self.training || rate == 0.0 {
            let value = xv.clone();
            let needs = self.needs(x);
            return self.push(value, Op::Dropout { x, mask: None }, needs);
        }
        let keep = 1.0 - rate;
        let scale = F::from_f64(1.0 / keep);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<F> = (0..xv.len())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    scale
                } else {
                    F::ZERO
                }
            })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::from_vec(xv.shape(), data).expect("shape preserved");
        let needs = self.needs(x);
        self.push(value, Op::Dropout { x, mask: Some(mask) }, needs)
    }

    /// Stacks rank-3 tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::dim("concat of zero tensors"));
        }
        let (_, b0, t0) = {
            let v = self.value(xs[0]);
            if v.shape().len() != 3 {
                return Err(Error::dim("concat expects rank-3 tensors"));
            }
            (v.channels(), v.batch(), v.time())
        };
        let mut c_total = 0;
        for &id in xs {
            let v = self.value(id);
            if v.shape().len() != 3 || v.batch() != b0 || v.time() != t0 {
                return Err(Error::dim("concat inputs disagree on batch/time"));
            }
            c_total += v.channels();
        }
        let mut data = Vec::with_capacity(c_total * b0 * t0);
        for &id in xs {
            data.extend_from_slice(self.value(id).data());
        }
        let needs = xs.iter().any(|&id| self.needs(id));
        let value = Tensor::from_vec(&[c_total, b0, t0], data)?;
        Ok(self.push(value, Op::ConcatChannels { xs: xs.to_vec() }, needs))
    }

    /// Broadcasts a `[c, b, 1]` tensor along time to `[c, b, t]`.
    pub fn tile_time(&mut self, x: NodeId, t: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 3 || xv.time() != 1 {
            return Err(Error::dim("tile_time expects a [c, b, 1] tensor"));
        }
        let (c, b) = (xv.channels(), xv.batch());
        let xd = xv.data();
        let mut out = vec![F::ZERO; c * b * t];
        for cb in 0..c * b {
            let v = xd[cb];
            for slot in &mut out[cb * t..(cb + 1) * t] {
                *slot = v;
            }
        }
        let needs = self.needs(x);
        let value = Tensor::from_vec(&[c, b, t], out)?;
        Ok(self.push(value, Op::TileTime { x }, needs))
    }

    fn zip_same_shape(&mut self, a: NodeId, b: NodeId, name: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(format!(
                "{name}: shapes {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same_shape(a, b, "sub")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub { a, b }, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul { a, b }, needs))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let cf = F::from_f64(c);
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * cf).collect();
        let value = Tensor::from_vec(xv.shape(), data).expect("shape preserved");
        let needs = self.needs(x);
        self.push(value, Op::Scale { x, c: cf }, needs)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let cf = F::from_f64(c);
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v + cf).collect();
        let value = Tensor::from_vec(xv.shape(), data).expect("shape preserved");
        let needs = self.needs(x);
        self.push(value, Op::AddScalar { x }, needs)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * v).collect();
        let value = Tensor::from_vec(xv.shape(), data).expect("shape preserved");
        let needs = self.needs(x);
        self.push(value, Op::Square { x }, needs)
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.sqrt()).collect();
        let value = Tensor::from_vec(xv.shape(), data).expect("shape preserved");
        let needs = self.needs(x);
        self.push(value, Op::Sqrt { x }, needs)
    }

    /// Reduces over channels and time, keeping the batch axis: `-> [b]`.
    pub fn sum_per_element(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (r, b, t) = rbt(xv.shape());
        let xd = xv.data();
        let mut out = vec![F::ZERO; b];
        for rr in 0..r {
            for bb in 0..b {
                let base = (rr * b + bb) * t;
                let mut acc = F::ZERO;
                for &v in &xd[base..base + t] {
                    acc += v;
                }
                out[bb] += acc;
            }
        }
        let needs = self.needs(x);
        let value = Tensor::from_vec(&[b], out).expect("length matches");
        self.push(value, Op::SumPerElement { x }, needs)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut acc = F::ZERO;
        for &v in xv.data() {
            acc += v;
        }
        let needs = self.needs(x);
        self.push(Tensor::scalar(acc), Op::SumAll { x }, needs)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = xv.len().max(1);
        let mut acc = F::ZERO;
        for &v in xv.data() {
            acc += v;
        }
        let needs = self.needs(x);
        self.push(
            Tensor::scalar(acc * F::from_f64(1.0 / n as f64)),
            Op::MeanAll { x },
            needs,
        )
    }

    /// Selects a contiguous range of batch elements from a rank-3 tensor.
    pub fn slice_elements(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 3 {
            return Err(Error::dim("slice_elements expects a rank-3 tensor"));
        }
        let (c, b, t) = (xv.channels(), xv.batch(), xv.time());
        if start + len > b {
            return Err(Error::dim(format!(
                "slice {start}..{} outside batch of {b}",
                start + len
            )));
        }
        let xd = xv.data();
        let mut out = vec![F::ZERO; c * len * t];
        for cc in 0..c {
            let src = &xd[(cc * b + start) * t..(cc * b + start + len) * t];
            out[cc * len * t..(cc + 1) * len * t].copy_from_slice(src);
        }
        let needs = self.needs(x);
        let value = Tensor::from_vec(&[c, len, t], out)?;
        Ok(self.push(value, Op::SliceElements { x, start }, needs))
    }

    /// Squared L2 distance per batch element: `-> [b]`.
    pub fn sq_distance(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.sub(a, b)?;
        let d2 = self.square(d);
        Ok(self.sum_per_element(d2))
    }

    /// L2 norm per batch element: `-> [b]`.
    pub fn l2_norm(&mut self, x: NodeId) -> Result<NodeId> {
        let sq = self.square(x);
        let s = self.sum_per_element(sq);
        Ok(self.sqrt(s))
    }

    /// Inner product per batch element: `-> [b]`.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let p = self.mul(a, b)?;
        Ok(self.sum_per_element(p))
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Graph(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(F::ONE));

        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let g = hi[0].as_ref().expect("checked above");
            self.backprop_node(i, g, lo);
        }
        Ok(Gradients { grads })
    }

    /// Propagates `g` (gradient at node `i`) into the node's inputs.
    /// `lo` holds gradient slots for all nodes with index `< i`.
    fn backprop_node(&self, i: usize, g: &Tensor<F>, lo: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[i];
        let gd = g.data();

        // Allocates (if needed) and returns the gradient buffer of `id`
        // unless that input is constant.
        macro_rules! grad_of {
            ($id:expr) => {{
                let id: NodeId = $id;
                if self.nodes[id.0].needs_grad {
                    Some(
                        lo[id.0]
                            .get_or_insert_with(|| Tensor::zeros(self.nodes[id.0].value.shape()))
                            .data_mut(),
                    )
                } else {
                    None
                }
            }};
        }

        match &node.op {
            Op::Leaf => {}

            Op::Conv1d {
                x,
                w,
                bias,
                kernel,
                stride,
                pad_left,
                cols,
            } => {
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                let (c_in, b, t) = (xv.channels(), xv.batch(), xv.time());
                let c_out = wv.shape()[0];
                let t_out = node.value.time();
                let rows = c_in * kernel;
                let n = b * t_out;

                if let Some(gb) = grad_of!(*bias) {
                    for o in 0..c_out {
                        let mut acc = F::ZERO;
                        for &v in &gd[o * n..(o + 1) * n] {
                            acc += v;
                        }
                        gb[o] += acc;
                    }
                }
                if let Some(gw) = grad_of!(*w) {
                    // dW += gY @ cols^T
                    F::gemm_bt(c_out, n, rows, F::ONE, gd, cols, F::ONE, gw);
                }
                if let Some(gx) = grad_of!(*x) {
                    // dcols = W^T @ gY, then fold back through the
                    // reflected index map.
                    let mut dcols = vec![F::ZERO; rows * n];
                    F::gemm_at(rows, c_out, n, F::ONE, wv.data(), gd, F::ZERO, &mut dcols);
                    for c in 0..c_in {
                        for kk in 0..*kernel {
                            let row = c * kernel + kk;
                            let src_row = &dcols[row * n..(row + 1) * n];
                            for bb in 0..b {
                                let dst = &mut gx[(c * b + bb) * t..(c * b + bb + 1) * t];
                                let src = &src_row[bb * t_out..(bb + 1) * t_out];
                                for (tt, &v) in src.iter().enumerate() {
                                    let q = (tt * stride + kk) as isize - *pad_left as isize;
                                    dst[reflect_index(q, t)] += v;
                                }
                            }
                        }
                    }
                }
            }

            Op::LeakyRelu { x, slope } => {
                if let Some(gx) = grad_of!(*x) {
                    let xv = self.nodes[x.0].value.data();
                    for ((gx_i, &g_i), &x_i) in gx.iter_mut().zip(gd).zip(xv) {
                        *gx_i += if x_i > F::ZERO { g_i } else { g_i * *slope };
                    }
                }
            }

            Op::MaxPool2 { x, argmax } => {
                if let Some(gx) = grad_of!(*x) {
                    let t = self.nodes[x.0].value.time();
                    let t_out = node.value.time();
                    let cb = node.value.channels() * node.value.batch();
                    for i_cb in 0..cb {
                        for tt in 0..t_out {
                            let src = argmax[i_cb * t_out + tt] as usize;
                            gx[i_cb * t + src] += gd[i_cb * t_out + tt];
                        }
                    }
                }
            }

            Op::AvgPool2 { x } => {
                if let Some(gx) = grad_of!(*x) {
                    let t = self.nodes[x.0].value.time();
                    let t_out = node.value.time();
                    let cb = node.value.channels() * node.value.batch();
                    let half = F::from_f64(0.5);
                    for i_cb in 0..cb {
                        for tt in 0..t_out {
                            let v = gd[i_cb * t_out + tt] * half;
                            gx[i_cb * t + 2 * tt] += v;
                            gx[i_cb * t + 2 * tt + 1] += v;
                        }
                    }
                }
            }

            Op::GlobalMaxPool { x, argmax } => {
                if let Some(gx) = grad_of!(*x) {
                    let t = self.nodes[x.0].value.time();
                    for (i_cb, &g_i) in gd.iter().enumerate() {
                        gx[i_cb * t + argmax[i_cb] as usize] += g_i;
                    }
                }
            }

            Op::GlobalAvgPool { x } => {
                if let Some(gx) = grad_of!(*x) {
                    let t = self.nodes[x.0].value.time();
                    let inv_t = F::from_f64(1.0 / t as f64);
                    for (i_cb, &g_i) in gd.iter().enumerate() {
                        let v = g_i * inv_t;
                        for slot in &mut gx[i_cb * t..(i_cb + 1) * t] {
                            *slot += v;
                        }
                    }
                }
            }

            Op::Upsample2 { x } => {
                if let Some(gx) = grad_of!(*x) {
                    let t = self.nodes[x.0].value.time();
                    let cb = node.value.channels() * node.value.batch();
                    for i_cb in 0..cb {
                        for tt in 0..t {
                            gx[i_cb * t + tt] +=
                                gd[i_cb * 2 * t + 2 * tt] + gd[i_cb * 2 * t + 2 * tt + 1];
                        }
                    }
                }
            }

            Op::Dropout { x, mask } => {
                if let Some(gx) = grad_of!(*x) {
                    match mask {
                        Some(m) => {
                            for ((gx_i, &g_i), &m_i) in gx.iter_mut().zip(gd).zip(m) {
                                *gx_i += g_i * m_i;
                            }
                        }
                        None => {
                            for (gx_i, &g_i) in gx.iter_mut().zip(gd) {
                                *gx_i += g_i;
                            }
                        }
                    }
                }
            }

            Op::ConcatChannels { xs } => {
                let mut offset = 0;
                for &id in xs {
                    let len = self.nodes[id.0].value.len();
                    if let Some(gx) = grad_of!(id) {
                        for (gx_i, &g_i) in gx.iter_mut().zip(&gd[offset..offset + len]) {
                            *gx_i += g_i;
                        }
                    }
                    offset += len;
                }
            }

            Op::TileTime { x } => {
                if let Some(gx) = grad_of!(*x) {
                    let t = node.value.time();
                    for (i_cb, gx_i) in gx.iter_mut().enumerate() {
                        let mut acc = F::ZERO;
                        for &v in &gd[i_cb * t..(i_cb + 1) * t] {
                            acc += v;
                        }
                        *gx_i += acc;
                    }
                }
            }

            Op::Add { a, b } => {
                if let Some(ga) = grad_of!(*a) {
                    for (ga_i, &g_i) in ga.iter_mut().zip(gd) {
                        *ga_i += g_i;
                    }
                }
                if let Some(gb) = grad_of!(*b) {
                    for (gb_i, &g_i) in gb.iter_mut().zip(gd) {
                        *gb_i += g_i;
                    }
                }
            }

            Op::Sub { a, b } => {
                if let Some(ga) = grad_of!(*a) {
                    for (ga_i, &g_i) in ga.iter_mut().zip(gd) {
                        *ga_i += g_i;
                    }
                }
                if let Some(gb) = grad_of!(*b) {
                    for (gb_i, &g_i) in gb.iter_mut().zip(gd) {
                        *gb_i -= g_i;
                    }
                }
            }

            Op::Mul { a, b } => {
                if let Some(ga) = grad_of!(*a) {
                    let bv = self.nodes[b.0].value.data();
                    for ((ga_i, &g_i), &b_i) in ga.iter_mut().zip(gd).zip(bv) {
                        *ga_i += g_i * b_i;
                    }
                }
                if let Some(gb) = grad_of!(*b) {
                    let av = self.nodes[a.0].value.data();
                    for ((gb_i, &g_i), &a_i) in gb.iter_mut().zip(gd).zip(av) {
                        *gb_i += g_i * a_i;
                    }
                }
            }

            Op::Scale { x, c } => {
                if let Some(gx) = grad_of!(*x) {
                    for (gx_i, &g_i) in gx.iter_mut().zip(gd) {
                        *gx_i += g_i * *c;
                    }
                }
            }

            Op::AddScalar { x } => {
                if let Some(gx) = grad_of!(*x) {
                    for (gx_i, &g_i) in gx.iter_mut().zip(gd) {
                        *gx_i += g_i;
                    }
                }
            }

            Op::Square { x } => {
                if let Some(gx) = grad_of!(*x) {
                    let xv = self.nodes[x.0].value.data();
                    let two = F::from_f64(2.0);
                    for ((gx_i, &g_i), &x_i) in gx.iter_mut().zip(gd).zip(xv) {
                        *gx_i += g_i * two * x_i;
                    }
                }
            }

            Op::Sqrt { x } => {
                if let Some(gx) = grad_of!(*x) {
                    let yv = node.value.data();
                    let half = F::from_f64(0.5);
                    for ((gx_i, &g_i), &y_i) in gx.iter_mut().zip(gd).zip(yv) {
                        // Subgradient 0 at the origin.
                        if y_i > F::ZERO {
                            *gx_i += g_i * half / y_i;
                        }
                    }
                }
            }

            Op::SumPerElement { x } => {
                if let Some(gx) = grad_of!(*x) {
                    let (r, b, t) = rbt(self.nodes[x.0].value.shape());
                    for rr in 0..r {
                        for bb in 0..b {
                            let g_i = gd[bb];
                            let base = (rr * b + bb) * t;
                            for slot in &mut gx[base..base + t] {
                                *slot += g_i;
                            }
                        }
                    }
                }
            }

            Op::SumAll { x } => {
                if let Some(gx) = grad_of!(*x) {
                    let g_i = gd[0];
                    for slot in gx.iter_mut() {
                        *slot += g_i;
                    }
                }
            }

            Op::MeanAll { x } => {
                if let Some(gx) = grad_of!(*x) {
                    let n = self.nodes[x.0].value.len().max(1);
                    let g_i = gd[0] * F::from_f64(1.0 / n as f64);
                    for slot in gx.iter_mut() {
                        *slot += g_i;
                    }
                }
            }

            Op::SliceElements { x, start } => {
                if let Some(gx) = grad_of!(*x) {
                    let (c, b, t) = (
                        self.nodes[x.0].value.channels(),
                        self.nodes[x.0].value.batch(),
                        self.nodes[x.0].value.time(),
                    );
                    let len = node.value.batch();
                    for cc in 0..c {
                        let dst = &mut gx[(cc * b + start) * t..(cc * b + start + len) * t];
                        let src = &gd[cc * len * t..(cc + 1) * len * t];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Maps a possibly out-of-range time index into `[0, t)` by reflection
/// without edge repetition.
#[inline]
fn reflect_index(q: isize, t: usize) -> usize {
    let t = t as isize;
    let mut q = q;
    if q < 0 {
        q = -q;
    }
    if q >= t {
        q = 2 * (t - 1) - q;
    }
    debug_assert!(q >= 0 && q < t, "reflection out of range");
    q as usize
}
