use std::collections::BTreeMap;

use super::kernels::{self, ConvDims, DeconvDims, Window};
use super::Tensor;
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var, f64),
    MulScalar(Var, f64),
    Neg(Var),
    Log(Var),
    Exp(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Deconv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    SoftmaxT(Var, f64),
    ConcatChannels(Var, Var),
    ConcatRows(Var, Var),
    Column(Var, usize),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match *self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | AddBias(a, b) => vec![a, b],
            ConcatChannels(a, b) | ConcatRows(a, b) => vec![a, b],
            AddScalar(a, _) | MulScalar(a, _) | Neg(a) | Log(a) | Exp(a) | Relu(a) => vec![a],
            LeakyRelu(a, _) | Sigmoid(a) | Tanh(a) | Abs(a) | Clamp(a, _, _) => vec![a],
            Sum(a) | Mean(a) | Reshape(a) | SoftmaxT(a, _) | Column(a, _) => vec![a],
            Conv2d { x, w, b, .. } | Deconv2d { x, w, b, .. } => vec![x, w, b],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to the tracked leaves of a graph.
#[derive(Clone, Debug, Default)]
pub struct GradientMap {
    entries: BTreeMap<Var, Tensor>,
}

impl GradientMap {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.entries.get(&v)
    }

    pub fn remove(&mut self, v: Var) -> Option<Tensor> {
        self.entries.remove(&v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.entries.iter().map(|(v, t)| (*v, t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A recorded forward computation.
///
/// Nodes are appended in execution order, so every input precedes its
/// consumer. A graph is meant for a single forward/backward episode and is
/// not shared across threads.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    conv_weight_grad_fault: Option<f64>,
}

fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
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

fn conv_dims(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<ConvDims> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::shape(format!(
            "conv2d expects rank-4 input and weight, got {xs:?} and {ws:?}"
        )));
    }
    if xs[1] != ws[1] {
        return Err(Error::shape(format!(
            "conv2d input has {} channels but weight expects {}",
            xs[1], ws[1]
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d stride must be >= 1"));
    }
    let out_h = kernels::conv_out_size(xs[2], ws[2], stride, pad);
    let out_w = kernels::conv_out_size(xs[3], ws[3], stride, pad);
    let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
        return Err(Error::shape(format!(
            "conv2d kernel {}x{} larger than padded input {}x{}",
            ws[2],
            ws[3],
            xs[2] + 2 * pad,
            xs[3] + 2 * pad
        )));
    };
    Ok(ConvDims {
        n: xs[0],
        f: ws[0],
        win: Window {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
            out_h,
            out_w,
        },
    })
}

fn deconv_dims(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<DeconvDims> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::shape(format!(
            "deconv2d expects rank-4 input and weight, got {xs:?} and {ws:?}"
        )));
    }
    if xs[1] != ws[0] {
        return Err(Error::shape(format!(
            "deconv2d input has {} channels but weight expects {}",
            xs[1], ws[0]
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("deconv2d stride must be >= 1"));
    }
    let h = kernels::deconv_out_size(xs[2], ws[2], stride, pad);
    let w_ = kernels::deconv_out_size(xs[3], ws[3], stride, pad);
    let (Some(height), Some(width)) = (h, w_) else {
        return Err(Error::shape(format!(
            "deconv2d output size is not positive for input {xs:?}, kernel {ws:?}, stride {stride}, padding {pad}"
        )));
    };
    Ok(DeconvDims {
        n: xs[0],
        c_in: xs[1],
        win: Window {
            channels: ws[1],
            height,
            width,
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
            out_h: xs[2],
            out_w: xs[3],
        },
    })
}

fn softmax_rows(x: &Tensor, temperature: f64) -> Tensor {
    let k = *x.shape().last().unwrap();
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(k) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&z| ((z - max) / temperature).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / total));
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// Evaluates `op` given the values of its inputs.
fn eval<'a>(op: &Op, get: impl Fn(Var) -> &'a Tensor) -> Result<Tensor> {
    use Op::*;
    Ok(match *op {
        Leaf => unreachable!("leaves carry their own value"),
        Add(a, b) => get(a).zip_map(get(b), |x, y| x + y),
        Sub(a, b) => get(a).zip_map(get(b), |x, y| x - y),
        Mul(a, b) => get(a).zip_map(get(b), |x, y| x * y),
        AddScalar(a, c) => get(a).map(|x| x + c),
        MulScalar(a, c) => get(a).map(|x| x * c),
        Neg(a) => get(a).map(|x| -x),
        Log(a) => get(a).map(f64::ln),
        Exp(a) => get(a).map(f64::exp),
        Relu(a) => get(a).map(|x| x.max(0.0)),
        LeakyRelu(a, s) => get(a).map(|x| leaky(x, s)),
        Sigmoid(a) => get(a).map(sigmoid),
        Tanh(a) => get(a).map(f64::tanh),
        Abs(a) => get(a).map(f64::abs),
        Clamp(a, lo, hi) => get(a).map(|x| x.clamp(lo, hi)),
        MatMul(a, b) => {
            let (a, b) = (get(a), get(b));
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![0.0; m * n];
            kernels::gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
            Tensor::from_parts(vec![m, n], out)
        }
        AddBias(a, b) => {
            let (a, b) = (get(a), get(b));
            let k = b.numel();
            let mut out = a.data().to_vec();
            for row in out.chunks_mut(k) {
                row.iter_mut().zip(b.data()).for_each(|(v, bias)| *v += bias);
            }
            Tensor::from_parts(a.shape().to_vec(), out)
        }
        Sum(a) => Tensor::scalar(get(a).data().iter().sum()),
        Mean(a) => {
            let a = get(a);
            Tensor::scalar(a.data().iter().sum::<f64>() / a.numel() as f64)
        }
        Reshape(_) => unreachable!("reshape is evaluated with its target shape"),
        Conv2d { x, w, b, stride, pad } => {
            let (x, w, b) = (get(x), get(w), get(b));
            let dims = conv_dims(x, w, stride, pad)?;
            let out = kernels::conv2d_forward(dims, x.data(), w.data(), b.data());
            Tensor::from_parts(vec![dims.n, dims.f, dims.win.out_h, dims.win.out_w], out)
        }
        Deconv2d { x, w, b, stride, pad } => {
            let (x, w, b) = (get(x), get(w), get(b));
            let dims = deconv_dims(x, w, stride, pad)?;
            let out = kernels::deconv2d_forward(dims, x.data(), w.data(), b.data());
            Tensor::from_parts(
                vec![dims.n, dims.win.channels, dims.win.height, dims.win.width],
                out,
            )
        }
        SoftmaxT(a, t) => softmax_rows(get(a), t),
        ConcatChannels(a, b) => {
            let (a, b) = (get(a), get(b));
            let n = a.shape()[0];
            let (la, lb) = (a.numel() / n, b.numel() / n);
            let mut out = Vec::with_capacity(a.numel() + b.numel());
            for s in 0..n {
                out.extend_from_slice(&a.data()[s * la..(s + 1) * la]);
                out.extend_from_slice(&b.data()[s * lb..(s + 1) * lb]);
            }
            let mut shape = a.shape().to_vec();
            shape[1] += b.shape()[1];
            Tensor::from_parts(shape, out)
        }
        ConcatRows(a, b) => {
            let (a, b) = (get(a), get(b));
            let mut out = a.data().to_vec();
            out.extend_from_slice(b.data());
            let mut shape = a.shape().to_vec();
            shape[0] += b.shape()[0];
            Tensor::from_parts(shape, out)
        }
        Column(a, k) => {
            let a = get(a);
            let width = a.shape()[1];
            let out = a.data().chunks(width).map(|row| row[k]).collect();
            Tensor::from_parts(vec![a.shape()[0]], out)
        }
    })
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a leaf; tracked leaves receive gradients from `backward`.
    pub fn leaf(&mut self, value: Tensor, track: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: track,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Scales every conv2d weight gradient by `scale`. Only used to check
    /// that the gradient checker catches a broken backward pass.
    #[doc(hidden)]
    pub fn inject_conv_weight_grad_fault(&mut self, scale: f64) {
        self.conv_weight_grad_fault = Some(scale);
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = eval(&op, |v| &self.nodes[v.0].value)?;
        Ok(self.push_value(op, value))
    }

    fn push_value(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        self.push(Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::AddScalar(a, c))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::MulScalar(a, c))
    }

    /// `c - a`.
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Result<Var> {
        let n = self.neg(a)?;
        self.add_scalar(n, c)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Neg(a))
    }

    /// Natural logarithm; every input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(v) = self.value(a).data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {v}")));
        }
        self.push(Op::Log(a))
    }

    /// `log(clamp(a, LOG_EPS, 1))`, the guarded logarithm used by every loss.
    pub fn log_clamped(&mut self, a: Var) -> Result<Var> {
        let c = self.clamp(a, LOG_EPS, 1.0)?;
        self.log(c)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.push(Op::Exp(a))?;
        if !self.value(v).all_finite() {
            return Err(Error::Domain("exp overflowed".into()));
        }
        Ok(v)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.push(Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Tanh(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Abs(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::invalid(format!("clamp bounds {lo} > {hi}")));
        }
        self.push(Op::Clamp(a, lo, hi))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul of {sa:?} and {sb:?}")));
        }
        self.push(Op::MatMul(a, b))
    }

    /// Adds a `[k]` bias to every row of an `[n, k]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(bias).shape());
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(Error::shape(format!("add_bias of {sa:?} and {sb:?}")));
        }
        self.push(Op::AddBias(a, bias))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Mean(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push_value(Op::Reshape(a), value))
    }

    /// Cross-correlation of `x [N,C,H,W]` with `w [F,C,kH,kW]` plus `b [F]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let dims = conv_dims(self.value(x), self.value(w), stride, pad)?;
        if self.value(b).shape() != [dims.f] {
            return Err(Error::shape(format!(
                "conv2d bias shape {:?}, expected [{}]",
                self.value(b).shape(),
                dims.f
            )));
        }
        self.push(Op::Conv2d { x, w, b, stride, pad })
    }

    /// Transposed convolution of `x [N,Cin,H,W]` with `w [Cin,Cout,kH,kW]`
    /// plus `b [Cout]`; output side `(H-1)*stride - 2*pad + kH`.
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let dims = deconv_dims(self.value(x), self.value(w), stride, pad)?;
        if self.value(b).shape() != [dims.win.channels] {
            return Err(Error::shape(format!(
                "deconv2d bias shape {:?}, expected [{}]",
                self.value(b).shape(),
                dims.win.channels
            )));
        }
        self.push(Op::Deconv2d { x, w, b, stride, pad })
    }

    /// Temperature softmax over the last axis of a rank-1 or rank-2 tensor.
    pub fn softmax_t(&mut self, a: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
        }
        let rank = self.value(a).rank();
        if rank > 2 {
            return Err(Error::shape(format!("softmax_t expects rank 1 or 2, got {rank}")));
        }
        self.push(Op::SoftmaxT(a, temperature))
    }

    /// Concatenates two `[N, C, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::shape(format!("concat_channels of {sa:?} and {sb:?}")));
        }
        self.push(Op::ConcatChannels(a, b))
    }

    /// Concatenates along the leading axis.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != sb.len() || sa[1..] != sb[1..] {
            return Err(Error::shape(format!("concat_rows of {sa:?} and {sb:?}")));
        }
        self.push(Op::ConcatRows(a, b))
    }

    /// Column `k` of an `[m, K]` matrix as an `[m]` vector.
    pub fn column(&mut self, a: Var, k: usize) -> Result<Var> {
        let s = self.value(a).shape();
        if s.len() != 2 || k >= s[1] {
            return Err(Error::shape(format!("column {k} of {s:?}")));
        }
        self.push(Op::Column(a, k))
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to every
    /// tracked leaf. Leaves the loss does not depend on get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<GradientMap> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        let mut out = GradientMap::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                out.entries.insert(Var(i), g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                out.entries
                    .entry(Var(i))
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        use Op::*;
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &node.value;
        match node.op {
            Leaf => {}
            Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|v| -v));
            }
            Mul(a, b) => {
                self.accumulate(grads, a, g.zip_map(val(b), |g, y| g * y));
                self.accumulate(grads, b, g.zip_map(val(a), |g, x| g * x));
            }
            AddScalar(a, _) => self.accumulate(grads, a, g.clone()),
            MulScalar(a, c) => self.accumulate(grads, a, g.map(|v| v * c)),
            Neg(a) => self.accumulate(grads, a, g.map(|v| -v)),
            Log(a) => self.accumulate(grads, a, g.zip_map(val(a), |g, x| g / x)),
            Exp(a) => self.accumulate(grads, a, g.zip_map(y, |g, y| g * y)),
            Relu(a) => self.accumulate(
                grads,
                a,
                g.zip_map(val(a), |g, x| if x > 0.0 { g } else { 0.0 }),
            ),
            LeakyRelu(a, s) => self.accumulate(
                grads,
                a,
                g.zip_map(val(a), |g, x| if x > 0.0 { g } else { s * g }),
            ),
            Sigmoid(a) => self.accumulate(grads, a, g.zip_map(y, |g, y| g * y * (1.0 - y))),
            Tanh(a) => self.accumulate(grads, a, g.zip_map(y, |g, y| g * (1.0 - y * y))),
            Abs(a) => self.accumulate(
                grads,
                a,
                g.zip_map(val(a), |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                }),
            ),
            Clamp(a, lo, hi) => self.accumulate(
                grads,
                a,
                g.zip_map(val(a), |g, x| if (lo..=hi).contains(&x) { g } else { 0.0 }),
            ),
            MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g.data(), false, bv.data(), true, &mut ga, false);
                    self.accumulate(grads, a, Tensor::from_parts(vec![m, k], ga));
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(k, m, n, av.data(), true, g.data(), false, &mut gb, false);
                    self.accumulate(grads, b, Tensor::from_parts(vec![k, n], gb));
                }
            }
            AddBias(a, b) => {
                self.accumulate(grads, a, g.clone());
                let k = val(b).numel();
                let mut gb = vec![0.0; k];
                for row in g.data().chunks(k) {
                    gb.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
                }
                self.accumulate(grads, b, Tensor::from_parts(vec![k], gb));
            }
            Sum(a) => {
                let g0 = g.data()[0];
                self.accumulate(grads, a, Tensor::full(val(a).shape(), g0));
            }
            Mean(a) => {
                let av = val(a);
                let g0 = g.data()[0] / av.numel() as f64;
                self.accumulate(grads, a, Tensor::full(av.shape(), g0));
            }
            Reshape(a) => {
                let shape = val(a).shape().to_vec();
                self.accumulate(grads, a, Tensor::from_parts(shape, g.data().to_vec()));
            }
            Conv2d { x, w, b, stride, pad } => {
                let (xv, wv) = (val(x), val(w));
                let dims = conv_dims(xv, wv, stride, pad).expect("validated in forward");
                let need_dx = self.nodes[x.0].requires_grad;
                let (dx, mut dw, db) =
                    kernels::conv2d_backward(dims, xv.data(), wv.data(), g.data(), need_dx);
                if let Some(scale) = self.conv_weight_grad_fault {
                    dw.iter_mut().for_each(|v| *v *= scale);
                }
                if let Some(dx) = dx {
                    self.accumulate(grads, x, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
                self.accumulate(grads, w, Tensor::from_parts(wv.shape().to_vec(), dw));
                self.accumulate(grads, b, Tensor::from_parts(vec![dims.f], db));
            }
            Deconv2d { x, w, b, stride, pad } => {
                let (xv, wv) = (val(x), val(w));
                let dims = deconv_dims(xv, wv, stride, pad).expect("validated in forward");
                let need_dx = self.nodes[x.0].requires_grad;
                let (dx, dw, db) =
                    kernels::deconv2d_backward(dims, xv.data(), wv.data(), g.data(), need_dx);
                if let Some(dx) = dx {
                    self.accumulate(grads, x, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
                self.accumulate(grads, w, Tensor::from_parts(wv.shape().to_vec(), dw));
                self.accumulate(grads, b, Tensor::from_parts(vec![dims.win.channels], db));
            }
            SoftmaxT(a, t) => {
                let k = *y.shape().last().unwrap();
                let mut ga = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(k).zip(g.data().chunks(k)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    ga.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot) / t));
                }
                self.accumulate(grads, a, Tensor::from_parts(y.shape().to_vec(), ga));
            }
            ConcatChannels(a, b) => {
                let (sa, sb) = (val(a).shape().to_vec(), val(b).shape().to_vec());
                let n = sa[0];
                let la: usize = sa[1..].iter().product();
                let lb: usize = sb[1..].iter().product();
                let (mut ga, mut gb) = (Vec::with_capacity(n * la), Vec::with_capacity(n * lb));
                for chunk in g.data().chunks(la + lb) {
                    ga.extend_from_slice(&chunk[..la]);
                    gb.extend_from_slice(&chunk[la..]);
                }
                self.accumulate(grads, a, Tensor::from_parts(sa, ga));
                self.accumulate(grads, b, Tensor::from_parts(sb, gb));
            }
            ConcatRows(a, b) => {
                let (sa, sb) = (val(a).shape().to_vec(), val(b).shape().to_vec());
                let split = val(a).numel();
                self.accumulate(grads, a, Tensor::from_parts(sa, g.data()[..split].to_vec()));
                self.accumulate(grads, b, Tensor::from_parts(sb, g.data()[split..].to_vec()));
            }
            Column(a, k) => {
                let sa = val(a).shape().to_vec();
                let mut ga = vec![0.0; sa[0] * sa[1]];
                for (r, gv) in g.data().iter().enumerate() {
                    ga[r * sa[1] + k] = *gv;
                }
                self.accumulate(grads, a, Tensor::from_parts(sa, ga));
            }
        }
    }

    /// Recomputes every node from the leaves using the recorded operations.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                Op::Reshape(a) => values[a.0].clone().reshape(node.value.shape().to_vec())?,
                ref op => eval(op, |v| &values[v.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Values currently stored on every node, in node order.
    pub fn values(&self) -> impl Iterator<Item = &Tensor> {
        self.nodes.iter().map(|n| &n.value)
    }
}

/// Lower clamp bound applied before every logarithm inside a loss.
pub const LOG_EPS: f64 = 1e-7;
