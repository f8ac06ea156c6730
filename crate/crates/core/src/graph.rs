//! Reverse-mode autodiff over a recorded op tape.
//!
//! Forward values are computed eagerly as ops are appended, so node ids are
//! already in topological order; backward walks the tape in reverse. Gradients
//! are only materialized for nodes reachable from tracked leaves, which lets a
//! caller pay for exactly the parameter sets it intends to update.

use crate::error::{DrdgError, Result};
use crate::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};

pub type NodeId = usize;

/// Clamp floor for every `log` in the loss stack.
pub const LOG_EPS: f64 = 1e-12;

/// Stabilizer for row normalization.
pub const NORM_EPS: f64 = 1e-6;

struct ConvDims {
    n: usize,
    h_in: usize,
    w_in: usize,
    c_in: usize,
    k: usize,
    h_out: usize,
    w_out: usize,
    c_out: usize,
    stride: usize,
    pad: usize,
}

enum Op {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        dims: ConvDims,
        cols: Vec<f64>,
    },
    Dense {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    GlobalAvgPool(NodeId),
    Flatten(NodeId),
    Modulate {
        f: NodeId,
        a: NodeId,
        scale: f64,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    Scale(NodeId, f64),
    OneMinus(NodeId),
    LogClamped(NodeId),
    Square(NodeId),
    SumPerSample(NodeId),
    Mean(NodeId),
    NormalizeRows(NodeId),
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Number of log arguments clamped at [`LOG_EPS`] since construction.
    pub log_clamps: u64,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Grads {
    by_node: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient for a node, zeros if it was never reached.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match self.get(id) {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        self.nodes.len() - 1
    }

    /// Leaf that gradients flow into (a trainable parameter).
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, false, Op::Leaf)
    }

    pub fn leaf(&mut self, value: Tensor, tracked: bool) -> NodeId {
        if tracked {
            self.param(value)
        } else {
            self.constant(value)
        }
    }

    /// 3×3-style convolution, channels-last, zero padding.
    /// `x`: N×H×W×Cin, `w`: K×K×Cin×Cout, `b`: Cout.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let xs = self.nodes[x].value.shape().to_vec();
        let ws = self.nodes[w].value.shape().to_vec();
        let bs = self.nodes[b].value.shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 {
            return Err(DrdgError::Contract(format!(
                "conv2d expects x 4-d, w 4-d, b 1-d; got {:?} {:?} {:?}",
                xs, ws, bs
            )));
        }
        if ws[0] != ws[1] || ws[2] != xs[3] || bs[0] != ws[3] {
            return Err(DrdgError::Contract(format!(
                "conv2d shape mismatch: x {:?} w {:?} b {:?}",
                xs, ws, bs
            )));
        }
        let (n, h_in, w_in, c_in) = (xs[0], xs[1], xs[2], xs[3]);
        let (k, c_out) = (ws[0], ws[3]);
        if h_in + 2 * pad < k || w_in + 2 * pad < k {
            return Err(DrdgError::Contract(format!(
                "conv2d kernel {} larger than padded input {}×{}",
                k,
                h_in + 2 * pad,
                w_in + 2 * pad
            )));
        }
        let h_out = (h_in + 2 * pad - k) / stride + 1;
        let w_out = (w_in + 2 * pad - k) / stride + 1;
        let rows = n * h_out * w_out;
        let kkc = k * k * c_in;

        let mut cols = vec![0.0; rows * kkc];
        {
            let xv = self.nodes[x].value.data();
            for ni in 0..n {
                for oh in 0..h_out {
                    for ow in 0..w_out {
                        let row = (ni * h_out + oh) * w_out + ow;
                        let base = row * kkc;
                        for kh in 0..k {
                            let ih = (oh * stride + kh) as isize - pad as isize;
                            if ih < 0 || ih >= h_in as isize {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (ow * stride + kw) as isize - pad as isize;
                                if iw < 0 || iw >= w_in as isize {
                                    continue;
                                }
                                let src = ((ni * h_in + ih as usize) * w_in + iw as usize) * c_in;
                                let dst = base + (kh * k + kw) * c_in;
                                cols[dst..dst + c_in]
                                    .copy_from_slice(&xv[src..src + c_in]);
                            }
                        }
                    }
                }
            }
        }

        let mut out = vec![0.0; rows * c_out];
        matmul_acc(&cols, self.nodes[w].value.data(), &mut out, rows, kkc, c_out);
        let bv = self.nodes[b].value.data().to_vec();
        for r in 0..rows {
            for (co, bvco) in bv.iter().enumerate() {
                out[r * c_out + co] += bvco;
            }
        }
        let value = Tensor::from_vec(&[n, h_out, w_out, c_out], out)?;
        let needs =
            self.nodes[x].needs_grad || self.nodes[w].needs_grad || self.nodes[b].needs_grad;
        let dims = ConvDims {
            n,
            h_in,
            w_in,
            c_in,
            k,
            h_out,
            w_out,
            c_out,
            stride,
            pad,
        };
        Ok(self.push(value, needs, Op::Conv2d { x, w, b, dims, cols }))
    }

    /// Fully connected layer. `x`: N×I, `w`: I×O, `b`: O.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.nodes[x].value.shape().to_vec();
        let ws = self.nodes[w].value.shape().to_vec();
        let bs = self.nodes[b].value.shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(DrdgError::Contract(format!(
                "dense shape mismatch: x {:?} w {:?} b {:?}",
                xs, ws, bs
            )));
        }
        let (n, i, o) = (xs[0], xs[1], ws[1]);
        let mut out = vec![0.0; n * o];
        matmul_acc(
            self.nodes[x].value.data(),
            self.nodes[w].value.data(),
            &mut out,
            n,
            i,
            o,
        );
        for r in 0..n {
            for (c, bc) in self.nodes[b].value.data().iter().enumerate() {
                out[r * o + c] += bc;
            }
        }
        let value = Tensor::from_vec(&[n, o], out)?;
        let needs =
            self.nodes[x].needs_grad || self.nodes[w].needs_grad || self.nodes[b].needs_grad;
        Ok(self.push(value, needs, Op::Dense { x, w, b }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        // f64::max would swallow NaN inputs; keep them visible
        let value = self.nodes[x]
            .value
            .map(|v| if v > 0.0 || v.is_nan() { v } else { 0.0 });
        let needs = self.nodes[x].needs_grad;
        self.push(value, needs, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.map(sigmoid);
        let needs = self.nodes[x].needs_grad;
        self.push(value, needs, Op::Sigmoid(x))
    }

    /// Row-wise softmax over an N×C tensor.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.nodes[x].value.shape().to_vec();
        if xs.len() != 2 {
            return Err(DrdgError::Contract(format!(
                "softmax_rows expects 2-d input, got {:?}",
                xs
            )));
        }
        let (n, c) = (xs[0], xs[1]);
        let xv = self.nodes[x].value.data();
        let mut out = vec![0.0; n * c];
        for r in 0..n {
            let row = &xv[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                out[r * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                out[r * c + j] /= denom;
            }
        }
        let value = Tensor::from_vec(&[n, c], out)?;
        let needs = self.nodes[x].needs_grad;
        Ok(self.push(value, needs, Op::SoftmaxRows(x)))
    }

    /// N×H×W×C → N×C spatial mean.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.nodes[x].value.shape().to_vec();
        if xs.len() != 4 {
            return Err(DrdgError::Contract(format!(
                "global_avg_pool expects 4-d input, got {:?}",
                xs
            )));
        }
        let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        let xv = self.nodes[x].value.data();
        let inv = 1.0 / (h * w) as f64;
        let mut out = vec![0.0; n * c];
        for ni in 0..n {
            for hw in 0..h * w {
                let base = (ni * h * w + hw) * c;
                for ci in 0..c {
                    out[ni * c + ci] += xv[base + ci];
                }
            }
            for ci in 0..c {
                out[ni * c + ci] *= inv;
            }
        }
        let value = Tensor::from_vec(&[n, c], out)?;
        let needs = self.nodes[x].needs_grad;
        Ok(self.push(value, needs, Op::GlobalAvgPool(x)))
    }

    /// N×... → N×(product of the rest).
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.nodes[x].value.shape().to_vec();
        if xs.is_empty() {
            return Err(DrdgError::Contract("flatten on 0-d tensor".into()));
        }
        let n = xs[0];
        let rest: usize = xs[1..].iter().product();
        self.reshape(x, &[n, rest])
    }

    /// View with a new shape of identical element count.
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.nodes[x].value.reshaped(shape)?;
        let needs = self.nodes[x].needs_grad;
        Ok(self.push(value, needs, Op::Flatten(x)))
    }

    /// Channel reweighting: `out[n,h,w,c] = scale · a[n,c] · f[n,h,w,c]`.
    pub fn modulate(&mut self, f: NodeId, a: NodeId, scale: f64) -> Result<NodeId> {
        let fs = self.nodes[f].value.shape().to_vec();
        let as_ = self.nodes[a].value.shape().to_vec();
        if fs.len() != 4 || as_.len() != 2 || fs[0] != as_[0] || fs[3] != as_[1] {
            return Err(DrdgError::Contract(format!(
                "modulate shape mismatch: f {:?} a {:?}",
                fs, as_
            )));
        }
        let (n, h, w, c) = (fs[0], fs[1], fs[2], fs[3]);
        let fv = self.nodes[f].value.data();
        let av = self.nodes[a].value.data();
        let mut out = vec![0.0; fv.len()];
        for ni in 0..n {
            for hw in 0..h * w {
                let base = (ni * h * w + hw) * c;
                for ci in 0..c {
                    out[base + ci] = scale * av[ni * c + ci] * fv[base + ci];
                }
            }
        }
        let value = Tensor::from_vec(&fs, out)?;
        let needs = self.nodes[f].needs_grad || self.nodes[a].needs_grad;
        Ok(self.push(value, needs, Op::Modulate { f, a, scale }))
    }

    fn binary_same_shape(&mut self, a: NodeId, b: NodeId, name: &str) -> Result<()> {
        if self.nodes[a].value.shape() != self.nodes[b].value.shape() {
            return Err(DrdgError::Contract(format!(
                "{} shape mismatch: {:?} vs {:?}",
                name,
                self.nodes[a].value.shape(),
                self.nodes[b].value.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "add")?;
        let av = self.nodes[a].value.data();
        let bv = self.nodes[b].value.data();
        let data: Vec<f64> = av.iter().zip(bv).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(self.nodes[a].value.shape(), data)?;
        let needs = self.nodes[a].needs_grad || self.nodes[b].needs_grad;
        Ok(self.push(value, needs, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "sub")?;
        let av = self.nodes[a].value.data();
        let bv = self.nodes[b].value.data();
        let data: Vec<f64> = av.iter().zip(bv).map(|(x, y)| x - y).collect();
        let value = Tensor::from_vec(self.nodes[a].value.shape(), data)?;
        let needs = self.nodes[a].needs_grad || self.nodes[b].needs_grad;
        Ok(self.push(value, needs, Op::Sub(a, b)))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "mul_elem")?;
        let av = self.nodes[a].value.data();
        let bv = self.nodes[b].value.data();
        let data: Vec<f64> = av.iter().zip(bv).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(self.nodes[a].value.shape(), data)?;
        let needs = self.nodes[a].needs_grad || self.nodes[b].needs_grad;
        Ok(self.push(value, needs, Op::MulElem(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let value = self.nodes[x].value.map(|v| k * v);
        let needs = self.nodes[x].needs_grad;
        self.push(value, needs, Op::Scale(x, k))
    }

    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.map(|v| 1.0 - v);
        let needs = self.nodes[x].needs_grad;
        self.push(value, needs, Op::OneMinus(x))
    }

    /// `ln(max(x, LOG_EPS))`; clamped arguments are counted on the graph.
    pub fn log_clamped(&mut self, x: NodeId) -> NodeId {
        let mut clamps = 0u64;
        let value = {
            let xv = self.nodes[x].value.data();
            let data: Vec<f64> = xv
                .iter()
                .map(|&v| {
                    if v < LOG_EPS {
                        clamps += 1;
                        LOG_EPS.ln()
                    } else {
                        v.ln()
                    }
                })
                .collect();
            Tensor::from_vec(self.nodes[x].value.shape(), data).expect("same shape")
        };
        self.log_clamps += clamps;
        let needs = self.nodes[x].needs_grad;
        self.push(value, needs, Op::LogClamped(x))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.map(|v| v * v);
        let needs = self.nodes[x].needs_grad;
        self.push(value, needs, Op::Square(x))
    }

    /// `[N, ...] → [N]`, summing every trailing dimension.
    pub fn sum_per_sample(&mut self, x: NodeId) -> NodeId {
        let xs = self.nodes[x].value.shape().to_vec();
        let n = xs[0];
        let rest: usize = xs[1..].iter().product();
        let xv = self.nodes[x].value.data();
        let mut out = vec![0.0; n];
        for ni in 0..n {
            out[ni] = xv[ni * rest..(ni + 1) * rest].iter().sum();
        }
        let value = Tensor::from_vec(&[n], out).expect("len n");
        let needs = self.nodes[x].needs_grad;
        self.push(value, needs, Op::SumPerSample(x))
    }

    /// Mean over all elements → scalar.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.nodes[x].value.data();
        let m = xv.iter().sum::<f64>() / xv.len() as f64;
        let needs = self.nodes[x].needs_grad;
        self.push(Tensor::scalar(m), needs, Op::Mean(x))
    }

    /// Per-row L2 normalization of an N×D tensor: `y = x / (‖x‖₂ + ε)`.
    pub fn normalize_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.nodes[x].value.shape().to_vec();
        if xs.len() != 2 {
            return Err(DrdgError::Contract(format!(
                "normalize_rows expects 2-d input, got {:?}",
                xs
            )));
        }
        let (n, d) = (xs[0], xs[1]);
        let xv = self.nodes[x].value.data();
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let inv = 1.0 / (norm + NORM_EPS);
            for j in 0..d {
                out[r * d + j] = row[j] * inv;
            }
        }
        let value = Tensor::from_vec(&xs, out)?;
        let needs = self.nodes[x].needs_grad;
        Ok(self.push(value, needs, Op::NormalizeRows(x)))
    }

    /// Reverse pass from a scalar node. Gradients accumulate only through
    /// nodes marked `needs_grad`.
    pub fn backward(&self, loss: NodeId) -> Grads {
        assert_eq!(
            self.nodes[loss].value.numel(),
            1,
            "backward seeds must be scalar"
        );
        let mut by_node: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        by_node[loss] = Some(Tensor::scalar(1.0));

        for id in (0..=loss).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = by_node[id].take() else {
                continue;
            };
            self.accumulate(id, &g, &mut by_node);
            by_node[id] = Some(g);
        }
        Grads { by_node }
    }

    fn add_grad(&self, target: NodeId, delta: Tensor, by_node: &mut [Option<Tensor>]) {
        if !self.nodes[target].needs_grad {
            return;
        }
        match &mut by_node[target] {
            Some(existing) => {
                let e = existing.data_mut();
                for (ei, di) in e.iter_mut().zip(delta.data()) {
                    *ei += di;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate(&self, id: NodeId, g: &Tensor, by_node: &mut [Option<Tensor>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, dims, cols } => {
                let rows = dims.n * dims.h_out * dims.w_out;
                let kkc = dims.k * dims.k * dims.c_in;
                let gv = g.data();
                if self.nodes[*w].needs_grad {
                    let mut dw = vec![0.0; kkc * dims.c_out];
                    matmul_tn_acc(cols, gv, &mut dw, rows, kkc, dims.c_out);
                    let dw = Tensor::from_vec(self.nodes[*w].value.shape(), dw).expect("dw");
                    self.add_grad(*w, dw, by_node);
                }
                if self.nodes[*b].needs_grad {
                    let mut db = vec![0.0; dims.c_out];
                    for r in 0..rows {
                        for co in 0..dims.c_out {
                            db[co] += gv[r * dims.c_out + co];
                        }
                    }
                    let db = Tensor::from_vec(&[dims.c_out], db).expect("db");
                    self.add_grad(*b, db, by_node);
                }
                if self.nodes[*x].needs_grad {
                    let mut dcols = vec![0.0; rows * kkc];
                    matmul_nt_acc(
                        gv,
                        self.nodes[*w].value.data(),
                        &mut dcols,
                        rows,
                        dims.c_out,
                        kkc,
                    );
                    let mut dx =
                        vec![0.0; dims.n * dims.h_in * dims.w_in * dims.c_in];
                    for ni in 0..dims.n {
                        for oh in 0..dims.h_out {
                            for ow in 0..dims.w_out {
                                let row = (ni * dims.h_out + oh) * dims.w_out + ow;
                                let base = row * kkc;
                                for kh in 0..dims.k {
                                    let ih = (oh * dims.stride + kh) as isize - dims.pad as isize;
                                    if ih < 0 || ih >= dims.h_in as isize {
                                        continue;
                                    }
                                    for kw in 0..dims.k {
                                        let iw = (ow * dims.stride + kw) as isize
                                            - dims.pad as isize;
                                        if iw < 0 || iw >= dims.w_in as isize {
                                            continue;
                                        }
                                        let dst = ((ni * dims.h_in + ih as usize) * dims.w_in
                                            + iw as usize)
                                            * dims.c_in;
                                        let src = base + (kh * dims.k + kw) * dims.c_in;
                                        for ci in 0..dims.c_in {
                                            dx[dst + ci] += dcols[src + ci];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    let dx = Tensor::from_vec(self.nodes[*x].value.shape(), dx).expect("dx");
                    self.add_grad(*x, dx, by_node);
                }
            }
            Op::Dense { x, w, b } => {
                let xs = self.nodes[*x].value.shape();
                let (n, i) = (xs[0], xs[1]);
                let o = self.nodes[*w].value.shape()[1];
                let gv = g.data();
                if self.nodes[*w].needs_grad {
                    let mut dw = vec![0.0; i * o];
                    matmul_tn_acc(self.nodes[*x].value.data(), gv, &mut dw, n, i, o);
                    let dw = Tensor::from_vec(&[i, o], dw).expect("dw");
                    self.add_grad(*w, dw, by_node);
                }
                if self.nodes[*b].needs_grad {
                    let mut db = vec![0.0; o];
                    for r in 0..n {
                        for c in 0..o {
                            db[c] += gv[r * o + c];
                        }
                    }
                    let db = Tensor::from_vec(&[o], db).expect("db");
                    self.add_grad(*b, db, by_node);
                }
                if self.nodes[*x].needs_grad {
                    let mut dx = vec![0.0; n * i];
                    matmul_nt_acc(gv, self.nodes[*w].value.data(), &mut dx, n, o, i);
                    let dx = Tensor::from_vec(&[n, i], dx).expect("dx");
                    self.add_grad(*x, dx, by_node);
                }
            }
            Op::Relu(x) => {
                let xv = self.nodes[*x].value.data();
                let data: Vec<f64> = xv
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                    .collect();
                let dx = Tensor::from_vec(self.nodes[*x].value.shape(), data).expect("dx");
                self.add_grad(*x, dx, by_node);
            }
            Op::Sigmoid(x) => {
                let yv = self.nodes[id].value.data();
                let data: Vec<f64> = yv
                    .iter()
                    .zip(g.data())
                    .map(|(&s, &gi)| gi * s * (1.0 - s))
                    .collect();
                let dx = Tensor::from_vec(self.nodes[*x].value.shape(), data).expect("dx");
                self.add_grad(*x, dx, by_node);
            }
            Op::SoftmaxRows(x) => {
                let ys = self.nodes[id].value.shape();
                let (n, c) = (ys[0], ys[1]);
                let yv = self.nodes[id].value.data();
                let gv = g.data();
                let mut dx = vec![0.0; n * c];
                for r in 0..n {
                    let dot: f64 = (0..c)
                        .map(|j| gv[r * c + j] * yv[r * c + j])
                        .sum();
                    for j in 0..c {
                        dx[r * c + j] = yv[r * c + j] * (gv[r * c + j] - dot);
                    }
                }
                let dx = Tensor::from_vec(&[n, c], dx).expect("dx");
                self.add_grad(*x, dx, by_node);
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.nodes[*x].value.shape();
                let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
                let inv = 1.0 / (h * w) as f64;
                let gv = g.data();
                let mut dx = vec![0.0; n * h * w * c];
                for ni in 0..n {
                    for hw in 0..h * w {
                        let base = (ni * h * w + hw) * c;
                        for ci in 0..c {
                            dx[base + ci] = gv[ni * c + ci] * inv;
                        }
                    }
                }
                let dx = Tensor::from_vec(xs, dx).expect("dx");
                self.add_grad(*x, dx, by_node);
            }
            Op::Flatten(x) => {
                let dx = Tensor::from_vec(self.nodes[*x].value.shape(), g.data().to_vec())
                    .expect("dx");
                self.add_grad(*x, dx, by_node);
            }
            Op::Modulate { f, a, scale } => {
                let fs = self.nodes[*f].value.shape();
                let (n, h, w, c) = (fs[0], fs[1], fs[2], fs[3]);
                let gv = g.data();
                let fv = self.nodes[*f].value.data();
                let av = self.nodes[*a].value.data();
                if self.nodes[*f].needs_grad {
                    let mut df = vec![0.0; fv.len()];
                    for ni in 0..n {
                        for hw in 0..h * w {
                            let base = (ni * h * w + hw) * c;
                            for ci in 0..c {
                                df[base + ci] = scale * av[ni * c + ci] * gv[base + ci];
                            }
                        }
                    }
                    let df = Tensor::from_vec(fs, df).expect("df");
                    self.add_grad(*f, df, by_node);
                }
                if self.nodes[*a].needs_grad {
                    let mut da = vec![0.0; n * c];
                    for ni in 0..n {
                        for hw in 0..h * w {
                            let base = (ni * h * w + hw) * c;
                            for ci in 0..c {
                                da[ni * c + ci] += scale * fv[base + ci] * gv[base + ci];
                            }
                        }
                    }
                    let da = Tensor::from_vec(&[n, c], da).expect("da");
                    self.add_grad(*a, da, by_node);
                }
            }
            Op::Add(a, b) => {
                self.add_grad(*a, g.clone(), by_node);
                self.add_grad(*b, g.clone(), by_node);
            }
            Op::Sub(a, b) => {
                self.add_grad(*a, g.clone(), by_node);
                self.add_grad(*b, g.map(|v| -v), by_node);
            }
            Op::MulElem(a, b) => {
                if self.nodes[*a].needs_grad {
                    let bv = self.nodes[*b].value.data();
                    let data: Vec<f64> =
                        g.data().iter().zip(bv).map(|(&gi, &bi)| gi * bi).collect();
                    let da = Tensor::from_vec(g.shape(), data).expect("da");
                    self.add_grad(*a, da, by_node);
                }
                if self.nodes[*b].needs_grad {
                    let av = self.nodes[*a].value.data();
                    let data: Vec<f64> =
                        g.data().iter().zip(av).map(|(&gi, &ai)| gi * ai).collect();
                    let db = Tensor::from_vec(g.shape(), data).expect("db");
                    self.add_grad(*b, db, by_node);
                }
            }
            Op::Scale(x, k) => {
                self.add_grad(*x, g.map(|v| k * v), by_node);
            }
            Op::OneMinus(x) => {
                self.add_grad(*x, g.map(|v| -v), by_node);
            }
            Op::LogClamped(x) => {
                let xv = self.nodes[*x].value.data();
                let data: Vec<f64> = xv
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gi)| if v > LOG_EPS { gi / v } else { 0.0 })
                    .collect();
                let dx = Tensor::from_vec(self.nodes[*x].value.shape(), data).expect("dx");
                self.add_grad(*x, dx, by_node);
            }
            Op::Square(x) => {
                let xv = self.nodes[*x].value.data();
                let data: Vec<f64> = xv
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gi)| 2.0 * v * gi)
                    .collect();
                let dx = Tensor::from_vec(self.nodes[*x].value.shape(), data).expect("dx");
                self.add_grad(*x, dx, by_node);
            }
            Op::SumPerSample(x) => {
                let xs = self.nodes[*x].value.shape();
                let n = xs[0];
                let rest: usize = xs[1..].iter().product();
                let gv = g.data();
                let mut dx = vec![0.0; n * rest];
                for ni in 0..n {
                    for j in 0..rest {
                        dx[ni * rest + j] = gv[ni];
                    }
                }
                let dx = Tensor::from_vec(xs, dx).expect("dx");
                self.add_grad(*x, dx, by_node);
            }
            Op::Mean(x) => {
                let len = self.nodes[*x].value.numel();
                let gi = g.item() / len as f64;
                let dx = Tensor::filled(self.nodes[*x].value.shape(), gi);
                self.add_grad(*x, dx, by_node);
            }
            Op::NormalizeRows(x) => {
                let xs = self.nodes[*x].value.shape();
                let (n, d) = (xs[0], xs[1]);
                let xv = self.nodes[*x].value.data();
                let gv = g.data();
                let mut dx = vec![0.0; n * d];
                for r in 0..n {
                    let row = &xv[r * d..(r + 1) * d];
                    let grow = &gv[r * d..(r + 1) * d];
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let denom = norm + NORM_EPS;
                    let dot: f64 = row.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                    // d/dx [x/(‖x‖+ε)] = I/(‖x‖+ε) − x xᵀ / (‖x‖ (‖x‖+ε)²)
                    let coef = if norm > 0.0 {
                        dot / (norm * denom * denom)
                    } else {
                        0.0
                    };
                    for j in 0..d {
                        dx[r * d + j] = grow[j] / denom - coef * row[j];
                    }
                }
                let dx = Tensor::from_vec(xs, dx).expect("dx");
                self.add_grad(*x, dx, by_node);
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Central-difference check of a scalar-valued graph against its backward
    /// pass. `build` must construct the same graph for the same inputs.
    fn fd_check(build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId, inputs: &[Tensor], tol: f64) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &ids);
        let grads = g.backward(loss);

        let h = 1e-5;
        for (which, input) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(ids[which], input.shape());
            for coord in 0..input.numel() {
                let eval = |delta: f64| -> f64 {
                    let mut perturbed: Vec<Tensor> = inputs.to_vec();
                    perturbed[which].data_mut()[coord] += delta;
                    let mut g2 = Graph::new();
                    let ids2: Vec<NodeId> =
                        perturbed.iter().map(|t| g2.param(t.clone())).collect();
                    let l2 = build(&mut g2, &ids2);
                    g2.value(l2).item()
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic.data()[coord];
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (a - numeric).abs() / denom < tol,
                    "input {} coord {}: analytic {} vs numeric {}",
                    which,
                    coord,
                    a,
                    numeric
                );
            }
        }
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = crate::rng::rng_from(seed);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn fd_dense_sigmoid_mean() {
        let x = rand_tensor(&[3, 4], 1);
        let w = rand_tensor(&[4, 2], 2);
        let b = rand_tensor(&[2], 3);
        fd_check(
            &|g, ids| {
                let d = g.dense(ids[0], ids[1], ids[2]).unwrap();
                let s = g.sigmoid(d);
                g.mean(s)
            },
            &[x, w, b],
            1e-6,
        );
    }

    #[test]
    fn fd_conv_relu_pool() {
        let x = rand_tensor(&[2, 5, 5, 3], 4);
        let w = rand_tensor(&[3, 3, 3, 4], 5);
        let b = rand_tensor(&[4], 6);
        fd_check(
            &|g, ids| {
                let c = g.conv2d(ids[0], ids[1], ids[2], 2, 1).unwrap();
                let r = g.relu(c);
                let p = g.global_avg_pool(r).unwrap();
                g.mean(p)
            },
            &[x, w, b],
            1e-5,
        );
    }

    #[test]
    fn fd_softmax_log_pick() {
        let x = rand_tensor(&[3, 4], 7);
        let onehot = {
            let mut t = Tensor::zeros(&[3, 4]);
            t.data_mut()[0] = 1.0;
            t.data_mut()[4 + 2] = 1.0;
            t.data_mut()[8 + 3] = 1.0;
            t
        };
        fd_check(
            &move |g, ids| {
                let sm = g.softmax_rows(ids[0]).unwrap();
                let oh = g.constant(onehot.clone());
                let picked = g.mul_elem(sm, oh).unwrap();
                let p = g.sum_per_sample(picked);
                let lp = g.log_clamped(p);
                g.mean(lp)
            },
            &[x],
            1e-6,
        );
    }

    #[test]
    fn fd_modulate_square_sum() {
        let f = rand_tensor(&[2, 3, 3, 4], 8);
        let a = rand_tensor(&[2, 4], 9);
        fd_check(
            &|g, ids| {
                let m = g.modulate(ids[0], ids[1], 1.0).unwrap();
                let s = g.square(m);
                let per = g.sum_per_sample(s);
                g.mean(per)
            },
            &[f, a],
            1e-6,
        );
    }

    #[test]
    fn fd_composite_with_fanout() {
        // One tensor used along two paths exercises gradient accumulation.
        let x = rand_tensor(&[2, 6], 10);
        let w = rand_tensor(&[6, 3], 11);
        let b = rand_tensor(&[3], 12);
        fd_check(
            &|g, ids| {
                let d = g.dense(ids[0], ids[1], ids[2]).unwrap();
                let s = g.sigmoid(d);
                let q = g.square(d);
                let both = g.add(s, q).unwrap();
                let per = g.sum_per_sample(both);
                g.mean(per)
            },
            &[x, w, b],
            1e-6,
        );
    }

    #[test]
    fn fd_normalize_rows() {
        let mut x = rand_tensor(&[3, 5], 13);
        for v in x.data_mut().iter_mut() {
            *v += 0.3; // keep row norms well away from zero
        }
        let w = rand_tensor(&[5, 2], 14);
        let b = rand_tensor(&[2], 15);
        fd_check(
            &|g, ids| {
                let n = g.normalize_rows(ids[0]).unwrap();
                let d = g.dense(n, ids[1], ids[2]).unwrap();
                let s = g.sigmoid(d);
                g.mean(s)
            },
            &[x, w, b],
            1e-6,
        );
    }

    #[test]
    fn softmax_saturates_under_large_margin() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[1, 4], vec![50.0, 0.0, 0.0, 0.0]).unwrap());
        let s = g.softmax_rows(x).unwrap();
        let v = g.value(s);
        assert!(v.data()[0] > 1.0 - 1e-9);
        for &p in &v.data()[1..] {
            assert!(p > 0.0 && p < 1e-9);
        }
    }

    #[test]
    fn normalize_rows_produces_unit_norm() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[2, 3], vec![3.0, 4.0, 0.0, 0.1, 0.0, 0.0]).unwrap());
        let y = g.normalize_rows(x).unwrap();
        let v = g.value(y);
        let n0: f64 = v.data()[..3].iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!((n0 - 1.0).abs() < 1e-6);
        assert!((v.data()[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn pruning_skips_constants() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::filled(&[2, 2], 0.5));
        let w = g.param(Tensor::filled(&[2, 2], 0.1));
        let y = g.mul_elem(x, w).unwrap();
        let per = g.sum_per_sample(y);
        let loss = g.mean(per);
        let grads = g.backward(loss);
        assert!(grads.get(x).is_none());
        assert!(grads.get(w).is_some());
    }

    #[test]
    fn log_clamp_counts_and_zero_grad() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(&[2], vec![0.0, 0.5]).unwrap());
        let l = g.log_clamped(x);
        assert_eq!(g.log_clamps, 1);
        let m = g.mean(l);
        let grads = g.backward(m);
        let gx = grads.get(x).unwrap();
        assert_eq!(gx.data()[0], 0.0);
        assert!((gx.data()[1] - 0.5 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn conv_matches_direct_computation() {
        // 1×3×3×1 input, 3×3 kernel, stride 1, pad 1: center output equals
        // the full weighted sum.
        let x = Tensor::from_vec(
            &[1, 3, 3, 1],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let w = Tensor::filled(&[3, 3, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let mut g = Graph::new();
        let xi = g.constant(x);
        let wi = g.constant(w);
        let bi = g.constant(b);
        let y = g.conv2d(xi, wi, bi, 1, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3, 3, 1]);
        assert_eq!(g.value(y).at4(0, 1, 1, 0), 45.0);
        // corner: only the 2×2 overlap contributes
        assert_eq!(g.value(y).at4(0, 0, 0, 0), 1.0 + 2.0 + 4.0 + 5.0);
    }
}
