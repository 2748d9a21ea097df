//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. Nodes are only
//! ever appended, so insertion order is a topological order and the reverse
//! sweep in [`Graph::backward`] visits each node after all of its consumers.

use super::tensor::{kernels, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Sigmoid(Var),
    Tanh(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Softmax(Var),
    Concat(Vec<Var>),
    SliceLast { x: Var, start: usize },
    SelectStep { x: Var, step: usize },
    Reshape(Var),
    SumAll(Var),
    GaussianLogProb { x: Var, mu: Var, log_var: Var },
    KlStdNormal { mu: Var, log_var: Var },
    Lstm(Box<LstmNode>),
}

#[derive(Debug)]
struct LstmNode {
    x: Var,
    input_kernel: Var,
    recurrent_kernel: Var,
    bias: Var,
    reverse: bool,
    // activated gates (i, f, g, o) per row and step: [B, W, 4u]
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Rebuilt for every batch.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of the given shape when `v` did not reach the loss.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that gradients are not tracked for.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `[B, m, k] × [B, k, n]`, or `[B, m, k] × [B, n, k]ᵀ` when `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::dim("batch_matmul", sa, sb));
        }
        let (bsz, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(Error::dim("batch_matmul", sa, sb));
        }
        let mut out = vec![0.0; bsz * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..bsz {
            let ab = &ad[i * m * k..(i + 1) * m * k];
            let bb = &bd[i * k * n..(i + 1) * k * n];
            let ob = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                kernels::gemm_nt(ab, bb, ob, m, k, n);
            } else {
                kernels::gemm(ab, bb, ob, m, k, n);
            }
        }
        let value = Tensor::new(vec![bsz, m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::BatchMatMul { a, b, trans_b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Adds a vector along the trailing axis.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rank() != 1 || bv.numel() != av.last_dim() {
            return Err(Error::dim("add_bias", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        let d = bv.numel();
        for row in out.data_mut().chunks_mut(d) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(out, Op::AddBias(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(kernels::sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Elementwise clamp; gradient passes only inside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(&[x]);
        self.push(out, Op::Clamp { x, lo, hi }, rg)
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let cols = av.last_dim();
        let mut out = Tensor::zeros(av.shape());
        kernels::softmax_rows(av.data(), out.data_mut(), cols);
        let rg = self.rg(&[a]);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Concatenation along the trailing axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(Error::dim("concat", self.shape(first), s));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of the trailing axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if start + len > d || xv.rank() == 0 {
            return Err(Error::dim("slice_last", xv.shape(), &[start, len]));
        }
        let mut out = Vec::with_capacity(xv.outer_len() * len);
        for row in xv.data().chunks(d) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SliceLast { x, start }, rg))
    }

    /// Time step `step` of a `[B, W, d]` tensor, giving `[B, d]`.
    pub fn select_step(&mut self, x: Var, step: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || step >= s[1] {
            return Err(Error::dim("select_step", &s, &[step]));
        }
        let (bsz, w, d) = (s[0], s[1], s[2]);
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(bsz * d);
        for b in 0..bsz {
            let off = (b * w + step) * d;
            out.extend_from_slice(&data[off..off + d]);
        }
        let value = Tensor::new(vec![bsz, d], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SelectStep { x, step }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(out, Op::SumAll(x), rg)
    }

    /// Elementwise `log N(x; mu, exp(log_var))`.
    pub fn gaussian_log_prob(&mut self, x: Var, mu: Var, log_var: Var) -> Result<Var> {
        let out = super::prob::gaussian_log_prob(self.value(x), self.value(mu), self.value(log_var))?;
        let rg = self.rg(&[x, mu, log_var]);
        Ok(self.push(out, Op::GaussianLogProb { x, mu, log_var }, rg))
    }

    /// `KL(N(mu, exp(log_var)) || N(0, 1))` summed over every element.
    pub fn kl_std_normal(&mut self, mu: Var, log_var: Var) -> Result<Var> {
        let kl = super::prob::kl_diag_gaussian_to_std_normal(self.value(mu), self.value(log_var))?;
        let rg = self.rg(&[mu, log_var]);
        Ok(self.push(Tensor::scalar(kl), Op::KlStdNormal { mu, log_var }, rg))
    }

    /// One direction of an LSTM layer over `[B, W, in]`, returning the hidden
    /// state at every step as `[B, W, units]` in input time order.
    ///
    /// Gate columns are ordered (input, forget, cell, output). With `reverse`
    /// the recurrence runs from the last step to the first.
    pub fn lstm(
        &mut self,
        x: Var,
        input_kernel: Var,
        recurrent_kernel: Var,
        bias: Var,
        reverse: bool,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (wi, wr, b) = (
            self.value(input_kernel),
            self.value(recurrent_kernel),
            self.value(bias),
        );
        if xs.len() != 3 || wi.rank() != 2 || wi.shape()[0] != xs[2] {
            return Err(Error::dim("lstm", &xs, wi.shape()));
        }
        if xs[1] == 0 {
            return Err(Error::contract("lstm over an empty window"));
        }
        let g4 = wi.shape()[1];
        let units = g4 / 4;
        if g4 % 4 != 0 || wr.shape() != [units, g4] || b.shape() != [g4] {
            return Err(Error::dim("lstm", wi.shape(), wr.shape()));
        }
        let (bsz, w, inp) = (xs[0], xs[1], xs[2]);

        let mut gates = vec![0.0; bsz * w * g4];
        kernels::gemm(self.value(x).data(), wi.data(), &mut gates, bsz * w, inp, g4);
        for row in gates.chunks_mut(g4) {
            for (g, bv) in row.iter_mut().zip(b.data()) {
                *g += bv;
            }
        }
        let wr = wr.data();
        let mut h = vec![0.0; bsz * w * units];
        let mut cells = vec![0.0; bsz * w * units];
        let mut tanh_cells = vec![0.0; bsz * w * units];
        for step in 0..w {
            let t = if reverse { w - 1 - step } else { step };
            let prev = (step > 0).then(|| if reverse { t + 1 } else { t - 1 });
            if let Some(p) = prev {
                kernels::gemm_strided(
                    bsz,
                    units,
                    g4,
                    &h[p * units..],
                    (w * units, 1),
                    wr,
                    (g4, 1),
                    &mut gates[t * g4..],
                    w * g4,
                );
            }
            for bi in 0..bsz {
                let grow = &mut gates[(bi * w + t) * g4..(bi * w + t + 1) * g4];
                let c_prev_row = prev.map(|p| (bi * w + p) * units);
                let out_off = (bi * w + t) * units;
                for j in 0..units {
                    let ig = kernels::sigmoid(grow[j]);
                    let fg = kernels::sigmoid(grow[units + j]);
                    let cg = grow[2 * units + j].tanh();
                    let og = kernels::sigmoid(grow[3 * units + j]);
                    grow[j] = ig;
                    grow[units + j] = fg;
                    grow[2 * units + j] = cg;
                    grow[3 * units + j] = og;
                    let cp = c_prev_row.map_or(0.0, |off| cells[off + j]);
                    let c = fg * cp + ig * cg;
                    let tc = c.tanh();
                    cells[out_off + j] = c;
                    tanh_cells[out_off + j] = tc;
                    h[out_off + j] = og * tc;
                }
            }
        }
        let value = Tensor::new(vec![bsz, w, units], h)?;
        let rg = self.rg(&[x, input_kernel, recurrent_kernel, bias]);
        let node = LstmNode {
            x,
            input_kernel,
            recurrent_kernel,
            bias,
            reverse,
            gates,
            cells,
            tanh_cells,
        };
        Ok(self.push(value, Op::Lstm(Box::new(node)), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k, n) = (bv.shape()[0], bv.shape()[1]);
                let m = av.outer_len();
                if self.wants(*a) {
                    let mut da = Tensor::zeros(av.shape());
                    kernels::gemm_nt(g.data(), bv.data(), da.data_mut(), m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = Tensor::zeros(bv.shape());
                    kernels::gemm_tn(av.data(), g.data(), db.data_mut(), m, k, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (bsz, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = out.shape()[2];
                let mut da = Tensor::zeros(av.shape());
                let mut db = Tensor::zeros(bv.shape());
                for i in 0..bsz {
                    let gb = &g.data()[i * m * n..(i + 1) * m * n];
                    let ab = &av.data()[i * m * k..(i + 1) * m * k];
                    let bb = &bv.data()[i * k * n..(i + 1) * k * n];
                    let dab = &mut da.data_mut()[i * m * k..(i + 1) * m * k];
                    if *trans_b {
                        // out = a bᵀ with b [n, k]
                        kernels::gemm(gb, bb, dab, m, n, k);
                        let dbb = &mut db.data_mut()[i * k * n..(i + 1) * k * n];
                        kernels::gemm_tn(gb, ab, dbb, m, n, k);
                    } else {
                        kernels::gemm_nt(gb, bb, dab, m, n, k);
                        let dbb = &mut db.data_mut()[i * k * n..(i + 1) * k * n];
                        kernels::gemm_tn(ab, gb, dbb, m, k, n);
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.mul(bv).expect("shape"));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.mul(av).expect("shape"));
                }
            }
            Op::AddBias(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*bias) {
                    let d = g.last_dim();
                    let mut db = Tensor::zeros(&[d]);
                    for row in g.data().chunks(d) {
                        for (o, v) in db.data_mut().iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::Exp(a) => self.accumulate(grads, *a, g.mul(out).expect("shape")),
            Op::Sigmoid(a) => {
                let d = g.zip_map(out, "sigmoid", |gv, y| gv * y * (1.0 - y)).expect("shape");
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g.zip_map(out, "tanh", |gv, y| gv * (1.0 - y * y)).expect("shape");
                self.accumulate(grads, *a, d);
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let d = g
                    .zip_map(self.value(*x), "clamp", |gv, xv| {
                        if (lo..=hi).contains(&xv) {
                            gv
                        } else {
                            0.0
                        }
                    })
                    .expect("shape");
                self.accumulate(grads, *x, d);
            }
            Op::Softmax(a) => {
                let cols = out.last_dim();
                let mut d = Tensor::zeros(out.shape());
                for ((yr, gr), dr) in out
                    .data()
                    .chunks(cols)
                    .zip(g.data().chunks(cols))
                    .zip(d.data_mut().chunks_mut(cols))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, gv)| y * gv).sum();
                    for ((o, y), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = y * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Concat(parts) => {
                let total = out.last_dim();
                let rows = out.outer_len();
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + start..r * total + start + w]);
                        }
                        let d = Tensor::new(self.shape(p).to_vec(), d).expect("shape");
                        self.accumulate(grads, p, d);
                    }
                    start += w;
                }
            }
            Op::SliceLast { x, start } => {
                let xv = self.value(*x);
                let (d, len) = (xv.last_dim(), out.last_dim());
                let mut dx = Tensor::zeros(xv.shape());
                for (dr, gr) in dx.data_mut().chunks_mut(d).zip(g.data().chunks(len)) {
                    dr[*start..*start + len].copy_from_slice(gr);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SelectStep { x, step } => {
                let s = self.shape(*x);
                let (bsz, w, d) = (s[0], s[1], s[2]);
                let mut dx = Tensor::zeros(s);
                for b in 0..bsz {
                    let off = (b * w + step) * d;
                    dx.data_mut()[off..off + d].copy_from_slice(&g.data()[b * d..(b + 1) * d]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => {
                let d = g.reshape(self.shape(*x)).expect("shape");
                self.accumulate(grads, *x, d);
            }
            Op::SumAll(x) => {
                let d = Tensor::full(self.shape(*x), g.item());
                self.accumulate(grads, *x, d);
            }
            Op::GaussianLogProb { x, mu, log_var } => {
                let (xv, mv, lv) = (self.value(*x), self.value(*mu), self.value(*log_var));
                let n = xv.numel();
                let mut dmu = vec![0.0; n];
                let mut dlv = vec![0.0; n];
                for i in 0..n {
                    let prec = (-lv.data()[i]).exp();
                    let diff = xv.data()[i] - mv.data()[i];
                    dmu[i] = g.data()[i] * diff * prec;
                    dlv[i] = g.data()[i] * -0.5 * (1.0 - diff * diff * prec);
                }
                let shape = xv.shape().to_vec();
                if self.wants(*x) {
                    let dx: Vec<f64> = dmu.iter().map(|v| -v).collect();
                    self.accumulate(grads, *x, Tensor::new(shape.clone(), dx).expect("shape"));
                }
                self.accumulate(grads, *mu, Tensor::new(shape.clone(), dmu).expect("shape"));
                self.accumulate(grads, *log_var, Tensor::new(shape, dlv).expect("shape"));
            }
            Op::KlStdNormal { mu, log_var } => {
                let gs = g.item();
                let dmu = self.value(*mu).scale(gs);
                let dlv = self.value(*log_var).map(|l| 0.5 * (l.exp() - 1.0) * gs);
                self.accumulate(grads, *mu, dmu);
                self.accumulate(grads, *log_var, dlv);
            }
            Op::Lstm(node) => self.backprop_lstm(node, out.data(), g, grads),
        }
    }

    fn backprop_lstm(&self, node: &LstmNode, h: &[f64], g: &Tensor, grads: &mut [Option<Tensor>]) {
        let xv = self.value(node.x);
        let wi = self.value(node.input_kernel);
        let wr = self.value(node.recurrent_kernel);
        let (bsz, w, inp) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let g4 = wi.shape()[1];
        let units = g4 / 4;
        let wrd = wr.data();

        let mut dgates = vec![0.0; bsz * w * g4];
        let mut dwr = vec![0.0; units * g4];
        let mut dh_next = vec![0.0; bsz * units];
        let mut dc_next = vec![0.0; bsz * units];
        for step in (0..w).rev() {
            let t = if node.reverse { w - 1 - step } else { step };
            let prev = (step > 0).then(|| if node.reverse { t + 1 } else { t - 1 });
            for bi in 0..bsz {
                let row = (bi * w + t) * units;
                let acts = &node.gates[(bi * w + t) * g4..(bi * w + t + 1) * g4];
                let dg = &mut dgates[(bi * w + t) * g4..(bi * w + t + 1) * g4];
                for j in 0..units {
                    let (ig, fg, cg, og) = (acts[j], acts[units + j], acts[2 * units + j], acts[3 * units + j]);
                    let tc = node.tanh_cells[row + j];
                    let dh = g.data()[row + j] + dh_next[bi * units + j];
                    let dc = dh * og * (1.0 - tc * tc) + dc_next[bi * units + j];
                    let cp = prev.map_or(0.0, |p| node.cells[(bi * w + p) * units + j]);
                    dg[j] = dc * cg * ig * (1.0 - ig);
                    dg[units + j] = dc * cp * fg * (1.0 - fg);
                    dg[2 * units + j] = dc * ig * (1.0 - cg * cg);
                    dg[3 * units + j] = dh * tc * og * (1.0 - og);
                    dc_next[bi * units + j] = dc * fg;
                }
            }
            dh_next.fill(0.0);
            if let Some(p) = prev {
                kernels::gemm_strided(
                    bsz,
                    g4,
                    units,
                    &dgates[t * g4..],
                    (w * g4, 1),
                    wrd,
                    (1, g4),
                    &mut dh_next,
                    units,
                );
                kernels::gemm_strided(
                    units,
                    bsz,
                    g4,
                    &h[p * units..],
                    (1, w * units),
                    &dgates[t * g4..],
                    (w * g4, 1),
                    &mut dwr,
                    g4,
                );
            }
        }

        if self.wants(node.x) {
            let mut dx = Tensor::zeros(xv.shape());
            kernels::gemm_nt(&dgates, wi.data(), dx.data_mut(), bsz * w, g4, inp);
            self.accumulate(grads, node.x, dx);
        }
        if self.wants(node.input_kernel) {
            let mut dwi = Tensor::zeros(wi.shape());
            kernels::gemm_tn(xv.data(), &dgates, dwi.data_mut(), bsz * w, inp, g4);
            self.accumulate(grads, node.input_kernel, dwi);
        }
        if self.wants(node.recurrent_kernel) {
            self.accumulate(grads, node.recurrent_kernel, Tensor::new(vec![units, g4], dwr).expect("shape"));
        }
        if self.wants(node.bias) {
            let mut db = vec![0.0; g4];
            for row in dgates.chunks(g4) {
                for (o, v) in db.iter_mut().zip(row) {
                    *o += v;
                }
            }
            self.accumulate(grads, node.bias, Tensor::new(vec![g4], db).expect("shape"));
        }
    }
}
