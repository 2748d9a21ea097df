use super::{bind, MapFn};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// One LSTM direction. Gate columns are laid out as (input, forget, cell, output),
/// with sigmoid gates and tanh cell/output activations.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T = Tensor> {
    /// `[in, 4·units]`
    pub input_kernel: T,
    /// `[units, 4·units]`
    pub recurrent_kernel: T,
    /// `[4·units]`
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams<T = Tensor> {
    pub forward: LstmParams<T>,
    pub backward: LstmParams<T>,
}

impl<T> LstmParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut MapFn<'_, T, U>) -> LstmParams<U> {
        LstmParams {
            input_kernel: f(&format!("{prefix}.input_kernel"), &self.input_kernel),
            recurrent_kernel: f(&format!("{prefix}.recurrent_kernel"), &self.recurrent_kernel),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(format!("{prefix}.input_kernel"), &self.input_kernel);
        f(format!("{prefix}.recurrent_kernel"), &self.recurrent_kernel);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut T)) {
        f(format!("{prefix}.input_kernel"), &mut self.input_kernel);
        f(format!("{prefix}.recurrent_kernel"), &mut self.recurrent_kernel);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

impl<T> BiLstmParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut MapFn<'_, T, U>) -> BiLstmParams<U> {
        BiLstmParams {
            forward: self.forward.map(&format!("{prefix}.forward"), f),
            backward: self.backward.map(&format!("{prefix}.backward"), f),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        self.forward.visit(&format!("{prefix}.forward"), f);
        self.backward.visit(&format!("{prefix}.backward"), f);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut T)) {
        self.forward.visit_mut(&format!("{prefix}.forward"), f);
        self.backward.visit_mut(&format!("{prefix}.backward"), f);
    }
}

impl LstmParams {
    pub fn zeros(input: usize, units: usize) -> Self {
        LstmParams {
            input_kernel: Tensor::zeros(&[input, 4 * units]),
            recurrent_kernel: Tensor::zeros(&[units, 4 * units]),
            bias: Tensor::zeros(&[4 * units]),
        }
    }

    pub fn units(&self) -> usize {
        self.recurrent_kernel.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.input_kernel.shape()[0]
    }
}

impl BiLstmParams {
    pub fn zeros(input: usize, units: usize) -> Self {
        BiLstmParams {
            forward: LstmParams::zeros(input, units),
            backward: LstmParams::zeros(input, units),
        }
    }

    pub fn units(&self) -> usize {
        self.forward.units()
    }
}

impl LstmParams<Var> {
    /// A single cell update from `[B, in]` input and `[B, units]` states,
    /// assembled from graph primitives.
    pub fn step(&self, g: &mut Graph, x_t: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        let units = g.shape(self.recurrent_kernel)[0];
        let xi = g.matmul(x_t, self.input_kernel)?;
        let hr = g.matmul(h_prev, self.recurrent_kernel)?;
        let pre = g.add(xi, hr)?;
        let pre = g.add_bias(pre, self.bias)?;
        let i_pre = g.slice_last(pre, 0, units)?;
        let f_pre = g.slice_last(pre, units, units)?;
        let c_pre = g.slice_last(pre, 2 * units, units)?;
        let o_pre = g.slice_last(pre, 3 * units, units)?;
        let i = g.sigmoid(i_pre);
        let f = g.sigmoid(f_pre);
        let cand = g.tanh(c_pre);
        let o = g.sigmoid(o_pre);
        let keep = g.mul(f, c_prev)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }

    /// Full-sequence recurrence over `[B, W, in]` using the fused graph node.
    pub fn sequence(&self, g: &mut Graph, x: Var, reverse: bool) -> Result<Var> {
        g.lstm(x, self.input_kernel, self.recurrent_kernel, self.bias, reverse)
    }
}

impl BiLstmParams<Var> {
    /// `[B, W, in]` → `[B, W, 2·units]` (forward states first), or the final
    /// state of each direction `[B, 2·units]` when `return_sequences` is off.
    pub fn forward(&self, g: &mut Graph, x: Var, return_sequences: bool) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim("bilstm", &s, &[0, 0, 0]));
        }
        if s[1] == 0 {
            return Err(Error::contract("bilstm over an empty window"));
        }
        let fwd = self.forward.sequence(g, x, false)?;
        let bwd = self.backward.sequence(g, x, true)?;
        if return_sequences {
            g.concat(&[fwd, bwd])
        } else {
            let last = g.select_step(fwd, s[1] - 1)?;
            let first = g.select_step(bwd, 0)?;
            g.concat(&[last, first])
        }
    }
}

/// One cell update on stored weights: `x_t [in]`, `h_prev`, `c_prev [units]`.
pub fn lstm_step(params: &LstmParams, x_t: &Tensor, h_prev: &Tensor, c_prev: &Tensor) -> Result<(Tensor, Tensor)> {
    let units = params.units();
    if x_t.numel() != params.input_dim() {
        return Err(Error::dim("lstm_step", x_t.shape(), params.input_kernel.shape()));
    }
    if h_prev.numel() != units || c_prev.numel() != units {
        return Err(Error::dim("lstm_step", h_prev.shape(), params.recurrent_kernel.shape()));
    }
    let mut g = Graph::new();
    let p = params.map("lstm", &mut bind(&mut g, false));
    let x = g.constant(x_t.reshape(&[1, params.input_dim()])?);
    let h = g.constant(h_prev.reshape(&[1, units])?);
    let c = g.constant(c_prev.reshape(&[1, units])?);
    let (h, c) = p.step(&mut g, x, h, c)?;
    Ok((g.value(h).reshape(&[units])?, g.value(c).reshape(&[units])?))
}

/// Bidirectional pass over one window `x [W, in]`.
pub fn bilstm(params: &BiLstmParams, x: &Tensor, return_sequences: bool) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::dim("bilstm", x.shape(), &[0, params.forward.input_dim()]));
    }
    if x.shape()[0] == 0 {
        return Err(Error::contract("bilstm over an empty window"));
    }
    let mut g = Graph::new();
    let p = params.map("bilstm", &mut bind(&mut g, false));
    let (w, d) = (x.shape()[0], x.shape()[1]);
    let xv = g.constant(x.reshape(&[1, w, d])?);
    let out = p.forward(&mut g, xv, return_sequences)?;
    let v = g.value(out);
    if return_sequences {
        v.reshape(&[w, v.last_dim()])
    } else {
        v.reshape(&[v.last_dim()])
    }
}
