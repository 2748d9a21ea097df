//! Dense projections, LSTM cells, bidirectional LSTMs and multi-head attention.
//!
//! Parameter structs are generic over their leaf type: `Tensor` for stored
//! weights, [`Var`] once the weights are bound into a [`Graph`]. The same
//! traversal (`map`, `visit`, `visit_mut`) gives stable parameter names for
//! serialization and a fixed order for the optimizer.

mod attention;
pub mod init;
mod lstm;

pub use attention::{attention_scores, multi_head_attention, MultiHeadAttentionParams};
pub use lstm::{bilstm, lstm_step, BiLstmParams, LstmParams};

use crate::error::Result;
use crate::numerics::{Graph, Tensor, Var};

/// Closure used when rebuilding a parameter tree with different leaves.
pub type MapFn<'f, T, U> = dyn FnMut(&str, &T) -> U + 'f;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T = Tensor> {
    /// `[in, out]`
    pub weight: T,
    /// `[out]`
    pub bias: T,
}

impl<T> DenseParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut MapFn<'_, T, U>) -> DenseParams<U> {
        DenseParams {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut T)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

impl DenseParams {
    pub fn zeros(input: usize, output: usize) -> Self {
        DenseParams {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl DenseParams<Var> {
    /// `x · weight + bias` over the trailing axis.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let xw = g.matmul(x, self.weight)?;
        g.add_bias(xw, self.bias)
    }
}

/// Binds stored weights into a graph, as trainable leaves or as constants.
pub fn bind<'g>(g: &'g mut Graph, trainable: bool) -> impl FnMut(&str, &Tensor) -> Var + 'g {
    move |_, t| {
        if trainable {
            g.param(t.clone())
        } else {
            g.constant(t.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_forward_and_names() {
        let p = DenseParams {
            weight: Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap(),
            bias: Tensor::new(vec![2], vec![0.5, -0.5]).unwrap(),
        };
        let mut names = Vec::new();
        p.visit("head", &mut |n, _| names.push(n));
        assert_eq!(names, ["head.weight", "head.bias"]);

        let mut g = Graph::new();
        let pv = p.map("head", &mut bind(&mut g, false));
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap());
        let y = pv.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).data(), &[1.5, 1.5]);
    }
}
