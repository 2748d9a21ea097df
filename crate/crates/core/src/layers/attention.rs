use super::{bind, MapFn};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Per-head query/key/value projections plus the shared output projection.
///
/// Queries and keys are projected from the same source while values come
/// from a different one, so the query and key kernels share an input width
/// that may differ from the value kernels'. Projections carry no bias.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttentionParams<T = Tensor> {
    /// `h` kernels of shape `[d_query, d_K]`
    pub query: Vec<T>,
    /// `h` kernels of shape `[d_query, d_K]`
    pub key: Vec<T>,
    /// `h` kernels of shape `[d_value, d_K]`
    pub value: Vec<T>,
    /// `[h·d_K, d_out]`
    pub output: T,
}

impl<T> MultiHeadAttentionParams<T> {
    pub fn heads(&self) -> usize {
        self.query.len()
    }

    pub fn map<U>(&self, prefix: &str, f: &mut MapFn<'_, T, U>) -> MultiHeadAttentionParams<U> {
        let per_head = |kind: &str, ts: &[T], f: &mut MapFn<'_, T, U>| -> Vec<U> {
            ts.iter()
                .enumerate()
                .map(|(i, t)| f(&format!("{prefix}.head{i}.{kind}"), t))
                .collect()
        };
        MultiHeadAttentionParams {
            query: per_head("query", &self.query, f),
            key: per_head("key", &self.key, f),
            value: per_head("value", &self.value, f),
            output: f(&format!("{prefix}.output"), &self.output),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        for (kind, ts) in [("query", &self.query), ("key", &self.key), ("value", &self.value)] {
            for (i, t) in ts.iter().enumerate() {
                f(format!("{prefix}.head{i}.{kind}"), t);
            }
        }
        f(format!("{prefix}.output"), &self.output);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut T)) {
        for (kind, ts) in [
            ("query", &mut self.query),
            ("key", &mut self.key),
            ("value", &mut self.value),
        ] {
            for (i, t) in ts.iter_mut().enumerate() {
                f(format!("{prefix}.head{i}.{kind}"), t);
            }
        }
        f(format!("{prefix}.output"), &mut self.output);
    }
}

impl MultiHeadAttentionParams {
    pub fn key_dim(&self) -> usize {
        self.query.first().map_or(0, |t| t.shape()[1])
    }
}

impl MultiHeadAttentionParams<Var> {
    /// Attention over `[B, W, d]` sources; returns the projected context
    /// `[B, W, d_out]` and each head's `[B, W, W]` score matrix.
    pub fn forward_with_weights(
        &self,
        g: &mut Graph,
        query_src: Var,
        key_src: Var,
        value_src: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let (qs, ks, vs) = (g.shape(query_src), g.shape(key_src), g.shape(value_src));
        if qs != ks {
            return Err(Error::dim("multi_head_attention", qs, ks));
        }
        if vs.len() != 3 || qs.len() != 3 || vs[..2] != qs[..2] {
            return Err(Error::dim("multi_head_attention", qs, vs));
        }
        let first = *self
            .query
            .first()
            .ok_or_else(|| Error::contract("attention needs at least one head"))?;
        let key_dim = g.shape(first)[1];
        if key_dim == 0 {
            return Err(Error::contract("attention key width must be at least 1"));
        }
        let inv_sqrt = 1.0 / (key_dim as f64).sqrt();
        let mut contexts = Vec::with_capacity(self.heads());
        let mut weights = Vec::with_capacity(self.heads());
        for ((&wq, &wk), &wv) in self.query.iter().zip(&self.key).zip(&self.value) {
            let q = g.matmul(query_src, wq)?;
            let k = g.matmul(key_src, wk)?;
            let v = g.matmul(value_src, wv)?;
            let logits = g.batch_matmul(q, k, true)?;
            let logits = g.scale(logits, inv_sqrt);
            let a = g.softmax(logits);
            contexts.push(g.batch_matmul(a, v, false)?);
            weights.push(a);
        }
        let cat = if contexts.len() == 1 {
            contexts[0]
        } else {
            g.concat(&contexts)?
        };
        Ok((g.matmul(cat, self.output)?, weights))
    }

    pub fn forward(&self, g: &mut Graph, query_src: Var, key_src: Var, value_src: Var) -> Result<Var> {
        Ok(self.forward_with_weights(g, query_src, key_src, value_src)?.0)
    }
}

/// Attention over single windows: `[W, d_query]` query/key sources and a
/// `[W, d_value]` value source, giving `[W, d_out]`.
pub fn multi_head_attention(
    params: &MultiHeadAttentionParams,
    query_src: &Tensor,
    key_src: &Tensor,
    value_src: &Tensor,
) -> Result<Tensor> {
    let (out, _) = attention_eager(params, query_src, key_src, value_src)?;
    Ok(out)
}

/// Per-head `[W, W]` attention score matrices for a single window.
pub fn attention_scores(
    params: &MultiHeadAttentionParams,
    query_src: &Tensor,
    key_src: &Tensor,
    value_src: &Tensor,
) -> Result<Vec<Tensor>> {
    Ok(attention_eager(params, query_src, key_src, value_src)?.1)
}

fn attention_eager(
    params: &MultiHeadAttentionParams,
    query_src: &Tensor,
    key_src: &Tensor,
    value_src: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    for t in [query_src, key_src, value_src] {
        if t.rank() != 2 {
            return Err(Error::dim("multi_head_attention", t.shape(), &[0, 0]));
        }
    }
    let lift = |t: &Tensor| t.reshape(&[1, t.shape()[0], t.shape()[1]]);
    let mut g = Graph::new();
    let p = params.map("attention", &mut bind(&mut g, false));
    let q = g.constant(lift(query_src)?);
    let k = g.constant(lift(key_src)?);
    let v = g.constant(lift(value_src)?);
    let (out, weights) = p.forward_with_weights(&mut g, q, k, v)?;
    let o = g.value(out);
    let w = query_src.shape()[0];
    let scores = weights
        .iter()
        .map(|&a| g.value(a).reshape(&[w, w]))
        .collect::<Result<Vec<_>>>()?;
    Ok((o.reshape(&[w, o.last_dim()])?, scores))
}
