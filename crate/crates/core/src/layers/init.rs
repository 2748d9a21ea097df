//! Weight initializers.
//!
//! Projections use Glorot-uniform scaling, recurrent kernels an orthogonal
//! basis, biases zero except the LSTM forget gate which starts at 1.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{BiLstmParams, DenseParams, LstmParams, MultiHeadAttentionParams};
use crate::numerics::Tensor;

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], limit: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, &[fan_in, fan_out], limit)
}

/// `[rows, cols]` matrix whose shorter side is orthonormal.
pub fn orthogonal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    // Gram-Schmidt over the shorter side of a Gaussian matrix.
    let (n, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut t = Tensor::zeros(&[rows, cols]);
    for (i, b) in basis.iter().enumerate() {
        for (j, &v) in b.iter().enumerate() {
            if rows <= cols {
                t.set(&[i, j], v);
            } else {
                t.set(&[j, i], v);
            }
        }
    }
    t
}

pub fn dense<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize) -> DenseParams {
    DenseParams {
        weight: glorot_uniform(rng, input, output),
        bias: Tensor::zeros(&[output]),
    }
}

pub fn lstm<R: Rng + ?Sized>(rng: &mut R, input: usize, units: usize) -> LstmParams {
    let mut bias = Tensor::zeros(&[4 * units]);
    bias.data_mut()[units..2 * units].fill(1.0);
    LstmParams {
        input_kernel: glorot_uniform(rng, input, 4 * units),
        recurrent_kernel: orthogonal(rng, units, 4 * units),
        bias,
    }
}

pub fn bilstm<R: Rng + ?Sized>(rng: &mut R, input: usize, units: usize) -> BiLstmParams {
    BiLstmParams {
        forward: lstm(rng, input, units),
        backward: lstm(rng, input, units),
    }
}

pub fn attention<R: Rng + ?Sized>(
    rng: &mut R,
    query_dim: usize,
    value_dim: usize,
    heads: usize,
    key_dim: usize,
    output_dim: usize,
) -> MultiHeadAttentionParams {
    let mut query = Vec::with_capacity(heads);
    let mut key = Vec::with_capacity(heads);
    let mut value = Vec::with_capacity(heads);
    for _ in 0..heads {
        query.push(glorot_uniform(rng, query_dim, key_dim));
        key.push(glorot_uniform(rng, query_dim, key_dim));
        value.push(glorot_uniform(rng, value_dim, key_dim));
    }
    MultiHeadAttentionParams {
        query,
        key,
        value,
        output: glorot_uniform(rng, heads * key_dim, output_dim),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = stream(1, Stream::Init);
        let q = orthogonal(&mut rng, 4, 16);
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = q.row(i).iter().zip(q.row(j)).map(|(a, b)| a * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forget_bias_is_one() {
        let mut rng = stream(1, Stream::Init);
        let p = lstm(&mut rng, 3, 2);
        assert_eq!(p.bias.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
