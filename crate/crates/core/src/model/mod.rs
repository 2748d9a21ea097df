//! The MA-VAE: BiLSTM encoder to a temporal Gaussian latent, multi-head
//! attention bridge, and BiLSTM decoder to a Gaussian output distribution.
//!
//! During training the attention value source is the sampled latent matrix
//! `Z = μ_Z + ε ⊙ σ_Z`; at inference `Z = μ_Z`. Queries and keys are both
//! projected from the input window. With `no_attention` set the latent
//! matrix feeds the decoder directly.

mod config;
pub mod io;

pub use config::{default_key_dim, MavaeConfig};

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{bind, init, BiLstmParams, DenseParams, MapFn, MultiHeadAttentionParams};
use crate::numerics::prob::{LOG_VAR_MAX, LOG_VAR_MIN};
use crate::numerics::{Graph, Tensor, Var};

/// Temporal latent parameters, each `[W, d_Z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistribution {
    pub mu: Tensor,
    pub log_var: Tensor,
}

/// Reconstruction parameters, each `[W, d_X]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputDistribution {
    pub mu: Tensor,
    pub log_var: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub encoder: Vec<BiLstmParams<T>>,
    pub latent_mu: DenseParams<T>,
    pub latent_log_var: DenseParams<T>,
    pub attention: Option<MultiHeadAttentionParams<T>>,
    pub decoder: Vec<BiLstmParams<T>>,
    pub output_mu: DenseParams<T>,
    pub output_log_var: DenseParams<T>,
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: &mut MapFn<'_, T, U>) -> ModelParams<U> {
        ModelParams {
            encoder: self
                .encoder
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("encoder.{i}"), f))
                .collect(),
            latent_mu: self.latent_mu.map("latent_mu", f),
            latent_log_var: self.latent_log_var.map("latent_log_var", f),
            attention: self.attention.as_ref().map(|a| a.map("attention", f)),
            decoder: self
                .decoder
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("decoder.{i}"), f))
                .collect(),
            output_mu: self.output_mu.map("output_mu", f),
            output_log_var: self.output_log_var.map("output_log_var", f),
        }
    }

    /// Visits every parameter in a fixed order with its dotted name.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a T)) {
        for (i, l) in self.encoder.iter().enumerate() {
            l.visit(&format!("encoder.{i}"), f);
        }
        self.latent_mu.visit("latent_mu", f);
        self.latent_log_var.visit("latent_log_var", f);
        if let Some(a) = &self.attention {
            a.visit("attention", f);
        }
        for (i, l) in self.decoder.iter().enumerate() {
            l.visit(&format!("decoder.{i}"), f);
        }
        self.output_mu.visit("output_mu", f);
        self.output_log_var.visit("output_log_var", f);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut T)) {
        for (i, l) in self.encoder.iter_mut().enumerate() {
            l.visit_mut(&format!("encoder.{i}"), f);
        }
        self.latent_mu.visit_mut("latent_mu", f);
        self.latent_log_var.visit_mut("latent_log_var", f);
        if let Some(a) = &mut self.attention {
            a.visit_mut("attention", f);
        }
        for (i, l) in self.decoder.iter_mut().enumerate() {
            l.visit_mut(&format!("decoder.{i}"), f);
        }
        self.output_mu.visit_mut("output_mu", f);
        self.output_log_var.visit_mut("output_log_var", f);
    }

    pub fn leaves(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.push(t));
        out
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        self.visit_mut(&mut |_, t| out.push(t));
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |n, _| out.push(n));
        out
    }
}

impl ModelParams {
    pub fn num_values(&self) -> usize {
        self.leaves().iter().map(|t| t.numel()).sum()
    }
}

/// Graph handles produced by one forward pass over a `[B, W, d_X]` batch.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub mu_z: Var,
    pub log_var_z: Var,
    pub z: Var,
    pub context: Var,
    pub mu_x: Var,
    pub log_var_x: Var,
    pub attention: Vec<Var>,
}

fn stack_forward(g: &mut Graph, layers: &[BiLstmParams<Var>], mut x: Var) -> Result<Var> {
    for layer in layers {
        x = layer.forward(g, x, true)?;
    }
    Ok(x)
}

fn gaussian_heads(g: &mut Graph, mu: &DenseParams<Var>, log_var: &DenseParams<Var>, h: Var) -> Result<(Var, Var)> {
    let m = mu.forward(g, h)?;
    let lv = log_var.forward(g, h)?;
    Ok((m, g.clamp(lv, LOG_VAR_MIN, LOG_VAR_MAX)))
}

/// Encoder over a batch: `[B, W, d_X]` → `(μ_Z, log σ²_Z)`, each `[B, W, d_Z]`.
pub fn encode_graph(g: &mut Graph, p: &ModelParams<Var>, x: Var) -> Result<(Var, Var)> {
    let h = stack_forward(g, &p.encoder, x)?;
    gaussian_heads(g, &p.latent_mu, &p.latent_log_var, h)
}

/// Decoder over a batch: `[B, W, d_Z]` → `(μ_X, log σ²_X)`, each `[B, W, d_X]`.
pub fn decode_graph(g: &mut Graph, p: &ModelParams<Var>, c: Var) -> Result<(Var, Var)> {
    let h = stack_forward(g, &p.decoder, c)?;
    gaussian_heads(g, &p.output_mu, &p.output_log_var, h)
}

/// `μ + ε ⊙ exp(½ log σ²)`; `epsilon` should be a constant so no gradient reaches it.
pub fn sample_graph(g: &mut Graph, mu: Var, log_var: Var, epsilon: Var) -> Result<Var> {
    let half = g.scale(log_var, 0.5);
    let sigma = g.exp(half);
    let noise = g.mul(epsilon, sigma)?;
    g.add(mu, noise)
}

/// Full pass. With `epsilon` the latent is sampled (training mode); without
/// it the latent mean is used (inference mode).
pub fn forward_graph(g: &mut Graph, p: &ModelParams<Var>, x: Var, epsilon: Option<Var>) -> Result<ForwardVars> {
    let (mu_z, log_var_z) = encode_graph(g, p, x)?;
    let z = match epsilon {
        Some(eps) => sample_graph(g, mu_z, log_var_z, eps)?,
        None => mu_z,
    };
    let (context, attention) = match &p.attention {
        Some(att) => att.forward_with_weights(g, x, x, z)?,
        None => (z, Vec::new()),
    };
    let (mu_x, log_var_x) = decode_graph(g, p, context)?;
    Ok(ForwardVars {
        mu_z,
        log_var_z,
        z,
        context,
        mu_x,
        log_var_x,
        attention,
    })
}

/// `Z = μ_Z + ε ⊙ exp(½ log σ²_Z)`.
pub fn sample_latent(dist: &LatentDistribution, epsilon: &Tensor) -> Result<Tensor> {
    let sigma = dist.log_var.map(|lv| (0.5 * lv).exp());
    dist.mu.add(&epsilon.mul(&sigma)?)
}

/// Configured architecture plus its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Mavae {
    pub config: MavaeConfig,
    pub params: ModelParams,
}

/// Windows per graph when running inference over many windows.
const INFER_CHUNK: usize = 64;

impl Mavae {
    pub fn new<R: Rng + ?Sized>(config: MavaeConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let params = ModelParams {
            encoder: vec![
                init::bilstm(rng, c.input_dim, c.outer_units),
                init::bilstm(rng, 2 * c.outer_units, c.inner_units),
            ],
            latent_mu: init::dense(rng, 2 * c.inner_units, c.latent_dim),
            latent_log_var: init::dense(rng, 2 * c.inner_units, c.latent_dim),
            attention: (!c.no_attention).then(|| {
                init::attention(rng, c.input_dim, c.latent_dim, c.heads, c.key_dim, c.attention_output_dim())
            }),
            decoder: vec![
                init::bilstm(rng, c.latent_dim, c.inner_units),
                init::bilstm(rng, 2 * c.inner_units, c.outer_units),
            ],
            output_mu: init::dense(rng, 2 * c.outer_units, c.input_dim),
            output_log_var: init::dense(rng, 2 * c.outer_units, c.input_dim),
        };
        Ok(Mavae { config, params })
    }

    /// Same architecture with every weight zero.
    pub fn zeros(config: MavaeConfig) -> Result<Self> {
        let mut rng = crate::rng::substream(0, 0);
        let mut m = Mavae::new(config, &mut rng)?;
        m.params.visit_mut(&mut |_, t| t.data_mut().fill(0.0));
        Ok(m)
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ModelParams<Var> {
        self.params.map(&mut bind(g, trainable))
    }

    /// Checks `x` is one `[W, d_X]` window and lifts it to a batch of one.
    fn lift(&self, x: &Tensor) -> Result<Tensor> {
        let (w, d) = (self.config.window, self.config.input_dim);
        if x.shape() != [w, d] {
            return Err(Error::dim("mavae input", x.shape(), &[w, d]));
        }
        x.reshape(&[1, w, d])
    }

    fn unlift(g: &Graph, v: Var) -> Result<Tensor> {
        let t = g.value(v);
        t.reshape(&t.shape()[1..])
    }

    pub fn encode(&self, x: &Tensor) -> Result<LatentDistribution> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(self.lift(x)?);
        let (mu, lv) = encode_graph(&mut g, &p, xv)?;
        Ok(LatentDistribution {
            mu: Self::unlift(&g, mu)?,
            log_var: Self::unlift(&g, lv)?,
        })
    }

    /// Decoder applied to a `[W, d_Z]` context matrix.
    pub fn decode(&self, context: &Tensor) -> Result<OutputDistribution> {
        let (w, d) = (self.config.window, self.config.latent_dim);
        if context.shape() != [w, d] {
            return Err(Error::dim("decode", context.shape(), &[w, d]));
        }
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let c = g.constant(context.reshape(&[1, w, d])?);
        let (mu, lv) = decode_graph(&mut g, &p, c)?;
        Ok(OutputDistribution {
            mu: Self::unlift(&g, mu)?,
            log_var: Self::unlift(&g, lv)?,
        })
    }

    pub fn forward_train(&self, x: &Tensor, epsilon: &Tensor) -> Result<(LatentDistribution, OutputDistribution)> {
        let (w, d) = (self.config.window, self.config.latent_dim);
        if epsilon.shape() != [w, d] {
            return Err(Error::dim("epsilon", epsilon.shape(), &[w, d]));
        }
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(self.lift(x)?);
        let eps = g.constant(epsilon.reshape(&[1, w, d])?);
        let f = forward_graph(&mut g, &p, xv, Some(eps))?;
        Ok((
            LatentDistribution {
                mu: Self::unlift(&g, f.mu_z)?,
                log_var: Self::unlift(&g, f.log_var_z)?,
            },
            OutputDistribution {
                mu: Self::unlift(&g, f.mu_x)?,
                log_var: Self::unlift(&g, f.log_var_x)?,
            },
        ))
    }

    pub fn forward_infer(&self, x: &Tensor) -> Result<OutputDistribution> {
        let mut out = self.forward_infer_batch(std::slice::from_ref(x))?;
        Ok(out.pop().expect("one window"))
    }

    /// Inference over many windows, evaluated in fixed-size chunks. Each
    /// window's result is identical to evaluating it alone.
    pub fn forward_infer_batch(&self, windows: &[Tensor]) -> Result<Vec<OutputDistribution>> {
        let (w, d) = (self.config.window, self.config.input_dim);
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(INFER_CHUNK) {
            for x in chunk {
                if x.shape() != [w, d] {
                    return Err(Error::dim("mavae input", x.shape(), &[w, d]));
                }
            }
            let mut g = Graph::new();
            let p = self.bind(&mut g, false);
            let xv = g.constant(Tensor::stack(chunk)?);
            let f = forward_graph(&mut g, &p, xv, None)?;
            let mus = g.value(f.mu_x).unstack();
            let lvs = g.value(f.log_var_x).unstack();
            out.extend(
                mus.into_iter()
                    .zip(lvs)
                    .map(|(mu, log_var)| OutputDistribution { mu, log_var }),
            );
        }
        Ok(out)
    }

    /// Inference-mode attention score matrices (one `[W, W]` per head), or
    /// `None` for the no-attention variant.
    pub fn attention_scores(&self, x: &Tensor) -> Result<Option<Vec<Tensor>>> {
        if self.params.attention.is_none() {
            return Ok(None);
        }
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(self.lift(x)?);
        let f = forward_graph(&mut g, &p, xv, None)?;
        f.attention
            .iter()
            .map(|&a| Self::unlift(&g, a))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::init::uniform;
    use crate::rng::{stream, Stream};
    use rand_distr::{Distribution, StandardNormal};

    fn tiny(no_attention: bool) -> MavaeConfig {
        MavaeConfig {
            window: 8,
            input_dim: 3,
            latent_dim: 2,
            heads: 2,
            key_dim: 2,
            outer_units: 4,
            inner_units: 3,
            no_attention,
        }
    }

    fn model(seed: u64, no_attention: bool) -> Mavae {
        Mavae::new(tiny(no_attention), &mut stream(seed, Stream::Init)).unwrap()
    }

    #[test]
    fn zero_weights_encode_to_prior() {
        let m = Mavae::zeros(tiny(false)).unwrap();
        let x = uniform(&mut stream(1, Stream::Data), &[8, 3], 2.0);
        let lat = m.encode(&x).unwrap();
        assert!(lat.mu.data().iter().all(|&v| v == 0.0));
        assert!(lat.log_var.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shapes_and_determinism() {
        let m = model(2, false);
        let x = uniform(&mut stream(2, Stream::Data), &[8, 3], 1.0);
        let a = m.encode(&x).unwrap();
        let b = m.encode(&x).unwrap();
        assert_eq!(a.mu.shape(), &[8, 2]);
        assert_eq!(a.log_var.shape(), &[8, 2]);
        assert!(a.mu.bitwise_eq(&b.mu) && a.log_var.bitwise_eq(&b.log_var));
        let out = m.forward_infer(&x).unwrap();
        assert_eq!(out.mu.shape(), &[8, 3]);
        assert_eq!(out.log_var.shape(), &[8, 3]);
    }

    #[test]
    fn wrong_input_shape_is_dimension_error() {
        let m = model(2, false);
        assert!(matches!(m.encode(&Tensor::zeros(&[7, 3])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sample_latent_cases() {
        let mu = uniform(&mut stream(3, Stream::Data), &[8, 2], 1.0);
        let lat = LatentDistribution {
            mu: mu.clone(),
            log_var: Tensor::zeros(&[8, 2]),
        };
        assert_eq!(sample_latent(&lat, &Tensor::zeros(&[8, 2])).unwrap(), mu);
        let shifted = sample_latent(&lat, &Tensor::ones(&[8, 2])).unwrap();
        assert!(shifted.max_abs_diff(&mu.map(|v| v + 1.0)) < 1e-15);
    }

    #[test]
    fn sample_mean_converges_to_mu() {
        let lat = LatentDistribution {
            mu: Tensor::scalar(0.7),
            log_var: Tensor::scalar(0.5f64.ln()),
        };
        let mut rng = stream(4, Stream::Epsilon);
        let n = 100_000;
        let mut total = 0.0;
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            total += sample_latent(&lat, &Tensor::scalar(e)).unwrap().item();
        }
        let mean = total / n as f64;
        let sigma = 0.5f64.sqrt();
        assert!((mean - 0.7).abs() < 3.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn infer_equals_train_with_zero_epsilon() {
        for no_attention in [false, true] {
            let m = model(5, no_attention);
            let x = uniform(&mut stream(5, Stream::Data), &[8, 3], 1.0);
            let (_, trained) = m.forward_train(&x, &Tensor::zeros(&[8, 2])).unwrap();
            let inferred = m.forward_infer(&x).unwrap();
            assert!(trained.mu.bitwise_eq(&inferred.mu));
            assert!(trained.log_var.bitwise_eq(&inferred.log_var));
            let again = m.forward_infer(&x).unwrap();
            assert!(again.mu.bitwise_eq(&inferred.mu));
        }
    }

    #[test]
    fn no_attention_decodes_latent_mean_directly() {
        let m = model(6, true);
        let x = uniform(&mut stream(6, Stream::Data), &[8, 3], 1.0);
        let (lat, out) = m.forward_train(&x, &Tensor::zeros(&[8, 2])).unwrap();
        let direct = m.decode(&lat.mu).unwrap();
        assert!(direct.mu.bitwise_eq(&out.mu));
        assert!(direct.log_var.bitwise_eq(&out.log_var));
    }

    #[test]
    fn attention_changes_the_output() {
        let with = model(7, false);
        let mut without = with.clone();
        without.config.no_attention = true;
        without.params.attention = None;
        let x = uniform(&mut stream(7, Stream::Data), &[8, 3], 1.0);
        let a = with.forward_infer(&x).unwrap();
        let b = without.forward_infer(&x).unwrap();
        assert!(a.mu.max_abs_diff(&b.mu) > 1e-6);
    }

    #[test]
    fn batch_inference_matches_single_windows_bitwise() {
        let m = model(8, false);
        let mut rng = stream(8, Stream::Data);
        let windows: Vec<Tensor> = (0..70).map(|_| uniform(&mut rng, &[8, 3], 1.0)).collect();
        let batch = m.forward_infer_batch(&windows).unwrap();
        for (x, b) in windows.iter().zip(&batch) {
            let single = m.forward_infer(x).unwrap();
            assert!(single.mu.bitwise_eq(&b.mu));
            assert!(single.log_var.bitwise_eq(&b.log_var));
        }
    }

    #[test]
    fn names_are_unique_and_stable() {
        let m = model(9, false);
        let names = m.params.names();
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert_eq!(names[0], "encoder.0.forward.input_kernel");
        assert!(names.contains(&"attention.head1.value".to_string()));
    }

    #[test]
    fn attention_scores_present_only_with_attention() {
        let x = uniform(&mut stream(10, Stream::Data), &[8, 3], 1.0);
        let s = model(10, false).attention_scores(&x).unwrap().unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].shape(), &[8, 8]);
        assert!(model(10, true).attention_scores(&x).unwrap().is_none());
    }
}
