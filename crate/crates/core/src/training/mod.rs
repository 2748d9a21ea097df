//! Negative-ELBO loss, cyclical KL annealing, early stopping and the
//! training loop.

mod optimizer;

pub use optimizer::{AmsGrad, AmsGradConfig};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_graph, ForwardVars, LatentDistribution, Mavae, OutputDistribution};
use crate::numerics::prob::{gaussian_log_prob, kl_diag_gaussian_to_std_normal};
use crate::numerics::{Graph, Tensor, Var};
use crate::rng::{stream, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Standard deviation of the Gaussian corruption added to encoder inputs.
    pub noise_std: f64,
    pub grace_epochs: usize,
    pub beta_low: f64,
    pub beta_high: f64,
    pub cycle_length: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = AmsGradConfig::default();
        TrainConfig {
            batch_size: 512,
            noise_std: 0.01,
            grace_epochs: 25,
            beta_low: 1e-8,
            beta_high: 1e-2,
            cycle_length: 25,
            patience: 250,
            max_epochs: 10_000,
            seed: 0,
            learning_rate: opt.learning_rate,
            beta1: opt.beta1,
            beta2: opt.beta2,
            epsilon: opt.epsilon,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.batch_size >= 1, "batch_size must be at least 1"),
            (self.noise_std >= 0.0, "noise_std must be non-negative"),
            (self.grace_epochs >= 1, "grace_epochs must be at least 1"),
            (self.beta_low > 0.0, "beta_low must be positive"),
            (self.beta_high >= self.beta_low, "beta_high must not be below beta_low"),
            (self.cycle_length >= 1, "cycle_length must be at least 1"),
            (self.patience >= 1, "patience must be at least 1"),
            (self.max_epochs >= 1, "max_epochs must be at least 1"),
            (self.learning_rate > 0.0, "learning_rate must be positive"),
            ((0.0..1.0).contains(&self.beta1), "beta1 must lie in [0, 1)"),
            ((0.0..1.0).contains(&self.beta2), "beta2 must lie in [0, 1)"),
            (self.epsilon > 0.0, "epsilon must be positive"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::config(*msg)),
            None => Ok(()),
        }
    }

    pub fn optimizer(&self) -> AmsGradConfig {
        AmsGradConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// KL weight for a 0-indexed epoch.
///
/// Ramps linearly from 0 to `beta_low` over the grace period, then repeats
/// cycles that climb linearly from `beta_low` on the first epoch of a cycle
/// to `beta_high` on its last.
pub fn beta_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.grace_epochs {
        return cfg.beta_low * (epoch as f64 / cfg.grace_epochs as f64);
    }
    if cfg.cycle_length == 1 {
        return cfg.beta_high;
    }
    let phase = (epoch - cfg.grace_epochs) % cfg.cycle_length;
    let t = phase as f64 / (cfg.cycle_length - 1) as f64;
    cfg.beta_low * (1.0 - t) + cfg.beta_high * t
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Loss of one window: negative log-likelihood of `x`, KL of the latent to
/// the prior, and `recon + beta · kl`.
pub fn loss(latent: &LatentDistribution, output: &OutputDistribution, x: &Tensor, beta: f64) -> Result<LossTerms> {
    let recon = gaussian_log_prob(x, &output.mu, &output.log_var)?.sum() * -1.0;
    let kl = kl_diag_gaussian_to_std_normal(&latent.mu, &latent.log_var)?;
    Ok(LossTerms {
        total: recon + beta * kl,
        recon,
        kl,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
}

/// Batch loss in the graph; both terms are means over the `B` windows of `x`.
pub fn loss_graph(g: &mut Graph, f: &ForwardVars, x: Var, beta: f64) -> Result<LossVars> {
    let b = g.shape(x)[0] as f64;
    let log_p = g.gaussian_log_prob(x, f.mu_x, f.log_var_x)?;
    let log_p = g.sum_all(log_p);
    let recon = g.scale(log_p, -1.0 / b);
    let kl = g.kl_std_normal(f.mu_z, f.log_var_z)?;
    let kl = g.scale(kl, 1.0 / b);
    let weighted = g.scale(kl, beta);
    let total = g.add(recon, weighted)?;
    Ok(LossVars { total, recon, kl })
}

/// Tracks the best monitored value and how long ago it was seen.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: Option<usize>,
    pub wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            wait: 0,
        }
    }

    /// Records an epoch's value; returns whether it is a new best.
    pub fn update(&mut self, epoch: usize, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.best_epoch = Some(epoch);
            self.wait = 0;
            true
        } else {
            self.wait += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.wait >= self.patience
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub beta: f64,
    pub val_recon: f64,
    pub best_flag: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation reconstruction term.
    pub model: Mavae,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

fn gaussian_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Mean reconstruction term over `windows` with latent sampling, using the
/// same epsilon draws on every call.
pub fn validation_recon(model: &Mavae, windows: &[Tensor], cfg: &TrainConfig) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::contract("validation set is empty"));
    }
    let mut rng = stream(cfg.seed, Stream::ValidationEpsilon);
    let (w, dz) = (model.config.window, model.config.latent_dim);
    let mut total = 0.0;
    for chunk in windows.chunks(cfg.batch_size) {
        let mut g = Graph::new();
        let p = model.bind(&mut g, false);
        let x = g.constant(Tensor::stack(chunk)?);
        let eps = g.constant(gaussian_tensor(&mut rng, &[chunk.len(), w, dz], 1.0));
        let f = forward_graph(&mut g, &p, x, Some(eps))?;
        let l = loss_graph(&mut g, &f, x, 0.0)?;
        total += g.value(l.recon).item() * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    model: Mavae,
    opt: AmsGrad,
    noise: rand_chacha::ChaCha8Rng,
    epsilon: rand_chacha::ChaCha8Rng,
}

impl Trainer<'_> {
    fn batch(&mut self, windows: &[&Tensor], beta: f64) -> Result<LossTerms> {
        let (w, dz) = (self.model.config.window, self.model.config.latent_dim);
        let b = windows.len();
        let clean = Tensor::stack(&windows.iter().map(|&t| t.clone()).collect::<Vec<_>>())?;
        let noisy = clean.add(&gaussian_tensor(&mut self.noise, clean.shape(), self.cfg.noise_std))?;
        let eps = gaussian_tensor(&mut self.epsilon, &[b, w, dz], 1.0);

        let mut g = Graph::new();
        let p = self.model.bind(&mut g, true);
        let x_in = g.constant(noisy);
        let x_target = g.constant(clean);
        let eps = g.constant(eps);
        let f = forward_graph(&mut g, &p, x_in, Some(eps))?;
        let l = loss_graph(&mut g, &f, x_target, beta)?;
        let grads = g.backward(l.total)?;
        let grads: Vec<Tensor> = p
            .leaves()
            .into_iter()
            .map(|&v| grads.get_or_zeros(v, g.shape(v)))
            .collect();
        self.opt.step(&mut self.model.params.leaves_mut(), &grads)?;
        Ok(LossTerms {
            total: g.value(l.total).item(),
            recon: g.value(l.recon).item(),
            kl: g.value(l.kl).item(),
        })
    }
}

/// Trains from `model`'s current weights and returns the best weights seen.
///
/// Each epoch shuffles the training windows, corrupts encoder inputs with
/// Gaussian noise (targets stay clean), takes one optimizer step per batch
/// and then scores the validation windows. Training stops after `patience`
/// epochs without a new best validation reconstruction term, or at
/// `max_epochs`.
pub fn train(model: &Mavae, train_windows: &[Tensor], val_windows: &[Tensor], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_windows.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    if val_windows.is_empty() {
        return Err(Error::contract("validation set is empty"));
    }
    let mut trainer = Trainer {
        cfg,
        model: model.clone(),
        opt: AmsGrad::new(cfg.optimizer(), model.params.leaves()),
        noise: stream(cfg.seed, Stream::Noise),
        epsilon: stream(cfg.seed, Stream::Epsilon),
    };
    let mut shuffle = stream(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut history = Vec::new();

    for epoch in 0..cfg.max_epochs {
        let beta = beta_at_epoch(epoch, cfg);
        order.shuffle(&mut shuffle);
        let (mut recon, mut kl) = (0.0, 0.0);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Tensor> = idx.iter().map(|&i| &train_windows[i]).collect();
            let terms = trainer.batch(&batch, beta)?;
            recon += terms.recon * idx.len() as f64;
            kl += terms.kl * idx.len() as f64;
        }
        let n = train_windows.len() as f64;
        let val_recon = validation_recon(&trainer.model, val_windows, cfg)?;
        let improved = stopper.update(epoch, val_recon);
        if improved {
            best = trainer.model.clone();
        }
        let record = EpochRecord {
            epoch,
            recon: recon / n,
            kl: kl / n,
            beta,
            val_recon,
            best_flag: improved,
        };
        log::info!(
            "epoch {epoch}: recon {:.4} kl {:.4} beta {beta:.3e} val_recon {val_recon:.4}{}",
            record.recon,
            record.kl,
            if improved { " *" } else { "" }
        );
        history.push(record);
        if !val_recon.is_finite() || !record.recon.is_finite() {
            log::warn!("non-finite loss at epoch {epoch}, stopping");
            break;
        }
        if stopper.should_stop() {
            break;
        }
    }
    let best_epoch = stopper
        .best_epoch
        .ok_or_else(|| Error::data("no epoch produced a finite validation loss"))?;
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
    })
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Path(format!("{}: {e}", path.display())))?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::init::uniform;
    use crate::model::MavaeConfig;
    use crate::numerics::prob::LOG_2PI;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn beta_schedule_points() {
        let c = cfg();
        assert_eq!(beta_at_epoch(0, &c), 0.0);
        assert_eq!(beta_at_epoch(25, &c), 1e-8);
        assert_eq!(beta_at_epoch(49, &c), 1e-2);
        assert_eq!(beta_at_epoch(50, &c), 1e-8);
        assert_eq!(beta_at_epoch(74, &c), 1e-2);
        assert!((beta_at_epoch(24, &c) - 0.96e-8).abs() < 1e-22);
    }

    #[test]
    fn beta_schedule_is_periodic_and_monotone_within_cycles() {
        let c = cfg();
        for e in 25..200 {
            assert_eq!(beta_at_epoch(e, &c), beta_at_epoch(e + 25, &c));
        }
        for e in 0..24 {
            assert!(beta_at_epoch(e + 1, &c) > beta_at_epoch(e, &c));
        }
        for e in 25..49 {
            assert!(beta_at_epoch(e + 1, &c) > beta_at_epoch(e, &c));
        }
    }

    fn dists(w: usize, dx: usize, dz: usize) -> (LatentDistribution, OutputDistribution, Tensor) {
        let x = uniform(&mut stream(1, Stream::Data), &[w, dx], 1.0);
        (
            LatentDistribution {
                mu: Tensor::zeros(&[w, dz]),
                log_var: Tensor::zeros(&[w, dz]),
            },
            OutputDistribution {
                mu: x.clone(),
                log_var: Tensor::zeros(&[w, dx]),
            },
            x,
        )
    }

    #[test]
    fn perfect_reconstruction_and_prior_latent() {
        let (lat, out, x) = dists(8, 3, 2);
        let l = loss(&lat, &out, &x, 0.0).unwrap();
        assert!((l.recon - 0.5 * 8.0 * 3.0 * LOG_2PI).abs() < 1e-12);
        assert_eq!(l.kl, 0.0);
        assert_eq!(l.total, l.recon);
    }

    #[test]
    fn loss_decomposition() {
        let (mut lat, out, x) = dists(8, 3, 2);
        lat.mu = Tensor::full(&[8, 2], 0.3);
        let l = loss(&lat, &out, &x, 0.25).unwrap();
        assert_eq!(l.total, l.recon + 0.25 * l.kl);
        assert!(l.kl > 0.0);
    }

    #[test]
    fn graph_loss_matches_eager_per_window_mean() {
        let c = MavaeConfig {
            window: 6,
            input_dim: 2,
            latent_dim: 2,
            heads: 1,
            key_dim: 2,
            outer_units: 3,
            inner_units: 2,
            no_attention: false,
        };
        let m = Mavae::new(c, &mut stream(2, Stream::Init)).unwrap();
        let mut rng = stream(2, Stream::Data);
        let xs: Vec<Tensor> = (0..3).map(|_| uniform(&mut rng, &[6, 2], 1.0)).collect();
        let eps: Vec<Tensor> = (0..3).map(|_| uniform(&mut rng, &[6, 2], 1.0)).collect();

        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let x = g.constant(Tensor::stack(&xs).unwrap());
        let e = g.constant(Tensor::stack(&eps).unwrap());
        let f = forward_graph(&mut g, &p, x, Some(e)).unwrap();
        let l = loss_graph(&mut g, &f, x, 0.5).unwrap();

        let (mut recon, mut kl) = (0.0, 0.0);
        for (xi, ei) in xs.iter().zip(&eps) {
            let (lat, out) = m.forward_train(xi, ei).unwrap();
            let t = loss(&lat, &out, xi, 0.5).unwrap();
            recon += t.recon / 3.0;
            kl += t.kl / 3.0;
        }
        assert!((g.value(l.recon).item() - recon).abs() < 1e-9);
        assert!((g.value(l.kl).item() - kl).abs() < 1e-9);
        let total = g.value(l.total).item();
        assert!((total - (g.value(l.recon).item() + 0.5 * g.value(l.kl).item())).abs() < 1e-12);
    }

    #[test]
    fn early_stopping_after_patience() {
        let mut s = EarlyStopping::new(3);
        let values = [5.0, 4.0, 4.5, 4.6, 4.7, 4.8];
        let mut stopped_at = None;
        for (e, &v) in values.iter().enumerate() {
            s.update(e, v);
            if s.should_stop() {
                stopped_at = Some(e);
                break;
            }
        }
        assert_eq!(s.best_epoch, Some(1));
        assert_eq!(stopped_at, Some(1 + 3));
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let bad = TrainConfig { patience: 0, ..cfg() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn empty_sets_are_contract_errors() {
        let c = MavaeConfig {
            window: 4,
            input_dim: 1,
            latent_dim: 1,
            heads: 1,
            key_dim: 1,
            outer_units: 2,
            inner_units: 2,
            no_attention: true,
        };
        let m = Mavae::new(c, &mut stream(0, Stream::Init)).unwrap();
        let w = vec![Tensor::zeros(&[4, 1])];
        assert!(matches!(train(&m, &[], &w, &cfg()), Err(Error::Contract(_))));
        assert!(matches!(train(&m, &w, &[], &cfg()), Err(Error::Contract(_))));
    }
}
