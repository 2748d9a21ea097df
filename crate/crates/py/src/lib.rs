//! Python bindings. Matrices cross the boundary as lists of rows.

use std::str::FromStr;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use mavae_core::datapipe::{synth, AnomalyKind, Label};
use mavae_core::detect::{self, ReverseMode};
use mavae_core::eval;
use mavae_core::model::{default_key_dim, MavaeConfig};
use mavae_core::rng::{stream, Stream};
use mavae_core::training::{self, TrainConfig};
use mavae_core::{Error, Tensor};

type Rows = Vec<Vec<f64>>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Path(_) | Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn tensor(rows: &Rows) -> PyResult<Tensor> {
    Tensor::from_rows(rows).map_err(py_err)
}

fn mode(name: &str) -> PyResult<ReverseMode> {
    ReverseMode::from_str(name).map_err(py_err)
}

/// MA-VAE model with fixed architecture.
#[pyclass(name = "Mavae", module = "mavae")]
struct PyMavae {
    inner: mavae_core::model::Mavae,
}

#[pymethods]
impl PyMavae {
    #[new]
    #[pyo3(signature = (window, input_dim, latent_dim=16, heads=8, key_dim=None, outer_units=512, inner_units=256, no_attention=false, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        window: usize,
        input_dim: usize,
        latent_dim: usize,
        heads: usize,
        key_dim: Option<usize>,
        outer_units: usize,
        inner_units: usize,
        no_attention: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let config = MavaeConfig {
            window,
            input_dim,
            latent_dim,
            heads,
            key_dim: key_dim.unwrap_or_else(|| default_key_dim(input_dim, heads)),
            outer_units,
            inner_units,
            no_attention,
        };
        let inner = mavae_core::model::Mavae::new(config, &mut stream(seed, Stream::Init)).map_err(py_err)?;
        Ok(PyMavae { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyMavae {
            inner: mavae_core::model::Mavae::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn window(&self) -> usize {
        self.inner.config.window
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.config.input_dim
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params.num_values()
    }

    /// Latent mean and log-variance of one `[W, d_X]` window.
    fn encode(&self, window: Rows) -> PyResult<(Rows, Rows)> {
        let d = self.inner.encode(&tensor(&window)?).map_err(py_err)?;
        Ok((d.mu.rows(), d.log_var.rows()))
    }

    /// Output mean and log-variance in inference mode (latent mean, no sampling).
    fn reconstruct(&self, window: Rows) -> PyResult<(Rows, Rows)> {
        let d = self.inner.forward_infer(&tensor(&window)?).map_err(py_err)?;
        Ok((d.mu.rows(), d.log_var.rows()))
    }

    /// Per-head `[W, W]` attention matrices, or `None` without attention.
    fn attention_scores(&self, window: Rows) -> PyResult<Option<Vec<Rows>>> {
        let scores = self.inner.attention_scores(&tensor(&window)?).map_err(py_err)?;
        Ok(scores.map(|heads| heads.iter().map(Tensor::rows).collect()))
    }

    /// Per-step anomaly scores of a `[T, d_X]` sequence with the reassembled
    /// output mean and standard deviation.
    #[pyo3(signature = (sequence, reverse_mode="mean"))]
    fn score(&self, py: Python<'_>, sequence: Rows, reverse_mode: &str) -> PyResult<(Vec<f64>, Rows, Rows)> {
        let data = tensor(&sequence)?;
        let mode = mode(reverse_mode)?;
        let model = &self.inner;
        let report = py
            .detach(|| {
                let outputs = detect::infer_windows(model, &data)?;
                detect::report_from("", &data, &outputs, f64::INFINITY, mode)
            })
            .map_err(py_err)?;
        Ok((report.scores, report.mu.rows(), report.sigma.rows()))
    }
}

/// Trains from the model's current weights; returns the best model and the
/// per-epoch history as dicts.
#[pyfunction]
#[pyo3(signature = (model, train_windows, val_windows, batch_size=512, max_epochs=10000, patience=250, learning_rate=1e-3, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    model: &PyMavae,
    train_windows: Vec<Rows>,
    val_windows: Vec<Rows>,
    batch_size: usize,
    max_epochs: usize,
    patience: usize,
    learning_rate: f64,
    seed: u64,
) -> PyResult<(PyMavae, Vec<Py<PyAny>>)> {
    let tr = train_windows.iter().map(tensor).collect::<PyResult<Vec<_>>>()?;
    let va = val_windows.iter().map(tensor).collect::<PyResult<Vec<_>>>()?;
    let cfg = TrainConfig {
        batch_size,
        max_epochs,
        patience,
        learning_rate,
        seed,
        ..Default::default()
    };
    let inner = &model.inner;
    let outcome = py.detach(|| training::train(inner, &tr, &va, &cfg)).map_err(py_err)?;
    let history = outcome
        .history
        .iter()
        .map(|r| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("recon", r.recon)?;
            d.set_item("kl", r.kl)?;
            d.set_item("beta", r.beta)?;
            d.set_item("val_recon", r.val_recon)?;
            d.set_item("best", r.best_flag)?;
            Ok(d.into_any().unbind())
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((PyMavae { inner: outcome.model }, history))
}

/// β for a 0-based epoch under the default annealing schedule parameters
/// unless overridden.
#[pyfunction]
#[pyo3(signature = (epoch, grace_epochs=25, beta_low=1e-8, beta_high=1e-2, cycle_length=25))]
fn beta_at_epoch(epoch: usize, grace_epochs: usize, beta_low: f64, beta_high: f64, cycle_length: usize) -> PyResult<f64> {
    let cfg = TrainConfig {
        grace_epochs,
        beta_low,
        beta_high,
        cycle_length,
        ..Default::default()
    };
    cfg.validate().map_err(py_err)?;
    Ok(training::beta_at_epoch(epoch, &cfg))
}

/// Reassembles per-window means and variances into per-step mean and std.
#[pyfunction]
#[pyo3(signature = (means, variances, length, reverse_mode="mean"))]
fn reverse_window(means: Vec<Rows>, variances: Vec<Rows>, length: usize, reverse_mode: &str) -> PyResult<(Rows, Rows)> {
    let m = means.iter().map(tensor).collect::<PyResult<Vec<_>>>()?;
    let v = variances.iter().map(tensor).collect::<PyResult<Vec<_>>>()?;
    let (mu, sigma) = detect::reverse_window(&m, &v, length, mode(reverse_mode)?).map_err(py_err)?;
    Ok((mu.rows(), sigma.rows()))
}

/// One synthetic drive cycle: channel names and the `[T, 13]` matrix.
#[pyfunction]
#[pyo3(signature = (seed, index, anomaly=None, duration_s=300.0))]
fn generate_cycle(seed: u64, index: u64, anomaly: Option<&str>, duration_s: f64) -> PyResult<(Vec<String>, Rows)> {
    let label = match anomaly {
        None => Label::Normal,
        Some(k) => Label::Anomaly(AnomalyKind::from_str(k).map_err(py_err)?),
    };
    let cfg = synth::SynthConfig {
        duration_s,
        ..Default::default()
    };
    let seq = synth::generate_cycle(&cfg, seed, index, "cycle", label).map_err(py_err)?;
    Ok((seq.channel_names, seq.data.rows()))
}

/// `(precision, recall, f1)` from confusion counts.
#[pyfunction]
fn precision_recall_f1(tp: usize, fp: usize, fn_: usize, tn: usize) -> (f64, f64, f64) {
    let p = eval::precision_recall_f1(&eval::ConfusionCounts { tp, fp, fn_, tn });
    (p.precision, p.recall, p.f1)
}

/// Precision-recall curve as `(threshold, precision, recall)` triples and its area.
#[pyfunction]
#[pyo3(signature = (peaks, truth, step=0.1))]
fn pr_curve(peaks: Vec<f64>, truth: Vec<bool>, step: f64) -> PyResult<(Vec<(f64, f64, f64)>, f64)> {
    let curve = eval::pr_curve(&peaks, &truth, step).map_err(py_err)?;
    let area = eval::auprc(&curve);
    Ok((curve.points.iter().map(|p| (p.threshold, p.precision, p.recall)).collect(), area))
}

#[pymodule]
fn mavae(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMavae>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(beta_at_epoch, m)?)?;
    m.add_function(wrap_pyfunction!(reverse_window, m)?)?;
    m.add_function(wrap_pyfunction!(generate_cycle, m)?)?;
    m.add_function(wrap_pyfunction!(precision_recall_f1, m)?)?;
    m.add_function(wrap_pyfunction!(pr_curve, m)?)?;
    m.add("CHANNELS", synth::channel_names())?;
    Ok(())
}
