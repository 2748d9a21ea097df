//! Sequence-level anomaly detection.
//!
//! A sequence is cut into unit-shift windows, each window is reconstructed
//! in inference mode, the per-window output distributions are reassembled
//! into one distribution per time step, and the anomaly score is the
//! negative log-likelihood of the observation under it, summed over
//! channels. A sequence is flagged when its peak score exceeds `τ`, the
//! largest score seen on validation data.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datapipe::{windows_of, Sequence};
use crate::error::{Error, Result};
use crate::model::Mavae;
use crate::numerics::prob::LOG_2PI;
use crate::numerics::Tensor;

/// Smallest output standard deviation used for scoring.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// How overlapping window outputs are combined per time step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReverseMode {
    /// Average every window covering the step (variances are averaged, then
    /// converted to a standard deviation).
    #[default]
    Mean,
    /// Each window's first step; the last window supplies the tail.
    First,
    /// Each window's last step; the first window supplies the head.
    Last,
}

impl ReverseMode {
    pub const ALL: [ReverseMode; 3] = [ReverseMode::Mean, ReverseMode::First, ReverseMode::Last];

    pub fn as_str(self) -> &'static str {
        match self {
            ReverseMode::Mean => "mean",
            ReverseMode::First => "first",
            ReverseMode::Last => "last",
        }
    }
}

impl fmt::Display for ReverseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReverseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReverseMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown reverse mode {s:?} (expected mean, first or last)")))
    }
}

/// Reassembles `T − W + 1` unit-shift window outputs (`[W, d]` means and
/// variances) into `T × d` means and standard deviations.
pub fn reverse_window(mus: &[Tensor], vars: &[Tensor], t: usize, mode: ReverseMode) -> Result<(Tensor, Tensor)> {
    let first = mus.first().ok_or_else(|| Error::contract("no windows to reassemble"))?;
    if first.rank() != 2 {
        return Err(Error::dim("reverse_window", first.shape(), &[0, 0]));
    }
    let (w, d) = (first.shape()[0], first.shape()[1]);
    if t < w || mus.len() != t - w + 1 {
        return Err(Error::contract(format!(
            "reverse_window needs T − W + 1 = {} windows for T = {t}, W = {w}; got {}",
            (t + 1).saturating_sub(w),
            mus.len()
        )));
    }
    if vars.len() != mus.len() {
        return Err(Error::contract("window means and variances differ in count"));
    }
    for (m, v) in mus.iter().zip(vars) {
        if m.shape() != [w, d] || v.shape() != [w, d] {
            return Err(Error::dim("reverse_window", m.shape(), v.shape()));
        }
    }
    let n = mus.len();
    let mut mu = Tensor::zeros(&[t, d]);
    let mut var = Tensor::zeros(&[t, d]);
    match mode {
        ReverseMode::Mean => {
            let mut count = vec![0usize; t];
            for (i, (m, v)) in mus.iter().zip(vars).enumerate() {
                for k in 0..w {
                    count[i + k] += 1;
                    for c in 0..d {
                        mu.data_mut()[(i + k) * d + c] += m.data()[k * d + c];
                        var.data_mut()[(i + k) * d + c] += v.data()[k * d + c];
                    }
                }
            }
            for (step, &cnt) in count.iter().enumerate() {
                for c in 0..d {
                    mu.data_mut()[step * d + c] /= cnt as f64;
                    var.data_mut()[step * d + c] /= cnt as f64;
                }
            }
        }
        ReverseMode::First | ReverseMode::Last => {
            for step in 0..t {
                let (i, k) = match mode {
                    ReverseMode::First if step < n => (step, 0),
                    ReverseMode::First => (n - 1, step - (n - 1)),
                    _ if step >= w - 1 => (step + 1 - w, w - 1),
                    _ => (0, step),
                };
                mu.data_mut()[step * d..(step + 1) * d].copy_from_slice(&mus[i].data()[k * d..(k + 1) * d]);
                var.data_mut()[step * d..(step + 1) * d].copy_from_slice(&vars[i].data()[k * d..(k + 1) * d]);
            }
        }
    }
    Ok((mu, var.map(f64::sqrt)))
}

/// Per-step anomaly score `s_t = −Σ_c log N(x_tc; μ_tc, σ_tc²)`.
pub fn score(x: &Tensor, mu: &Tensor, sigma: &Tensor) -> Result<Vec<f64>> {
    if x.shape() != mu.shape() || x.shape() != sigma.shape() || x.rank() != 2 {
        return Err(Error::dim("score", x.shape(), mu.shape()));
    }
    let d = x.shape()[1];
    let mut floored = 0usize;
    let out = x
        .data()
        .chunks(d)
        .zip(mu.data().chunks(d))
        .zip(sigma.data().chunks(d))
        .map(|((xr, mr), sr)| {
            xr.iter()
                .zip(mr)
                .zip(sr)
                .map(|((&xv, &m), &s)| {
                    let s = if s < SIGMA_FLOOR {
                        floored += 1;
                        SIGMA_FLOOR
                    } else {
                        s
                    };
                    let z = (xv - m) / s;
                    0.5 * (LOG_2PI + z * z) + s.ln()
                })
                .sum()
        })
        .collect();
    if floored > 0 {
        log::warn!("{floored} output standard deviations floored at {SIGMA_FLOOR}");
    }
    Ok(out)
}

/// Inference-mode outputs for every unit-shift window of a sequence.
#[derive(Clone, Debug)]
pub struct WindowOutputs {
    pub len: usize,
    pub mus: Vec<Tensor>,
    pub vars: Vec<Tensor>,
}

pub fn infer_windows(model: &Mavae, data: &Tensor) -> Result<WindowOutputs> {
    let w = model.config.window;
    let t = data.shape().first().copied().unwrap_or(0);
    if t < w {
        return Err(Error::contract(format!("sequence of {t} steps is shorter than the window ({w})")));
    }
    let windows = windows_of(data, w, 1)?;
    let outs = model.forward_infer_batch(&windows)?;
    let (mus, vars) = outs.into_iter().map(|o| (o.mu, o.log_var.map(f64::exp))).unzip();
    Ok(WindowOutputs { len: t, mus, vars })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionReport {
    pub id: String,
    pub scores: Vec<f64>,
    pub tau: f64,
    pub label: bool,
    pub peak: f64,
    pub peak_time: usize,
    pub mu: Tensor,
    pub sigma: Tensor,
}

/// Builds the report for one sequence from precomputed window outputs.
pub fn report_from(id: &str, data: &Tensor, outputs: &WindowOutputs, tau: f64, mode: ReverseMode) -> Result<DetectionReport> {
    let (mu, sigma) = reverse_window(&outputs.mus, &outputs.vars, outputs.len, mode)?;
    let scores = score(data, &mu, &sigma)?;
    let (peak_time, peak) = scores
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, s)| if s > best.1 { (i, s) } else { best });
    Ok(DetectionReport {
        id: id.to_string(),
        label: peak > tau,
        scores,
        tau,
        peak,
        peak_time,
        mu,
        sigma,
    })
}

pub fn detect(model: &Mavae, seq: &Sequence, tau: f64, mode: ReverseMode) -> Result<DetectionReport> {
    let outputs = infer_windows(model, &seq.data).map_err(|e| match e {
        Error::Contract(msg) => Error::contract(format!("{}: {msg}", seq.id)),
        other => other,
    })?;
    report_from(&seq.id, &seq.data, &outputs, tau, mode)
}

/// Largest anomaly score over every validation sequence and time step.
pub fn estimate_threshold(model: &Mavae, validation: &[Sequence], mode: ReverseMode) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::contract("threshold estimation needs validation sequences"));
    }
    validation.iter().try_fold(f64::NEG_INFINITY, |tau, seq| {
        Ok(tau.max(detect(model, seq, f64::INFINITY, mode)?.peak))
    })
}

/// Per-sequence summary written next to the score trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub id: String,
    pub label: bool,
    pub tau: f64,
    pub peak: f64,
    pub peak_time: usize,
}

impl DetectionReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            id: self.id.clone(),
            label: self.label,
            tau: self.tau,
            peak: self.peak,
            peak_time: self.peak_time,
        }
    }

    /// CSV of `t, s, mu_<channel>…, sigma_<channel>…`.
    pub fn write_csv(&self, channel_names: &[String], path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let d = self.mu.shape()[1];
        if channel_names.len() != d {
            return Err(Error::contract("channel names do not match the report width"));
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Path(format!("{}: {e}", path.display())))?;
        let mut header = vec!["t".to_string(), "s".to_string()];
        header.extend(channel_names.iter().map(|n| format!("mu_{n}")));
        header.extend(channel_names.iter().map(|n| format!("sigma_{n}")));
        w.write_record(&header)?;
        for (t, s) in self.scores.iter().enumerate() {
            let mut rec = vec![t.to_string(), s.to_string()];
            rec.extend(self.mu.row(t).iter().map(f64::to_string));
            rec.extend(self.sigma.row(t).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
