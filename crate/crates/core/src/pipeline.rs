//! End-to-end runs: normalise, window, train, set the threshold on
//! validation data and score the test sequences.

use serde::{Deserialize, Serialize};

use crate::datapipe::{make_windows, Dataset, NormStats, Sequence};
use crate::detect::{infer_windows, report_from, DetectionReport, ReverseMode};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSummary, PrCurve};
use crate::model::{Mavae, MavaeConfig};
use crate::numerics::Tensor;
use crate::rng::{stream, Stream};
use crate::training::{train, TrainConfig, TrainOutcome};

/// Normalised splits plus the statistics used.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub norm: NormStats,
    pub train: Vec<Sequence>,
    pub val: Vec<Sequence>,
    pub test: Vec<Sequence>,
}

/// Fits normalisation on the training split and applies it everywhere.
pub fn prepare(dataset: &Dataset) -> Result<Prepared> {
    let norm = NormStats::fit(&dataset.train)?;
    let apply = |seqs: &[Sequence]| seqs.iter().map(|s| norm.apply(s)).collect::<Result<Vec<_>>>();
    Ok(Prepared {
        train: apply(&dataset.train)?,
        val: apply(&dataset.val)?,
        test: apply(&dataset.test)?,
        norm,
    })
}

pub fn windows_for(sequences: &[Sequence], window: usize, shift: usize) -> Result<Vec<Tensor>> {
    let mut out = Vec::new();
    for s in sequences {
        out.extend(make_windows(s, window, shift)?.windows);
    }
    Ok(out)
}

/// Initialises and trains a model on prepared data.
pub fn fit(prepared: &Prepared, model: &MavaeConfig, train_cfg: &TrainConfig, shift: usize) -> Result<TrainOutcome> {
    model.validate()?;
    let train_windows = windows_for(&prepared.train, model.window, shift)?;
    let val_windows = windows_for(&prepared.val, model.window, shift)?;
    log::info!(
        "training on {} windows, validating on {} (W = {}, shift = {shift})",
        train_windows.len(),
        val_windows.len(),
        model.window
    );
    let init = Mavae::new(model.clone(), &mut stream(train_cfg.seed, Stream::Init))?;
    train(&init, &train_windows, &val_windows, train_cfg)
}

/// Reports for every sequence under each requested mode, all with
/// `τ = +∞` (no sequence flagged). Indexed `[mode][sequence]`.
pub fn score_all(model: &Mavae, sequences: &[Sequence], modes: &[ReverseMode]) -> Result<Vec<Vec<DetectionReport>>> {
    let mut out = vec![Vec::with_capacity(sequences.len()); modes.len()];
    for seq in sequences {
        let outputs = infer_windows(model, &seq.data)?;
        for (m, &mode) in modes.iter().enumerate() {
            out[m].push(report_from(&seq.id, &seq.data, &outputs, f64::INFINITY, mode)?);
        }
        log::debug!("scored {}", seq.id);
    }
    Ok(out)
}

/// Outcome of thresholding and evaluating one reverse mode.
#[derive(Clone, Debug)]
pub struct ModeResult {
    pub mode: ReverseMode,
    pub tau: f64,
    pub val_peaks: Vec<f64>,
    /// Test reports labelled against `tau`.
    pub reports: Vec<DetectionReport>,
    pub summary: EvalSummary,
    pub curve: PrCurve,
}

impl ModeResult {
    /// Validation sequences whose peak exceeds `tau`; zero by construction.
    pub fn val_flagged(&self) -> usize {
        self.val_peaks.iter().filter(|&&p| p > self.tau).count()
    }
}

/// Sets `τ` from validation reports and evaluates test reports.
pub fn threshold_and_evaluate(
    mode: ReverseMode,
    val: &[DetectionReport],
    test: Vec<DetectionReport>,
    truth: &[bool],
    step: f64,
) -> Result<ModeResult> {
    if val.is_empty() {
        return Err(Error::contract("threshold estimation needs validation sequences"));
    }
    let val_peaks: Vec<f64> = val.iter().map(|r| r.peak).collect();
    let tau = val_peaks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let reports: Vec<DetectionReport> = test
        .into_iter()
        .map(|mut r| {
            r.tau = tau;
            r.label = r.peak > tau;
            r
        })
        .collect();
    let peaks: Vec<f64> = reports.iter().map(|r| r.peak).collect();
    let (summary, curve) = evaluate(&peaks, truth, tau, step)?;
    Ok(ModeResult {
        mode,
        tau,
        val_peaks,
        reports,
        summary,
        curve,
    })
}

/// Scores validation and test sequences and evaluates each mode.
pub fn detect_and_evaluate(model: &Mavae, prepared: &Prepared, modes: &[ReverseMode], step: f64) -> Result<Vec<ModeResult>> {
    let truth: Vec<bool> = prepared.test.iter().map(|s| s.label.is_anomaly()).collect();
    let val = score_all(model, &prepared.val, modes)?;
    let test = score_all(model, &prepared.test, modes)?;
    modes
        .iter()
        .zip(val.iter().zip(test))
        .map(|(&mode, (v, t))| threshold_and_evaluate(mode, v, t, &truth, step))
        .collect()
}

/// Knobs for a complete run beyond the model and optimiser settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub reverse_mode: ReverseMode,
    /// Window shift used to cut training and validation windows.
    pub train_shift: usize,
    /// Spacing of the precision-recall threshold grid.
    pub threshold_step: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            reverse_mode: ReverseMode::Mean,
            train_shift: 1,
            threshold_step: 0.1,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_shift == 0 {
            return Err(Error::config("train_shift must be positive"));
        }
        if !(self.threshold_step > 0.0 && self.threshold_step.is_finite()) {
            return Err(Error::config("threshold_step must be positive"));
        }
        Ok(())
    }
}
