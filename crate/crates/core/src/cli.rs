//! Command-line front end: a TOML run configuration and one function per
//! subcommand. Every run directory artefact is plain CSV, JSON or the
//! binary checkpoint format.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::datapipe::{
    autocorr_window_size, read_dataset, write_dataset, generate_dataset, DatasetPlan, NormStats, SynthConfig,
    DEFAULT_ACF_THRESHOLD,
};
use crate::detect::{DetectionReport, ReportSummary, ReverseMode};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_curve_csv, EvalSummary};
use crate::model::{default_key_dim, Mavae, MavaeConfig};
use crate::pipeline::{detect_and_evaluate, fit, prepare, DetectConfig, ModeResult, Prepared};
use crate::training::{write_history, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Directory holding the manifest and sequence files.
    pub dir: PathBuf,
    pub seed: u64,
    pub synth: SynthConfig,
    pub plan: DatasetPlan,
}

/// Model shape; the window and key width are derived when absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub window: Option<usize>,
    pub acf_threshold: f64,
    pub latent_dim: usize,
    pub heads: usize,
    pub key_dim: Option<usize>,
    pub outer_units: usize,
    pub inner_units: usize,
    pub no_attention: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let full = MavaeConfig::full_size(1, 1);
        ModelSection {
            window: None,
            acf_threshold: DEFAULT_ACF_THRESHOLD,
            latent_dim: full.latent_dim,
            heads: full.heads,
            key_dim: None,
            outer_units: full.outer_units,
            inner_units: full.inner_units,
            no_attention: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Where checkpoints, histories, reports and metrics go.
    pub run_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection { run_dir: PathBuf::from("runs/default") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_data")]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub detect: DetectConfig,
    #[serde(default)]
    pub paths: PathsSection,
}

fn default_data() -> DataSection {
    DataSection { dir: PathBuf::from("data"), ..Default::default() }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: default_data(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            detect: DetectConfig::default(),
            paths: PathsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Path(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synth.validate()?;
        self.train.validate()?;
        self.detect.validate()?;
        if !(self.model.acf_threshold > 0.0 && self.model.acf_threshold < 1.0) {
            return Err(Error::config("acf_threshold must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Concrete model shape for data with `input_dim` channels.
    pub fn model_config(&self, window: usize, input_dim: usize) -> Result<MavaeConfig> {
        let m = &self.model;
        let cfg = MavaeConfig {
            window,
            input_dim,
            latent_dim: m.latent_dim,
            heads: m.heads,
            key_dim: m.key_dim.unwrap_or_else(|| default_key_dim(input_dim, m.heads)),
            outer_units: m.outer_units,
            inner_units: m.inner_units,
            no_attention: m.no_attention,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "mavae", version, about = "Attention-VAE anomaly detection for multivariate time series")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "mavae.toml")]
    pub config: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset into the data directory.
    Gen {
        /// Replace an existing dataset.
        #[arg(long)]
        force: bool,
    },
    /// Train a model and store it in the run directory.
    Train {
        #[arg(long)]
        no_attention: bool,
    },
    /// Set the threshold on validation data and label the test sequences.
    Detect {
        #[arg(long)]
        reverse_mode: Option<ReverseMode>,
    },
    /// Sequence-level metrics from the last detection.
    Eval,
    /// Train with and without attention and compare.
    Ablate,
    /// Evaluate every reverse-window mode with the trained model.
    CompareReverse,
}

pub const MODEL_FILE: &str = "model.ckpt";
pub const NORM_FILE: &str = "norm.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const EVAL_FILE: &str = "eval.json";
pub const CURVE_FILE: &str = "pr_curve.csv";

fn path_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Path(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| path_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| path_err(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| path_err(dir, e))
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(&cli.config)?;
    match cli.command {
        Command::Gen { force } => gen(&cfg, force),
        Command::Train { no_attention } => {
            let mut cfg = cfg;
            cfg.model.no_attention |= no_attention;
            train_run(&cfg, &cfg.paths.run_dir).map(|_| ())
        }
        Command::Detect { reverse_mode } => {
            let mode = reverse_mode.unwrap_or(cfg.detect.reverse_mode);
            detect_run(&cfg, &cfg.paths.run_dir, mode).map(|_| ())
        }
        Command::Eval => eval_run(&cfg, &cfg.paths.run_dir).map(|_| ()),
        Command::Ablate => ablate(&cfg).map(|_| ()),
        Command::CompareReverse => compare_reverse(&cfg).map(|_| ()),
    }
}

pub fn gen(cfg: &RunConfig, force: bool) -> Result<()> {
    let ds = generate_dataset(&cfg.data.synth, &cfg.data.plan, cfg.data.seed)?;
    let manifest = write_dataset(&ds, &cfg.data.dir, force)?;
    log::info!(
        "wrote {} train, {} validation and {} test sequences to {}",
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len(),
        cfg.data.dir.display()
    );
    Ok(())
}

fn load_prepared(cfg: &RunConfig) -> Result<Prepared> {
    prepare(&read_dataset(&cfg.data.dir)?)
}

/// Prepared data normalised with the statistics stored in `run_dir`.
fn load_prepared_with(cfg: &RunConfig, run_dir: &Path) -> Result<Prepared> {
    let norm: NormStats = read_json(&run_dir.join(NORM_FILE))?;
    let ds = read_dataset(&cfg.data.dir)?;
    let apply = |seqs: &[crate::datapipe::Sequence]| seqs.iter().map(|s| norm.apply(s)).collect::<Result<Vec<_>>>();
    Ok(Prepared {
        train: apply(&ds.train)?,
        val: apply(&ds.val)?,
        test: apply(&ds.test)?,
        norm,
    })
}

/// Trains into `run_dir` and returns the trained model.
pub fn train_run(cfg: &RunConfig, run_dir: &Path) -> Result<Mavae> {
    let prepared = load_prepared(cfg)?;
    let first = prepared.train.first().ok_or_else(|| Error::data("dataset has no training sequences"))?;
    let window = match cfg.model.window {
        Some(w) => w,
        None => {
            let w = autocorr_window_size(&prepared.train, cfg.model.acf_threshold)?;
            log::info!("window size {w} from autocorrelation");
            w
        }
    };
    let model_cfg = cfg.model_config(window, first.channels())?;
    let shift = cfg.detect.train_shift;
    let outcome = fit(&prepared, &model_cfg, &cfg.train, shift)?;
    ensure_dir(run_dir)?;
    outcome.model.save(run_dir.join(MODEL_FILE))?;
    write_json(&run_dir.join(NORM_FILE), &prepared.norm)?;
    write_history(run_dir.join(HISTORY_FILE), &outcome.history)?;
    log::info!(
        "best epoch {} of {}; model saved to {}",
        outcome.best_epoch,
        outcome.history.len(),
        run_dir.display()
    );
    Ok(outcome.model)
}

/// Written by `detect`, read by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detections {
    pub reverse_mode: ReverseMode,
    pub tau: f64,
    pub validation_peaks: Vec<f64>,
    pub test: Vec<ReportSummary>,
}

fn write_reports(run_dir: &Path, reports: &[DetectionReport], channels: &[String]) -> Result<()> {
    let dir = run_dir.join("reports");
    ensure_dir(&dir)?;
    for r in reports {
        r.write_csv(channels, dir.join(format!("{}.csv", r.id)))?;
        write_json(&dir.join(format!("{}.json", r.id)), &r.summary())?;
    }
    Ok(())
}

fn detections_of(result: &ModeResult) -> Detections {
    Detections {
        reverse_mode: result.mode,
        tau: result.tau,
        validation_peaks: result.val_peaks.clone(),
        test: result.reports.iter().map(DetectionReport::summary).collect(),
    }
}

pub fn detect_run(cfg: &RunConfig, run_dir: &Path, mode: ReverseMode) -> Result<ModeResult> {
    let model = Mavae::load(run_dir.join(MODEL_FILE))?;
    let prepared = load_prepared_with(cfg, run_dir)?;
    let mut results = detect_and_evaluate(&model, &prepared, &[mode], cfg.detect.threshold_step)?;
    let result = results.pop().expect("one mode");
    let channels = prepared.test.first().map(|s| s.channel_names.clone()).unwrap_or_default();
    write_reports(run_dir, &result.reports, &channels)?;
    write_json(&run_dir.join(DETECTIONS_FILE), &detections_of(&result))?;
    log::info!(
        "tau {:.3}; flagged {} of {} test sequences",
        result.tau,
        result.reports.iter().filter(|r| r.label).count(),
        result.reports.len()
    );
    Ok(result)
}

pub fn eval_run(cfg: &RunConfig, run_dir: &Path) -> Result<EvalSummary> {
    let det: Detections = read_json(&run_dir.join(DETECTIONS_FILE))?;
    let manifest = crate::datapipe::io::read_manifest(&cfg.data.dir)?;
    if manifest.test.len() != det.test.len() {
        return Err(Error::data("detections do not match the dataset's test split"));
    }
    let mut truth = Vec::with_capacity(det.test.len());
    for (entry, summary) in manifest.test.iter().zip(&det.test) {
        if entry.id != summary.id {
            return Err(Error::data(format!("detection for {} paired with {}", summary.id, entry.id)));
        }
        truth.push(entry.label.is_anomaly());
    }
    let peaks: Vec<f64> = det.test.iter().map(|s| s.peak).collect();
    let (summary, curve) = evaluate(&peaks, &truth, det.tau, cfg.detect.threshold_step)?;
    write_json(&run_dir.join(EVAL_FILE), &summary)?;
    write_curve_csv(&curve, run_dir.join(CURVE_FILE))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub attention: EvalSummary,
    pub no_attention: EvalSummary,
}

pub fn ablate(cfg: &RunConfig) -> Result<Ablation> {
    let mut summaries = Vec::with_capacity(2);
    for (no_attention, sub) in [(false, "ma"), (true, "no_ma")] {
        let mut c = cfg.clone();
        c.model.no_attention = no_attention;
        let dir = cfg.paths.run_dir.join(sub);
        train_run(&c, &dir)?;
        detect_run(&c, &dir, c.detect.reverse_mode)?;
        summaries.push(eval_run(&c, &dir)?);
    }
    let no_attention = summaries.pop().expect("two runs");
    let ablation = Ablation {
        attention: summaries.pop().expect("two runs"),
        no_attention,
    };
    log::info!(
        "AUPRC with attention {:.3}, without {:.3}",
        ablation.attention.auprc,
        ablation.no_attention.auprc
    );
    write_json(&cfg.paths.run_dir.join("ablation.json"), &ablation)?;
    Ok(ablation)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReverseComparison {
    pub mode: ReverseMode,
    pub summary: EvalSummary,
}

pub fn compare_reverse(cfg: &RunConfig) -> Result<Vec<ReverseComparison>> {
    let run_dir = &cfg.paths.run_dir;
    let model = Mavae::load(run_dir.join(MODEL_FILE))?;
    let prepared = load_prepared_with(cfg, run_dir)?;
    let results = detect_and_evaluate(&model, &prepared, &ReverseMode::ALL, cfg.detect.threshold_step)?;
    let out: Vec<ReverseComparison> = results
        .into_iter()
        .map(|r| ReverseComparison { mode: r.mode, summary: r.summary })
        .collect();
    for r in &out {
        println!("{:>5}: F1 {:.3}  AUPRC {:.3}", r.mode.as_str(), r.summary.f1, r.summary.auprc);
    }
    write_json(&run_dir.join("reverse_modes.json"), &out)?;
    Ok(out)
}
