//! Signal preparation and the synthetic test-bench generator.
//!
//! Raw channels arrive at their native rates and are brought onto a common
//! grid ([`resample`]), z-scored with training statistics ([`NormStats`]),
//! sized by autocorrelation ([`autocorr_window_size`]) and cut into
//! windows ([`make_windows`]).

mod autocorr;
pub mod io;
mod norm;
mod resample;
pub mod synth;
mod windows;

pub use autocorr::{autocorr_window_size, autocorrelation, longest_lag, window_for_lag, DEFAULT_ACF_THRESHOLD};
pub use norm::{NormStats, STD_FLOOR};
pub use resample::{butterworth_lowpass, resample, Biquad};
pub use windows::{chronological_split, make_windows, windows_of, WindowSet};
pub use io::{read_dataset, write_dataset, Dataset, Manifest};
pub use synth::{generate_dataset, DatasetPlan, SynthConfig};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One measured channel at its native sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RawChannel {
    pub name: String,
    /// Samples per second.
    pub rate: f64,
    pub values: Vec<f64>,
}

impl RawChannel {
    pub fn new(name: impl Into<String>, rate: f64, values: Vec<f64>) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::data(format!("sample rate must be positive, got {rate}")));
        }
        if values.len() < 2 {
            return Err(Error::data("a channel needs at least two samples"));
        }
        Ok(RawChannel {
            name: name.into(),
            rate,
            values,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Speed computed with a wrong virtual wheel radius.
    WheelDiameter,
    /// Driving mode switched from comfort to sport.
    SportMode,
    /// Regenerative braking disabled.
    NoRecuperation,
    /// Battery replaced by a constant-voltage simulator.
    BatterySimulator,
    /// Reduced cooling capacity from some point in the cycle.
    ReducedCooling,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 5] = [
        AnomalyKind::WheelDiameter,
        AnomalyKind::SportMode,
        AnomalyKind::NoRecuperation,
        AnomalyKind::BatterySimulator,
        AnomalyKind::ReducedCooling,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::WheelDiameter => "wheel_diameter",
            AnomalyKind::SportMode => "sport_mode",
            AnomalyKind::NoRecuperation => "no_recuperation",
            AnomalyKind::BatterySimulator => "battery_simulator",
            AnomalyKind::ReducedCooling => "reduced_cooling",
        }
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnomalyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown anomaly type {s:?}")))
    }
}

/// Ground truth of a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Anomaly(AnomalyKind),
}

impl Label {
    pub fn is_anomaly(self) -> bool {
        matches!(self, Label::Anomaly(_))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomaly(k) => k.as_str(),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "normal" {
            Ok(Label::Normal)
        } else {
            s.parse().map(Label::Anomaly)
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A measurement on the common grid: `data` is `[T, d_X]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub label: Label,
    pub rate: f64,
    pub channel_names: Vec<String>,
    pub data: Tensor,
}

impl Sequence {
    pub fn new(id: impl Into<String>, label: Label, rate: f64, channel_names: Vec<String>, data: Tensor) -> Result<Self> {
        let seq = Sequence {
            id: id.into(),
            label,
            rate,
            channel_names,
            data,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.rank() != 2 {
            return Err(Error::data(format!("sequence {} is not a T×d matrix", self.id)));
        }
        if self.len() < 2 {
            return Err(Error::data(format!("sequence {} has fewer than two steps", self.id)));
        }
        if self.channel_names.len() != self.channels() {
            return Err(Error::data(format!(
                "sequence {} has {} channel names for {} channels",
                self.id,
                self.channel_names.len(),
                self.channels()
            )));
        }
        if !(self.rate > 0.0) {
            return Err(Error::data(format!("sequence {} has non-positive rate", self.id)));
        }
        if !self.data.is_finite() {
            return Err(Error::data(format!("sequence {} contains non-finite values", self.id)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    /// Values of one channel over time.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.data().iter().skip(c).step_by(self.channels()).copied().collect()
    }

    pub fn with_data(&self, data: Tensor) -> Sequence {
        Sequence {
            data,
            ..self.clone()
        }
    }
}

/// Builds a sequence from raw channels by resampling each onto `rate`.
/// Channels are truncated to the shortest resampled length.
pub fn assemble(id: impl Into<String>, label: Label, channels: &[RawChannel], rate: f64) -> Result<Sequence> {
    if channels.is_empty() {
        return Err(Error::data("no channels to assemble"));
    }
    let columns = channels
        .iter()
        .map(|c| resample(c, rate))
        .collect::<Result<Vec<_>>>()?;
    let t = columns.iter().map(Vec::len).min().unwrap_or(0);
    let d = columns.len();
    let mut data = Vec::with_capacity(t * d);
    for i in 0..t {
        data.extend(columns.iter().map(|col| col[i]));
    }
    Sequence::new(
        id,
        label,
        rate,
        channels.iter().map(|c| c.name.clone()).collect(),
        Tensor::new(vec![t, d], data)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_parse_and_print() {
        for k in AnomalyKind::ALL {
            assert_eq!(k.as_str().parse::<AnomalyKind>().unwrap(), k);
            assert_eq!(Label::Anomaly(k).to_string().parse::<Label>().unwrap(), Label::Anomaly(k));
        }
        assert_eq!("normal".parse::<Label>().unwrap(), Label::Normal);
        assert!(matches!("flat_tyre".parse::<Label>(), Err(Error::Config(_))));
    }

    #[test]
    fn raw_channel_invariants() {
        assert!(RawChannel::new("a", 0.0, vec![1.0, 2.0]).is_err());
        assert!(RawChannel::new("a", 1.0, vec![1.0]).is_err());
    }

    #[test]
    fn assemble_aligns_rates() {
        let a = RawChannel::new("slow", 1.0, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let b = RawChannel::new("same", 2.0, (0..7).map(f64::from).collect()).unwrap();
        let s = assemble("s", Label::Normal, &[a, b], 2.0).unwrap();
        assert_eq!(s.data.shape(), &[7, 2]);
        assert_eq!(s.channel(0), vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
        assert_eq!(s.channel(1), (0..7).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn sequence_rejects_nan() {
        let t = Tensor::new(vec![2, 1], vec![0.0, f64::NAN]).unwrap();
        assert!(Sequence::new("x", Label::Normal, 2.0, vec!["a".into()], t).is_err());
    }
}
