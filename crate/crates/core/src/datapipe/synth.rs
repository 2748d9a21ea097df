//! Synthetic electric-drivetrain test bench.
//!
//! A longitudinal vehicle model is driven through a randomised speed
//! profile drawn from a small library of cycle templates. Drivetrain
//! torque, battery electrics, state of charge and component temperatures
//! follow from the speed trace. Each channel is "measured" at its own
//! native rate with sensor noise and then resampled onto the common grid.
//!
//! Every random draw for a cycle happens before any anomaly is applied, so
//! an anomalous cycle and its normal counterpart (same seed and index)
//! share the same profile and noise.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::io::Dataset;
use super::{resample, AnomalyKind, Label, RawChannel, Sequence};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::substream;

pub const CHANNELS: [&str; 13] = [
    "Vehicle Speed",
    "EDU Torque",
    "Left Axle Torque",
    "Right Axle Torque",
    "EDU Current",
    "EDU Voltage",
    "HVB Current",
    "HVB Voltage",
    "HVB Temperature",
    "HVB State of Charge",
    "EDU Rotor Temperature",
    "EDU Stator Temperature",
    "Inverter Temperature",
];

const SPEED: usize = 0;
const EDU_TORQUE: usize = 1;
const HVB_SOC: usize = 9;

/// Native sample rates (Hz), in channel order.
const NATIVE_RATE: [f64; 13] = [10.0, 10.0, 10.0, 10.0, 10.0, 5.0, 10.0, 5.0, 1.0, 1.0, 1.0, 1.0, 1.0];

/// Sensor noise standard deviations in channel units, in channel order.
pub const SENSOR_NOISE: [f64; 13] = [0.3, 1.5, 8.0, 8.0, 1.0, 0.3, 1.0, 0.3, 0.1, 0.02, 0.2, 0.2, 0.2];

/// Internal simulation rate (Hz).
const SIM_RATE: f64 = 10.0;

const MASS: f64 = 1800.0;
const WHEEL_RADIUS: f64 = 0.33;
const GEAR_RATIO: f64 = 9.0;
const ROLLING: f64 = 0.011;
const AERO: f64 = 0.39;
const GRAVITY: f64 = 9.81;
const EFFICIENCY: f64 = 0.9;
const MAX_TORQUE: f64 = 300.0;
const MAX_POWER: f64 = 150e3;
const MAX_REGEN_TORQUE: f64 = 120.0;
const OCV_EMPTY: f64 = 330.0;
const OCV_SPAN: f64 = 70.0;
const INTERNAL_RESISTANCE: f64 = 0.12;
const CAPACITY_AH: f64 = 60.0;
const CABLE_RESISTANCE: f64 = 0.01;
/// Bench supply setpoint, just above the full-charge open-circuit voltage.
const SIMULATOR_VOLTAGE: f64 = 395.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Simulated length of one cycle in seconds.
    pub duration_s: f64,
    /// Common output rate (Hz).
    pub rate: f64,
    /// Virtual wheel radius factor used for the speed channel in wheel-diameter anomalies.
    pub wheel_factor: f64,
    /// Thermal resistance multiplier of the cooled components after the onset of a cooling anomaly.
    pub cooling_factor: f64,
    /// Multiplier on sensor noise.
    pub noise_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            duration_s: 300.0,
            rate: 2.0,
            wheel_factor: 1.25,
            cooling_factor: 3.0,
            noise_scale: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ((60.0..=3600.0).contains(&self.duration_s), "duration_s must lie in [60, 3600]"),
            (self.rate > 0.0 && self.rate <= SIM_RATE, "rate must lie in (0, 10]"),
            (self.wheel_factor > 0.0, "wheel_factor must be positive"),
            (self.cooling_factor >= 1.0, "cooling_factor must be at least 1"),
            (self.noise_scale >= 0.0, "noise_scale must be non-negative"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::config(*msg)),
            None => Ok(()),
        }
    }
}

pub fn channel_names() -> Vec<String> {
    CHANNELS.iter().map(|s| s.to_string()).collect()
}

/// Shape of one family of driving cycles.
struct Template {
    speed_lo: f64,
    speed_hi: f64,
    segment_s: f64,
    stop_prob: f64,
    grade: f64,
}

const TEMPLATES: [Template; 8] = [
    Template { speed_lo: 15.0, speed_hi: 50.0, segment_s: 20.0, stop_prob: 0.35, grade: 0.01 },
    Template { speed_lo: 10.0, speed_hi: 35.0, segment_s: 15.0, stop_prob: 0.45, grade: 0.005 },
    Template { speed_lo: 35.0, speed_hi: 70.0, segment_s: 30.0, stop_prob: 0.15, grade: 0.02 },
    Template { speed_lo: 50.0, speed_hi: 95.0, segment_s: 40.0, stop_prob: 0.08, grade: 0.03 },
    Template { speed_lo: 90.0, speed_hi: 130.0, segment_s: 60.0, stop_prob: 0.0, grade: 0.01 },
    Template { speed_lo: 20.0, speed_hi: 110.0, segment_s: 35.0, stop_prob: 0.15, grade: 0.02 },
    Template { speed_lo: 30.0, speed_hi: 80.0, segment_s: 30.0, stop_prob: 0.1, grade: 0.05 },
    Template { speed_lo: 5.0, speed_hi: 25.0, segment_s: 12.0, stop_prob: 0.5, grade: 0.0 },
];

/// Everything random about one cycle.
struct Draws {
    /// Target speed (m/s) per simulation tick.
    target: Vec<f64>,
    grade: Vec<f64>,
    /// Smooth left/right torque split offset per tick.
    split: Vec<f64>,
    ambient: f64,
    soc0: f64,
    warm: [f64; 4],
    aux_power: f64,
    /// Unit Gaussian noise per channel at its native rate.
    noise: Vec<Vec<f64>>,
    onset_frac: f64,
}

fn draw(rng: &mut ChaCha8Rng, n: usize, duration: f64) -> Draws {
    let dt = 1.0 / SIM_RATE;
    let tpl = &TEMPLATES[rng.random_range(0..TEMPLATES.len())];
    let mut target = Vec::with_capacity(n);
    while target.len() < n {
        let stop = rng.random::<f64>() < tpl.stop_prob;
        let kmh = if stop { 0.0 } else { rng.random_range(tpl.speed_lo..=tpl.speed_hi) };
        let len_s = tpl.segment_s * rng.random_range(0.6..=1.4);
        let ticks = ((len_s / dt) as usize).max(1);
        target.extend(std::iter::repeat_n(kmh / 3.6, ticks));
    }
    target.truncate(n);

    let period = rng.random_range(60.0..=200.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let grade = (0..n)
        .map(|i| tpl.grade * (2.0 * PI * i as f64 * dt / period + phase).sin())
        .collect();

    let mut split = Vec::with_capacity(n);
    let mut s = 0.0;
    for _ in 0..n {
        s += (rng.sample::<f64, _>(StandardNormal) * 0.05 - s) * dt / 5.0;
        split.push(s);
    }

    let noise = NATIVE_RATE
        .iter()
        .map(|&r| {
            let m = (duration * r).round() as usize + 1;
            (0..m).map(|_| rng.sample(StandardNormal)).collect()
        })
        .collect();

    Draws {
        target,
        grade,
        split,
        ambient: rng.random_range(15.0..=30.0),
        soc0: rng.random_range(0.35..=0.9),
        warm: [
            rng.random_range(0.3..=1.0),
            rng.random_range(0.3..=1.0),
            rng.random_range(0.3..=1.0),
            rng.random_range(0.3..=1.0),
        ],
        aux_power: rng.random_range(400.0..=1200.0),
        noise,
        onset_frac: rng.random_range(0.15..=0.4),
    }
}

/// First-order thermal node: relaxes towards `ambient + gain · loss`.
struct Thermal {
    temp: f64,
    tau: f64,
    gain: f64,
}

impl Thermal {
    fn step(&mut self, ambient: f64, loss: f64, gain_factor: f64, dt: f64) -> f64 {
        let target = ambient + self.gain * gain_factor * loss;
        self.temp += (target - self.temp) * dt / self.tau;
        self.temp
    }
}

/// True (noise-free) signals at the simulation rate, in channel order.
fn simulate(d: &Draws, anomaly: Option<AnomalyKind>, cfg: &SynthConfig, n: usize) -> Vec<Vec<f64>> {
    let dt = 1.0 / SIM_RATE;
    let sport = anomaly == Some(AnomalyKind::SportMode);
    // Sport mode follows the target harder and with a snappier actuator.
    let (follow_tau, max_accel, actuator_lag) = if sport { (1.5, 3.2, 0.5) } else { (4.0, 1.6, 1.2) };
    let max_brake = 2.5;
    let no_regen = anomaly == Some(AnomalyKind::NoRecuperation);
    let simulator = anomaly == Some(AnomalyKind::BatterySimulator);
    let onset = (d.onset_frac * n as f64) as usize;

    let ocv = |soc: f64| OCV_EMPTY + OCV_SPAN * soc;
    let mut out = vec![Vec::with_capacity(n); 13];
    let (mut v, mut a) = (0.0f64, 0.0f64);
    let mut soc = d.soc0;
    // Rotor ∝ torque², stator ∝ current², inverter ∝ |current|, battery ∝ current².
    let mut rotor = Thermal { temp: 0.0, tau: 150.0, gain: 0.004 };
    let mut stator = Thermal { temp: 0.0, tau: 90.0, gain: 0.003 };
    let mut inverter = Thermal { temp: 0.0, tau: 40.0, gain: 0.2 };
    let mut battery = Thermal { temp: 0.0, tau: 900.0, gain: 0.0008 };
    rotor.temp = d.ambient + 25.0 * d.warm[0];
    stator.temp = d.ambient + 20.0 * d.warm[1];
    inverter.temp = d.ambient + 12.0 * d.warm[2];
    battery.temp = d.ambient + 6.0 * d.warm[3];

    for i in 0..n {
        let cmd = ((d.target[i] - v) / follow_tau).clamp(-max_brake, max_accel);
        a += (cmd - a) * dt / actuator_lag;
        v = (v + a * dt).max(0.0);
        if v == 0.0 && a < 0.0 {
            a = 0.0;
        }
        let grade = d.grade[i];
        let resist = if v > 0.1 { MASS * GRAVITY * ROLLING } else { 0.0 };
        let force = MASS * a + resist + AERO * v * v + MASS * GRAVITY * grade * (v > 0.1) as u8 as f64;
        let omega_m = v / WHEEL_RADIUS * GEAR_RATIO;

        let mut torque = force * WHEEL_RADIUS / GEAR_RATIO;
        let power_cap = if omega_m > 1.0 { MAX_POWER / omega_m } else { MAX_TORQUE };
        torque = torque.min(MAX_TORQUE).min(power_cap);
        torque = torque.max(if no_regen { 0.0 } else { -MAX_REGEN_TORQUE.min(power_cap) });

        let p_mech = torque * omega_m;
        let p_edu = if p_mech >= 0.0 { p_mech / EFFICIENCY } else { p_mech * EFFICIENCY };
        let p_total = p_edu + d.aux_power;

        let (v_hvb, i_hvb) = if simulator {
            let ripple = 0.4 * (2.0 * PI * 0.3 * i as f64 * dt).sin();
            (SIMULATOR_VOLTAGE + ripple, p_total / SIMULATOR_VOLTAGE)
        } else {
            let e = ocv(soc);
            let disc = (e * e - 4.0 * INTERNAL_RESISTANCE * p_total).max(0.0);
            let current = (e - disc.sqrt()) / (2.0 * INTERNAL_RESISTANCE);
            (e - current * INTERNAL_RESISTANCE, current)
        };
        let i_edu_guess = p_edu / v_hvb;
        let v_edu = v_hvb - CABLE_RESISTANCE * i_edu_guess;
        let i_edu = p_edu / v_edu;
        if !simulator {
            soc -= i_hvb * dt / (CAPACITY_AH * 3600.0);
        }

        let cooling = if anomaly == Some(AnomalyKind::ReducedCooling) && i >= onset {
            cfg.cooling_factor
        } else {
            1.0
        };
        let battery_current = if simulator { 0.0 } else { i_hvb };
        let t_rotor = rotor.step(d.ambient, torque * torque, cooling, dt);
        let t_stator = stator.step(d.ambient, i_edu * i_edu, cooling, dt);
        let t_inverter = inverter.step(d.ambient, i_edu.abs(), cooling, dt);
        let t_battery = battery.step(d.ambient, battery_current * battery_current, 1.0, dt);

        let axle = torque * GEAR_RATIO * 0.97 / 2.0;
        let speed_factor = if anomaly == Some(AnomalyKind::WheelDiameter) {
            cfg.wheel_factor
        } else {
            1.0
        };
        let values = [
            speed_factor * v * 3.6,
            torque,
            axle * (1.0 + d.split[i]),
            axle * (1.0 - d.split[i]),
            i_edu,
            v_edu,
            i_hvb,
            v_hvb,
            t_battery,
            100.0 * soc,
            t_rotor,
            t_stator,
            t_inverter,
        ];
        for (col, val) in out.iter_mut().zip(values) {
            col.push(val);
        }
    }
    out
}

/// Simulates one cycle. `index` selects the random stream, so the same
/// `(seed, index)` with a different `label` yields the paired cycle.
pub fn generate_cycle(cfg: &SynthConfig, seed: u64, index: u64, id: &str, label: Label) -> Result<Sequence> {
    cfg.validate()?;
    let n = (cfg.duration_s * SIM_RATE).round() as usize + 1;
    let mut rng = substream(seed, index);
    let draws = draw(&mut rng, n, cfg.duration_s);
    let anomaly = match label {
        Label::Normal => None,
        Label::Anomaly(k) => Some(k),
    };
    let truth = simulate(&draws, anomaly, cfg, n);

    let mut channels = Vec::with_capacity(13);
    for (c, signal) in truth.iter().enumerate() {
        let step = (SIM_RATE / NATIVE_RATE[c]).round() as usize;
        let mut values: Vec<f64> = signal
            .iter()
            .step_by(step)
            .zip(&draws.noise[c])
            .map(|(v, z)| v + cfg.noise_scale * SENSOR_NOISE[c] * z)
            .collect();
        if anomaly == Some(AnomalyKind::NoRecuperation) && c == EDU_TORQUE {
            values.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        channels.push(RawChannel::new(CHANNELS[c], NATIVE_RATE[c], values)?);
    }
    let columns = channels
        .iter()
        .map(|ch| resample(ch, cfg.rate))
        .collect::<Result<Vec<_>>>()?;
    let t = columns.iter().map(Vec::len).min().unwrap_or(0);
    let mut data = Vec::with_capacity(t * 13);
    for i in 0..t {
        for (c, col) in columns.iter().enumerate() {
            let v = col[i];
            // Sensor-side clamps that filtering overshoot must not undo.
            let v = match c {
                EDU_TORQUE if anomaly == Some(AnomalyKind::NoRecuperation) => v.max(0.0),
                SPEED => v.max(0.0),
                HVB_SOC => v.clamp(0.0, 100.0),
                _ => v,
            };
            data.push(v);
        }
    }
    Sequence::new(id, label, cfg.rate, channel_names(), Tensor::new(vec![t, 13], data)?)
}

/// Sizes of the generated splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetPlan {
    pub train: usize,
    pub val: usize,
    pub test_normal: usize,
    pub anomalies_per_kind: usize,
    pub kinds: Vec<AnomalyKind>,
}

impl Default for DatasetPlan {
    fn default() -> Self {
        DatasetPlan {
            train: 48,
            val: 12,
            test_normal: 50,
            anomalies_per_kind: 1,
            kinds: AnomalyKind::ALL.to_vec(),
        }
    }
}

impl DatasetPlan {
    /// Builds a plan from anomaly type names; unknown names are config errors.
    pub fn with_kinds(mut self, names: &[&str]) -> Result<Self> {
        self.kinds = names.iter().map(|n| n.parse()).collect::<Result<_>>()?;
        Ok(self)
    }
}

const VAL_BASE: u64 = 1 << 20;
const TEST_BASE: u64 = 2 << 20;
const ANOMALY_BASE: u64 = 3 << 20;

/// Stream index of the `j`-th anomalous cycle of `kind`; also the index
/// of its normal counterpart.
pub fn anomaly_index(kind: AnomalyKind, j: usize) -> u64 {
    let k = AnomalyKind::ALL.iter().position(|&x| x == kind).unwrap_or(0) as u64;
    ANOMALY_BASE + (k << 16) + j as u64
}

pub fn generate_dataset(cfg: &SynthConfig, plan: &DatasetPlan, seed: u64) -> Result<Dataset> {
    let normal = |base: u64, prefix: &str, count: usize| -> Result<Vec<Sequence>> {
        (0..count)
            .map(|i| generate_cycle(cfg, seed, base + i as u64, &format!("{prefix}-{i:04}"), Label::Normal))
            .collect()
    };
    let mut test = normal(TEST_BASE, "test-normal", plan.test_normal)?;
    for &kind in &plan.kinds {
        for j in 0..plan.anomalies_per_kind {
            let id = format!("test-{}-{j:04}", kind.as_str());
            test.push(generate_cycle(cfg, seed, anomaly_index(kind, j), &id, Label::Anomaly(kind))?);
        }
    }
    Ok(Dataset {
        train: normal(0, "train", plan.train)?,
        val: normal(VAL_BASE, "val", plan.val)?,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SynthConfig {
        SynthConfig::default()
    }

    #[test]
    fn shape_and_determinism() {
        let a = generate_cycle(&cfg(), 1, 0, "a", Label::Normal).unwrap();
        let b = generate_cycle(&cfg(), 1, 0, "a", Label::Normal).unwrap();
        assert_eq!(a.data.shape(), &[601, 13]);
        assert!(a.data.bitwise_eq(&b.data));
        let c = generate_cycle(&cfg(), 1, 1, "a", Label::Normal).unwrap();
        assert!(!a.data.bitwise_eq(&c.data));
    }

    #[test]
    fn unit_wheel_factor_is_identity() {
        let c = SynthConfig { wheel_factor: 1.0, ..cfg() };
        let idx = anomaly_index(AnomalyKind::WheelDiameter, 0);
        let normal = generate_cycle(&c, 3, idx, "n", Label::Normal).unwrap();
        let anomalous = generate_cycle(&c, 3, idx, "a", Label::Anomaly(AnomalyKind::WheelDiameter)).unwrap();
        assert!(normal.data.bitwise_eq(&anomalous.data));
    }

    #[test]
    fn no_recuperation_torque_is_non_negative() {
        let kind = AnomalyKind::NoRecuperation;
        let mut negative_normals = 0;
        for j in 0..10 {
            let idx = anomaly_index(kind, j);
            let a = generate_cycle(&cfg(), 4, idx, "a", Label::Anomaly(kind)).unwrap();
            assert!(a.channel(EDU_TORQUE).iter().all(|&v| v >= 0.0));
            let n = generate_cycle(&cfg(), 4, idx, "n", Label::Normal).unwrap();
            if n.channel(EDU_TORQUE).iter().any(|&v| v < 0.0) {
                negative_normals += 1;
            }
        }
        assert!(negative_normals >= 3);
    }

    #[test]
    fn plan_rejects_unknown_kind() {
        assert!(matches!(DatasetPlan::default().with_kinds(&["warp_drive"]), Err(Error::Config(_))));
    }

    #[test]
    fn dataset_ids_are_disjoint() {
        let plan = DatasetPlan {
            train: 3,
            val: 2,
            test_normal: 2,
            anomalies_per_kind: 1,
            kinds: AnomalyKind::ALL.to_vec(),
        };
        let c = SynthConfig { duration_s: 60.0, ..cfg() };
        let ds = generate_dataset(&c, &plan, 5).unwrap();
        let mut ids: Vec<&str> = ds.train.iter().chain(&ds.val).chain(&ds.test).map(|s| s.id.as_str()).collect();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n);
        assert_eq!(ds.test.iter().filter(|s| s.label.is_anomaly()).count(), 5);
    }
}
