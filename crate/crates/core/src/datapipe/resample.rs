use std::f64::consts::PI;

use super::RawChannel;
use crate::error::{Error, Result};

/// One second-order section, transposed direct form II, normalised so
/// `a0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Lowpass section with quality factor `q`, designed by the bilinear
    /// transform with the cutoff prewarped.
    fn lowpass(cutoff: f64, rate: f64, q: f64) -> Self {
        let k = (PI * cutoff / rate).tan();
        let norm = 1.0 / (1.0 + k / q + k * k);
        let b0 = k * k * norm;
        Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
        }
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Filters in place, starting from the steady state of a constant input
    /// equal to the first sample.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let y0 = x0 * self.dc_gain();
        let mut z1 = y0 - b0 * x0;
        let mut z2 = b2 * x0 - a2 * y0;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z1;
            z1 = b1 * xin - a1 * y + z2;
            z2 = b2 * xin - a2 * y;
            *v = y;
        }
    }

    /// Magnitude response at `freq`.
    pub fn gain_at(&self, freq: f64, rate: f64) -> f64 {
        let w = 2.0 * PI * freq / rate;
        let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
        let num = (self.b[0] + self.b[1] * c1 + self.b[2] * c2, -(self.b[1] * s1 + self.b[2] * s2));
        let den = (1.0 + self.a[0] * c1 + self.a[1] * c2, -(self.a[0] * s1 + self.a[1] * s2));
        num.0.hypot(num.1) / den.0.hypot(den.1)
    }
}

/// Fourth-order Butterworth lowpass as two second-order sections, −3 dB at
/// `cutoff`.
pub fn butterworth_lowpass(cutoff: f64, rate: f64) -> [Biquad; 2] {
    let q = |k: f64| 1.0 / (2.0 * (PI * (2.0 * k + 1.0) / 8.0).cos());
    [Biquad::lowpass(cutoff, rate, q(0.0)), Biquad::lowpass(cutoff, rate, q(1.0))]
}

/// Brings a channel onto a grid of `target_rate` samples per second
/// starting at its first sample.
///
/// Slower channels are linearly interpolated. Faster channels first pass a
/// causal fourth-order Butterworth lowpass at half the target rate and are
/// then sampled on the grid (linear interpolation between neighbours when
/// the grid does not fall on a sample).
pub fn resample(channel: &RawChannel, target_rate: f64) -> Result<Vec<f64>> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(Error::contract(format!("target rate must be positive, got {target_rate}")));
    }
    let n = channel.values.len();
    let duration = (n.saturating_sub(1)) as f64 / channel.rate;
    if n < 2 || duration * target_rate < 1.0 - 1e-9 {
        return Err(Error::contract(format!(
            "channel {} spans {duration} s, shorter than one target interval",
            channel.name
        )));
    }
    if channel.rate == target_rate {
        return Ok(channel.values.clone());
    }
    let source = if channel.rate > target_rate {
        let mut x = channel.values.clone();
        for section in butterworth_lowpass(target_rate / 2.0, channel.rate) {
            section.run(&mut x);
        }
        x
    } else {
        channel.values.clone()
    };
    let n_out = (duration * target_rate + 1e-9).floor() as usize + 1;
    let ratio = channel.rate / target_rate;
    Ok((0..n_out)
        .map(|k| {
            let u = k as f64 * ratio;
            let i = (u + 1e-9).floor() as usize;
            if i >= n - 1 {
                return source[n - 1];
            }
            let frac = u - i as f64;
            if frac <= 1e-9 {
                source[i]
            } else {
                source[i] + frac * (source[i + 1] - source[i])
            }
        })
        .collect())
}
