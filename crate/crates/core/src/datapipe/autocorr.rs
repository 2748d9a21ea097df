use super::Sequence;
use crate::error::{Error, Result};

/// Autocorrelation level a lag must reach to count as correlated.
pub const DEFAULT_ACF_THRESHOLD: f64 = 0.2;

/// Normalised autocorrelation for lags `0..=max_lag`, pooled over several
/// series of one channel around their common mean.
///
/// Lag products never straddle two series. A constant channel has zero
/// correlation at every positive lag.
pub fn autocorrelation(series: &[&[f64]], max_lag: usize) -> Vec<f64> {
    let count: usize = series.iter().map(|s| s.len()).sum();
    let mut acf = vec![0.0; max_lag + 1];
    if count == 0 {
        return acf;
    }
    let mean = series.iter().flat_map(|s| s.iter()).sum::<f64>() / count as f64;
    let centred: Vec<Vec<f64>> = series.iter().map(|s| s.iter().map(|v| v - mean).collect()).collect();
    let denom: f64 = centred.iter().flat_map(|s| s.iter()).map(|v| v * v).sum();
    acf[0] = 1.0;
    if denom == 0.0 {
        return acf;
    }
    for (lag, r) in acf.iter_mut().enumerate().skip(1) {
        let num: f64 = centred
            .iter()
            .filter(|s| s.len() > lag)
            .map(|s| s.iter().zip(&s[lag..]).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        *r = num / denom;
    }
    acf
}

/// Longest lag of the run of correlated lags that starts at lag 1.
///
/// Returns 1 when lag 1 is already below `threshold`, and `None` when the
/// correlation never drops below it within the computed lags.
pub fn longest_lag(acf: &[f64], threshold: f64) -> Option<usize> {
    match acf.iter().skip(1).position(|&r| r < threshold) {
        Some(0) => Some(1),
        Some(i) => Some(i),
        None => None,
    }
}

/// Smallest power of two strictly greater than `lag`.
pub fn window_for_lag(lag: usize) -> usize {
    (lag + 1).next_power_of_two()
}

/// Window size from the slowest channel: the longest correlated lag over
/// all channels of the training sequences, rounded up to a power of two.
pub fn autocorr_window_size(sequences: &[Sequence], threshold: f64) -> Result<usize> {
    let first = sequences
        .first()
        .ok_or_else(|| Error::contract("no sequences for autocorrelation"))?;
    let min_len = sequences.iter().map(Sequence::len).min().unwrap_or(0);
    if min_len < 3 {
        return Err(Error::contract("sequences too short for autocorrelation"));
    }
    let max_lag = min_len - 1;
    let mut longest = 1;
    for c in 0..first.channels() {
        let columns: Vec<Vec<f64>> = sequences.iter().map(|s| s.channel(c)).collect();
        let refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
        let acf = autocorrelation(&refs, max_lag);
        let lag = longest_lag(&acf, threshold).ok_or_else(|| {
            Error::contract(format!(
                "channel {} stays correlated beyond lag {max_lag}; sequences are too short",
                first.channel_names[c]
            ))
        })?;
        log::debug!("channel {}: longest correlated lag {lag}", first.channel_names[c]);
        longest = longest.max(lag);
    }
    Ok(window_for_lag(longest))
}
