use serde::{Deserialize, Serialize};

use super::Sequence;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Smallest standard deviation used for scaling.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Pooled population mean and standard deviation over every time step
    /// of every sequence.
    pub fn fit(sequences: &[Sequence]) -> Result<Self> {
        let first = sequences
            .first()
            .ok_or_else(|| Error::contract("cannot fit normalisation on an empty set"))?;
        let d = first.channels();
        let mut count = 0usize;
        let mut sum = vec![0.0; d];
        for s in sequences {
            if s.channels() != d {
                return Err(Error::dim("fit_norm", s.data.shape(), first.data.shape()));
            }
            count += s.len();
            for row in s.data.data().chunks(d) {
                for (acc, v) in sum.iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; d];
        for s in sequences {
            for row in s.data.data().chunks(d) {
                for ((acc, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
        }
        let std = sq
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let sd = (s / count as f64).sqrt();
                if sd < STD_FLOOR {
                    let name = first.channel_names.get(c).map_or("?", String::as_str);
                    log::warn!("channel {c} ({name}) is constant; std floored at {STD_FLOOR}");
                    STD_FLOOR
                } else {
                    sd
                }
            })
            .collect();
        Ok(NormStats { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, data: &Tensor) -> Result<()> {
        if data.rank() != 2 || data.shape()[1] != self.channels() {
            return Err(Error::dim("norm", data.shape(), &[self.channels()]));
        }
        Ok(())
    }

    /// `(x − mean) / std` per channel.
    pub fn apply_tensor(&self, data: &Tensor) -> Result<Tensor> {
        self.check(data)?;
        let mut out = data.clone();
        for row in out.data_mut().chunks_mut(self.channels()) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn inverse_tensor(&self, data: &Tensor) -> Result<Tensor> {
        self.check(data)?;
        let mut out = data.clone();
        for row in out.data_mut().chunks_mut(self.channels()) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }

    pub fn apply(&self, seq: &Sequence) -> Result<Sequence> {
        Ok(seq.with_data(self.apply_tensor(&seq.data)?))
    }

    pub fn inverse(&self, seq: &Sequence) -> Result<Sequence> {
        Ok(seq.with_data(self.inverse_tensor(&seq.data)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::Label;

    fn seq(rows: &[Vec<f64>]) -> Sequence {
        let d = rows[0].len();
        Sequence::new(
            "s",
            Label::Normal,
            2.0,
            (0..d).map(|c| format!("c{c}")).collect(),
            Tensor::from_rows(rows).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn two_values() {
        let s = seq(&[vec![1.0], vec![3.0]]);
        let stats = NormStats::fit(std::slice::from_ref(&s)).unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.std, vec![1.0]);
        assert_eq!(stats.apply(&s).unwrap().channel(0), vec![-1.0, 1.0]);
    }

    #[test]
    fn pooled_matches_concatenation() {
        let a = seq(&[vec![1.0, 10.0], vec![2.0, 20.0], vec![4.0, 5.0]]);
        let b = seq(&[vec![7.0, -1.0], vec![0.5, 3.0]]);
        let pooled = NormStats::fit(&[a.clone(), b.clone()]).unwrap();
        let mut rows = a.data.rows();
        rows.extend(b.data.rows());
        let flat = NormStats::fit(&[seq(&rows)]).unwrap();
        for c in 0..2 {
            assert!((pooled.mean[c] - flat.mean[c]).abs() < 1e-12);
            assert!((pooled.std[c] - flat.std[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_channel_is_floored() {
        let s = seq(&[vec![5.0], vec![5.0]]);
        let stats = NormStats::fit(&[s]).unwrap();
        assert_eq!(stats.std, vec![STD_FLOOR]);
    }

    #[test]
    fn empty_set_is_contract_error() {
        assert!(matches!(NormStats::fit(&[]), Err(Error::Contract(_))));
    }
}
