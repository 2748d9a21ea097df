use super::Sequence;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Contiguous windows cut from one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub source_id: String,
    pub starts: Vec<usize>,
    /// Each `[W, d_X]`.
    pub windows: Vec<Tensor>,
}

/// Windows of length `w` at offsets `0, shift, 2·shift, …`; there are
/// `⌊(T − w) / shift⌋ + 1` of them.
pub fn windows_of(data: &Tensor, w: usize, shift: usize) -> Result<Vec<Tensor>> {
    if data.rank() != 2 {
        return Err(Error::dim("make_windows", data.shape(), &[w]));
    }
    if w == 0 || shift == 0 {
        return Err(Error::contract("window length and shift must be positive"));
    }
    let (t, d) = (data.shape()[0], data.shape()[1]);
    if t < w {
        return Err(Error::contract(format!("sequence of {t} steps is shorter than the window ({w})")));
    }
    Ok((0..=(t - w) / shift)
        .map(|i| {
            let start = i * shift * d;
            Tensor::new(vec![w, d], data.data()[start..start + w * d].to_vec()).expect("shape")
        })
        .collect())
}

pub fn make_windows(seq: &Sequence, w: usize, shift: usize) -> Result<WindowSet> {
    let windows = windows_of(&seq.data, w, shift)
        .map_err(|e| match e {
            Error::Contract(msg) => Error::contract(format!("{}: {msg}", seq.id)),
            other => other,
        })?;
    Ok(WindowSet {
        source_id: seq.id.clone(),
        starts: (0..windows.len()).map(|i| i * shift).collect(),
        windows,
    })
}

/// First `⌊fraction · n⌉` sequences for training, the rest for validation,
/// keeping the given (chronological) order.
pub fn chronological_split(sequences: &[Sequence], train_fraction: f64) -> Result<(Vec<Sequence>, Vec<Sequence>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::config("train fraction must lie in [0, 1]"));
    }
    let cut = (sequences.len() as f64 * train_fraction).round() as usize;
    Ok((sequences[..cut].to_vec(), sequences[cut..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::Label;

    fn ramp(t: usize, d: usize) -> Sequence {
        let data = Tensor::new(vec![t, d], (0..t * d).map(|v| v as f64).collect()).unwrap();
        Sequence::new("r", Label::Normal, 2.0, (0..d).map(|c| c.to_string()).collect(), data).unwrap()
    }

    #[test]
    fn counts() {
        assert_eq!(make_windows(&ramp(1024, 1), 256, 128).unwrap().windows.len(), 7);
        assert_eq!(make_windows(&ramp(4000, 1), 256, 1).unwrap().windows.len(), 3745);
        assert_eq!(make_windows(&ramp(16, 2), 16, 5).unwrap().windows.len(), 1);
    }

    #[test]
    fn non_overlapping_windows_reassemble_source() {
        let s = ramp(23, 3);
        let set = make_windows(&s, 5, 5).unwrap();
        let joined: Vec<f64> = set.windows.iter().flat_map(|w| w.data().to_vec()).collect();
        assert_eq!(joined, s.data.data()[..20 * 3].to_vec());
        assert_eq!(set.starts, vec![0, 5, 10, 15]);
    }

    #[test]
    fn too_short_is_contract_error() {
        assert!(matches!(make_windows(&ramp(10, 1), 16, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn split_keeps_order() {
        let seqs: Vec<Sequence> = (0..10)
            .map(|i| Sequence { id: i.to_string(), ..ramp(4, 1) })
            .collect();
        let (a, b) = chronological_split(&seqs, 0.8).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(b[0].id, "8");
    }
}
