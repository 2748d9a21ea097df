//! Sequence files, CSV interchange and dataset manifests.
//!
//! A sequence file holds magic `MAVAESEQ`, a `u32` version, the id, label
//! and channel names as length-prefixed UTF-8, the rate as `f64`, `T` and
//! `d` as `u64`, and the `T×d` matrix as row-major `f64`, all little-endian.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Label, Sequence};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"MAVAESEQ";
const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

fn path_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Path(format!("{}: {e}", path.display()))
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn write_sequence<W: Write>(seq: &Sequence, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_str(&mut w, &seq.id)?;
    write_str(&mut w, seq.label.as_str())?;
    w.write_all(&seq.rate.to_le_bytes())?;
    w.write_all(&(seq.channel_names.len() as u32).to_le_bytes())?;
    for name in &seq.channel_names {
        write_str(&mut w, name)?;
    }
    w.write_all(&(seq.len() as u64).to_le_bytes())?;
    w.write_all(&(seq.channels() as u64).to_le_bytes())?;
    for v in seq.data.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0.read_exact(&mut buf).map_err(|_| Error::data("sequence file truncated"))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.bytes()?)).map_err(|_| Error::data("sequence size too large"))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()?;
        let mut buf = vec![0u8; len];
        self.0.read_exact(&mut buf).map_err(|_| Error::data("sequence file truncated"))?;
        String::from_utf8(buf).map_err(|_| Error::data("string in sequence file is not UTF-8"))
    }
}

pub fn read_sequence<R: Read>(r: R) -> Result<Sequence> {
    let mut r = Reader(r);
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::data("not a sequence file"));
    }
    let version = u32::from_le_bytes(r.bytes()?);
    if version != VERSION {
        return Err(Error::data(format!("unsupported sequence file version {version}")));
    }
    let id = r.string()?;
    let label: Label = r.string()?.parse().map_err(|e| Error::data(format!("{id}: {e}")))?;
    let rate = f64::from_le_bytes(r.bytes()?);
    let n_names = r.u32()?;
    let names = (0..n_names).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let t = r.u64()?;
    let d = r.u64()?;
    let n = t.checked_mul(d).ok_or_else(|| Error::data("sequence size overflows"))?;
    let mut data = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        data.push(f64::from_le_bytes(r.bytes()?));
    }
    Sequence::new(id, label, rate, names, Tensor::new(vec![t, d], data)?)
}

pub fn save_sequence(seq: &Sequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| path_err(path, e))?;
    write_sequence(seq, BufWriter::new(file))
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<Sequence> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| path_err(path, e))?;
    read_sequence(BufReader::new(file))
}

/// CSV with a `time` column (seconds) followed by one column per channel.
pub fn write_csv(seq: &Sequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| path_err(path, e))?;
    let mut header = vec!["time".to_string()];
    header.extend(seq.channel_names.iter().cloned());
    w.write_record(&header)?;
    for (i, row) in seq.data.data().chunks(seq.channels()).enumerate() {
        let mut rec = vec![(i as f64 / seq.rate).to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the CSV layout of [`write_csv`]; the rate comes from the first
/// two time stamps.
pub fn read_csv(path: impl AsRef<Path>, id: &str, label: Label) -> Result<Sequence> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| path_err(path, e))?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("time") || header.len() < 2 {
        return Err(Error::data(format!("{}: expected a time column and channels", path.display())));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut times = Vec::new();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let values = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| Error::data(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != names.len() + 1 {
            return Err(Error::data(format!("{}: ragged row", path.display())));
        }
        times.push(values[0]);
        data.extend_from_slice(&values[1..]);
    }
    if times.len() < 2 || times[1] <= times[0] {
        return Err(Error::data(format!("{}: cannot infer a sample rate", path.display())));
    }
    let rate = 1.0 / (times[1] - times[0]);
    let d = names.len();
    Sequence::new(id, label, rate, names, Tensor::new(vec![times.len(), d], data)?)
}

/// Train, validation and test sequences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sequence>,
    pub val: Vec<Sequence>,
    pub test: Vec<Sequence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Label,
    pub file: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub rate: f64,
    pub channels: Vec<String>,
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

/// Writes every sequence plus `manifest.json` into `dir`. An existing
/// manifest is only replaced with `force`.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>, force: bool) -> Result<Manifest> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() && !force {
        return Err(Error::Path(format!(
            "{} already exists; pass --force to overwrite",
            manifest_path.display()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| path_err(dir, e))?;
    let first = dataset
        .train
        .first()
        .or(dataset.val.first())
        .or(dataset.test.first())
        .ok_or_else(|| Error::contract("dataset is empty"))?;
    let entries = |seqs: &[Sequence]| -> Result<Vec<ManifestEntry>> {
        seqs.iter()
            .map(|s| {
                let file = PathBuf::from(format!("{}.seq", s.id));
                save_sequence(s, dir.join(&file))?;
                Ok(ManifestEntry {
                    id: s.id.clone(),
                    label: s.label,
                    file,
                })
            })
            .collect()
    };
    let manifest = Manifest {
        rate: first.rate,
        channels: first.channel_names.clone(),
        train: entries(&dataset.train)?,
        val: entries(&dataset.val)?,
        test: entries(&dataset.test)?,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text + "\n").map_err(|e| path_err(&manifest_path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| path_err(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let load = |entries: &[ManifestEntry]| -> Result<Vec<Sequence>> {
        entries
            .iter()
            .map(|e| {
                let s = load_sequence(dir.join(&e.file))?;
                if s.id != e.id || s.label != e.label {
                    return Err(Error::data(format!("{} does not match its manifest entry", e.file.display())));
                }
                Ok(s)
            })
            .collect()
    };
    Ok(Dataset {
        train: load(&manifest.train)?,
        val: load(&manifest.val)?,
        test: load(&manifest.test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::AnomalyKind;

    fn seq(id: &str, label: Label) -> Sequence {
        let data = Tensor::new(vec![4, 2], vec![0.1, -2.0, 1.0 / 3.0, 4.0, 5.5, 6.0, 7.0, f64::MIN_POSITIVE]).unwrap();
        Sequence::new(id, label, 2.0, vec!["a".into(), "b b".into()], data).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let s = seq("x1", Label::Anomaly(AnomalyKind::SportMode));
        let mut buf = Vec::new();
        write_sequence(&s, &mut buf).unwrap();
        assert_eq!(read_sequence(buf.as_slice()).unwrap(), s);
        assert!(read_sequence(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = seq("x1", Label::Normal);
        write_csv(&s, &p).unwrap();
        assert_eq!(read_csv(&p, "x1", Label::Normal).unwrap(), s);
    }

    #[test]
    fn dataset_round_trip_and_force() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset {
            train: vec![seq("t0", Label::Normal)],
            val: vec![seq("v0", Label::Normal)],
            test: vec![seq("a0", Label::Anomaly(AnomalyKind::ReducedCooling))],
        };
        write_dataset(&ds, dir.path(), false).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
        assert!(matches!(write_dataset(&ds, dir.path(), false), Err(Error::Path(_))));
        write_dataset(&ds, dir.path(), true).unwrap();
    }

    #[test]
    fn missing_dataset_is_path_error() {
        assert!(matches!(read_dataset("/nonexistent/ds"), Err(Error::Path(_))));
    }
}
