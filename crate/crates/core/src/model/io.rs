//! Versioned little-endian checkpoint format.
//!
//! Layout: magic `MAVAECKP`, `u32` version, the configuration as `u64`
//! fields plus one flag byte, a `u32` record count, then one record per
//! parameter: `u32` name length, UTF-8 name, `u32` rank, `u64` dims and
//! `f64` values. Values round-trip bit for bit.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Mavae, MavaeConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MAVAECKP";
const VERSION: u32 = 1;

pub fn write_to<W: Write>(model: &Mavae, mut w: W) -> Result<()> {
    let c = &model.config;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [c.window, c.input_dim, c.latent_dim, c.heads, c.key_dim, c.outer_units, c.inner_units] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&[c.no_attention as u8])?;
    let mut records = Vec::new();
    model.params.visit(&mut |name, t| records.push((name, t)));
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, t) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::data("checkpoint truncated"))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.bytes()?)).map_err(|_| Error::data("checkpoint field too large"))
    }
}

pub fn read_from<R: Read>(r: R) -> Result<Mavae> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::data("not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::data(format!("unsupported checkpoint version {version}")));
    }
    let config = MavaeConfig {
        window: r.u64()?,
        input_dim: r.u64()?,
        latent_dim: r.u64()?,
        heads: r.u64()?,
        key_dim: r.u64()?,
        outer_units: r.u64()?,
        inner_units: r.u64()?,
        no_attention: match r.bytes::<1>()?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::data(format!("bad attention flag {b}"))),
        },
    };
    let mut model = Mavae::zeros(config).map_err(|e| Error::data(format!("checkpoint config: {e}")))?;
    let count = r.u32()? as usize;
    let mut slots = Vec::new();
    model.params.visit_mut(&mut |name, t| slots.push((name, t)));
    if count != slots.len() {
        return Err(Error::data(format!(
            "checkpoint has {count} parameters, architecture needs {}",
            slots.len()
        )));
    }
    for (name, slot) in slots {
        let len = r.u32()? as usize;
        let mut buf = vec![0u8; len];
        r.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::data("checkpoint truncated"))?;
        let stored = String::from_utf8(buf).map_err(|_| Error::data("parameter name is not UTF-8"))?;
        if stored != name {
            return Err(Error::data(format!("expected parameter {name}, found {stored}")));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        if shape != slot.shape() {
            return Err(Error::data(format!(
                "parameter {name} has shape {shape:?}, expected {:?}",
                slot.shape()
            )));
        }
        for v in slot.data_mut() {
            *v = f64::from_le_bytes(r.bytes()?);
        }
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::data("trailing bytes after checkpoint"));
    }
    Ok(model)
}

pub fn to_bytes(model: &Mavae) -> Vec<u8> {
    let mut out = Vec::new();
    write_to(model, &mut out).expect("writing to memory");
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Mavae> {
    read_from(bytes)
}

impl Mavae {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::Path(format!("{}: {e}", path.display())))?;
        write_to(self, std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::Path(format!("{}: {e}", path.display())))?;
        read_from(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn model(no_attention: bool) -> Mavae {
        let c = MavaeConfig {
            window: 4,
            input_dim: 2,
            latent_dim: 2,
            heads: 2,
            key_dim: 1,
            outer_units: 3,
            inner_units: 2,
            no_attention,
        };
        Mavae::new(c, &mut stream(1, Stream::Init)).unwrap()
    }

    #[test]
    fn bytes_round_trip_bitwise() {
        for flag in [false, true] {
            let m = model(flag);
            let back = from_bytes(&to_bytes(&m)).unwrap();
            assert_eq!(back.config, m.config);
            for (a, b) in m.params.leaves().iter().zip(back.params.leaves()) {
                assert!(a.bitwise_eq(b));
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model(false);
        m.save(&path).unwrap();
        assert_eq!(Mavae::load(&path).unwrap(), m);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = to_bytes(&model(false));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Data(_))));
        assert!(matches!(from_bytes(b"NOTACKPT"), Err(Error::Data(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        let mut bad_version = bytes;
        bad_version[8] = 9;
        assert!(from_bytes(&bad_version).is_err());
    }

    #[test]
    fn missing_file_is_path_error() {
        assert!(matches!(Mavae::load("/nonexistent/m.ckpt"), Err(Error::Path(_))));
    }
}
