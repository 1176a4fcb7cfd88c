//! Binary checkpoint with a vocabulary sidecar.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "BMAGCKPT"
//! version    u32
//! config     u32 length + JSON-encoded ModelConfig
//! seed       u64
//! tensors    u32 count, then per tensor:
//!              u32 name length + UTF-8 name
//!              u32 rank + rank * u64 dims
//!              product(dims) * f64
//! ```
//!
//! Tensors appear in declaration order. The vocabulary is written next to
//! the checkpoint as `<file>.vocab` with `token<TAB>id` lines.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::params::{ModelParams, Tensor};
use super::vocab::Vocabulary;
use super::ModelConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BMAGCKPT";
pub const VERSION: u32 = 1;

pub fn write_params(mut w: impl Write, params: &ModelParams) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let config = serde_json::to_vec(&params.config).expect("config serializes");
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(&config)?;
    w.write_all(&params.seed.to_le_bytes())?;
    w.write_all(&(params.tensors.len() as u32).to_le_bytes())?;
    for t in &params.tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.data.len() * 8);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("reading {what}: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().expect("8 bytes")))
    }
}

// Guards against absurd allocations from corrupt headers.
const MAX_NAME: u32 = 4096;
const MAX_CONFIG: u32 = 1 << 20;
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn read_params(r: impl Read) -> Result<ModelParams> {
    let mut r = Reader { inner: r };
    if r.bytes(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let clen = r.u32("config length")?;
    if clen > MAX_CONFIG {
        return Err(Error::Checkpoint(format!("config block of {clen} bytes")));
    }
    let config: ModelConfig = serde_json::from_slice(&r.bytes(clen as usize, "config")?)
        .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    let seed = r.u64("seed")?;
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(1024) as usize);
    for i in 0..count {
        let nlen = r.u32("name length")?;
        if nlen > MAX_NAME {
            return Err(Error::Checkpoint(format!("tensor {i} name of {nlen} bytes")));
        }
        let name = String::from_utf8(r.bytes(nlen as usize, "name")?)
            .map_err(|_| Error::Checkpoint(format!("tensor {i} name is not UTF-8")))?;
        let rank = r.u32("rank")?;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut n: u64 = 1;
        for _ in 0..rank {
            let d = r.u64("dimension")?;
            n = n.saturating_mul(d);
            shape.push(d as usize);
        }
        if n > MAX_ELEMENTS {
            return Err(Error::Checkpoint(format!("tensor {name} has {n} elements")));
        }
        let raw = r.bytes(n as usize * 8, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    let params = ModelParams::from_tensors(config, tensors, seed)?;
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }
    Ok(params)
}

/// `<checkpoint>.vocab`
pub fn vocab_sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".vocab");
    PathBuf::from(s)
}

pub fn save(path: impl AsRef<Path>, params: &ModelParams, vocab: &Vocabulary) -> Result<()> {
    let path = path.as_ref();
    if vocab.len() != params.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} entries, model expects {}",
            vocab.len(),
            params.config.vocab_size
        )));
    }
    let mut buf = Vec::new();
    write_params(&mut buf, params).expect("write to Vec");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    vocab.save(vocab_sidecar_path(path))
}

pub fn load(path: impl AsRef<Path>) -> Result<(ModelParams, Vocabulary)> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let params = read_params(std::io::BufReader::new(f))?;
    let vocab = Vocabulary::load(vocab_sidecar_path(path))?;
    if vocab.len() != params.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "sidecar vocabulary has {} entries, checkpoint expects {}",
            vocab.len(),
            params.config.vocab_size
        )));
    }
    Ok((params, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = ModelParams::init(ModelConfig::toy(12), 5).unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, &p).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(read_params(&buf[..]).unwrap(), p);
    }

    #[test]
    fn truncated_and_corrupt_files_fail() {
        let p = ModelParams::init(ModelConfig::toy(12), 5).unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, &p).unwrap();
        assert!(read_params(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_params(&bad[..]).is_err());
        let mut ver = buf;
        ver[8] = 9;
        assert!(matches!(read_params(&ver[..]), Err(Error::Checkpoint(m)) if m.contains("version")));
    }

    #[test]
    fn save_and_load_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocabulary::build(["a a b b c c d d e e f f g g h h i i"], 2, 100);
        let p = ModelParams::init(ModelConfig::toy(vocab.len()), 1).unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &p, &vocab).unwrap();
        assert!(dir.path().join("model.ckpt.vocab").exists());
        let (p2, v2) = load(&path).unwrap();
        assert_eq!(p2, p);
        assert_eq!(v2, vocab);
    }
}
