//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "EPIR"  u32 version
//! u32 n   n bytes of JSON header (config, vocabulary size, optimizer step)
//! u32 count
//! count x { u32 len, name bytes, u32 rank, rank x u32 dim, f32 payload }
//! u64 vocabulary hash
//! ```
//!
//! Tensors are the model parameters in registration order followed by the
//! optimizer's first and second moments.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::EpiReader;
use crate::optim::Adam;
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"EPIR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab_size: usize,
    pub vocab_hash: u64,
    pub params: ParamSet,
    pub optimizer: Adam,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    vocab_size: usize,
    optimizer_step: u64,
}

fn bad(field: &str, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        field: field.to_string(),
        msg: msg.into(),
    }
}

fn put_u32<W: Write>(w: &mut W, v: usize, field: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| bad(field, format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_tensor<W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    put_u32(w, name.len(), "tensor name")?;
    w.write_all(name.as_bytes())?;
    put_u32(w, shape.len(), "tensor rank")?;
    for &d in shape {
        put_u32(w, d, "tensor dims")?;
    }
    let mut buf = Vec::with_capacity(4 * data.len());
    for &x in data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, field: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| bad(field, format!("truncated: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self, field: &str) -> Result<usize> {
        let b = self.bytes(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        let b = self.bytes(8, field)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let len = self.u32("tensor name")?;
        let name = String::from_utf8(self.bytes(len, "tensor name")?).map_err(|_| bad("tensor name", "not UTF-8"))?;
        let rank = self.u32(&format!("{name}: rank"))?;
        if rank == 0 || rank > 8 {
            return Err(bad(&format!("{name}: rank"), format!("implausible rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| self.u32(&format!("{name}: dims")))
            .collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n
            .filter(|&n| n < (1 << 31))
            .ok_or_else(|| bad(&format!("{name}: dims"), format!("implausible shape {dims:?}")))?;
        let raw = self.bytes(4 * n, &format!("{name}: payload"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok((name, dims, data))
    }
}

impl Checkpoint {
    /// Rebuilds the parameter layout this checkpoint was saved from.
    pub fn reader(&self) -> EpiReader {
        EpiReader::new(self.config.dims, self.vocab_size, 0).0
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            vocab_size: self.vocab_size,
            optimizer_step: self.optimizer.step,
        })?;
        put_u32(&mut w, header.len(), "header")?;
        w.write_all(&header)?;
        put_u32(&mut w, 3 * self.params.len(), "tensor count")?;
        for (_, name, t) in self.params.iter() {
            put_tensor(&mut w, name, t.shape(), t.data())?;
        }
        for (prefix, moments) in [("adam.m", &self.optimizer.m), ("adam.v", &self.optimizer.v)] {
            for ((_, name, t), values) in self.params.iter().zip(moments) {
                put_tensor(&mut w, &format!("{prefix}:{name}"), t.shape(), values)?;
            }
        }
        w.write_all(&self.vocab_hash.to_le_bytes())?;
        Ok(())
    }

    /// Reads a checkpoint, refusing it when `expected_vocab_hash` is given
    /// and differs from the stored one.
    pub fn read_from<R: Read>(r: R, expected_vocab_hash: Option<u64>) -> Result<Self> {
        let mut r = Reader { inner: r };
        if r.bytes(4, "magic")? != MAGIC {
            return Err(bad("magic", "not an EPIR checkpoint"));
        }
        let version = r.u32("version")?;
        if version != VERSION as usize {
            return Err(bad("version", format!("found {version}, expected {VERSION}")));
        }
        let len = r.u32("header")?;
        let header: Header =
            serde_json::from_slice(&r.bytes(len, "header")?).map_err(|e| bad("header", e.to_string()))?;
        header.config.validate().map_err(|e| bad("header", e.to_string()))?;

        let (_, mut params) = EpiReader::new(header.config.dims, header.vocab_size, 0);
        let count = r.u32("tensor count")?;
        if count != 3 * params.len() {
            return Err(bad(
                "tensor count",
                format!("found {count}, expected {}", 3 * params.len()),
            ));
        }
        let mut optimizer = Adam::new(&params, header.config.learning_rate);
        optimizer.step = header.optimizer_step;
        let ids: Vec<_> = params.ids().collect();
        for slot in 0..3 {
            for &id in &ids {
                let (name, dims, data) = r.tensor()?;
                let base = params.name(id);
                let expected = match slot {
                    0 => base.to_string(),
                    1 => format!("adam.m:{base}"),
                    _ => format!("adam.v:{base}"),
                };
                if name != expected {
                    return Err(bad("tensor name", format!("found {name:?}, expected {expected:?}")));
                }
                if dims != params.get(id).shape() {
                    return Err(bad(
                        &format!("{name}: dims"),
                        format!("found {dims:?}, expected {:?}", params.get(id).shape()),
                    ));
                }
                match slot {
                    0 => {
                        let t = Tensor::new(&dims, data)?.with_grad();
                        *params.get_mut(id) = t;
                    }
                    1 => optimizer.m[id.0] = data,
                    _ => optimizer.v[id.0] = data,
                }
            }
        }
        let vocab_hash = r.u64("vocab hash")?;
        if let Some(h) = expected_vocab_hash {
            if h != vocab_hash {
                return Err(bad(
                    "vocab hash",
                    format!("checkpoint has {vocab_hash:016x}, vocabulary has {h:016x}"),
                ));
            }
        }
        let mut trailing = [0u8; 1];
        if r.inner.read(&mut trailing)? != 0 {
            return Err(bad("trailer", "unexpected bytes after the vocabulary hash"));
        }
        Ok(Checkpoint {
            config: header.config,
            vocab_size: header.vocab_size,
            vocab_hash,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, expected_vocab_hash: Option<u64>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f), expected_vocab_hash)
    }
}
