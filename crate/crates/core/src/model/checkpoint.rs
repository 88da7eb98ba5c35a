//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "BSMCKPT\n"
//! version    u32
//! config     vocab_size u64, emb_dim u64, conv1_filters u64, conv1_width u64,
//!            conv2_filters u64, conv2_width u64, pool_width u64 (0 = global),
//!            dropout_rate f64, max_len u64, class_count u64
//! tensors    u32 count, then per tensor: u32 rank, rank × u64 extents,
//!            extent-product × f64 values, in parameter declaration order
//! ```

use std::fs;
use std::path::Path;

use super::{Classifier, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{Parameterized, Tensor};

const MAGIC: &[u8; 8] = b"BSMCKPT\n";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Persistence(format!(
                "checkpoint truncated at byte {} (needed {n} more)",
                self.pos
            ))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Persistence("extent overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn encode_checkpoint(model: &Classifier) -> Vec<u8> {
    let c = &model.config;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    for v in [c.vocab_size, c.emb_dim, c.conv1_filters, c.conv1_width, c.conv2_filters, c.conv2_width] {
        w.u64(v as u64);
    }
    w.u64(c.pool_width.unwrap_or(0) as u64);
    w.f64(c.dropout_rate);
    w.u64(c.max_len as u64);
    w.u64(c.class_count as u64);
    let params = model.params.params();
    w.u32(params.len() as u32);
    for (_, t) in params {
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u64(d as u64);
        }
        for &x in t.data() {
            w.f64(x);
        }
    }
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Classifier> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Persistence("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Persistence(format!(
            "unsupported checkpoint version {version}; this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let config = ModelConfig {
        vocab_size: r.usize()?,
        emb_dim: r.usize()?,
        conv1_filters: r.usize()?,
        conv1_width: r.usize()?,
        conv2_filters: r.usize()?,
        conv2_width: r.usize()?,
        pool_width: match r.usize()? {
            0 => None,
            w => Some(w),
        },
        dropout_rate: r.f64()?,
        max_len: r.usize()?,
        class_count: r.usize()?,
    };
    config
        .validate()
        .map_err(|e| Error::Persistence(format!("invalid stored config: {e}")))?;
    let expected = ModelParams::expected_shapes(&config);
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Persistence(format!(
            "checkpoint holds {count} tensors, expected {}",
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for shape in expected {
        let rank = r.u32()? as usize;
        let stored: Vec<usize> = (0..rank).map(|_| r.usize()).collect::<Result<_>>()?;
        if stored != shape {
            return Err(Error::Persistence(format!(
                "stored tensor shape {stored:?} does not match configuration {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Persistence(format!(
            "{} trailing bytes after checkpoint payload",
            bytes.len() - r.pos
        )));
    }
    let mut it = tensors.into_iter();
    let mut next = || it.next().unwrap();
    let params = ModelParams {
        embedding: next(),
        conv1_kernels: next(),
        conv1_bias: next(),
        conv2_kernels: next(),
        conv2_bias: next(),
        dense_weights: next(),
        dense_bias: next(),
    };
    Classifier::from_parts(config, params)
}

pub fn save_checkpoint(model: &Classifier, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Classifier> {
    decode_checkpoint(&fs::read(path)?)
}
