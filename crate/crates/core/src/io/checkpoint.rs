use std::path::Path;

use super::{io_error, write_atomic};
use crate::autodiff::{AdamState, Tensor};
use crate::error::{Error, FormatError, Result};
use crate::tgnn::{BnStats, Model, ModelConfig};

const MAGIC: &[u8; 8] = b"RKFCKPT\0";
const VERSION: u32 = 1;

/// Trained weights with the optimizer and batch-norm state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: AdamState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&u32::try_from(v).expect("checkpoint field exceeds u32").to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.0.extend_from_slice(b);
    }

    fn floats(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::Truncated(format!("{what} at byte offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize, FormatError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self, what: &str) -> Result<&'a [u8], FormatError> {
        let n = self.u32(what)?;
        self.take(n, what)
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f64>, FormatError> {
        let offset = self.pos;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.error(offset, "length overflow"))?, what)?;
        let v: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(self.error(offset + 8 * i, &format!("non-finite value in {what}")));
        }
        Ok(v)
    }

    fn tensor(&mut self, rows: usize, cols: usize, what: &str) -> Result<Tensor, FormatError> {
        Ok(Tensor::new(rows, cols, self.floats(rows * cols, what)?))
    }

    fn error(&self, offset: usize, message: &str) -> FormatError {
        FormatError::Binary {
            offset,
            message: message.to_string(),
        }
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let model = &ckpt.model;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    let config = toml::to_string(model.config()).map_err(|e| Error::Invalid(format!("cannot encode model config: {e}")))?;
    w.bytes(config.as_bytes());
    w.u32(model.params().len());
    for (name, t) in model.names().iter().zip(model.params()) {
        w.bytes(name.as_bytes());
        w.u32(t.rows());
        w.u32(t.cols());
        w.floats(t.data());
    }
    if ckpt.adam.m.len() != model.params().len() || ckpt.adam.v.len() != model.params().len() {
        return Err(Error::Invalid("optimizer state does not match the parameters".into()));
    }
    w.u64(ckpt.adam.step);
    for (m, v) in ckpt.adam.m.iter().zip(&ckpt.adam.v) {
        w.floats(m.data());
        w.floats(v.data());
    }
    w.u32(model.bn_stats().len());
    for bn in model.bn_stats() {
        w.u32(bn.mean.len());
        w.floats(&bn.mean);
        w.floats(&bn.var);
    }
    Ok(w.0)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(r.error(0, "not a roadkf checkpoint").into());
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(r.error(8, &format!("unsupported checkpoint version {version}, expected {VERSION}")).into());
    }
    let at = r.pos;
    let config_text = std::str::from_utf8(r.bytes("model config")?).map_err(|_| r.error(at, "model config is not UTF-8"))?;
    let config: ModelConfig = toml::from_str(config_text).map_err(|e| r.error(at, &format!("model config: {e}")))?;
    let mut model = Model::new(config, 0);
    let n = r.u32("parameter count")?;
    if n != model.params().len() {
        return Err(r.error(r.pos - 4, &format!("{n} parameters, the configured model has {}", model.params().len())).into());
    }
    let mut params = Vec::with_capacity(n);
    for i in 0..n {
        let at = r.pos;
        let name = r.bytes("parameter name")?;
        if name != model.names()[i].as_bytes() {
            return Err(r.error(at, &format!("parameter {i} is {:?}, expected {:?}", String::from_utf8_lossy(name), model.names()[i])).into());
        }
        let (rows, cols) = (r.u32("rows")?, r.u32("cols")?);
        params.push(r.tensor(rows, cols, &model.names()[i])?);
    }
    let step = r.u64("optimizer step")?;
    let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for p in &params {
        m.push(r.tensor(p.rows(), p.cols(), "first moment")?);
        v.push(r.tensor(p.rows(), p.cols(), "second moment")?);
    }
    let nb = r.u32("batch-norm count")?;
    let mut bn = Vec::with_capacity(nb);
    for _ in 0..nb {
        let len = r.u32("batch-norm width")?;
        let mean = r.floats(len, "batch-norm mean")?;
        let var = r.floats(len, "batch-norm variance")?;
        bn.push(BnStats { mean, var });
    }
    if r.pos != buf.len() {
        return Err(r.error(r.pos, "trailing bytes").into());
    }
    model.load_state(params, bn)?;
    Ok(Checkpoint {
        model,
        adam: AdamState { step, m, v },
    })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    Ok(write_atomic(path, &encode_checkpoint(ckpt)?)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(|e| io_error(path, e))?;
    decode_checkpoint(&buf)
}
