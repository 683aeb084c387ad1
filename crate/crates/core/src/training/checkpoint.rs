//! Binary checkpoint layout (all integers little-endian `u32`):
//!
//! ```text
//! "THPN" | version | len, hyperparameter text | vocab count, (len, token)*
//!        | tensor count, (name len, name, rank, dims*, f32 payload)*
//! ```

use std::path::Path;

use super::Hyperparams;
use crate::corpus::Vocabulary;
use crate::model::Thpn;
use crate::numerics::Tensor;
use crate::util::write_atomic;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"THPN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| Error::Data(format!("{v} does not fit the checkpoint format")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Serialises `model` with `hp`. The model's own configuration overrides
/// the architecture fields of `hp`.
pub fn save_checkpoint(model: &Thpn, hp: &Hyperparams) -> Result<Vec<u8>> {
    let hp = Hyperparams {
        model: *model.config(),
        ..*hp
    };
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize)?;
    put_str(&mut out, &hp.to_canonical())?;
    put_u32(&mut out, model.vocab().len())?;
    for t in model.vocab().tokens() {
        put_str(&mut out, t)?;
    }
    put_u32(&mut out, model.params().len())?;
    for (name, t) in model.param_names().iter().zip(model.params()) {
        put_str(&mut out, name)?;
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for &x in t.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Incompatible("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Incompatible("checkpoint string is not UTF-8".into()))
    }
}

/// Parses a checkpoint produced by [`save_checkpoint`].
pub fn read_checkpoint(bytes: &[u8]) -> Result<(Thpn, Hyperparams)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Incompatible("not a THPN checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Incompatible(format!(
            "checkpoint format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let hp = Hyperparams::from_canonical(&r.string()?)
        .map_err(|e| Error::Incompatible(format!("checkpoint hyperparameters: {e}")))?;
    let n_vocab = r.u32()?;
    let tokens = (0..n_vocab)
        .map(|_| r.string())
        .collect::<Result<Vec<_>>>()?;
    let vocab = Vocabulary::from_tokens(tokens)
        .map_err(|e| Error::Incompatible(format!("checkpoint vocabulary: {e}")))?;
    let n_tensors = r.u32()?;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Incompatible("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Incompatible(
            "trailing bytes after checkpoint".into(),
        ));
    }
    let model = Thpn::from_tensors(hp.model, vocab, tensors)?;
    Ok((model, hp))
}

pub fn write_checkpoint(path: &Path, model: &Thpn, hp: &Hyperparams) -> Result<()> {
    write_atomic(path, &save_checkpoint(model, hp)?)
}

/// Reads a checkpoint file. With `expected`, the stored architecture must
/// match its dimension and hop count.
pub fn load_checkpoint(path: &Path, expected: Option<&Hyperparams>) -> Result<(Thpn, Hyperparams)> {
    let (model, hp) = read_checkpoint(&std::fs::read(path)?)?;
    if let Some(e) = expected {
        if e.model.dim != hp.model.dim || e.model.hops != hp.model.hops {
            return Err(Error::Incompatible(format!(
                "checkpoint has dim {} and {} hops, configuration asks for dim {} and {} hops",
                hp.model.dim, hp.model.hops, e.model.dim, e.model.hops
            )));
        }
    }
    Ok((model, hp))
}
