//! Binary weights file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DMSK"  u32 version
//! u32 header length, header: UTF-8 key=value lines (model config, then state.* entries)
//! u32 record count
//! per record: u32 name length, name, u32 rank, rank x u64 dims, f32 payload
//! ```
//!
//! Records hold each layer's weight, bias and both momentum buffers.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::model::config::ModelConfig;
use crate::model::params::ModelParams;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"DMSK";
pub const FORMAT_VERSION: u32 = 1;
const STATE_PREFIX: &str = "state.";

/// Parameters plus free-form training state (step counter and the like).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub state: BTreeMap<String, String>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, v: usize) -> Result<()> {
    put_u32(out, u32::try_from(v).map_err(|_| Error::Format(format!("length {v} exceeds u32")))?);
    Ok(())
}

pub fn encode<T: Scalar>(params: &ModelParams<T>, state: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let mut header = params.config().to_kv();
    for (k, v) in state {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Usage(format!("state entry '{k}' is not a single key=value line")));
        }
        header.push_str(&format!("{STATE_PREFIX}{k}={v}\n"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_len(&mut out, header.len())?;
    out.extend_from_slice(header.as_bytes());
    let names = params.layer_names();
    put_len(&mut out, names.len() * 4)?;
    for ((name, _), layer) in names.iter().zip(params.layers()) {
        for (suffix, t) in [
            ("weight", &layer.weight),
            ("bias", &layer.bias),
            ("weight_momentum", &layer.weight_momentum),
            ("bias_momentum", &layer.bias_momentum),
        ] {
            let full = format!("{name}.{suffix}");
            put_len(&mut out, full.len())?;
            out.extend_from_slice(full.as_bytes());
            put_len(&mut out, t.shape().len())?;
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                let f = v.to_f32().ok_or_else(|| Error::NonFinite(full.clone()))?;
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "file truncated reading {what} at byte {} ({} bytes total)",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses a weights file. With `expected`, the file's architecture must match it.
pub fn decode<T: Scalar>(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("not a weights file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let hlen = r.u32("header length")? as usize;
    let header = std::str::from_utf8(r.take(hlen, "header")?)
        .map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let mut config_text = String::new();
    let mut state = BTreeMap::new();
    for line in header.lines() {
        match line.strip_prefix(STATE_PREFIX).and_then(|l| l.split_once('=')) {
            Some((k, v)) => {
                state.insert(k.to_string(), v.to_string());
            }
            None => {
                config_text.push_str(line);
                config_text.push('\n');
            }
        }
    }
    let config = ModelConfig::from_kv(&config_text)?;
    if let Some(exp) = expected {
        if exp.architecture_key() != config.architecture_key() {
            return Err(Error::Geometry {
                expected: exp.architecture_key(),
                found: config.architecture_key(),
            });
        }
    }
    let mut params = ModelParams::<T>::zeros(&config)?;
    let names = params.layer_names();
    let count = r.u32("record count")? as usize;
    if count != names.len() * 4 {
        return Err(Error::Format(format!(
            "expected {} tensor records, file has {count}",
            names.len() * 4
        )));
    }
    for ((name, _), layer) in names.iter().zip(params.layers_mut()) {
        for (suffix, t) in [
            ("weight", &mut layer.weight),
            ("bias", &mut layer.bias),
            ("weight_momentum", &mut layer.weight_momentum),
            ("bias_momentum", &mut layer.bias_momentum),
        ] {
            let want = format!("{name}.{suffix}");
            let nlen = r.u32("record name length")? as usize;
            let got = r.take(nlen, "record name")?;
            if got != want.as_bytes() {
                return Err(Error::Format(format!(
                    "expected record '{want}', found '{}'",
                    String::from_utf8_lossy(got)
                )));
            }
            let rank = r.u32("rank")? as usize;
            if rank > 8 {
                return Err(Error::Format(format!("{want}: implausible rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u64("dims")? as usize);
            }
            if dims != t.shape() {
                return Err(Error::Geometry {
                    expected: format!("{want} {:?}", t.shape()),
                    found: format!("{want} {dims:?}"),
                });
            }
            let payload = r.take(t.len() * 4, &want)?;
            for (dst, chunk) in t.data_mut().iter_mut().zip(payload.chunks_exact(4)) {
                *dst = T::from_f32(f32::from_le_bytes(chunk.try_into().expect("4 bytes")))
                    .ok_or_else(|| Error::Format(format!("{want}: value out of range")))?;
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    params.ensure_finite()?;
    Ok(Checkpoint { params, state })
}

pub fn save_checkpoint<T: Scalar>(
    params: &ModelParams<T>,
    state: &BTreeMap<String, String>,
    path: &Path,
) -> Result<()> {
    fsutil::write_atomic(path, &encode(params, state)?)
}

pub fn load_checkpoint<T: Scalar>(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint<T>> {
    decode(&fsutil::read(path)?, expected)
}

pub fn save_weights<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    save_checkpoint(params, &BTreeMap::new(), path)
}

pub fn load_weights<T: Scalar>(path: &Path, expected: Option<&ModelConfig>) -> Result<ModelParams<T>> {
    Ok(load_checkpoint(path, expected)?.params)
}
