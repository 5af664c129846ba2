//! Binary weight file: `SREW` magic, u32 version, u32 entry count, then
//! per entry a u16 name length, UTF-8 name, u8 dtype, u8 rank, u32 dims and
//! a little-endian payload. A CRC32 of everything after the 12-byte header
//! closes the file.
//!
//! dtype 0 is f32 (parameters and moments), 1 is u64 (counters) and 2 is
//! u8 (the UTF-8 config echo).

use std::path::Path;

use crate::autodiff::{AdamConfig, AdamState, ParamSet, Tensor};
use crate::config::FlatConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SREW";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_U64: u8 = 1;
const DTYPE_U8: u8 = 2;

/// Parameters plus optimizer state and progress counters.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet<f32>,
    pub adam: AdamState<f32>,
    pub epoch: u64,
    pub step: u64,
    pub config: FlatConfig,
}

enum Payload<'a> {
    F32(&'a [usize], &'a [f32]),
    U64(u64),
    Bytes(&'a [u8]),
}

fn put_entry(buf: &mut Vec<u8>, name: &str, payload: Payload<'_>) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("entry name too long: {name}")))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    match payload {
        Payload::F32(shape, data) => {
            buf.push(DTYPE_F32);
            buf.push(shape.len() as u8);
            for &d in shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Payload::U64(v) => {
            buf.push(DTYPE_U64);
            buf.push(1);
            buf.extend_from_slice(&1u32.to_le_bytes());
            buf.extend_from_slice(&v.to_le_bytes());
        }
        Payload::Bytes(b) => {
            buf.push(DTYPE_U8);
            buf.push(1);
            buf.extend_from_slice(&(b.len() as u32).to_le_bytes());
            buf.extend_from_slice(b);
        }
    }
    Ok(())
}

impl Checkpoint {
    /// Fresh state for `params` at step 0.
    pub fn new(params: ParamSet<f32>, config: FlatConfig) -> Self {
        let adam = AdamState::new(&params);
        Checkpoint {
            params,
            adam,
            epoch: 0,
            step: 0,
            config,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut body = Vec::new();
        let mut count: u32 = 0;
        let text = self.config.to_text();
        let mut put = |name: &str, p: Payload<'_>| {
            count += 1;
            put_entry(&mut body, name, p)
        };
        put("meta/epoch", Payload::U64(self.epoch))?;
        put("meta/step", Payload::U64(self.step))?;
        put("meta/adam_t", Payload::U64(self.adam.t))?;
        put("meta/config", Payload::Bytes(text.as_bytes()))?;
        for (prefix, set) in [("param", &self.params), ("adam.m", &self.adam.m), ("adam.v", &self.adam.v)] {
            for (name, t) in set.iter() {
                put(&format!("{prefix}/{name}"), Payload::F32(t.shape(), t.data()))?;
            }
        }
        let mut out = Vec::with_capacity(body.len() + 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&body);
        out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format(format!(
                "not a weight file: expected magic \"SREW\", found {:?}",
                String::from_utf8_lossy(&bytes[..bytes.len().min(4)])
            )));
        }
        if bytes.len() < 16 {
            return Err(Error::Format("truncated weight file header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported weight file version {version} (expected {VERSION})")));
        }
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let body = &bytes[12..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(Error::Format("weight file checksum mismatch (truncated or corrupt)".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        let mut params = ParamSet::new();
        let mut m = ParamSet::new();
        let mut v = ParamSet::new();
        let (mut epoch, mut step, mut adam_t, mut config) = (None, None, None, None);
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            match dtype {
                DTYPE_F32 => {
                    let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("entry too large".into()))?)?;
                    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                    let t = Tensor::new(&dims, data).map_err(|e| Error::Format(e.to_string()))?;
                    let (prefix, pname) = name
                        .split_once('/')
                        .ok_or_else(|| Error::Format(format!("unexpected entry '{name}'")))?;
                    match prefix {
                        "param" => params.insert(pname, t),
                        "adam.m" => m.insert(pname, t),
                        "adam.v" => v.insert(pname, t),
                        _ => return Err(Error::Format(format!("unexpected entry '{name}'"))),
                    }
                }
                DTYPE_U64 => {
                    if n != 1 {
                        return Err(Error::Format(format!("counter '{name}' must hold one value")));
                    }
                    let val = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
                    match name.as_str() {
                        "meta/epoch" => epoch = Some(val),
                        "meta/step" => step = Some(val),
                        "meta/adam_t" => adam_t = Some(val),
                        _ => return Err(Error::Format(format!("unexpected entry '{name}'"))),
                    }
                }
                DTYPE_U8 => {
                    let raw = r.take(n)?;
                    if name != "meta/config" {
                        return Err(Error::Format(format!("unexpected entry '{name}'")));
                    }
                    let text = std::str::from_utf8(raw).map_err(|_| Error::Format("config echo is not UTF-8".into()))?;
                    config = Some(FlatConfig::parse(text).map_err(|e| Error::Format(e.to_string()))?);
                }
                other => return Err(Error::Format(format!("unknown dtype tag {other} in entry '{name}'"))),
            }
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes after the last entry".into()));
        }
        let missing = |what: &str| Error::Format(format!("weight file lacks {what}"));
        let adam = AdamState {
            m,
            v,
            t: adam_t.ok_or_else(|| missing("meta/adam_t"))?,
            config: AdamConfig::default(),
        };
        let names = |s: &ParamSet<f32>| s.names().map(str::to_string).collect::<Vec<_>>();
        if names(&params) != names(&adam.m) || names(&params) != names(&adam.v) {
            return Err(Error::Format("optimizer moments do not match the parameter set".into()));
        }
        Ok(Checkpoint {
            params,
            adam,
            epoch: epoch.ok_or_else(|| missing("meta/epoch"))?,
            step: step.ok_or_else(|| missing("meta/step"))?,
            config: config.ok_or_else(|| missing("meta/config"))?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("weight file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
