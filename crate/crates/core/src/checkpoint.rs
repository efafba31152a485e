//! Self-describing binary container for trained parameters.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SPDCKPT\n"
//! version  u32
//! kind     str      model family tag, e.g. "seq2seq"
//! meta     str      JSON document (hyperparameters, vocabulary, tags)
//! layers   u32      count, then per layer:
//!   name   str
//!   kind   u8       LayerKind code
//!   in     u32
//!   out    u32
//!   params u32      count, then per parameter:
//!     name   str
//!     rank   u32
//!     dims   u64 * rank
//!     values f64 * prod(dims), row-major
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::nn::{LayerKind, LayerSpec, Param};

pub const MAGIC: &[u8; 8] = b"SPDCKPT\n";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerRecord {
    pub name: String,
    pub spec: LayerSpec,
    pub params: Vec<Param>,
}

impl LayerRecord {
    pub fn new(name: impl Into<String>, spec: LayerSpec, params: Vec<&Param>) -> Self {
        Self { name: name.into(), spec, params: params.into_iter().cloned().collect() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Value,
    pub layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, meta: Value) -> Self {
        Self { kind: kind.into(), meta, layers: Vec::new() }
    }

    pub fn push(&mut self, record: LayerRecord) {
        self.layers.push(record);
    }

    /// Removes and returns the named layer, checking its kind.
    pub fn take_layer(&mut self, name: &str, kind: LayerKind) -> Result<LayerRecord> {
        let pos = self
            .layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::Format(format!("missing layer `{name}`")))?;
        let rec = self.layers.remove(pos);
        if rec.spec.kind != kind {
            return Err(Error::Format(format!("layer `{name}` is {:?}, expected {kind:?}", rec.spec.kind)));
        }
        Ok(rec)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Format(format!("checkpoint holds `{}`, expected `{kind}`", self.kind)))
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(w, &self.kind)?;
        write_str(w, &serde_json::to_string(&self.meta)?)?;
        write_u32(w, self.layers.len())?;
        for layer in &self.layers {
            write_str(w, &layer.name)?;
            w.write_all(&[layer.spec.kind.code()])?;
            write_u32(w, layer.spec.input_dim)?;
            write_u32(w, layer.spec.output_dim)?;
            write_u32(w, layer.params.len())?;
            for p in &layer.params {
                write_str(w, p.name())?;
                write_u32(w, p.shape().len())?;
                for &d in p.shape() {
                    w.write_all(&(d as u64).to_le_bytes())?;
                }
                for v in &p.value {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = read_str(r)?;
        let meta: Value = serde_json::from_str(&read_str(r)?)?;
        let n_layers = read_u32(r)?;
        let mut layers = Vec::with_capacity(n_layers.min(1024) as usize);
        for _ in 0..n_layers {
            let name = read_str(r)?;
            let mut code = [0u8; 1];
            r.read_exact(&mut code).map_err(truncated)?;
            let kind = LayerKind::from_code(code[0]).ok_or_else(|| Error::Format(format!("unknown layer kind {}", code[0])))?;
            let spec = LayerSpec { kind, input_dim: read_u32(r)? as usize, output_dim: read_u32(r)? as usize };
            let n_params = read_u32(r)?;
            let mut params = Vec::new();
            for _ in 0..n_params {
                let pname = read_str(r)?;
                let rank = read_u32(r)? as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(read_u64(r)? as usize);
                }
                let len: usize = shape.iter().product();
                let mut values = Vec::with_capacity(len);
                let mut buf = [0u8; 8];
                for _ in 0..len {
                    r.read_exact(&mut buf).map_err(truncated)?;
                    values.push(f64::from_le_bytes(buf));
                }
                params.push(Param::from_values(pname, &shape, values));
            }
            layers.push(LayerRecord { name, spec, params });
        }
        Ok(Self { kind, meta, layers })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

/// Copies values from a loaded record into live parameters, checking names' count and shapes.
pub fn restore(record: LayerRecord, targets: Vec<&mut Param>) -> Result<()> {
    if record.params.len() != targets.len() {
        return Err(Error::Format(format!(
            "layer `{}` has {} params, expected {}",
            record.name,
            record.params.len(),
            targets.len()
        )));
    }
    for (src, dst) in record.params.into_iter().zip(targets) {
        if src.shape() != dst.shape() {
            return Err(Error::Format(format!(
                "param `{}` shape {:?} does not match {:?}",
                src.name(),
                src.shape(),
                dst.shape()
            )));
        }
        dst.value = src.value;
    }
    Ok(())
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("truncated checkpoint".into())
    } else {
        Error::Io(e)
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| Error::Format("invalid UTF-8 string".into()))
}
