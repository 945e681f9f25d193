//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "LGCK"
//! version      u8       1
//! precision    u8       bytes per stored value: 8 (f64) or 4 (f32)
//! config_len   u32
//! config       config_len bytes of UTF-8 `key = value` text
//! step         u64
//! entry_count  u32
//! entries      entry_count × entry
//!
//! entry:
//!   kind       u8       0 parameter, 1 buffer, 2 Adam first moment, 3 Adam second moment
//!   name_len   u16
//!   name       name_len bytes of UTF-8
//!   dims       4 × u32  (n, c, h, w)
//!   values     n·c·h·w values; kinds 0–1 use `precision` bytes each, kinds 2–3 are f64
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::networks::{Discriminator, Generator};
use crate::nn::Module;
use crate::tensor::{Real, Shape, Tensor};

const MAGIC: &[u8; 4] = b"LGCK";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EntryKind {
    Parameter = 0,
    Buffer = 1,
    AdamM = 2,
    AdamV = 3,
}

impl EntryKind {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => EntryKind::Parameter,
            1 => EntryKind::Buffer,
            2 => EntryKind::AdamM,
            3 => EntryKind::AdamV,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Values {
    Real(Vec<Real>),
    F64(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub kind: EntryKind,
    pub name: String,
    pub shape: Shape,
    pub values: Values,
}

/// Saved networks, optimiser moments, configuration and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub entries: Vec<Entry>,
}

fn capture_module<M: Module>(net: &M, out: &mut Vec<Entry>) {
    net.visit_params(&mut |p| {
        out.push(Entry {
            kind: EntryKind::Parameter,
            name: p.name().to_string(),
            shape: p.shape(),
            values: Values::Real(p.value().data().to_vec()),
        });
        let (m, v) = p.moments();
        for (kind, data) in [(EntryKind::AdamM, m), (EntryKind::AdamV, v)] {
            out.push(Entry {
                kind,
                name: p.name().to_string(),
                shape: p.shape(),
                values: Values::F64(data.to_vec()),
            });
        }
    });
    net.visit_buffers(&mut |b| {
        out.push(Entry {
            kind: EntryKind::Buffer,
            name: b.name().to_string(),
            shape: Shape::new(b.len(), 1, 1, 1),
            values: Values::Real(b.get()),
        });
    });
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        path: PathBuf::new(),
        detail: detail.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format_err("invalid UTF-8"))
    }
}

impl Checkpoint {
    pub fn capture(
        config: &TrainConfig,
        step: u64,
        gen: &Generator,
        disc: Option<&Discriminator>,
    ) -> Self {
        let mut entries = Vec::new();
        capture_module(gen, &mut entries);
        if let Some(d) = disc {
            capture_module(d, &mut entries);
        }
        Checkpoint {
            config: config.clone(),
            step,
            entries,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.push(std::mem::size_of::<Real>() as u8);
        let cfg = self.config.to_text();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.push(e.kind as u8);
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            for d in e.shape.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &e.values {
                Values::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Values::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(format_err("not a checkpoint (bad magic)"));
        }
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(format_err(format!("unsupported format version {version}")));
        }
        let precision = r.u8()? as usize;
        if precision != std::mem::size_of::<Real>() {
            return Err(format_err(format!(
                "checkpoint stores {precision}-byte values, this build uses {}",
                std::mem::size_of::<Real>()
            )));
        }
        let cfg_len = r.u32()? as usize;
        let config = TrainConfig::parse(&r.string(cfg_len)?)?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let kind_byte = r.u8()?;
            let kind = EntryKind::from_byte(kind_byte)
                .ok_or_else(|| format_err(format!("unknown entry kind {kind_byte}")))?;
            let name_len = r.u16()? as usize;
            let name = r.string(name_len)?;
            let d = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|x| x as usize);
            let shape = Shape::new(d[0], d[1], d[2], d[3]);
            let n = shape.numel();
            let values = match kind {
                EntryKind::Parameter | EntryKind::Buffer => {
                    let raw = r.take(n * precision)?;
                    Values::Real(
                        raw.chunks_exact(precision)
                            .map(|c| Real::from_le_bytes(c.try_into().expect("sized chunk")))
                            .collect(),
                    )
                }
                EntryKind::AdamM | EntryKind::AdamV => {
                    let raw = r.take(n * 8)?;
                    Values::F64(
                        raw.chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                            .collect(),
                    )
                }
            };
            entries.push(Entry {
                kind,
                name,
                shape,
                values,
            });
        }
        if r.pos != bytes.len() {
            return Err(format_err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            step,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { detail, .. } => Error::Format {
                path: path.to_path_buf(),
                detail,
            },
            other => other,
        })
    }

    /// Copy stored values into `net`. Every parameter and buffer must be present.
    pub fn restore<M: Module>(&self, net: &mut M) -> Result<()> {
        let index: HashMap<(EntryKind, &str), &Entry> = self
            .entries
            .iter()
            .map(|e| ((e.kind, e.name.as_str()), e))
            .collect();
        let find = |kind, name: &str| {
            index
                .get(&(kind, name))
                .copied()
                .ok_or_else(|| format_err(format!("missing {kind:?} entry {name}")))
        };
        let mut result = Ok(());
        net.visit_params_mut(&mut |p| {
            if result.is_err() {
                return;
            }
            result = (|| {
                let Values::Real(v) = &find(EntryKind::Parameter, p.name())?.values else {
                    return Err(format_err("parameter stored with moment precision"));
                };
                p.set_value(Tensor::new(p.shape(), v.clone())?)?;
                let m = find(EntryKind::AdamM, p.name())?;
                let v = find(EntryKind::AdamV, p.name())?;
                match (&m.values, &v.values) {
                    (Values::F64(m), Values::F64(v)) => p.set_moments(m.clone(), v.clone()),
                    _ => Err(format_err("moments stored with parameter precision")),
                }
            })();
        });
        result?;
        let mut result = Ok(());
        net.visit_buffers(&mut |b| {
            if result.is_err() {
                return;
            }
            result = match find(EntryKind::Buffer, b.name()) {
                Ok(Entry {
                    values: Values::Real(v),
                    ..
                }) => b.set(v.clone()),
                Ok(_) => Err(format_err("buffer stored with moment precision")),
                Err(e) => Err(e),
            };
        });
        result
    }

    pub fn generator(&self) -> Result<Generator> {
        let mut g = Generator::new(&self.config.model, &mut ChaCha8Rng::seed_from_u64(0))?;
        self.restore(&mut g)?;
        Ok(g)
    }

    pub fn discriminator(&self) -> Result<Discriminator> {
        let mut d = Discriminator::new(&self.config.model, &mut ChaCha8Rng::seed_from_u64(0))?;
        self.restore(&mut d)?;
        Ok(d)
    }
}
