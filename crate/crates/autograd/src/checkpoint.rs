//! Binary parameter snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "MVXCKPT\0"
//! version  u32
//! meta_len u32, meta bytes (UTF-8, caller-defined, usually JSON)
//! count    u32
//! count × { name_len u32, name bytes, ndim u32, dims u64×ndim, f32×numel }
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MVXCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found}, expected {VERSION}")]
    Version { found: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("parameter {name}: checkpoint shape {found:?}, model shape {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("parameter {0} missing from checkpoint")]
    Missing(String),
}

/// Parameters plus caller metadata, as stored on disk.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: String,
    pub params: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore<f32>, meta: impl Into<String>) -> Self {
        Self {
            meta: meta.into(),
            params: store
                .entries()
                .iter()
                .map(|e| (e.name.clone(), e.value.clone()))
                .collect(),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_bytes(w, self.meta.as_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, t) in &self.params {
            write_bytes(w, name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.numel() * 4);
            for &v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        let meta = String::from_utf8(read_bytes(r)?)
            .map_err(|_| CheckpointError::Malformed("metadata is not UTF-8".into()))?;
        let count = read_u32(r)? as usize;
        let mut params = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(r)?)
                .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8".into()))?;
            let ndim = read_u32(r)? as usize;
            if ndim > 8 {
                return Err(CheckpointError::Malformed(format!("{name}: {ndim} dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                read_exact(r, &mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut raw = vec![0u8; numel * 4];
            read_exact(r, &mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push((name, Tensor::from_vec(&shape, data)));
        }
        Ok(Self { meta, params })
    }

    /// Copies stored values into `store` by name. Every store parameter
    /// must be present with a matching shape.
    pub fn load_into(&self, store: &mut ParamStore<f32>) -> Result<(), CheckpointError> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.entry(id).name.clone();
            let Some((_, t)) = self.params.iter().find(|(n, _)| *n == name) else {
                return Err(CheckpointError::Missing(name));
            };
            if t.shape() != store.get(id).shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    found: t.shape().to_vec(),
                    expected: store.get(id).shape().to_vec(),
                });
            }
            *store.get_mut(id) = t.clone();
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CheckpointError> {
        let mut f = io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CheckpointError> {
        let mut f = io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> io::Result<()> {
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => CheckpointError::Malformed("truncated".into()),
        _ => CheckpointError::Io(e),
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>, CheckpointError> {
    let n = read_u32(r)? as usize;
    if n > 1 << 26 {
        return Err(CheckpointError::Malformed(format!("field of {n} bytes")));
    }
    let mut v = vec![0u8; n];
    read_exact(r, &mut v)?;
    Ok(v)
}
