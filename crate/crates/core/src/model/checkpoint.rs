//! Weight checkpoints.
//!
//! Layout (little-endian): magic `SLPCKPT\0`, `u32` version, `u32` length
//! of the model configuration text followed by that text, `u32` tensor
//! count, then one manifest entry per tensor (`u32` name length, name,
//! `u8` kind, `u8` dtype, `u32` rows, `u32` cols) and finally the raw
//! payloads in manifest order.

use std::path::Path;

use ndarray::Array2;

use super::params::TensorKind;
use super::{Model, ModelConfig};
use crate::config::ConfigFile;
use crate::scalar::DType;
use crate::signal::io::ByteReader;
use crate::{Error, Result, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SLPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

impl<T: Scalar> Model<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut cfg = ConfigFile::default();
        self.config.write_config(&mut cfg, "model");
        let text = cfg.to_text();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for t in self.store.iter() {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.kind.code());
            out.push(T::DTYPE.code());
            out.extend_from_slice(&(t.value.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.value.ncols() as u32).to_le_bytes());
        }
        for t in self.store.iter() {
            for &v in t.value.iter() {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// Parses a checkpoint; payloads of another float width are converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("config is not UTF-8".into()))?;
        let config = ModelConfig::from_config(&ConfigFile::parse(text)?, "model")?;
        let mut model = Model::<T>::new(config, 0)?;

        let count = r.u32()? as usize;
        if count != model.store.len() {
            return Err(Error::Format(format!(
                "checkpoint has {count} tensors, layout needs {}",
                model.store.len()
            )));
        }
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let kind = TensorKind::from_code(r.u8()?)
                .ok_or_else(|| Error::Format(format!("{name}: bad kind")))?;
            let dtype = DType::from_code(r.u8()?)
                .ok_or_else(|| Error::Format(format!("{name}: bad dtype")))?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let id = model
                .store
                .find(&name)
                .ok_or_else(|| Error::Format(format!("unexpected tensor {name}")))?;
            let expected = model.store.get(id);
            if expected.value.dim() != (rows, cols) || expected.kind != kind {
                return Err(Error::Format(format!(
                    "{name}: stored {rows}x{cols} {kind:?}, layout expects {:?} {:?}",
                    expected.value.dim(),
                    expected.kind
                )));
            }
            manifest.push((id, dtype, rows, cols));
        }
        for (id, dtype, rows, cols) in manifest {
            let raw = r.take(rows * cols * dtype.size())?;
            let values: Vec<T> = match dtype {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| T::of(f32::read_le(c).f64()))
                    .collect(),
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| T::of(f64::read_le(c)))
                    .collect(),
            };
            *model.store.value_mut(id) = Array2::from_shape_vec((rows, cols), values).unwrap();
        }
        r.finish()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
