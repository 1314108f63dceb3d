//! Flat named-tensor file for [`CaaParams`].
//!
//! Layout (all integers little-endian `u32`, all floats little-endian `f64`):
//!
//! ```text
//! magic "CAAP" | version=1 | layers | dim | heads | tensor_count
//! per tensor: name_len | name (utf-8) | rows | cols | rows·cols values (row-major)
//! ```
//!
//! Tensors appear in declaration order ([`CaaParams::tensors`]).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Mat;

use super::caa::{CaaConfig, CaaParams};
use super::MatchError;

const MAGIC: &[u8; 4] = b"CAAP";
const VERSION: u32 = 1;

impl CaaParams {
    pub fn save_to(&self, w: &mut impl Write) -> Result<(), MatchError> {
        let config = self.config();
        w.write_all(MAGIC)?;
        for v in [
            VERSION,
            config.layers as u32,
            config.dim as u32,
            config.heads as u32,
            self.tensors().len() as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for (name, tensor) in self.tensors() {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(tensor.nrows() as u32).to_le_bytes())?;
            w.write_all(&(tensor.ncols() as u32).to_le_bytes())?;
            for r in 0..tensor.nrows() {
                for c in 0..tensor.ncols() {
                    w.write_all(&tensor[(r, c)].to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn load_from(r: &mut impl Read) -> Result<Self, MatchError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(MatchError::BadParamsFile("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(MatchError::BadParamsFile(format!(
                "unsupported version {version}"
            )));
        }
        let layers = read_u32(r)? as usize;
        let dim = read_u32(r)? as usize;
        let heads = read_u32(r)? as usize;
        let count = read_u32(r)? as usize;
        let config = CaaConfig { layers, dim, heads };
        let mut params = CaaParams::zeros(config)?;
        let expected = params.tensors().len();
        if count != expected {
            return Err(MatchError::BadParamsFile(format!(
                "expected {expected} tensors, file has {count}"
            )));
        }
        let mut loaded: Vec<(String, Mat)> = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            if name_len > 4096 {
                return Err(MatchError::BadParamsFile("tensor name too long".into()));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| MatchError::BadParamsFile("tensor name not utf-8".into()))?;
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            let mut tensor = Mat::zeros(rows, cols);
            let mut buf = [0u8; 8];
            for rr in 0..rows {
                for cc in 0..cols {
                    r.read_exact(&mut buf)?;
                    tensor[(rr, cc)] = f64::from_le_bytes(buf);
                }
            }
            loaded.push((name, tensor));
        }
        let mut idx = 0;
        let mut err: Option<String> = None;
        params.for_each_tensor_mut(|name, tensor| {
            let (got_name, got) = &loaded[idx];
            if got_name != name {
                err.get_or_insert(format!("tensor {idx}: expected {name}, found {got_name}"));
            } else if got.shape() != tensor.shape() {
                err.get_or_insert(format!(
                    "tensor {name}: expected shape {:?}, found {:?}",
                    tensor.shape(),
                    got.shape()
                ));
            } else {
                tensor.copy_from(got);
            }
            idx += 1;
        });
        if let Some(msg) = err {
            return Err(MatchError::BadParamsFile(msg));
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MatchError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.save_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MatchError> {
        Self::load_from(&mut BufReader::new(File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, MatchError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
