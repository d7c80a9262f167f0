//! Checkpoint files: a UTF-8 text header followed by raw parameter data.
//!
//! ```text
//! ARTIC-CHECKPOINT 1
//! config <n>
//! <key>=<value>            (n lines, the model configuration)
//! params <m>
//! <name> <d0,d1,...> <byte offset>   (m lines, manifest order)
//! end
//! <little-endian f32 arrays, concatenated in manifest order>
//! ```
//!
//! Offsets are relative to the first byte after the `end` line.

use std::path::Path;

use super::params::ParamStore;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &str = "ARTIC-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;

/// Parsed contents of a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub params: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    /// Captures `store` (rounded to 32 bits) together with a config echo.
    pub fn from_store<T: Scalar>(config: Vec<(String, String)>, store: &ParamStore<T>) -> Self {
        Self {
            config,
            params: store
                .iter()
                .map(|p| (p.name.clone(), p.value.cast::<f32>()))
                .collect(),
        }
    }

    /// Overwrites every parameter of `store` with the checkpoint's values.
    ///
    /// Names and shapes must match exactly, with nothing missing or extra.
    pub fn load_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, value) in &self.params {
            let p = store
                .by_name_mut(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            if p.value.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} in checkpoint, {:?} in model",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value.cast();
        }
        Ok(())
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC} {FORMAT_VERSION}\nconfig {}\n", self.config.len());
        for (k, v) in &self.config {
            header.push_str(&format!("{k}={v}\n"));
        }
        header.push_str(&format!("params {}\n", self.params.len()));
        let mut offset = 0usize;
        for (name, t) in &self.params {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            header.push_str(&format!("{name} {} {offset}\n", dims.join(",")));
            offset += t.numel() * 4;
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        out.reserve(offset);
        for (_, t) in &self.params {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut lines = HeaderReader {
            bytes,
            pos: 0,
            line: 0,
        };
        let first = lines.next_line()?;
        let version = first
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| lines.err("missing checkpoint magic"))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(lines.err(&format!("unsupported format version {version}")));
        }
        let n_config = lines.count_line("config")?;
        let mut config = Vec::with_capacity(n_config);
        for _ in 0..n_config {
            let l = lines.next_line()?;
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| lines.err("config line without '='"))?;
            config.push((k.to_string(), v.to_string()));
        }
        let n_params = lines.count_line("params")?;
        let mut manifest = Vec::with_capacity(n_params);
        let mut expected_offset = 0usize;
        for _ in 0..n_params {
            let l = lines.next_line()?;
            let fields: Vec<&str> = l.split(' ').collect();
            let [name, dims, offset] = fields[..] else {
                return Err(lines.err("manifest line needs name, shape and offset"));
            };
            let shape = dims
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| lines.err("bad shape"))?;
            let offset: usize = offset.parse().map_err(|_| lines.err("bad offset"))?;
            if offset != expected_offset {
                return Err(lines.err("offsets out of manifest order"));
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n > 0)
                .ok_or_else(|| lines.err("bad shape"))?;
            expected_offset += numel * 4;
            manifest.push((name.to_string(), shape, offset, numel));
        }
        if lines.next_line()? != "end" {
            return Err(lines.err("expected 'end'"));
        }
        let data = &bytes[lines.pos..];
        if data.len() != expected_offset {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, manifest describes {expected_offset}",
                data.len()
            )));
        }
        let mut params = Vec::with_capacity(manifest.len());
        for (name, shape, offset, numel) in manifest {
            let values = data[offset..offset + numel * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push((name, Tensor::new(shape, values)?));
        }
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> HeaderReader<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Checkpoint(format!("header line {}: {msg}", self.line))
    }

    fn next_line(&mut self) -> Result<&'a str> {
        let bytes: &'a [u8] = self.bytes;
        let rest = &bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| {
            Error::Checkpoint(format!("truncated header after line {}", self.line))
        })?;
        let s = std::str::from_utf8(&rest[..end]).map_err(|_| {
            Error::Checkpoint(format!("header line {} is not UTF-8", self.line + 1))
        })?;
        self.pos += end + 1;
        self.line += 1;
        Ok(s)
    }

    fn count_line(&mut self, key: &str) -> Result<usize> {
        let l = self.next_line()?.to_string();
        l.strip_prefix(key)
            .and_then(|r| r.trim().parse().ok())
            .ok_or_else(|| self.err(&format!("expected '{key} <count>'")))
    }
}
