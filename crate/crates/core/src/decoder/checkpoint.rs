//! CKPT1 checkpoint files.
//!
//! ```text
//! CKPT1\n
//! <name> <dim>...\n      one manifest line per tensor
//! \n                     blank line ends the manifest
//! <f64 LE payload>       tensors in manifest order
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::RealArray;

const MAGIC: &[u8] = b"CKPT1\n";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, RealArray)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&RealArray> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        for (name, t) in &self.tensors {
            if name.is_empty() || name.chars().any(|c| c.is_whitespace()) {
                return Err(Error::Checkpoint(format!("invalid tensor name {name:?}")));
            }
            out.extend_from_slice(name.as_bytes());
            for d in t.shape() {
                out.extend_from_slice(format!(" {d}").as_bytes());
            }
            out.push(b'\n');
        }
        out.push(b'\n');
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut rest = bytes.strip_prefix(MAGIC).ok_or("magic mismatch: expected CKPT1")?;
        let mut manifest = Vec::new();
        loop {
            let nl = rest.iter().position(|&b| b == b'\n').ok_or("unterminated manifest")?;
            let line = std::str::from_utf8(&rest[..nl]).map_err(|_| "manifest is not UTF-8")?;
            rest = &rest[nl + 1..];
            if line.is_empty() {
                break;
            }
            let mut fields = line.split(' ');
            let name = fields.next().unwrap_or_default().to_string();
            let shape = fields
                .map(|f| f.parse::<usize>().map_err(|_| format!("bad dimension {f:?} for {name}")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            manifest.push((name, shape));
        }
        let mut tensors = Vec::with_capacity(manifest.len());
        for (name, shape) in manifest {
            let n: usize = shape.iter().product();
            if rest.len() < n * 8 {
                return Err(format!("truncated payload in tensor {name}"));
            }
            let data = rest[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            rest = &rest[n * 8..];
            let t = RealArray::new(shape, data).map_err(|e| format!("tensor {name}: {e}"))?;
            tensors.push((name, t));
        }
        if !rest.is_empty() {
            return Err(format!("{} trailing bytes", rest.len()));
        }
        Ok(Self { tensors })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|msg| Error::BadFile {
            path: path.to_path_buf(),
            msg,
        })
    }

    /// Writes via a temporary file and rename, so an interrupted write never
    /// clobbers the previous checkpoint.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}
