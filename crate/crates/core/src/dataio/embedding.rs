use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::RealArray;

pub const NULL_TOKEN: &str = "<NULL>";
pub const SOS_TOKEN: &str = "<SOS>";

const MAGIC: &[u8] = b"EMB1\n";

/// Token → vector table, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: RealArray,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn new(tokens: Vec<String>, vectors: RealArray) -> Result<Self> {
        if vectors.shape().len() != 2 || vectors.rows() != tokens.len() {
            return Err(Error::shape("embedding table", &[tokens.len()], vectors.shape()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::DuplicateToken(t.clone()));
            }
        }
        Ok(Self {
            tokens,
            index,
            vectors,
            trainable: true,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        self.vectors.row(id)
    }

    pub fn vectors(&self) -> &RealArray {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut RealArray {
        &mut self.vectors
    }

    /// Replaces the vectors, keeping the vocabulary.
    pub fn set_vectors(&mut self, vectors: RealArray) -> Result<()> {
        if vectors.shape() != self.vectors.shape() {
            return Err(Error::shape("set_vectors", self.vectors.shape(), vectors.shape()));
        }
        self.vectors = vectors;
        Ok(())
    }

    pub fn null_id(&self) -> Result<usize> {
        self.id(NULL_TOKEN).ok_or_else(|| Error::UnknownToken(NULL_TOKEN.into()))
    }

    /// Word tables must carry both reserved tokens.
    pub fn require_reserved(&self) -> Result<()> {
        for t in [NULL_TOKEN, SOS_TOKEN] {
            if self.id(t).is_none() {
                return Err(Error::UnknownToken(t.into()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(16 + self.len() * (8 + 4 * dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(format!("{} {}\n", self.len(), dim).as_bytes());
        for (i, t) in self.tokens.iter().enumerate() {
            out.extend_from_slice(&(t.len() as u16).to_le_bytes());
            out.extend_from_slice(t.as_bytes());
            for &v in self.vectors.row(i) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let rest = bytes.strip_prefix(MAGIC).ok_or("magic mismatch: expected EMB1")?;
        let (header, mut rest) = split_line(rest).ok_or("missing header line")?;
        let (count, dim) = match parse_numbers(header)?.as_slice() {
            [c, d] => (*c, *d),
            _ => return Err("header must be `count dim`".into()),
        };
        if count == 0 || dim == 0 {
            return Err("empty table".into());
        }
        let mut tokens = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for entry in 0..count {
            let len = u16::from_le_bytes(take::<2>(&mut rest).ok_or_else(|| truncated(entry))?) as usize;
            if rest.len() < len {
                return Err(truncated(entry));
            }
            let token = std::str::from_utf8(&rest[..len])
                .map_err(|_| format!("entry {entry}: token is not UTF-8"))?
                .to_string();
            rest = &rest[len..];
            for _ in 0..dim {
                let v = f32::from_le_bytes(take::<4>(&mut rest).ok_or_else(|| truncated(entry))?);
                if !v.is_finite() {
                    return Err(format!("entry {entry} ({token:?}): non-finite value"));
                }
                data.push(v as f64);
            }
            tokens.push(token);
        }
        if !rest.is_empty() {
            return Err(format!("{} trailing bytes", rest.len()));
        }
        let vectors = RealArray::matrix(count, dim, data).map_err(|e| e.to_string())?;
        Self::new(tokens, vectors).map_err(|e| e.to_string())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|msg| Error::BadFile {
            path: path.to_path_buf(),
            msg,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

fn truncated(entry: usize) -> String {
    format!("truncated payload at entry {entry}")
}

pub(crate) fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let nl = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..nl], &bytes[nl + 1..]))
}

pub(crate) fn parse_numbers(line: &[u8]) -> std::result::Result<Vec<usize>, String> {
    let text = std::str::from_utf8(line).map_err(|_| "header is not ASCII".to_string())?;
    text.split(' ')
        .map(|t| t.parse::<usize>().map_err(|_| format!("bad header field {t:?}")))
        .collect()
}

pub(crate) fn take<const N: usize>(rest: &mut &[u8]) -> Option<[u8; N]> {
    if rest.len() < N {
        return None;
    }
    let (head, tail) = rest.split_at(N);
    *rest = tail;
    head.try_into().ok()
}
