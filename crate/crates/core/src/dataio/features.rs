use std::path::Path;

use super::embedding::{parse_numbers, split_line, take};
use crate::error::{Error, Result};
use crate::numerics::RealArray;

const MAGIC: &[u8] = b"FEAT1\n";

/// Spatial feature map of one image: `M` locations × `D_raw` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub values: RealArray,
}

impl FeatureGrid {
    pub fn new(values: RealArray) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::shape("feature grid", values.shape(), &[]));
        }
        Ok(Self { values })
    }

    pub fn locations(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

/// Encodes `grids` (one per image, all the same shape) as a FEAT1 file.
pub fn encode_features(grids: &[FeatureGrid]) -> Result<Vec<u8>> {
    let first = grids.first().ok_or(Error::EmptyInput("encode_features"))?;
    let (m, d) = (first.locations(), first.dim());
    let mut out = Vec::with_capacity(32 + grids.len() * m * d * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(format!("{} {} {}\n", grids.len(), m, d).as_bytes());
    for g in grids {
        if g.values.shape() != first.values.shape() {
            return Err(Error::shape("encode_features", first.values.shape(), g.values.shape()));
        }
        for &v in g.values.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> std::result::Result<Vec<FeatureGrid>, String> {
    let rest = bytes.strip_prefix(MAGIC).ok_or("magic mismatch: expected FEAT1")?;
    let (header, mut rest) = split_line(rest).ok_or("missing header line")?;
    let (n, m, d) = match parse_numbers(header)?.as_slice() {
        [n, m, d] => (*n, *m, *d),
        _ => return Err("header must be `N M D_raw`".into()),
    };
    if n == 0 || m == 0 || d == 0 {
        return Err("zero-sized feature block".into());
    }
    if rest.len() != n * m * d * 4 {
        return Err(format!("payload is {} bytes, expected {}", rest.len(), n * m * d * 4));
    }
    let mut grids = Vec::with_capacity(n);
    for img in 0..n {
        let mut data = Vec::with_capacity(m * d);
        for _ in 0..m * d {
            let v = f32::from_le_bytes(take::<4>(&mut rest).expect("length checked"));
            if !v.is_finite() {
                return Err(format!("image {img}: non-finite value"));
            }
            data.push(v as f64);
        }
        grids.push(FeatureGrid {
            values: RealArray::matrix(m, d, data).expect("sizes checked"),
        });
    }
    Ok(grids)
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureGrid>> {
    let bytes = std::fs::read(path)?;
    decode_features(&bytes).map_err(|msg| Error::BadFile {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn write_features(path: &Path, grids: &[FeatureGrid]) -> Result<()> {
    std::fs::write(path, encode_features(grids)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_payload_layout() {
        let g = FeatureGrid::new(RealArray::matrix(2, 1, vec![1.0, -2.0]).unwrap()).unwrap();
        let bytes = encode_features(&[g.clone(), g]).unwrap();
        assert!(bytes.starts_with(b"FEAT1\n2 2 1\n"));
        assert_eq!(bytes.len(), 12 + 16);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_short_payload() {
        let err = decode_features(b"FEAT1\n1 1 2\n\0\0\0\0").unwrap_err();
        assert!(err.contains("expected 8"), "{err}");
    }
}
