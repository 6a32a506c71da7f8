use crate::error::{Error, Result};

/// Dense row-major array of `f64` values.
///
/// Vectors are 1-D (`[n]`), matrices 2-D (`[rows, cols]`); scalars use
/// shape `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidShape {
                shape,
                len: data.len(),
            });
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::InvalidShape {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        assert!(len > 0, "zero-sized array {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 1-D array; panics on an empty vector.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).ok_or(Error::EmptyInput("from_rows"))?;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Row count when viewed as a matrix (1 for vectors).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Column count when viewed as a matrix.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Matrix product. A 1-D left operand is a row vector and a 1-D right
    /// operand a column vector; the result drops the corresponding axis.
    pub fn matmul(&self, other: &RealArray) -> Result<RealArray> {
        let (m, k) = self.as_lhs()?;
        let (k2, n) = other.as_rhs()?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        let shape = match (self.shape.len(), other.shape.len()) {
            (1, 1) => vec![1],
            (1, _) => vec![n],
            (_, 1) => vec![m],
            _ => vec![m, n],
        };
        Ok(RealArray { shape, data: out })
    }

    pub(crate) fn as_lhs(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [k] => Ok((1, *k)),
            [m, k] => Ok((*m, *k)),
            _ => Err(Error::shape("matmul", &self.shape, &[])),
        }
    }

    pub(crate) fn as_rhs(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [k] => Ok((*k, 1)),
            [k, n] => Ok((*k, *n)),
            _ => Err(Error::shape("matmul", &[], &self.shape)),
        }
    }

    pub fn add(&self, other: &RealArray) -> Result<RealArray> {
        self.zip("add", other, |a, b| a + b)
    }

    pub fn mul(&self, other: &RealArray) -> Result<RealArray> {
        self.zip("mul", other, |a, b| a * b)
    }

    pub fn sigmoid(&self) -> RealArray {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> RealArray {
        self.map(f64::tanh)
    }

    /// Softmax over all elements, with max subtraction.
    pub fn softmax(&self) -> Result<RealArray> {
        if self.data.is_empty() {
            return Err(Error::EmptyInput("softmax"));
        }
        Ok(RealArray {
            shape: self.shape.clone(),
            data: softmax(&self.data),
        })
    }

    fn zip(&self, op: &'static str, other: &RealArray, f: impl Fn(f64, f64) -> f64) -> Result<RealArray> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(RealArray {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub(crate) fn add_assign(&mut self, other: &[f64]) {
        debug_assert_eq!(self.data.len(), other.len());
        for (a, b) in self.data.iter_mut().zip(other) {
            *a += b;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sum of values, accumulated in ascending order so the result does not
/// depend on the order of `values`.
pub(crate) fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let mut scratch = exps.clone();
    let total = sorted_sum(&mut scratch);
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut scratch: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let lse = max + sorted_sum(&mut scratch).ln();
    xs.iter().map(|&x| x - lse).collect()
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}
