//! One step of the attention LSTM cell.
//!
//! ```text
//! i, f, o = σ(x·W_x + h·W_h + z·W_z + b)
//! q       = tanh(x·W_x + h·W_h + z·W_z + b)
//! c       = f ⊙ c_prev + i ⊙ q
//! h       = o ⊙ tanh(c)
//! ```

use crate::error::{Error, Result};
use crate::numerics::{Graph, RealArray, Var};
use crate::rng::SplitMix64;

/// Gate order used by every per-gate array.
pub const GATES: [&str; 4] = ["i", "f", "o", "q"];
const FORGET: usize = 1;
const UPDATE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `[D_in × D]` per gate.
    pub w_x: [RealArray; 4],
    /// `[D × D]` per gate.
    pub w_h: [RealArray; 4],
    /// `[D_z × D]` per gate.
    pub w_z: [RealArray; 4],
    /// `[D]` per gate.
    pub b: [RealArray; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: RealArray,
    pub c: RealArray,
}

impl CellState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: RealArray::zeros(&[hidden]),
            c: RealArray::zeros(&[hidden]),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CellVars {
    pub h: Var,
    pub c: Var,
}

impl CellVars {
    pub fn value(&self, g: &Graph<'_>) -> CellState {
        CellState {
            h: g.value(self.h).clone(),
            c: g.value(self.c).clone(),
        }
    }

    pub fn constant<'a>(g: &mut Graph<'a>, state: &'a CellState) -> Self {
        Self {
            h: g.constant_ref(&state.h),
            c: g.constant_ref(&state.c),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_x: [Var; 4],
    pub w_h: [Var; 4],
    pub w_z: [Var; 4],
    pub b: [Var; 4],
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize, context: usize) -> Self {
        Self {
            w_x: std::array::from_fn(|_| RealArray::zeros(&[input, hidden])),
            w_h: std::array::from_fn(|_| RealArray::zeros(&[hidden, hidden])),
            w_z: std::array::from_fn(|_| RealArray::zeros(&[context, hidden])),
            b: std::array::from_fn(|_| RealArray::zeros(&[hidden])),
        }
    }

    /// Uniform in `±1/√D`, forget-gate bias 1.
    pub fn init(rng: &mut SplitMix64, input: usize, hidden: usize, context: usize) -> Self {
        let r = 1.0 / (hidden as f64).sqrt();
        let mut p = Self::zeros(input, hidden, context);
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-r, r));
        }
        p.b[FORGET].data_mut().iter_mut().for_each(|v| *v = 1.0);
        p
    }

    pub fn input(&self) -> usize {
        self.w_x[0].rows()
    }

    pub fn hidden(&self) -> usize {
        self.w_h[0].rows()
    }

    pub fn context(&self) -> usize {
        self.w_z[0].rows()
    }

    /// `(name, tensor)` pairs in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &RealArray)> {
        let mut out = Vec::with_capacity(16);
        for (k, gate) in GATES.iter().enumerate() {
            out.push((format!("w_x{gate}"), &self.w_x[k]));
            out.push((format!("w_h{gate}"), &self.w_h[k]));
            out.push((format!("w_z{gate}"), &self.w_z[k]));
            out.push((format!("b_{gate}"), &self.b[k]));
        }
        out
    }

    /// Same order as [`LstmParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut RealArray> {
        let mut out = Vec::with_capacity(16);
        for (((x, h), z), b) in self.w_x.iter_mut().zip(&mut self.w_h).zip(&mut self.w_z).zip(&mut self.b) {
            out.extend([x, h, z, b]);
        }
        out
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a>) -> LstmVars {
        LstmVars {
            w_x: std::array::from_fn(|k| g.param(&self.w_x[k])),
            w_h: std::array::from_fn(|k| g.param(&self.w_h[k])),
            w_z: std::array::from_fn(|k| g.param(&self.w_z[k])),
            b: std::array::from_fn(|k| g.param(&self.b[k])),
        }
    }
}

impl LstmVars {
    /// Handles in [`LstmParams::tensors`] order.
    pub fn all(&self) -> Vec<Var> {
        (0..4).flat_map(|k| [self.w_x[k], self.w_h[k], self.w_z[k], self.b[k]]).collect()
    }
}

/// One recurrence step on the graph.
pub fn step_on(g: &mut Graph<'_>, p: &LstmVars, x: Var, z: Var, prev: CellVars) -> Result<CellVars> {
    let mut gates = [x; 4];
    for (k, gate) in gates.iter_mut().enumerate() {
        let from_x = g.matmul(x, p.w_x[k])?;
        let from_h = g.matmul(prev.h, p.w_h[k])?;
        let from_z = g.matmul(z, p.w_z[k])?;
        let pre = g.add_n(&[from_x, from_h, from_z, p.b[k]])?;
        *gate = if k == UPDATE { g.tanh(pre) } else { g.sigmoid(pre) };
    }
    let [i, f, o, q] = gates;
    let keep = g.mul(f, prev.c)?;
    let write = g.mul(i, q)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok(CellVars { h, c })
}

/// Value-level step: `x [D_in]`, `z [D_z]`.
pub fn step(x: &RealArray, z: &RealArray, prev: &CellState, params: &LstmParams) -> Result<CellState> {
    let d = params.hidden();
    if x.shape() != [params.input()] {
        return Err(Error::shape("lstm step (x)", x.shape(), &[params.input()]));
    }
    if z.shape() != [params.context()] {
        return Err(Error::shape("lstm step (z)", z.shape(), &[params.context()]));
    }
    if prev.h.shape() != [d] || prev.c.shape() != [d] {
        return Err(Error::shape("lstm step (state)", prev.h.shape(), prev.c.shape()));
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let xv = g.constant_ref(x);
    let zv = g.constant_ref(z);
    let state = CellVars::constant(&mut g, prev);
    Ok(step_on(&mut g, &p, xv, zv, state)?.value(&g))
}
