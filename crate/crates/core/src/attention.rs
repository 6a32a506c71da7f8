//! Soft spatial attention over the locations of one image.
//!
//! Scores are additive: `e_j = w_scoreᵀ tanh(W_hᵀ h + W_xᵀ x_j + b)`, the
//! weights are `softmax(e)` and the context is `z = Σ_j α_j x_j`.

use crate::error::{Error, Result};
use crate::numerics::{Graph, RealArray, Var};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `[D × A]`
    pub w_h: RealArray,
    /// `[D × A]`
    pub w_x: RealArray,
    /// `[A]`
    pub w_score: RealArray,
    /// `[A]`
    pub b_attn: RealArray,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w_h: Var,
    pub w_x: Var,
    pub w_score: Var,
    pub b_attn: Var,
}

impl AttentionParams {
    pub fn zeros(hidden: usize, attn: usize) -> Self {
        Self {
            w_h: RealArray::zeros(&[hidden, attn]),
            w_x: RealArray::zeros(&[hidden, attn]),
            w_score: RealArray::zeros(&[attn]),
            b_attn: RealArray::zeros(&[attn]),
        }
    }

    /// Uniform in `±1/√hidden`.
    pub fn init(rng: &mut SplitMix64, hidden: usize, attn: usize) -> Self {
        let r = 1.0 / (hidden as f64).sqrt();
        let mut p = Self::zeros(hidden, attn);
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-r, r));
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.w_h.rows()
    }

    pub fn attn(&self) -> usize {
        self.w_h.cols()
    }

    pub fn tensors(&self) -> [(&'static str, &RealArray); 4] {
        [("w_h", &self.w_h), ("w_x", &self.w_x), ("w_score", &self.w_score), ("b_attn", &self.b_attn)]
    }

    pub fn tensors_mut(&mut self) -> [&mut RealArray; 4] {
        [&mut self.w_h, &mut self.w_x, &mut self.w_score, &mut self.b_attn]
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a>) -> AttentionVars {
        AttentionVars {
            w_h: g.param(&self.w_h),
            w_x: g.param(&self.w_x),
            w_score: g.param(&self.w_score),
            b_attn: g.param(&self.b_attn),
        }
    }
}

/// Location keys `X · W_x`, shared by every step that attends to the same image.
pub fn project_keys(g: &mut Graph<'_>, p: &AttentionVars, locations: Var) -> Result<Var> {
    g.matmul(locations, p.w_x)
}

/// Attention weights and context for one step, given precomputed keys.
pub fn attend_on(g: &mut Graph<'_>, p: &AttentionVars, h_prev: Var, locations: Var, keys: Var) -> Result<(Var, Var)> {
    let query = g.matmul(h_prev, p.w_h)?;
    let query = g.add(query, p.b_attn)?;
    let hidden = g.add_rows(keys, query)?;
    let hidden = g.tanh(hidden);
    let scores = g.matmul(hidden, p.w_score)?;
    let alpha = g.softmax(scores)?;
    let z = g.weighted_rows(alpha, locations)?;
    Ok((alpha, z))
}

/// Returns `(alpha [M], z [D])` for `h_prev [D]` and `locations [M × D]`.
pub fn attend(h_prev: &RealArray, locations: &RealArray, params: &AttentionParams) -> Result<(RealArray, RealArray)> {
    if locations.shape().len() != 2 {
        return Err(Error::EmptyInput("attend"));
    }
    if h_prev.shape() != [params.hidden()] || locations.cols() != params.hidden() {
        return Err(Error::shape("attend", h_prev.shape(), locations.shape()));
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let h = g.constant_ref(h_prev);
    let x = g.constant_ref(locations);
    let keys = project_keys(&mut g, &p, x)?;
    let (alpha, z) = attend_on(&mut g, &p, h, x, keys)?;
    Ok((g.value(alpha).clone(), g.value(z).clone()))
}
