use crate::attention::{AttentionParams, AttentionVars};
use crate::dataio::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numerics::{Gradients, Graph, RealArray, Var};
use crate::recurrent::{LstmParams, LstmVars};
use crate::rng::SplitMix64;

use super::checkpoint::Checkpoint;

/// Every learnable tensor of the hierarchical decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    /// Per-location projection of raw features, `[D_raw × D]`.
    pub proj_raw: RealArray,
    /// Sentence-layer initial hidden state head.
    pub sent_init_w: RealArray,
    pub sent_init_b: RealArray,
    /// Word-layer initial hidden state head.
    pub word_init_w: RealArray,
    pub word_init_b: RealArray,
    pub s_lstm: LstmParams,
    pub w_lstm: LstmParams,
    pub attn: AttentionParams,
    pub word_table: EmbeddingTable,
    /// Gold sentence vectors, used only while training.
    pub sentence_table: EmbeddingTable,
    /// Learned start sentence vector.
    pub s0: RealArray,
    /// Output head `[D × |V|]`.
    pub out_w: RealArray,
    pub out_b: RealArray,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub raw_dim: usize,
    pub hidden: usize,
    pub attn: usize,
}

impl ModelDims {
    /// Attention size defaults to half the hidden size.
    pub fn new(raw_dim: usize, hidden: usize) -> Self {
        Self {
            raw_dim,
            hidden,
            attn: (hidden / 2).max(1),
        }
    }
}

/// Graph handles for every parameter tensor.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub proj_raw: Var,
    pub sent_init_w: Var,
    pub sent_init_b: Var,
    pub word_init_w: Var,
    pub word_init_b: Var,
    pub s_lstm: LstmVars,
    pub w_lstm: LstmVars,
    pub attn: AttentionVars,
    pub word_table: Var,
    pub sentence_table: Var,
    pub s0: Var,
    pub out_w: Var,
    pub out_b: Var,
    /// All of the above in [`ModelParameters::named`] order.
    order: Vec<Var>,
}

impl ModelParameters {
    /// Fresh parameters uniform in `±1/√D` (forget-gate biases 1). The
    /// embedding tables are taken as given.
    pub fn init(dims: ModelDims, word_table: EmbeddingTable, sentence_table: EmbeddingTable, seed: u64) -> Result<Self> {
        let d = dims.hidden;
        word_table.require_reserved()?;
        for (name, t) in [("word", &word_table), ("sentence", &sentence_table)] {
            if t.dim() != d {
                return Err(Error::Config(format!(
                    "{name} embeddings have dim {}, hidden size is {d}",
                    t.dim()
                )));
            }
        }
        let mut rng = SplitMix64::stream(seed, 0x1417);
        let r = 1.0 / (d as f64).sqrt();
        let mut uniform = |shape: &[usize]| {
            let n = shape.iter().product();
            RealArray::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-r, r)).collect()).expect("valid shape")
        };
        let v = word_table.len();
        let proj_raw = uniform(&[dims.raw_dim, d]);
        let sent_init_w = uniform(&[d, d]);
        let sent_init_b = uniform(&[d]);
        let word_init_w = uniform(&[d, d]);
        let word_init_b = uniform(&[d]);
        let s0 = uniform(&[d]);
        let out_w = uniform(&[d, v]);
        let out_b = uniform(&[v]);
        let s_lstm = LstmParams::init(&mut rng, d, d, d);
        let w_lstm = LstmParams::init(&mut rng, d, d, d);
        let attn = AttentionParams::init(&mut rng, d, dims.attn);
        Ok(Self {
            proj_raw,
            sent_init_w,
            sent_init_b,
            word_init_w,
            word_init_b,
            s_lstm,
            w_lstm,
            attn,
            word_table,
            sentence_table,
            s0,
            out_w,
            out_b,
        })
    }

    pub fn hidden(&self) -> usize {
        self.s0.len()
    }

    pub fn raw_dim(&self) -> usize {
        self.proj_raw.rows()
    }

    pub fn vocab(&self) -> usize {
        self.out_b.len()
    }

    /// `(name, tensor)` for every learnable tensor, in checkpoint order.
    pub fn named(&self) -> Vec<(String, &RealArray)> {
        let mut out: Vec<(String, &RealArray)> = vec![
            ("proj_raw".into(), &self.proj_raw),
            ("sent_init.w".into(), &self.sent_init_w),
            ("sent_init.b".into(), &self.sent_init_b),
            ("word_init.w".into(), &self.word_init_w),
            ("word_init.b".into(), &self.word_init_b),
        ];
        out.extend(self.s_lstm.tensors().into_iter().map(|(n, t)| (format!("s_lstm.{n}"), t)));
        out.extend(self.w_lstm.tensors().into_iter().map(|(n, t)| (format!("w_lstm.{n}"), t)));
        out.extend(self.attn.tensors().into_iter().map(|(n, t)| (format!("attn.{n}"), t)));
        out.extend([
            ("word_table".into(), self.word_table.vectors()),
            ("sentence_table".into(), self.sentence_table.vectors()),
            ("s0".into(), &self.s0),
            ("out.w".into(), &self.out_w),
            ("out.b".into(), &self.out_b),
        ]);
        out
    }

    /// Mutable tensors in [`ModelParameters::named`] order, each with a flag
    /// telling whether the optimizer may update it.
    pub fn tensors_mut(&mut self) -> Vec<(&mut RealArray, bool)> {
        let mut out: Vec<(&mut RealArray, bool)> = vec![
            (&mut self.proj_raw, true),
            (&mut self.sent_init_w, true),
            (&mut self.sent_init_b, true),
            (&mut self.word_init_w, true),
            (&mut self.word_init_b, true),
        ];
        out.extend(self.s_lstm.tensors_mut().into_iter().map(|t| (t, true)));
        out.extend(self.w_lstm.tensors_mut().into_iter().map(|t| (t, true)));
        out.extend(self.attn.tensors_mut().into_iter().map(|t| (t, true)));
        let (wt, st) = (self.word_table.trainable, self.sentence_table.trainable);
        out.extend([
            (self.word_table.vectors_mut(), wt),
            (self.sentence_table.vectors_mut(), st),
            (&mut self.s0, true),
            (&mut self.out_w, true),
            (&mut self.out_b, true),
        ]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a>) -> ModelVars {
        let proj_raw = g.param(&self.proj_raw);
        let sent_init_w = g.param(&self.sent_init_w);
        let sent_init_b = g.param(&self.sent_init_b);
        let word_init_w = g.param(&self.word_init_w);
        let word_init_b = g.param(&self.word_init_b);
        let s_lstm = self.s_lstm.bind(g);
        let w_lstm = self.w_lstm.bind(g);
        let attn = self.attn.bind(g);
        let word_table = g.param(self.word_table.vectors());
        let sentence_table = g.param(self.sentence_table.vectors());
        let s0 = g.param(&self.s0);
        let out_w = g.param(&self.out_w);
        let out_b = g.param(&self.out_b);
        let mut order = vec![proj_raw, sent_init_w, sent_init_b, word_init_w, word_init_b];
        order.extend(s_lstm.all());
        order.extend(w_lstm.all());
        order.extend([attn.w_h, attn.w_x, attn.w_score, attn.b_attn]);
        order.extend([word_table, sentence_table, s0, out_w, out_b]);
        ModelVars {
            proj_raw,
            sent_init_w,
            sent_init_b,
            word_init_w,
            word_init_b,
            s_lstm,
            w_lstm,
            attn,
            word_table,
            sentence_table,
            s0,
            out_w,
            out_b,
            order,
        }
    }

    /// Gradients for every tensor in [`ModelParameters::named`] order; zeros
    /// where a tensor did not influence the root.
    pub fn collect_grads(&self, vars: &ModelVars, grads: &Gradients) -> Vec<RealArray> {
        self.named()
            .iter()
            .zip(&vars.order)
            .map(|((_, t), &v)| grads.get_or_zeros(v, t.shape()))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            tensors: self.named().into_iter().map(|(n, t)| (n, t.clone())).collect(),
        }
    }

    /// Rebuilds parameters from a checkpoint. Token lists come from the
    /// vocabularies the model was trained with; a missing sentence vocabulary
    /// is replaced by placeholder names.
    pub fn from_checkpoint(ckpt: &Checkpoint, word_tokens: Vec<String>, sentence_tokens: Option<Vec<String>>) -> Result<Self> {
        let find = |name: &str| ckpt.get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")));
        let proj_raw = find("proj_raw")?;
        let attn_w = find("attn.w_h")?;
        if proj_raw.shape().len() != 2 || attn_w.shape().len() != 2 {
            return Err(Error::Checkpoint("proj_raw and attn.w_h must be matrices".into()));
        }
        let (d, attn_size) = (proj_raw.cols(), attn_w.cols());
        let word_table = EmbeddingTable::new(word_tokens, find("word_table")?.clone())?;
        word_table.require_reserved()?;
        let sentence_vectors = find("sentence_table")?.clone();
        let sentence_tokens =
            sentence_tokens.unwrap_or_else(|| (0..sentence_vectors.rows()).map(|i| format!("#{i}")).collect());
        let vocab = word_table.len();
        let mut model = Self {
            proj_raw: RealArray::zeros(proj_raw.shape()),
            sent_init_w: RealArray::zeros(&[d, d]),
            sent_init_b: RealArray::zeros(&[d]),
            word_init_w: RealArray::zeros(&[d, d]),
            word_init_b: RealArray::zeros(&[d]),
            s_lstm: LstmParams::zeros(d, d, d),
            w_lstm: LstmParams::zeros(d, d, d),
            attn: AttentionParams::zeros(d, attn_size),
            word_table,
            sentence_table: EmbeddingTable::new(sentence_tokens, sentence_vectors)?,
            s0: RealArray::zeros(&[d]),
            out_w: RealArray::zeros(&[d, vocab]),
            out_b: RealArray::zeros(&[vocab]),
        };
        let names: Vec<String> = model.named().into_iter().map(|(n, _)| n).collect();
        if ckpt.tensors.len() != names.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model has {}",
                ckpt.tensors.len(),
                names.len()
            )));
        }
        for ((slot, _), name) in model.tensors_mut().into_iter().zip(&names) {
            let t = find(name)?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(model)
    }
}
