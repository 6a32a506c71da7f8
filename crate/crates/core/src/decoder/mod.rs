//! The hierarchical decoder: visual projection, the sentence layer, the
//! attentive word layer and the vocabulary head.
//!
//! The sentence layer runs `N + 1` steps. Step `t` (1-based) consumes the
//! previous sentence vector (`s0` at `t = 1`) together with image `t`'s mean
//! feature, and its hidden state conditions sentence `t`; the final step
//! consumes the last sentence vector with the full-story feature and only
//! closes the sequence. Each sentence's word layer runs `L` steps: step 1
//! consumes the sentence layer's hidden state, step `k > 1` the embedding of
//! word `k - 1`.

mod checkpoint;
mod params;

pub use checkpoint::Checkpoint;
pub use params::{ModelDims, ModelParameters, ModelVars};

use crate::attention::{attend_on, project_keys};
use crate::dataio::{FeatureGrid, StoryRecord};
use crate::error::{Error, Result};
use crate::numerics::{Graph, RealArray, Var};
use crate::recurrent::{step_on, CellState, CellVars};
use crate::rng::SplitMix64;

/// Projected visual features of one story.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualBundle {
    /// Mean over every projected location of every image, `[D]`.
    pub full_story: RealArray,
    /// Projected locations per image, `[M × D]` each.
    pub per_image: Vec<RealArray>,
    /// Mean projected location per image, `[D]` each.
    pub image_means: Vec<RealArray>,
}

#[derive(Debug, Clone)]
pub struct BundleVars {
    pub full_story: Var,
    pub per_image: Vec<Var>,
    pub image_means: Vec<Var>,
}

impl BundleVars {
    pub fn value(&self, g: &Graph<'_>) -> VisualBundle {
        VisualBundle {
            full_story: g.value(self.full_story).clone(),
            per_image: self.per_image.iter().map(|&v| g.value(v).clone()).collect(),
            image_means: self.image_means.iter().map(|&v| g.value(v).clone()).collect(),
        }
    }
}

pub fn project_on<'a>(g: &mut Graph<'a>, v: &ModelVars, grids: &'a [FeatureGrid]) -> Result<BundleVars> {
    let first = grids.first().ok_or(Error::EmptyInput("project_features"))?;
    let mut per_image = Vec::with_capacity(grids.len());
    let mut image_means = Vec::with_capacity(grids.len());
    for grid in grids {
        if grid.values.shape() != first.values.shape() {
            return Err(Error::shape("project_features", first.values.shape(), grid.values.shape()));
        }
        let raw = g.constant_ref(&grid.values);
        let projected = g.matmul(raw, v.proj_raw)?;
        image_means.push(g.mean_rows(projected)?);
        per_image.push(projected);
    }
    // Every image has the same number of locations, so the mean of image
    // means is the mean over all locations.
    let total = g.add_n(&image_means)?;
    let full_story = g.scale(total, 1.0 / grids.len() as f64);
    Ok(BundleVars {
        full_story,
        per_image,
        image_means,
    })
}

pub fn project_features(grids: &[FeatureGrid], params: &ModelParameters) -> Result<VisualBundle> {
    let mut g = Graph::new();
    let v = params.bind(&mut g);
    Ok(project_on(&mut g, &v, grids)?.value(&g))
}

/// Initial sentence-layer state from the full-story feature.
pub fn sentence_init_on(g: &mut Graph<'_>, v: &ModelVars, full_story: Var) -> Result<CellVars> {
    let lin = g.matmul(full_story, v.sent_init_w)?;
    let h = g.add(lin, v.sent_init_b)?;
    let c = g.constant(RealArray::zeros(g.shape(h)));
    Ok(CellVars { h, c })
}

pub fn sentence_step_on(
    g: &mut Graph<'_>,
    v: &ModelVars,
    prev: CellVars,
    sentence_vec: Var,
    visual: Var,
) -> Result<CellVars> {
    step_on(g, &v.s_lstm, sentence_vec, visual, prev)
}

#[derive(Debug, Clone)]
pub struct SentencePass {
    /// One state per sentence; `states[t].h` conditions sentence `t`.
    pub states: Vec<CellVars>,
    /// State after the closing step.
    pub closing: CellVars,
}

/// Runs all `N + 1` sentence steps on gold (or substitute) sentence vectors.
pub fn sentence_pass_on(
    g: &mut Graph<'_>,
    v: &ModelVars,
    bundle: &BundleVars,
    sentence_vectors: &[Var],
) -> Result<SentencePass> {
    let n = bundle.image_means.len();
    if sentence_vectors.len() != n {
        return Err(Error::Config(format!(
            "sentence pass needs {n} sentence vectors, got {}",
            sentence_vectors.len()
        )));
    }
    let mut state = sentence_init_on(g, v, bundle.full_story)?;
    let mut states = Vec::with_capacity(n);
    for t in 0..n {
        let input = if t == 0 { v.s0 } else { sentence_vectors[t - 1] };
        state = sentence_step_on(g, v, state, input, bundle.image_means[t])?;
        states.push(state);
    }
    let closing = sentence_step_on(g, v, state, sentence_vectors[n - 1], bundle.full_story)?;
    Ok(SentencePass { states, closing })
}

pub fn sentence_pass(bundle: &VisualBundle, sentence_vectors: &[RealArray], params: &ModelParameters) -> Result<Vec<CellState>> {
    let mut g = Graph::new();
    let v = params.bind(&mut g);
    let bv = bundle_constants(&mut g, bundle);
    let sv: Vec<Var> = sentence_vectors.iter().map(|s| g.constant_ref(s)).collect();
    let pass = sentence_pass_on(&mut g, &v, &bv, &sv)?;
    Ok(pass.states.iter().map(|s| s.value(&g)).collect())
}

pub fn bundle_constants<'a>(g: &mut Graph<'a>, bundle: &'a VisualBundle) -> BundleVars {
    BundleVars {
        full_story: g.constant_ref(&bundle.full_story),
        per_image: bundle.per_image.iter().map(|x| g.constant_ref(x)).collect(),
        image_means: bundle.image_means.iter().map(|x| g.constant_ref(x)).collect(),
    }
}

/// Initial word-layer state for one image.
pub fn word_init_on(g: &mut Graph<'_>, v: &ModelVars, image_mean: Var) -> Result<CellVars> {
    let lin = g.matmul(image_mean, v.word_init_w)?;
    let h = g.add(lin, v.word_init_b)?;
    let c = g.constant(RealArray::zeros(g.shape(h)));
    Ok(CellVars { h, c })
}

#[derive(Debug, Clone, Copy)]
pub struct WordStep {
    pub state: CellVars,
    pub alpha: Var,
}

/// One word-layer step: attend with the previous hidden state, then recur.
pub fn word_step_on(
    g: &mut Graph<'_>,
    v: &ModelVars,
    prev: CellVars,
    input: Var,
    locations: Var,
    keys: Var,
) -> Result<WordStep> {
    let (alpha, z) = attend_on(g, &v.attn, prev.h, locations, keys)?;
    let state = step_on(g, &v.w_lstm, input, z, prev)?;
    Ok(WordStep { state, alpha })
}

/// Vocabulary logits for a word-layer hidden state.
pub fn head_on(g: &mut Graph<'_>, v: &ModelVars, h: Var) -> Result<Var> {
    let lin = g.matmul(h, v.out_w)?;
    g.add(lin, v.out_b)
}

/// Inverted dropout on the word-layer output.
pub struct Dropout<'r> {
    pub p: f64,
    pub rng: &'r mut SplitMix64,
}

impl Dropout<'_> {
    fn apply(&mut self, g: &mut Graph<'_>, h: Var) -> Result<Var> {
        if self.p <= 0.0 {
            return Ok(h);
        }
        let keep = 1.0 / (1.0 - self.p);
        let n = g.value(h).len();
        let mask = (0..n).map(|_| if self.rng.next_f64() < self.p { 0.0 } else { keep }).collect();
        let m = g.constant(RealArray::vector(mask));
        g.mul(h, m)
    }
}

#[derive(Debug, Clone)]
pub struct WordPass {
    /// One `[|V|]` logit row per target position.
    pub logits: Vec<Var>,
    /// Attention weights consumed at each step.
    pub alphas: Vec<Var>,
}

/// Teacher-forced word layer over `gold` (padded to `L`).
pub fn word_pass_on(
    g: &mut Graph<'_>,
    v: &ModelVars,
    h_s: Var,
    locations: Var,
    image_mean: Var,
    gold: &[usize],
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<WordPass> {
    let keys = project_keys(g, &v.attn, locations)?;
    let mut state = word_init_on(g, v, image_mean)?;
    let mut logits = Vec::with_capacity(gold.len());
    let mut alphas = Vec::with_capacity(gold.len());
    for k in 0..gold.len() {
        let input = if k == 0 { h_s } else { g.row(v.word_table, gold[k - 1])? };
        let step = word_step_on(g, v, state, input, locations, keys)?;
        state = step.state;
        alphas.push(step.alpha);
        let h = match dropout.as_deref_mut() {
            Some(d) => d.apply(g, state.h)?,
            None => state.h,
        };
        logits.push(head_on(g, v, h)?);
    }
    Ok(WordPass { logits, alphas })
}

/// Logit rows for one sentence, teacher-forced on `gold_words`.
pub fn word_logits(
    h_s_t: &RealArray,
    per_image_t: &RealArray,
    gold_words: &[usize],
    params: &ModelParameters,
) -> Result<Vec<RealArray>> {
    if gold_words.is_empty() {
        return Err(Error::EmptyInput("word_logits"));
    }
    let mut g = Graph::new();
    let v = params.bind(&mut g);
    let h = g.constant_ref(h_s_t);
    let locs = g.constant_ref(per_image_t);
    let mean = g.mean_rows(locs)?;
    let pass = word_pass_on(&mut g, &v, h, locs, mean, gold_words, None)?;
    Ok(pass.logits.iter().map(|&l| g.value(l).clone()).collect())
}

/// Training-time vector for sentence `t`: its sentence-table row, or the mean
/// of its word embeddings when the sentence is not in the table (`s0` when
/// it has no in-vocabulary word).
pub fn gold_sentence_vector(g: &mut Graph<'_>, v: &ModelVars, record: &StoryRecord, t: usize) -> Result<Var> {
    if let Some(id) = record.sentence_ids[t] {
        return g.row(v.sentence_table, id);
    }
    let rows = record.tokens[t]
        .iter()
        .zip(&record.masks[t])
        .filter(|(_, &m)| m == 1)
        .map(|(&w, _)| g.row(v.word_table, w))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Ok(v.s0);
    }
    let total = g.add_n(&rows)?;
    Ok(g.scale(total, 1.0 / rows.len() as f64))
}

#[derive(Debug, Clone)]
pub struct StoryPass {
    pub bundle: BundleVars,
    pub sentences: SentencePass,
    pub words: Vec<WordPass>,
}

/// Full teacher-forced forward pass over one story.
pub fn story_pass_on<'a>(
    g: &mut Graph<'a>,
    v: &ModelVars,
    record: &'a StoryRecord,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<StoryPass> {
    let bundle = project_on(g, v, &record.features)?;
    let n = record.images();
    if record.tokens.len() != n {
        return Err(Error::Config(format!(
            "story {} has {} images but {} sentences",
            record.story_id,
            n,
            record.tokens.len()
        )));
    }
    let vectors = (0..n)
        .map(|t| gold_sentence_vector(g, v, record, t))
        .collect::<Result<Vec<_>>>()?;
    let sentences = sentence_pass_on(g, v, &bundle, &vectors)?;
    let mut words = Vec::with_capacity(n);
    for t in 0..n {
        words.push(word_pass_on(
            g,
            v,
            sentences.states[t].h,
            bundle.per_image[t],
            bundle.image_means[t],
            &record.tokens[t],
            dropout.as_deref_mut(),
        )?);
    }
    Ok(StoryPass {
        bundle,
        sentences,
        words,
    })
}

/// Logits of a full story as plain values, `N × L × [|V|]`.
pub fn story_logits(record: &StoryRecord, params: &ModelParameters) -> Result<Vec<Vec<RealArray>>> {
    let mut g = Graph::new();
    let v = params.bind(&mut g);
    let pass = story_pass_on(&mut g, &v, record, None)?;
    Ok(pass
        .words
        .iter()
        .map(|w| w.logits.iter().map(|&l| g.value(l).clone()).collect())
        .collect())
}
