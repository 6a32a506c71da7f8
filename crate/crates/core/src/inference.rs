//! Story generation: greedy sentence chaining with beam search inside each
//! sentence.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::attention::project_keys;
use crate::dataio::{sentence_vector_of, StoryRecord};
use crate::decoder::{head_on, project_features, word_init_on, word_step_on, ModelParameters, VisualBundle};
use crate::error::{Error, Result};
use crate::numerics::{log_softmax_values, Graph, RealArray};
use crate::recurrent::{self, CellState, CellVars};

/// A partial or finished sentence. `tokens` keeps the terminating `<NULL>`
/// when the sentence stopped early, so every token has its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub logprob: f64,
    pub state: CellState,
    pub per_word_probs: Vec<f64>,
}

impl Hypothesis {
    /// Tokens without the stop symbol.
    pub fn surface(&self, null: usize) -> &[usize] {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == null => rest,
            _ => &self.tokens,
        }
    }
}

/// Word-layer decoder for one image, with the attention keys precomputed.
pub struct WordDecoder<'p> {
    params: &'p ModelParameters,
    locations: &'p RealArray,
    keys: RealArray,
    null: usize,
}

impl<'p> WordDecoder<'p> {
    pub fn new(params: &'p ModelParameters, locations: &'p RealArray) -> Result<Self> {
        let mut g = Graph::new();
        let v = params.bind(&mut g);
        let locs = g.constant_ref(locations);
        let keys = project_keys(&mut g, &v.attn, locs)?;
        Ok(Self {
            params,
            locations,
            keys: g.value(keys).clone(),
            null: params.word_table.null_id()?,
        })
    }

    pub fn null(&self) -> usize {
        self.null
    }

    pub fn init_state(&self, image_mean: &RealArray) -> Result<CellState> {
        let mut g = Graph::new();
        let v = self.params.bind(&mut g);
        let mean = g.constant_ref(image_mean);
        Ok(word_init_on(&mut g, &v, mean)?.value(&g))
    }

    /// Advances one step on `input` and returns the new state with the
    /// log-probabilities of the next word.
    pub fn step(&self, prev: &CellState, input: &RealArray) -> Result<(CellState, Vec<f64>)> {
        let mut g = Graph::new();
        let v = self.params.bind(&mut g);
        let prev = CellVars::constant(&mut g, prev);
        let x = g.constant_ref(input);
        let locs = g.constant_ref(self.locations);
        let keys = g.constant_ref(&self.keys);
        let step = word_step_on(&mut g, &v, prev, x, locs, keys)?;
        let logits = head_on(&mut g, &v, step.state.h)?;
        Ok((step.state.value(&g), log_softmax_values(g.value(logits).data())))
    }

    fn input_for(&self, h_s: &RealArray, hyp: &Hypothesis) -> RealArray {
        match hyp.tokens.last() {
            None => h_s.clone(),
            Some(&w) => RealArray::vector(self.params.word_table.vector(w).to_vec()),
        }
    }

    /// Argmax decoding, lowest token id on ties.
    pub fn greedy(&self, h_s: &RealArray, image_mean: &RealArray, max_len: usize) -> Result<Hypothesis> {
        let mut hyp = Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
            state: self.init_state(image_mean)?,
            per_word_probs: Vec::new(),
        };
        while hyp.tokens.len() < max_len {
            let (state, logp) = self.step(&hyp.state, &self.input_for(h_s, &hyp))?;
            let mut best = 0;
            for (w, &lp) in logp.iter().enumerate() {
                if lp > logp[best] {
                    best = w;
                }
            }
            hyp.tokens.push(best);
            hyp.logprob += logp[best];
            hyp.per_word_probs.push(logp[best].exp());
            hyp.state = state;
            if best == self.null {
                break;
            }
        }
        Ok(hyp)
    }

    /// Beam search of width `beam`. A hypothesis is complete once it emits
    /// `<NULL>` or reaches `max_len` words. Expansions are ranked by
    /// accumulated log-probability, then token id, then parent rank; the
    /// result is the best complete hypothesis (lexicographically smallest
    /// tokens on ties).
    pub fn beam_search(&self, h_s: &RealArray, image_mean: &RealArray, max_len: usize, beam: usize) -> Result<Hypothesis> {
        if beam == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if max_len == 0 {
            return Err(Error::Config("sentence length must be at least 1".into()));
        }
        let mut live = vec![Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
            state: self.init_state(image_mean)?,
            per_word_probs: Vec::new(),
        }];
        let mut complete: Vec<Hypothesis> = Vec::new();

        while !live.is_empty() {
            // (score, token, parent rank, token log-probability)
            let mut cands: Vec<(f64, usize, usize, f64)> = Vec::new();
            let mut states = Vec::with_capacity(live.len());
            for (rank, hyp) in live.iter().enumerate() {
                let (state, logp) = self.step(&hyp.state, &self.input_for(h_s, hyp))?;
                cands.extend(logp.iter().enumerate().map(|(w, &lp)| (hyp.logprob + lp, w, rank, lp)));
                states.push(state);
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            cands.truncate(beam);

            let mut next = Vec::with_capacity(cands.len());
            for (score, w, rank, lp) in cands {
                let parent = &live[rank];
                let mut tokens = parent.tokens.clone();
                tokens.push(w);
                let mut per_word_probs = parent.per_word_probs.clone();
                per_word_probs.push(lp.exp());
                let hyp = Hypothesis {
                    tokens,
                    logprob: score,
                    state: states[rank].clone(),
                    per_word_probs,
                };
                if w == self.null || hyp.tokens.len() == max_len {
                    complete.push(hyp);
                } else {
                    next.push(hyp);
                }
            }
            live = next;

            // Scores only fall as hypotheses grow, so no live hypothesis can
            // overtake a complete one that already beats all of them.
            let best_done = complete.iter().map(|h| h.logprob).fold(f64::NEG_INFINITY, f64::max);
            if live.iter().all(|h| h.logprob < best_done) {
                break;
            }
        }
        Ok(complete.into_iter().min_by(better).expect("beam search completes at least one hypothesis"))
    }
}

fn better(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.logprob.total_cmp(&a.logprob).then_with(|| a.tokens.cmp(&b.tokens))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStory {
    /// Surface token ids per sentence.
    pub sentences: Vec<Vec<usize>>,
    /// Probability of every emitted token, including a terminating `<NULL>`.
    pub word_probs: Vec<Vec<f64>>,
    pub logprob: f64,
}

/// Generates one sentence per image. Sentence `t` is conditioned on the mean
/// word vector of generated sentence `t − 1` (`s0` for the first sentence or
/// after an empty one).
pub fn generate_story(bundle: &VisualBundle, params: &ModelParameters, beam: usize, max_len: usize) -> Result<GeneratedStory> {
    if beam == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let mut g = Graph::new();
    let v = params.bind(&mut g);
    let full = g.constant_ref(&bundle.full_story);
    let mut state = crate::decoder::sentence_init_on(&mut g, &v, full)?.value(&g);

    let mut out = GeneratedStory {
        sentences: Vec::new(),
        word_probs: Vec::new(),
        logprob: 0.0,
    };
    let mut previous = params.s0.clone();
    for (locations, mean) in bundle.per_image.iter().zip(&bundle.image_means) {
        state = recurrent::step(&previous, mean, &state, &params.s_lstm)?;
        let decoder = WordDecoder::new(params, locations)?;
        let hyp = decoder.beam_search(&state.h, mean, max_len, beam)?;
        let surface = hyp.surface(decoder.null()).to_vec();
        previous = match sentence_vector_of(&surface, &params.word_table) {
            Ok(v) => v,
            Err(Error::EmptySentence) => params.s0.clone(),
            Err(e) => return Err(e),
        };
        out.logprob += hyp.logprob;
        out.word_probs.push(hyp.per_word_probs);
        out.sentences.push(surface);
    }
    Ok(out)
}

/// JSON record written by `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryOutput {
    pub story_id: String,
    pub sentences: Vec<Vec<String>>,
    pub word_probs: Vec<Vec<f64>>,
    pub logprob: f64,
}

pub fn generate_record(record: &StoryRecord, params: &ModelParameters, beam: usize, max_len: usize) -> Result<StoryOutput> {
    let bundle = project_features(&record.features, params)?;
    let story = generate_story(&bundle, params, beam, max_len)?;
    Ok(StoryOutput {
        story_id: record.story_id.clone(),
        sentences: story
            .sentences
            .iter()
            .map(|s| s.iter().map(|&w| params.word_table.token(w).to_string()).collect())
            .collect(),
        word_probs: story.word_probs,
        logprob: story.logprob,
    })
}
