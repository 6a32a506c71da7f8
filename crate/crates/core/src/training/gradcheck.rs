use std::collections::BTreeSet;

use crate::dataio::StoryRecord;
use crate::decoder::ModelParameters;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

use super::loss::{story_gradients, story_loss};

/// Central differences of a loss `L` carry rounding noise of roughly
/// `ε·|L|/h`; entries smaller than `FLOOR_SCALE·max(1, |L|)` are judged by
/// their absolute error against that floor rather than by a relative error
/// the noise alone could push past any tolerance.
pub const FLOOR_SCALE: f64 = 1e-6;

/// Parameter groups sampled in turn, matched by tensor-name prefix.
const GROUPS: [&str; 10] = [
    "proj_raw",
    "sent_init.",
    "word_init.",
    "s_lstm.",
    "w_lstm.",
    "attn.",
    "word_table",
    "sentence_table",
    "s0",
    "out.",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    /// Groups that received at least one sample.
    pub fn groups(&self) -> BTreeSet<&'static str> {
        self.entries
            .iter()
            .filter_map(|e| GROUPS.iter().copied().find(|g| e.tensor.starts_with(g)))
            .collect()
    }
}

pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares backprop gradients of the dropout-free story loss with central
/// differences at `samples` parameter entries, cycling through every
/// parameter group. Embedding-table samples are drawn from rows the story
/// actually reads.
pub fn gradcheck(
    record: &StoryRecord,
    params: &ModelParameters,
    samples: usize,
    seed: u64,
    h: f64,
    learn_stop: bool,
) -> Result<GradCheckReport> {
    let mut rng = SplitMix64::stream(seed, 0x6772_6164);
    let base = story_gradients(record, params, 0.0, &mut rng, learn_stop)?;
    let floor = FLOOR_SCALE * base.loss.abs().max(1.0);
    let analytic = base.grads;
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let shapes: Vec<Vec<usize>> = params.named().iter().map(|(_, t)| t.shape().to_vec()).collect();

    let word_rows: Vec<usize> = record
        .tokens
        .iter()
        .flatten()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let sentence_rows: Vec<usize> = record.sentence_ids.iter().flatten().copied().collect();

    let mut per_group: Vec<Vec<usize>> = GROUPS
        .iter()
        .map(|g| (0..names.len()).filter(|&i| names[i].starts_with(g)).collect())
        .collect();
    // A story whose sentences are all outside the sentence table never reads it.
    let sentence_group = GROUPS.iter().position(|&g| g == "sentence_table").expect("group listed");
    if sentence_rows.is_empty() {
        per_group[sentence_group].clear();
    }

    let mut work = params.clone();
    let mut entries = Vec::with_capacity(samples);
    let mut scratch = SplitMix64::new(0);
    for s in 0..samples {
        let live: Vec<&Vec<usize>> = per_group.iter().filter(|g| !g.is_empty()).collect();
        if live.is_empty() {
            return Err(Error::EmptyInput("gradcheck parameter groups"));
        }
        let group = live[s % live.len()];
        let tensor = group[rng.below(group.len())];
        let name = &names[tensor];
        let shape = &shapes[tensor];
        let index = match name.as_str() {
            "word_table" => word_rows[rng.below(word_rows.len())] * shape[1] + rng.below(shape[1]),
            "sentence_table" => sentence_rows[rng.below(sentence_rows.len())] * shape[1] + rng.below(shape[1]),
            _ => rng.below(shape.iter().product()),
        };

        let original = work.tensors_mut()[tensor].0.data()[index];
        work.tensors_mut()[tensor].0.data_mut()[index] = original + h;
        let plus = story_loss(record, &work, 0.0, &mut scratch, learn_stop)?;
        work.tensors_mut()[tensor].0.data_mut()[index] = original - h;
        let minus = story_loss(record, &work, 0.0, &mut scratch, learn_stop)?;
        work.tensors_mut()[tensor].0.data_mut()[index] = original;

        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[tensor].data()[index];
        entries.push(GradCheckEntry {
            tensor: name.clone(),
            index,
            analytic: a,
            numeric,
            rel_error: rel_error(a, numeric, floor),
        });
    }
    Ok(GradCheckReport { entries })
}
