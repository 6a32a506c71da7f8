use crate::dataio::StoryRecord;
use crate::decoder::{story_pass_on, Dropout, ModelParameters, ModelVars};
use crate::error::Result;
use crate::numerics::{log_softmax_values, softmax_values, Graph, RealArray, Var};
use crate::rng::SplitMix64;

/// Scalar loss node plus token bookkeeping for one story.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub loss: Var,
    /// Unmasked target positions.
    pub tokens: usize,
    /// Unmasked positions whose argmax logit is the target.
    pub correct: usize,
}

/// Masked negative log-likelihood of one story on the graph. With
/// `learn_stop`, each sentence's terminating `<NULL>` is scored as well, so
/// the model learns where sentences end.
pub fn story_loss_on<'a>(
    g: &mut Graph<'a>,
    v: &ModelVars,
    record: &'a StoryRecord,
    dropout: Option<&mut Dropout<'_>>,
    learn_stop: bool,
) -> Result<LossTerms> {
    let pass = story_pass_on(g, v, record, dropout)?;
    let mut picks = Vec::new();
    let mut correct = 0;
    for (t, words) in pass.words.iter().enumerate() {
        for (k, &logits) in words.logits.iter().enumerate() {
            if !record.is_target(t, k, learn_stop) {
                continue;
            }
            let target = record.tokens[t][k];
            if argmax(g.value(logits).data()) == target {
                correct += 1;
            }
            let logp = g.log_softmax(logits);
            picks.push(g.pick(logp, target)?);
        }
    }
    let loss = if picks.is_empty() {
        g.constant(RealArray::scalar(0.0))
    } else {
        let total = g.add_n(&picks)?;
        g.scale(total, -1.0)
    };
    Ok(LossTerms {
        loss,
        tokens: picks.len(),
        correct,
    })
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Loss value of one story. With `dropout_p > 0` the mask is drawn from `rng`.
pub fn story_loss(
    record: &StoryRecord,
    params: &ModelParameters,
    dropout_p: f64,
    rng: &mut SplitMix64,
    learn_stop: bool,
) -> Result<f64> {
    let mut g = Graph::new();
    let v = params.bind(&mut g);
    let mut dropout = Dropout { p: dropout_p, rng };
    let terms = story_loss_on(&mut g, &v, record, Some(&mut dropout), learn_stop)?;
    Ok(g.value(terms.loss).item())
}

#[derive(Debug, Clone)]
pub struct StoryGradients {
    pub loss: f64,
    pub tokens: usize,
    pub correct: usize,
    /// In [`ModelParameters::named`] order.
    pub grads: Vec<RealArray>,
}

pub fn story_gradients(
    record: &StoryRecord,
    params: &ModelParameters,
    dropout_p: f64,
    rng: &mut SplitMix64,
    learn_stop: bool,
) -> Result<StoryGradients> {
    let mut g = Graph::new();
    let v = params.bind(&mut g);
    let mut dropout = Dropout { p: dropout_p, rng };
    let terms = story_loss_on(&mut g, &v, record, Some(&mut dropout), learn_stop)?;
    let grads = g.backward(terms.loss)?;
    Ok(StoryGradients {
        loss: g.value(terms.loss).item(),
        tokens: terms.tokens,
        correct: terms.correct,
        grads: params.collect_grads(&v, &grads),
    })
}

/// Mean story loss over a batch, without dropout.
pub fn batch_loss(records: &[StoryRecord], params: &ModelParameters, learn_stop: bool) -> Result<f64> {
    let mut rng = SplitMix64::new(0);
    let mut total = 0.0;
    for r in records {
        total += story_loss(r, params, 0.0, &mut rng, learn_stop)?;
    }
    Ok(total / records.len() as f64)
}

/// Sum over sentences of the product of target-word probabilities.
///
/// A reporting quantity only; training minimises the log-likelihood.
pub fn summed_sentence_probability(record: &StoryRecord, params: &ModelParameters) -> Result<f64> {
    let logits = crate::decoder::story_logits(record, params)?;
    let mut score = 0.0;
    for (t, rows) in logits.iter().enumerate() {
        let mut p = 1.0;
        for (k, row) in rows.iter().enumerate() {
            if record.masks[t][k] == 1 {
                p *= softmax_values(row.data())[record.tokens[t][k]];
            }
        }
        score += p;
    }
    Ok(score)
}

/// Per-token loss and accuracy of a corpus under the current parameters.
pub fn token_metrics(records: &[StoryRecord], params: &ModelParameters, learn_stop: bool) -> Result<(f64, f64)> {
    let (mut nll, mut tokens, mut correct) = (0.0, 0usize, 0usize);
    for r in records {
        let logits = crate::decoder::story_logits(r, params)?;
        for (t, rows) in logits.iter().enumerate() {
            for (k, row) in rows.iter().enumerate() {
                if !r.is_target(t, k, learn_stop) {
                    continue;
                }
                let target = r.tokens[t][k];
                nll -= log_softmax_values(row.data())[target];
                tokens += 1;
                correct += usize::from(argmax(row.data()) == target);
            }
        }
    }
    if tokens == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((nll / tokens as f64, correct as f64 / tokens as f64))
}
