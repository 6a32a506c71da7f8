use std::collections::HashMap;

use crate::error::{Error, Result};

use super::ngram::{NGramStats, MAX_ORDER};

/// Corpus-level BLEU-4 on a 0 to 100 scale.
///
/// Clipped n-gram matches and candidate n-gram totals are pooled over the
/// corpus before the precisions are formed. An order for which the whole
/// corpus has no candidate n-gram contributes precision 1. The brevity
/// penalty uses, per item, the reference length closest to the candidate's
/// (the shorter one on ties).
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    check_inputs(candidates, references)?;
    let mut matched = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);

    for (cand, refs) in candidates.iter().zip(references) {
        let c = NGramStats::new(cand);
        let rs: Vec<NGramStats<'_>> = refs.iter().map(|r| NGramStats::new(r)).collect();
        for n in 1..=MAX_ORDER {
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &rs {
                for (&g, &k) in r.order(n) {
                    let slot = max_ref.entry(g).or_insert(0);
                    *slot = (*slot).max(k);
                }
            }
            for (g, &k) in c.order(n) {
                matched[n - 1] += k.min(max_ref.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += c.total(n);
        }
        cand_len += cand.len();
        ref_len += closest_length(cand.len(), refs);
    }

    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_p = 0.0;
    for n in 0..MAX_ORDER {
        if total[n] == 0 {
            continue;
        }
        if matched[n] == 0 {
            return Ok(0.0);
        }
        log_p += (matched[n] as f64 / total[n] as f64).ln();
    }
    let bp = if cand_len > ref_len {
        0.0
    } else {
        1.0 - ref_len as f64 / cand_len as f64
    };
    Ok(100.0 * (bp + log_p / MAX_ORDER as f64).exp())
}

fn closest_length(cand: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&r| (r.abs_diff(cand), r))
        .expect("references checked nonempty")
}

pub(crate) fn check_inputs(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("candidates"));
    }
    if candidates.len() != references.len() {
        return Err(Error::Config(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if let Some(i) = references.iter().position(|r| r.is_empty()) {
        return Err(Error::Config(format!("item {i} has no reference")));
    }
    Ok(())
}
