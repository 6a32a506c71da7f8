use std::collections::HashMap;

use crate::error::Result;

use super::bleu::check_inputs;
use super::ngram::{Counts, NGramStats, MAX_ORDER};

/// CIDEr on a 0 to 10 scale.
///
/// Document frequencies come from the reference sets: an n-gram's df is the
/// number of items with at least one reference containing it. Weights are
/// `tf · (ln |I| − ln max(1, df))` with `tf` the count over the sentence's
/// n-gram total. Cosines are averaged over references, then over orders
/// 1 to 4, then over items. Two sentences with the same n-gram multiset at
/// an order have similarity 1 there even when every weight vanishes; any
/// other pair involving a zero vector has similarity 0. A pair in which
/// neither sentence is long enough for an order is left out of that order's
/// average, and an order left with no pair is left out of the item's.
pub fn cider(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    check_inputs(candidates, references)?;
    let refs: Vec<Vec<NGramStats<'_>>> = references
        .iter()
        .map(|rs| rs.iter().map(|r| NGramStats::new(r)).collect())
        .collect();

    let mut df: [HashMap<&[String], usize>; MAX_ORDER] = Default::default();
    for item in &refs {
        for n in 1..=MAX_ORDER {
            let mut seen: Vec<&[String]> = item.iter().flat_map(|r| r.order(n).keys().copied()).collect();
            seen.sort_unstable();
            seen.dedup();
            for g in seen {
                *df[n - 1].entry(g).or_insert(0) += 1;
            }
        }
    }
    let ln_items = (candidates.len() as f64).ln();

    let mut total = 0.0;
    for (cand, item_refs) in candidates.iter().zip(&refs) {
        let c = NGramStats::new(cand);
        let (mut item, mut orders) = (0.0, 0usize);
        for n in 1..=MAX_ORDER {
            let idf = |g: &[String]| ln_items - (df[n - 1].get(g).copied().unwrap_or(0).max(1) as f64).ln();
            let cv = tfidf(c.order(n), &idf);
            let (mut sim, mut pairs) = (0.0, 0usize);
            for r in item_refs {
                let (a, b) = (c.order(n), r.order(n));
                if a.is_empty() && b.is_empty() {
                    continue;
                }
                pairs += 1;
                sim += if a == b { 1.0 } else { cosine(&cv, &tfidf(b, &idf)) };
            }
            if pairs > 0 {
                item += sim / pairs as f64;
                orders += 1;
            }
        }
        if orders > 0 {
            total += item / orders as f64;
        }
    }
    Ok(10.0 * total / candidates.len() as f64)
}

type Weights<'t> = HashMap<&'t [String], f64>;

fn tfidf<'t>(counts: &Counts<'t>, idf: &dyn Fn(&[String]) -> f64) -> Weights<'t> {
    let total: usize = counts.values().sum();
    counts
        .iter()
        .map(|(&g, &k)| (g, k as f64 / total as f64 * idf(g)))
        .collect()
}

fn cosine(a: &Weights<'_>, b: &Weights<'_>) -> f64 {
    let mut keys: Vec<&&[String]> = a.keys().filter(|g| b.contains_key(**g)).collect();
    keys.sort_unstable();
    let dot: f64 = keys.iter().map(|g| a[**g] * b[**g]).sum();
    let na = sorted_norm(a);
    let nb = sorted_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Norm summed in key order so the result does not depend on hash order.
fn sorted_norm(w: &Weights<'_>) -> f64 {
    let mut items: Vec<(&&[String], &f64)> = w.iter().collect();
    items.sort_unstable_by(|x, y| x.0.cmp(y.0));
    items.iter().map(|(_, v)| *v * *v).sum::<f64>().sqrt()
}
