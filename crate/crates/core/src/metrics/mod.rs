//! Caption metrics and embedding neighbourhoods.

mod bleu;
mod cider;
mod ngram;

pub use bleu::bleu;
pub use cider::cider;
pub use ngram::{ngrams, NGramStats, MAX_ORDER};

use crate::dataio::EmbeddingTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Query<'q> {
    Token(&'q str),
    Vector(&'q [f64]),
}

/// The `k` rows of `table` most cosine-similar to `query`, most similar
/// first; equal similarities keep table order.
pub fn nearest_neighbors(query: Query<'_>, table: &EmbeddingTable, k: usize) -> Result<Vec<(String, f64)>> {
    if k > table.len() {
        return Err(Error::Config(format!("k = {k} exceeds the {} table rows", table.len())));
    }
    let q: &[f64] = match query {
        Query::Token(t) => table.vector(table.id(t).ok_or_else(|| Error::UnknownToken(t.to_string()))?),
        Query::Vector(v) => v,
    };
    if q.len() != table.dim() {
        return Err(Error::shape("nearest_neighbors", &[q.len()], &[table.dim()]));
    }
    let qn = norm(q);
    if qn == 0.0 {
        return Err(Error::ZeroNorm("query".into()));
    }
    let mut scored = Vec::with_capacity(table.len());
    for id in 0..table.len() {
        let row = table.vector(id);
        let rn = norm(row);
        if rn == 0.0 {
            return Err(Error::ZeroNorm(table.token(id).to_string()));
        }
        let dot: f64 = q.iter().zip(row).map(|(a, b)| a * b).sum();
        scored.push((id, dot / (qn * rn)));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(id, s)| (table.token(id).to_string(), s))
        .collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
