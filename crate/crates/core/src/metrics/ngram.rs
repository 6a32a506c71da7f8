use std::collections::HashMap;

pub const MAX_ORDER: usize = 4;

pub type Counts<'t> = HashMap<&'t [String], usize>;

/// Counts of every n-gram of order `n` in `tokens`.
pub fn ngrams(tokens: &[String], n: usize) -> Counts<'_> {
    let mut out = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// N-gram counts of one sentence for orders `1..=MAX_ORDER`.
#[derive(Debug, Clone)]
pub struct NGramStats<'t> {
    pub counts: [Counts<'t>; MAX_ORDER],
}

impl<'t> NGramStats<'t> {
    pub fn new(tokens: &'t [String]) -> Self {
        Self {
            counts: std::array::from_fn(|i| ngrams(tokens, i + 1)),
        }
    }

    pub fn order(&self, n: usize) -> &Counts<'t> {
        &self.counts[n - 1]
    }

    pub fn total(&self, n: usize) -> usize {
        self.order(n).values().sum()
    }
}
