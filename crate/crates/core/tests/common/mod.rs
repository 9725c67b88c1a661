#![allow(dead_code)]

use rand::Rng;
use senselab::rng;

/// Documents that each draw every token uniformly from one of two
/// disjoint vocabularies: ids `0..half` or `half..2*half`.
pub fn two_cluster_corpus(n_docs: usize, half: usize, doc_len: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut r = rng::seeded(seed);
    (0..n_docs)
        .map(|d| {
            let base = (d % 2) * half;
            (0..doc_len).map(|_| base + r.gen_range(0..half)).collect()
        })
        .collect()
}

/// Share of a word list drawn from its majority cluster.
pub fn purity(words: &[usize], half: usize) -> f64 {
    let a = words.iter().filter(|&&w| w < half).count();
    a.max(words.len() - a) as f64 / words.len() as f64
}
