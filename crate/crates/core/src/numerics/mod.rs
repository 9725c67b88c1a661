//! Dense `f64` tensors and a define-by-run reverse-mode tape.

mod graph;
pub mod gradcheck;
mod lstm;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, Var};
pub(crate) use graph::sigmoid;
pub use lstm::{BiLstm, LstmLayer};
pub use optim::{clip_global_norm, Adam, AdamConfig, Sgd};
pub use params::{accumulate_grads, Bound, ParamEntry, ParamId, ParamStore};
pub use tensor::Tensor;

/// Softmax of a plain slice, with max subtraction.
pub fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
