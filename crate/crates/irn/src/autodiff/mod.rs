//! Self-contained reverse-mode autodiff: dense f64 tensors, a recording
//! tape, an Adam optimizer, an LSTM cell built from tape primitives, and a
//! finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod lstm;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckFailure, GradCheckReport};
pub use lstm::LstmParams;
pub use tape::{Mode, Tape, Val};
pub use tensor::{Gradients, ParamId, ParamKind, ParamStore, Tensor};

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties break to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in xs.iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}
