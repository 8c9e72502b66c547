//! Information-gain question selection.
//!
//! For a candidate question `q` the expected posterior entropy is
//! `H(y | X, q) = sum_r p(r | X, q) H(y | X, q, r)` with the answer marginal
//! `p(r | X, q) = sum_i p(r | q, y_i) p(y_i | X)`. The selected question
//! minimizes it, which is the same as maximizing the gain over `H(y | X)`.

use crate::belief::{BeliefState, LikelihoodTable};
use crate::dataset::QuestionBank;
use crate::math::entropy;

/// `p(r | X, q)` for every answer `r` of `q`.
pub fn answer_marginal(state: &BeliefState, q: usize, table: &LikelihoodTable) -> Vec<f64> {
    marginal_with(&state.probs(), q, table)
}

fn marginal_with(belief: &[f64], q: usize, table: &LikelihoodTable) -> Vec<f64> {
    let mut m = vec![0.0; table.n_answers(q)];
    for (y, &b) in belief.iter().enumerate() {
        for (acc, p) in m.iter_mut().zip(table.row(q, y)) {
            *acc += p * b;
        }
    }
    m
}

/// Entropy of the posterior that observing answer `r` to `q` would produce.
pub fn posterior_entropy(state: &BeliefState, q: usize, r: usize, table: &LikelihoodTable) -> f64 {
    let belief = state.probs();
    let joint: Vec<f64> = belief.iter().enumerate().map(|(y, b)| b * table.prob(q, y, r)).collect();
    entropy_of_unnormalized(&joint)
}

fn entropy_of_unnormalized(weights: &[f64]) -> f64 {
    let z: f64 = weights.iter().sum();
    if z <= 0.0 {
        return 0.0;
    }
    let mut h = 0.0;
    for &w in weights {
        if w > 0.0 {
            let p = w / z;
            h -= p * p.ln();
        }
    }
    h
}

fn conditional_entropy_with(belief: &[f64], q: usize, table: &LikelihoodTable) -> f64 {
    let n_answers = table.n_answers(q);
    let mut total = 0.0;
    let mut joint = vec![0.0; belief.len()];
    for r in 0..n_answers {
        for (y, (&b, j)) in belief.iter().zip(joint.iter_mut()).enumerate() {
            *j = b * table.prob(q, y, r);
        }
        let marginal: f64 = joint.iter().sum();
        if marginal > 0.0 {
            total += marginal * entropy_of_unnormalized(&joint);
        }
    }
    total
}

/// `H(y | X, q)`: expected posterior entropy after asking `q`.
pub fn conditional_entropy(state: &BeliefState, q: usize, table: &LikelihoodTable) -> f64 {
    conditional_entropy_with(&state.probs(), q, table)
}

/// `H(y | X) - H(y | X, q)`.
pub fn information_gain(state: &BeliefState, q: usize, table: &LikelihoodTable) -> f64 {
    let belief = state.probs();
    entropy(&belief) - conditional_entropy_with(&belief, q, table)
}

/// Expected entropies closer than this count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// The eligible question (not yet asked, group not skipped) with the lowest
/// expected posterior entropy; ties go to the earlier question in the bank.
pub fn select_question(state: &BeliefState, bank: &QuestionBank, table: &LikelihoodTable) -> Option<usize> {
    let belief = state.probs();
    let mut best: Option<(usize, f64)> = None;
    for q in 0..bank.len() {
        if !state.is_eligible(bank, q) {
            continue;
        }
        let h = conditional_entropy_with(&belief, q, table);
        if best.is_none_or(|(_, bh)| h < bh - TIE_TOLERANCE) {
            best = Some((q, h));
        }
    }
    best.map(|(q, _)| q)
}
