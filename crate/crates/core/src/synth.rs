//! Deterministic synthetic matrices, seeded through the same counter-based
//! generator as the samplers. Equal seeds give bitwise-identical data.

use crate::matrix::{ElementPrecision, HiddenStates, LmHeadWeights, Matrix};
use crate::rng::{open01_from_raw, philox4x32, RngKey};
use crate::scalar::{from_f64, Scalar};

/// Counter word separating synthetic-data streams from sampling streams.
const SYNTH_STREAM: u32 = 0xA5A5_0123;

/// Standard-normal deviate for element `i` of stream `tag` under `seed`.
pub fn gaussian(seed: u64, tag: u32, i: u64) -> f64 {
    // One Philox call yields a Box-Muller pair; element parity picks the half.
    let pair = i / 2;
    let words = philox4x32(
        RngKey(seed),
        [(pair & 0xFFFF_FFFF) as u32, (pair >> 32) as u32, tag, SYNTH_STREAM],
    );
    let u1 = open01_from_raw(words[0]).value();
    let u2 = open01_from_raw(words[1]).value();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    if i.is_multiple_of(2) {
        r * theta.cos()
    } else {
        r * theta.sin()
    }
}

/// Dense matrix of scaled gaussians.
pub fn gaussian_matrix<T: Scalar>(seed: u64, tag: u32, rows: usize, cols: usize, scale: f64) -> Matrix<T> {
    let data = (0..rows * cols)
        .map(|i| from_f64::<T>(gaussian(seed, tag, i as u64) * scale))
        .collect();
    Matrix::new(rows, cols, data).expect("generated data matches shape")
}

/// Unit-gaussian hidden states, `B x D`.
pub fn hidden_states<T: Scalar>(seed: u64, batch: usize, dim: usize) -> HiddenStates<T> {
    HiddenStates::new(gaussian_matrix(seed, 1, batch, dim, 1.0)).expect("valid shape")
}

/// LM-head weights with entries scaled by `1/sqrt(D)` so logits are O(1).
pub fn lm_head_weights<T: Scalar>(seed: u64, vocab: usize, dim: usize) -> LmHeadWeights<T> {
    let scale = 1.0 / (dim as f64).sqrt();
    LmHeadWeights::new(gaussian_matrix(seed, 2, vocab, dim, scale), ElementPrecision::Full)
        .expect("valid shape")
}
