//! Customer-side personalization of a skill-facing embedding.
//!
//! `h^p = W_2 · ReLU(W_1 [h_u ‖ e] + b_1) + b_2`, where `e` is the utterance
//! feature of the interaction being scored.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, check_matrix, xavier_uniform};
use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizerParams<T = Tensor> {
    /// `d_h × (d + d_e)`
    pub w1: T,
    pub b1: T,
    /// `d × d_h`
    pub w2: T,
    pub b2: T,
}

impl<T> PersonalizerParams<T> {
    pub fn tensors(&self) -> Vec<&T> {
        alloc::vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        alloc::vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> PersonalizerParams<U> {
        PersonalizerParams { w1: f(&self.w1), b1: f(&self.b1), w2: f(&self.w2), b2: f(&self.b2) }
    }
}

impl PersonalizerParams {
    pub fn init(d: usize, d_e: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        PersonalizerParams {
            w1: xavier_uniform(d_h, d + d_e, rng),
            b1: Tensor::zeros(&[d_h]),
            w2: xavier_uniform(d, d_h, rng),
            b2: Tensor::zeros(&[d]),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub(crate) fn check(&self, d: usize, d_e: usize) -> Result<()> {
        let d_h = self.hidden_dim();
        check_matrix("personalizer", &self.w1, d_h, d + d_e, "W_1")?;
        check_len("personalizer", &self.b1, d_h, "b_1")?;
        check_matrix("personalizer", &self.w2, d, d_h, "W_2")?;
        check_len("personalizer", &self.b2, d, "b_2")
    }
}

/// Row-wise personalization of `h` (`m×d`) against `e` (`m×d_e`).
pub fn personalize_rows(tape: &mut Tape, p: &PersonalizerParams<Var>, h: Var, e: Var) -> Result<Var> {
    let x = tape.concat_cols(h, e)?;
    let z = tape.matmul_t(x, p.w1)?;
    let z = tape.add_row(z, p.b1)?;
    let z = tape.relu(z)?;
    let out = tape.matmul_t(z, p.w2)?;
    tape.add_row(out, p.b2)
}

/// Single-vector form.
pub fn personalize(h_u: &[f64], e: &[f64], p: &PersonalizerParams) -> Result<Vec<f64>> {
    if h_u.is_empty() {
        return Err(shape_err("personalizer", "empty customer embedding".into()));
    }
    p.check(h_u.len(), e.len())?;
    let mut tape = Tape::new();
    let pv = p.map(&mut |x| tape.constant(x.clone()));
    let h = tape.constant(Tensor::matrix(1, h_u.len(), h_u.to_vec())?);
    let ev = tape.constant(Tensor::matrix(1, e.len(), e.to_vec())?);
    let out = personalize_rows(&mut tape, &pv, h, ev)?;
    Ok(tape.value(out).data().to_vec())
}
