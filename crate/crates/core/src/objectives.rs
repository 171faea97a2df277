//! Link-prediction margin loss and defect cross-entropy.

use alloc::format;
use alloc::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::dot;

/// Probabilities are clamped into `[CE_CLAMP, 1 - CE_CLAMP]`.
pub const CE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarginConfig {
    pub margin: f64,
    pub negatives: usize,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig { margin: 1.0, negatives: 5 }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) || self.negatives == 0 {
            return Err(Error::InvalidArgument(format!("margin must be > 0 and k >= 1: {self:?}")));
        }
        Ok(())
    }
}

/// `Σ_{s, ŝ} max(M - ⟨h_u, h_s⟩ + ⟨h_u, h_ŝ⟩, 0)` over every positive/negative
/// pair.
pub fn margin_loss(h_u: &[f64], positives: &[&[f64]], negatives: &[&[f64]], margin: f64) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InvalidArgument("margin loss needs at least one positive and one negative".into()));
    }
    let d = h_u.len();
    if let Some(v) = positives.iter().chain(negatives).find(|v| v.len() != d) {
        return Err(shape_err("margin_loss", format!("embedding of width {} against customer width {d}", v.len())));
    }
    let mut total = 0.0;
    for p in positives {
        let sp = dot(h_u, p);
        for n in negatives {
            total += (margin - sp + dot(h_u, n)).max(0.0);
        }
    }
    Ok(total)
}

/// Pair-averaged hinge on a tape. `pos` is `P×1`; `neg` is `(P·k)×1` with the
/// `k` negatives of positive `i` in rows `i·k .. (i+1)·k`.
pub fn margin_loss_on_tape(tape: &mut Tape, pos: Var, neg: Var, k: usize, margin: f64) -> Result<Var> {
    let p = tape.value(pos).len();
    if tape.value(neg).len() != p * k {
        return Err(shape_err("margin_loss", format!("{} negative scores for {p} positives at k = {k}", tape.value(neg).len())));
    }
    let owner: Arc<[usize]> = (0..p * k).map(|i| i / k.max(1)).collect();
    margin_pairs_on_tape(tape, pos, neg, owner, margin)
}

/// Pair-averaged hinge where negative row `i` pairs with positive `owner[i]`,
/// so positives may carry different numbers of negatives.
pub fn margin_pairs_on_tape(tape: &mut Tape, pos: Var, neg: Var, owner: Arc<[usize]>, margin: f64) -> Result<Var> {
    if owner.is_empty() || tape.value(neg).len() != owner.len() {
        return Err(shape_err("margin_loss", format!("{} negative scores for {} pairs", tape.value(neg).len(), owner.len())));
    }
    let pos_rep = tape.gather_rows(pos, owner)?;
    let gap = tape.sub(neg, pos_rep)?;
    let shifted = tape.add_scalar(gap, margin)?;
    let hinge = tape.relu(shifted)?;
    tape.mean(hinge)
}

/// `-(y ln p + (1 - y) ln(1 - p))` with `p` clamped.
pub fn defect_ce(p: f64, y: u8) -> f64 {
    let p = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
    if y == 1 {
        -libm::log(p)
    } else {
        -libm::log(1.0 - p)
    }
}

/// Mean [`defect_ce`] over a batch; `NaN`-free for any input in `[0, 1]`.
pub fn mean_defect_ce(p: &[f64], y: &[u8]) -> Result<f64> {
    if p.len() != y.len() || p.is_empty() {
        return Err(shape_err("defect_ce", format!("{} probabilities for {} labels", p.len(), y.len())));
    }
    Ok(p.iter().zip(y).map(|(&p, &y)| defect_ce(p, y)).sum::<f64>() / p.len() as f64)
}
