//! Central-difference verification of tape gradients.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over all parameter entries.
    pub max_rel_error: f64,
    /// `(parameter, entry)` where the largest error occurred.
    pub worst: Option<(usize, usize)>,
    /// Number of entries probed.
    pub entries: usize,
}

/// Compares the tape gradient of a scalar objective against central
/// differences `(f(θ+eps) − f(θ−eps)) / 2eps` for every entry of every
/// parameter.
///
/// `f` receives a fresh tape and the parameters registered as trainable
/// leaves, and returns the scalar objective. The relative error of an entry is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(alloc::format!("eps must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();

    let eval = |probe: &[Tensor], param: usize, entry: usize| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = probe.iter().map(|p| tape.param(p.clone())).collect();
        let value = f(&mut tape, &vars)
            .map(|v| tape.scalar(v))
            .map_err(|_| Error::GradProbe { param, entry })?;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::GradProbe { param, entry })
        }
    };

    let mut probe: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, entries: 0 };
    for (pi, param) in params.iter().enumerate() {
        for k in 0..param.len() {
            let original = param.data()[k];
            probe[pi].data_mut()[k] = original + eps;
            let plus = eval(&probe, pi, k)?;
            probe[pi].data_mut()[k] = original - eps;
            let minus = eval(&probe, pi, k)?;
            probe[pi].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let exact = analytic[pi].data()[k];
            let denom = exact.abs().max(numeric.abs()).max(1e-8);
            let rel = (exact - numeric).abs() / denom;
            report.entries += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((pi, k));
            }
        }
    }
    Ok(report)
}
