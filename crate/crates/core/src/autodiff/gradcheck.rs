use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamStore};
use crate::tensor::Tensor;

/// Smallest denominator used when forming a relative error, so that
/// coordinates with near-zero gradient are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Compares the analytic gradient of `f` against central finite differences
/// `(f(p+ε) − f(p−ε)) / 2ε`, coordinate by coordinate, for every parameter
/// accepted by `trainable`.
///
/// Stop-gradient outputs are held at their values from the unperturbed
/// evaluation, so the numeric side differentiates the same function the
/// backward pass does: every `sg[·]` is a constant.
///
/// The relative error at a coordinate is
/// `|analytic − numeric| / max(|analytic|, |numeric|, GRAD_CHECK_FLOOR)`.
pub fn grad_check<F>(
    params: &ParamStore,
    trainable: impl Fn(&str) -> bool,
    eps: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    let eval = |store: &ParamStore, frozen: Option<&[Tensor]>| -> Result<(f64, Tape, BoundParams, Var)> {
        let mut tape = Tape::new().with_finite_check(true);
        if let Some(f) = frozen {
            tape = tape.with_frozen_stops(f.to_vec());
        }
        let bound = store.bind(&mut tape, |n| frozen.is_none() && trainable(n));
        let out = f(&mut tape, &bound)?;
        if tape.value(out).numel() != 1 {
            return Err(Error::Contract(format!(
                "grad_check needs a scalar function, got shape {:?}",
                tape.shape(out)
            )));
        }
        Ok((tape.value(out).item(), tape, bound, out))
    };

    let (_, tape, bound, out) = eval(params, None)?;
    let analytic = bound.gradients(&tape, &tape.backward(out)?);
    let frozen = tape.stopped_values().to_vec();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (name, grad) in analytic.iter() {
        for idx in 0..grad.numel() {
            let original = params.get(name)?.data()[idx];
            probe.get_mut(name)?.data_mut()[idx] = original + eps;
            let plus = eval(&probe, Some(&frozen))?.0;
            probe.get_mut(name)?.data_mut()[idx] = original - eps;
            let minus = eval(&probe, Some(&frozen))?.0;
            probe.get_mut(name)?.data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((name.to_string(), idx));
            }
        }
    }
    Ok(report)
}
