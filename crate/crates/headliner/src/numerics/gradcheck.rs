//! Central-finite-difference verification of analytic gradients.

use super::optim::ParamSet;
use super::NumericsError;

/// Compares the analytic gradients already stored in `params` against
/// central finite differences of `loss` and returns the maximum relative
/// error `|a−n| / max(|a|, |n|, 1e-8)` over all components.
///
/// `loss` must be a pure function of the parameter values (fix dropout and
/// sampling decisions before calling).
pub fn gradient_check<F>(
    mut loss: F,
    params: &mut ParamSet,
    epsilon: f64,
) -> Result<f64, NumericsError>
where
    F: FnMut(&ParamSet) -> Result<f64, NumericsError>,
{
    let mut worst = 0.0f64;
    for slot in 0..params.len() {
        for i in 0..params.get(slot).value.len() {
            let original = params.get(slot).value.data()[i];

            params.get_mut(slot).value.data_mut()[i] = original + epsilon;
            let up = loss(params)?;
            params.get_mut(slot).value.data_mut()[i] = original - epsilon;
            let down = loss(params)?;
            params.get_mut(slot).value.data_mut()[i] = original;

            let numeric = (up - down) / (2.0 * epsilon);
            let analytic = params.get(slot).grad.data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
