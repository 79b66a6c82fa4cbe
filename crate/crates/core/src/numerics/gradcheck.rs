use crate::numerics::{Gradients, NumericsError, ParamStore};
use crate::scalar::Scalar;

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error<T: Scalar>(analytic: T, numeric: T) -> T {
    let floor = T::from_f64_lossy(1e-8);
    (analytic - numeric).abs() / floor.max(analytic.abs() + numeric.abs())
}

/// Compares analytic gradients against central differences.
///
/// `loss_and_grad` must be deterministic. When `max_coords_per_param` is set,
/// larger parameters are checked at evenly strided coordinates only.
/// Returns the maximum relative error seen.
pub fn grad_check<T, E, F>(
    loss_and_grad: F,
    store: &ParamStore<T>,
    h: T,
    max_coords_per_param: Option<usize>,
) -> Result<T, E>
where
    T: Scalar,
    E: From<NumericsError>,
    F: Fn(&ParamStore<T>) -> Result<(T, Gradients<T>), E>,
{
    let (loss, analytic) = loss_and_grad(store)?;
    ensure_finite(loss)?;
    grad_check_with(|s| loss_and_grad(s).map(|(l, _)| l), &analytic, store, h, max_coords_per_param)
}

/// Like [`grad_check`], with the analytic gradient supplied up front and a
/// forward-only `loss` for the perturbed evaluations.
pub fn grad_check_with<T, E, L>(
    loss: L,
    analytic: &Gradients<T>,
    store: &ParamStore<T>,
    h: T,
    max_coords_per_param: Option<usize>,
) -> Result<T, E>
where
    T: Scalar,
    E: From<NumericsError>,
    L: Fn(&ParamStore<T>) -> Result<T, E>,
{
    let mut probe = store.clone();
    let two_h = h + h;
    let mut worst = T::zero();
    for id in store.ids() {
        let grad = analytic
            .get(id)
            .ok_or_else(|| NumericsError::MissingGradient(store.name(id).to_string()))?;
        let len = store.get(id).len();
        let stride = match max_coords_per_param {
            Some(max) if max > 0 && len > max => len.div_ceil(max),
            _ => 1,
        };
        for coord in (0..len).step_by(stride) {
            let original = store.get(id).data()[coord];
            probe.get_mut(id).data_mut()[coord] = original + h;
            let plus = loss(&probe)?;
            probe.get_mut(id).data_mut()[coord] = original - h;
            let minus = loss(&probe)?;
            probe.get_mut(id).data_mut()[coord] = original;
            ensure_finite(plus)?;
            ensure_finite(minus)?;
            let numeric = (plus - minus) / two_h;
            worst = worst.max(relative_error(grad.data()[coord], numeric));
        }
    }
    Ok(worst)
}

fn ensure_finite<T: Scalar>(loss: T) -> Result<(), NumericsError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(NumericsError::NonFiniteLoss(loss.to_f64_lossy()))
    }
}
