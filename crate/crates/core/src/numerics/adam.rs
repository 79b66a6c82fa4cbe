use serde::{Deserialize, Serialize};

use crate::numerics::{Gradients, NumericsError, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every non-frozen parameter.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &Gradients<T>,
    config: &AdamConfig,
) -> Result<(), NumericsError> {
    for id in store.ids() {
        if store.is_frozen(id) {
            continue;
        }
        let grad = grads
            .get(id)
            .ok_or_else(|| NumericsError::MissingGradient(store.name(id).to_string()))?;
        if grad.shape() != store.get(id).shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                left: store.get(id).shape().to_vec(),
                right: grad.shape().to_vec(),
            });
        }
    }

    let t = store.step() + 1;
    let b1 = T::from_f64_lossy(config.beta1);
    let b2 = T::from_f64_lossy(config.beta2);
    let lr = T::from_f64_lossy(config.lr);
    let eps = T::from_f64_lossy(config.eps);
    let correction1 = T::one() - b1.powi(t as i32);
    let correction2 = T::one() - b2.powi(t as i32);

    for id in store.ids().collect::<Vec<_>>() {
        if store.is_frozen(id) {
            continue;
        }
        let grad = grads.get(id).expect("checked above");
        let (value, m, v) = store.slot_parts_mut(id.0);
        for (((p, m), v), &g) in value
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(grad.data())
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    store.set_step(t);
    Ok(())
}
