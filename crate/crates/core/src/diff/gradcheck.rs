//! Central finite-difference gradient checks.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::DiffError;

/// Compares backward-pass gradients of `f` against central differences over
/// every trainable coordinate of `store`.
///
/// Returns `max |analytic − numeric| / max(1, |analytic|)`.
pub fn check_param_gradients<F>(store: &ParamStore<f64>, f: F, step: f64) -> Result<f64, DiffError>
where
    F: Fn(&Tape<f64>, &ParamStore<f64>) -> Result<Var, DiffError>,
{
    check_param_gradients_subset(store, f, step, None)
}

/// Like [`check_param_gradients`], restricted to `only` when given.
pub fn check_param_gradients_subset<F>(
    store: &ParamStore<f64>,
    f: F,
    step: f64,
    only: Option<&[ParamId]>,
) -> Result<f64, DiffError>
where
    F: Fn(&Tape<f64>, &ParamStore<f64>) -> Result<Var, DiffError>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64, DiffError> {
        let tape = Tape::new();
        let out = f(&tape, s)?;
        let v = tape.scalar_value(out);
        if !v.is_finite() {
            return Err(DiffError::NonFinite { op: "gradient check" });
        }
        Ok(v)
    };

    let tape = Tape::new();
    let out = f(&tape, store)?;
    if !tape.scalar_value(out).is_finite() {
        return Err(DiffError::NonFinite { op: "gradient check" });
    }
    let grads = tape.backward(out)?;

    let mut probe = store.clone();
    let mut worst = 0.0f64;
    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };
    for id in ids {
        if !store.is_trainable(id) {
            continue;
        }
        let n = store.get(id).numel();
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        for i in 0..n {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Gradient check of a scalar function of one vector argument at `point`.
pub fn check_gradients<F>(f: F, point: &[f64], step: f64) -> Result<f64, DiffError>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var, DiffError>,
{
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::vector(point.to_vec()));
    check_param_gradients(&store, |tape, s| f(tape, tape.param(s, id)), step)
}
