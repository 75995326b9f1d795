//! Central finite-difference check of analytic gradients.

use crate::autograd::{backward, Var};
use crate::error::{contract, Result};
use crate::params::{Ctx, ParamStore};
use crate::scalar::Scalar;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval<T: Scalar, F>(store: &ParamStore<T>, f: &F) -> Result<f64>
where
    F: Fn(Ctx<'_, T>) -> Result<Var<T>>,
{
    let loss = f(store.ctx(false))?;
    if loss.value().len() != 1 {
        return Err(contract("finite-difference target must be a scalar"));
    }
    Ok(loss.value().data()[0].f64())
}

/// Compare `backward` of `f` against central differences with the given
/// `step`, over every coordinate of every trainable parameter.
///
/// `f` must be deterministic; two evaluations at the same point that differ
/// in any bit are a contract error.
pub fn finite_diff_check<T: Scalar, F>(store: &mut ParamStore<T>, step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(Ctx<'_, T>) -> Result<Var<T>>,
{
    let loss = f(store.ctx(true))?;
    let grads = backward(&loss)?;
    let base = loss.value().data()[0].f64();
    drop(loss);
    let again = eval(store, &f)?;
    if base.to_bits() != again.to_bits() {
        return Err(contract(format!(
            "computation is not deterministic: {base:e} vs {again:e}"
        )));
    }

    let h = T::c(step);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.len();
        let analytic = grads.get(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![T::zero(); n]);
        for (i, a) in analytic.iter().enumerate() {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + h;
            let plus = eval(store, &f)?;
            store.get_mut(id).value.data_mut()[i] = orig - h;
            let minus = eval(store, &f)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(a.f64(), numeric);
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use super::*;
    use crate::tensor::Tensor;

    fn store(values: &[f64]) -> (ParamStore<f64>, crate::params::ParamId) {
        let mut s = ParamStore::new();
        let id = s
            .add("p", Tensor::from_f64([values.len()], values).unwrap(), true)
            .unwrap();
        (s, id)
    }

    #[test]
    fn sum_is_exact() {
        let (mut s, id) = store(&[0.3, -1.2, 2.0]);
        let r = finite_diff_check(&mut s, 1e-5, |ctx| ctx.p(id).sum()).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.coords_checked, 3);
    }

    #[test]
    fn gelu_sum_within_1e6() {
        let (mut s, id) = store(&[-3.0, -1.0, -0.2, 0.0, 0.4, 1.0, 2.5]);
        let r = finite_diff_check(&mut s, 1e-5, |ctx| ctx.p(id).gelu()?.sum()).unwrap();
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn nondeterminism_is_rejected() {
        let (mut s, id) = store(&[1.0]);
        let calls = Cell::new(0.0);
        let res = finite_diff_check(&mut s, 1e-5, |ctx| {
            calls.set(calls.get() + 1.0);
            ctx.p(id).scale(calls.get())?.sum()
        });
        assert!(res.is_err());
    }
}
