use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Gradients below this magnitude are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries: usize,
    pub passed: bool,
}

/// Compares reverse-mode parameter gradients of `loss_fn` with central
/// differences `(L(θ+eps) − L(θ−eps)) / 2eps`, entry by entry.
pub fn grad_check<F>(loss_fn: F, params: &ParamStore, eps: f64, rel_tol: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = loss_fn(&mut g, store)?;
        let v = g.scalar_value(out);
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite objective".into()));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let out = loss_fn(&mut g, params)?;
    if !g.scalar_value(out).is_finite() {
        return Err(Error::Numeric("non-finite objective".into()));
    }
    let analytic = g.backward(out).param_grads(params);

    let mut probe = params.clone();
    let mut report = GradReport { max_rel_err: 0.0, worst: None, entries: 0, passed: true };
    for id in params.ids() {
        let n = params.value(id).data().len();
        for k in 0..n {
            let orig = params.value(id).data()[k];
            probe.value_mut(id).data_mut()[k] = orig + eps;
            let up = eval(&probe)?;
            probe.value_mut(id).data_mut()[k] = orig - eps;
            let down = eval(&probe)?;
            probe.value_mut(id).data_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |t| t.data()[k]);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            report.entries += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    report.passed = report.max_rel_err <= rel_tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    #[test]
    fn quadratic() {
        let mut store = ParamStore::new();
        let x = store.insert("x", Tensor::scalar(3.0));
        let f = |g: &mut Graph, s: &ParamStore| {
            let v = g.param(s, x);
            Ok(g.mul(v, v))
        };
        let mut g = Graph::new();
        let out = f(&mut g, &store).unwrap();
        let grad = g.backward(out).param_grads(&store);
        assert_eq!(grad.get(x).unwrap().item(), 6.0);
        let r = grad_check(f, &store, 1e-5, 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn constant_objective() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::row_vector(vec![1.0, 2.0]));
        let r = grad_check(|g, _| Ok(g.constant(Tensor::scalar(4.0))), &store, 1e-5, 1e-4).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_rel_err, 0.0);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(1.0));
        let err = grad_check(|g, _| Ok(g.constant(Tensor::scalar(f64::NAN))), &store, 1e-5, 1e-4)
            .unwrap_err();
        assert!(err.to_string().contains("non-finite objective"));
    }
}
