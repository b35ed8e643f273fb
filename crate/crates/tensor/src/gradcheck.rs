use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative error used by the gradient checks.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of every parameter entry against central
/// differences and returns the maximum relative error.
///
/// `build` must construct the full forward graph from the store and return
/// it together with its scalar loss node.
pub fn finite_diff_check<F>(store: &mut ParamStore, step: f64, build: F) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<(Graph, Var)>,
{
    Ok(finite_diff_report(store, step, None, build)?.max_rel_err)
}

/// Like [`finite_diff_check`], optionally probing at most `per_param`
/// evenly spaced entries of each parameter.
pub fn finite_diff_report<F>(
    store: &mut ParamStore,
    step: f64,
    per_param: Option<usize>,
    mut build: F,
) -> Result<FdReport>
where
    F: FnMut(&ParamStore) -> Result<(Graph, Var)>,
{
    store.zero_grad();
    let (g, loss) = build(store)?;
    g.backward(loss)?.accumulate_into(store);
    let analytic: Vec<Vec<f64>> = store.iter().map(|(_, p)| p.grad.data().to_vec()).collect();
    store.zero_grad();

    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for pi in 0..store.len() {
        let id = ParamId(pi);
        let n = store.value(id).numel();
        let indices: Vec<usize> = match per_param {
            Some(k) if k < n => (0..k).map(|j| j * n / k).collect(),
            _ => (0..n).collect(),
        };
        for idx in indices {
            let orig = store.value(id).data()[idx];
            store.get_mut(id).value.data_mut()[idx] = orig + step;
            let (g, l) = build(store)?;
            let plus = g.value(l).item()?;
            store.get_mut(id).value.data_mut()[idx] = orig - step;
            let (g, l) = build(store)?;
            let minus = g.value(l).item()?;
            store.get_mut(id).value.data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi][idx];
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = idx;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
