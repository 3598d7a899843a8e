//! Central finite-difference checks for reverse-mode gradients.
//!
//! The numeric side only evaluates forward values, so it is independent of
//! every backward rule it checks.

use crate::error::Result;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    /// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares `backward` against central differences with step `h` for every
/// scalar in `store`. `f` must be a pure function of the stored values.
pub fn check_store<F>(store: &ParamStore, h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let root = f(&mut g, store)?;
    let analytic = g.backward(root)?.for_params(store);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let r = f(&mut g, s)?;
        Ok(g.value(r).values()[0])
    };

    let mut work = store.clone();
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for id in store.ids() {
        for k in 0..store.get(id).tensor.len() {
            let orig = store.get(id).tensor.values()[k];
            work.get_mut(id).tensor.values_mut()[k] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).tensor.values_mut()[k] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).tensor.values_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id)[k];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((store.get(id).name.clone(), k));
                }
            }
        }
    }
    Ok(report)
}

/// Convenience wrapper: each input tensor becomes a tracked leaf, passed to
/// `f` in order.
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("x{i}"), t.clone()))
        .collect::<Result<Vec<_>>>()?;
    check_store(&store, h, |g, s| {
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
        f(g, &vars)
    })
}
