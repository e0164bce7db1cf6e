//! Central finite-difference checks of analytic gradients.

use crate::error::Result;
use crate::net::graph::{Graph, NodeId};
use crate::net::params::{Mat, ParamStore};
use crate::rng;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_err: f64,
    /// Parameter holding the worst entry.
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < tol
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `loss_and_grad`'s gradients against central differences of its loss
/// for every entry of every parameter (or every `stride`-th entry).
pub fn grad_check<F>(store: &mut ParamStore<f64>, stride: usize, loss_and_grad: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>) -> Result<(f64, Vec<Vec<f64>>)>,
{
    let (_, analytic) = loss_and_grad(store)?;
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let ids: Vec<_> = (0..store.len()).map(crate::net::params::ParamId).collect();
    for (pi, id) in ids.into_iter().enumerate() {
        let n = store.get(id).value.data.len();
        for k in (0..n).step_by(stride.max(1)) {
            let orig = store.get(id).value.data[k];
            store.get_mut(id).value.data[k] = orig + FD_STEP;
            let (lp, _) = loss_and_grad(store)?;
            store.get_mut(id).value.data[k] = orig - FD_STEP;
            let (lm, _) = loss_and_grad(store)?;
            store.get_mut(id).value.data[k] = orig;
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let e = rel_err(analytic[pi][k], numeric);
            report.checked += 1;
            if !(e <= report.max_rel_err) {
                report.max_rel_err = e;
                report.worst = store.get(id).name.clone();
            }
        }
    }
    Ok(report)
}

/// Wraps a graph builder as a scalar loss `sum(out * probe)` with a fixed random
/// probe, suitable for [`grad_check`].
pub fn probe_loss<B>(build: B, seed: u64) -> impl Fn(&ParamStore<f64>) -> Result<(f64, Vec<Vec<f64>>)>
where
    B: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
{
    move |store: &ParamStore<f64>| {
        let mut g = Graph::new(store);
        let out = build(&mut g)?;
        let v = g.value(out);
        let mut r = rng::seeded(seed);
        let probe = Mat {
            rows: v.rows,
            cols: v.cols,
            data: (0..v.data.len()).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect(),
        };
        let loss = v.data.iter().zip(&probe.data).map(|(a, b)| a * b).sum();
        let grads = g.backward(&[(out, probe)])?;
        Ok((loss, grads.into_param_buffers(store)))
    }
}
