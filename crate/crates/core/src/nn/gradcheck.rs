//! Central finite-difference checks of parameter gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;

/// Outcome for one checked parameter tensor.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Entries that only matched at a reduced step (a kink lies within `FD_STEP`).
    pub refined: usize,
}

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale of `REL_TOL * FLOOR`.
const FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares analytic and numeric gradients of the scalar built by `loss` for
/// each parameter whose name starts with one of `prefixes`. At most
/// `per_tensor` entries (spread evenly) are probed in every tensor.
///
/// An entry that misses the tolerance at `FD_STEP` is probed again at steps
/// 10x and 100x smaller: a ReLU kink closer than the step spoils the central
/// difference there, while a wrong analytic gradient fails at every step.
pub fn check_params(
    store: &ParamStore,
    prefixes: &[&str],
    per_tensor: usize,
    loss: impl Fn(&mut Graph) -> Var,
) -> Vec<GradCheckReport> {
    let analytic = {
        let mut g = Graph::with_params(store);
        let l = loss(&mut g);
        g.backward(l).params(&g)
    };
    let eval = |s: &ParamStore| {
        let mut g = Graph::with_params(s);
        let l = loss(&mut g);
        g.value(l).item()
    };
    let mut work = store.clone();
    let mut out = Vec::new();
    for (name, t) in store.iter() {
        if !prefixes.iter().any(|p| name.starts_with(p)) {
            continue;
        }
        let grad = analytic
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not used by the loss"));
        let n = t.len();
        let stride = (n / per_tensor.max(1)).max(1);
        let mut max_rel: f64 = 0.0;
        let mut checked = 0;
        let mut refined = 0;
        for i in (0..n).step_by(stride).take(per_tensor) {
            let orig = t.data[i];
            let mut central = |h: f64| {
                work.get_mut(name).unwrap().data[i] = orig + h;
                let fp = eval(&work);
                work.get_mut(name).unwrap().data[i] = orig - h;
                let fm = eval(&work);
                work.get_mut(name).unwrap().data[i] = orig;
                relative_error(grad.data[i], (fp - fm) / (2.0 * h))
            };
            let mut err = central(FD_STEP);
            if err > REL_TOL {
                err = err.min(central(FD_STEP / 10.0)).min(central(FD_STEP / 100.0));
                refined += 1;
            }
            max_rel = max_rel.max(err);
            checked += 1;
        }
        out.push(GradCheckReport {
            name: name.to_string(),
            checked,
            max_rel_error: max_rel,
            refined,
        });
    }
    out
}

/// Panics with a readable table if any report exceeds [`REL_TOL`].
pub fn assert_reports(reports: &[GradCheckReport]) {
    assert!(!reports.is_empty(), "no parameters matched the gradient check");
    let bad: Vec<String> = reports
        .iter()
        .filter(|r| !(r.max_rel_error <= REL_TOL))
        .map(|r| format!("{}: {:.3e}", r.name, r.max_rel_error))
        .collect();
    assert!(bad.is_empty(), "gradient check failed: {}", bad.join(", "));
}
