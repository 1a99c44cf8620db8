//! Minimal reverse-mode autodiff used by the relation head and the backbone.

mod graph;
mod tensor;

pub use graph::{bce_value, pool_bin, sigmoid, softmax_in_place, Graph, Var};
pub use tensor::{Gradients, ParamId, ParamStore, Tensor};

use crate::scalar::Scalar;

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares `analytic` gradients with central differences of `loss` for every
/// entry of every parameter. Relative error is
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn check_gradients<T: Scalar>(
    params: &ParamStore<T>,
    loss: impl Fn(&ParamStore<T>) -> T,
    analytic: &Gradients<T>,
    step: f64,
    floor: f64,
) -> GradCheck {
    let mut work = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for id in params.ids() {
        let n = params.get(id).len();
        for i in 0..n {
            let orig = params.get(id).data[i];
            work.get_mut(id).data[i] = orig + T::c(step);
            let up = loss(&work).f64();
            work.get_mut(id).data[i] = orig - T::c(step);
            let down = loss(&work).f64();
            work.get_mut(id).data[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(id).map_or(0.0, |g| g[i].f64());
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst_param = params.name(id).to_string();
                report.worst_index = i;
            }
        }
    }
    report
}
