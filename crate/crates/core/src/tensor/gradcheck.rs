use super::{Gradients, ParamStore};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1e-8, |analytic| + |numeric|)`
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub elements_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares analytic gradients from `loss_and_grad` against central finite
/// differences on every element of every parameter.
pub fn finite_difference_check<F>(store: &ParamStore, loss_and_grad: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, Gradients)>,
{
    let (_, analytic) = loss_and_grad(store)?;
    let mut work = store.clone();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        elements_checked: 0,
    };
    for name in &names {
        let n = store.get(name).map_or(0, |t| t.len());
        let grad = analytic.get(name);
        for i in 0..n {
            let orig = store.get(name).unwrap().data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + FD_STEP;
            let (plus, _) = loss_and_grad(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig - FD_STEP;
            let (minus, _) = loss_and_grad(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grad.map_or(0.0, |g| g.data()[i]);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.elements_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
