use super::ParameterStore;
use crate::error::{Error, Result};

/// Below this magnitude the relative error falls back to the absolute error.
const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Relative error with an absolute fallback for near-zero gradients.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if denom < REL_FLOOR {
        diff
    } else {
        diff / denom
    }
}

/// Compares analytic gradients with central finite differences over every
/// parameter entry.
///
/// `f` returns the loss and its gradient for the given parameters. It is
/// evaluated twice up front; differing losses are rejected as
/// non-deterministic.
pub fn gradient_check<F>(f: F, params: &ParameterStore, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParameterStore) -> Result<(f64, ParameterStore)>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let (first, analytic) = f(params)?;
    let (second, _) = f(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let grad = analytic.require(&name)?.clone();
        for i in 0..grad.len() {
            let orig = params.require(&name)?.data()[i];
            probe.get_mut(&name).expect("present").data_mut()[i] = orig + eps;
            let up = f(&probe)?.0;
            probe.get_mut(&name).expect("present").data_mut()[i] = orig - eps;
            let down = f(&probe)?.0;
            probe.get_mut(&name).expect("present").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(grad.data()[i], numeric);
            report.entries_checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
