//! Central finite differences, used as an independent oracle for
//! [`Graph::backward`](super::Graph::backward).

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Worst-case disagreement between an analytic and a numeric gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// Flat index of the entry with the largest relative error.
    pub worst_parameter_index: usize,
}

impl GradCheckReport {
    /// Merges two reports, keeping the larger errors. The worst index of the
    /// merged report refers to whichever side had the larger relative error.
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let worst = if other.max_rel_error > self.max_rel_error {
            other.worst_parameter_index
        } else {
            self.worst_parameter_index
        };
        GradCheckReport {
            max_abs_error: self.max_abs_error.max(other.max_abs_error),
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            worst_parameter_index: worst,
        }
    }
}

/// `|a - b| / max(1e-8, |a| + |b|)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// `(f(x + εeᵢ) − f(x − εeᵢ)) / 2ε` for every coordinate `i` of `point`.
pub fn finite_diff_gradient<T: Real>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    point: &Tensor<T>,
    epsilon: T,
) -> Result<Tensor<T>> {
    if epsilon.is_nan() || epsilon <= T::zero() {
        return Err(Error::invalid("finite_diff_gradient", "epsilon must be positive"));
    }
    let mut probe = point.clone();
    let two_eps = epsilon + epsilon;
    let mut grad = Vec::with_capacity(point.numel());
    for i in 0..point.numel() {
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + epsilon;
        let up = f(&probe);
        probe.data_mut()[i] = x0 - epsilon;
        let down = f(&probe);
        probe.data_mut()[i] = x0;
        grad.push((up - down) / two_eps);
    }
    Tensor::new(point.shape(), grad)
}

/// Compares two gradients of equal shape entry by entry.
pub fn compare_gradients<T: Real>(analytic: &Tensor<T>, numeric: &Tensor<T>) -> Result<GradCheckReport> {
    if analytic.shape() != numeric.shape() {
        return Err(Error::shape("compare_gradients", analytic.shape(), numeric.shape()));
    }
    let mut report = GradCheckReport {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        worst_parameter_index: 0,
    };
    for (i, (&a, &b)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let (a, b) = (a.as_f64(), b.as_f64());
        report.max_abs_error = report.max_abs_error.max((a - b).abs());
        let rel = relative_error(a, b);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_parameter_index = i;
        }
    }
    Ok(report)
}
