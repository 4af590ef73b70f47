//! Central finite differences in `f64` against analytic gradients.

/// Scalar function of a flat parameter vector with an analytic gradient.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> f64;

    fn gradient(&mut self, x: &[f64]) -> Vec<f64>;

    /// Fingerprint of the piecewise-linear region at `x` (ReLU signs, pool argmaxes).
    /// Coordinates whose perturbations change the fingerprint straddle a kink and are
    /// skipped. `None` disables the check.
    fn region(&mut self, _x: &[f64]) -> Option<u64> {
        None
    }
}

/// Adapts a `(value, gradient)` closure pair.
pub struct FnObjective<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Vec<f64>,
{
    fn value(&mut self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&mut self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinate attaining the maximum.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped_kinks: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient at `params` with central differences of step `epsilon`
/// over `coords` (all coordinates when `None`).
pub fn grad_check<O: Objective + ?Sized>(
    objective: &mut O,
    params: &[f64],
    epsilon: f64,
    coords: Option<&[usize]>,
) -> GradCheckReport {
    let analytic = objective.gradient(params);
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let base_region = objective.region(params);
    let mut x = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped_kinks: 0,
    };
    for &i in coords {
        let orig = x[i];
        x[i] = orig + epsilon;
        let plus = objective.value(&x);
        let plus_region = base_region.and_then(|_| objective.region(&x));
        x[i] = orig - epsilon;
        let minus = objective.value(&x);
        let minus_region = base_region.and_then(|_| objective.region(&x));
        x[i] = orig;
        if base_region.is_some() && (plus_region != base_region || minus_region != base_region) {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if report.worst_index.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_index = Some(i);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let mut f = FnObjective {
            value: |x: &[f64]| x[0] * x[0],
            gradient: |x: &[f64]| vec![2.0 * x[0]],
        };
        let r = grad_check(&mut f, &[3.0], 1e-4, None);
        assert!(r.max_relative_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 1);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut f = FnObjective {
            value: |x: &[f64]| x[0].sin() + x[1] * x[1],
            gradient: |x: &[f64]| vec![x[0].cos(), 3.0 * x[1]],
        };
        let r = grad_check(&mut f, &[0.3, 1.0], 1e-4, None);
        assert!(r.max_relative_error > 0.1);
        assert_eq!(r.worst_index, Some(1));
    }
}
