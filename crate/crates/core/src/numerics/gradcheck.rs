/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub relative_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

/// Magnitudes below this are compared absolutely.
const SCALE_FLOOR: f64 = 1e-6;

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_differences<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Compares `analytic` with central differences of `f` around `params`.
///
/// The relative error of each parameter is
/// `|a - n| / max(|a|, |n|, 1e-6)`; the check passes iff the maximum is
/// below `tolerance`.
pub fn grad_check<F: Fn(&[f64]) -> f64>(f: F, params: &[f64], analytic: &[f64], h: f64, tolerance: f64) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len());
    let numeric = central_differences(f, params, h);
    let relative_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(SCALE_FLOOR))
        .collect();
    let (worst_index, max_rel_error) = relative_errors
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 || e.is_nan() { (i, e) } else { best });
    GradCheckReport { passed: max_rel_error < tolerance, relative_errors, max_rel_error, worst_index }
}
