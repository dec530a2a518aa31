//! Shared helpers for the integration suites.

use nalgebra::DVector;

pub fn log_odds(p: f64) -> f64 {
    let c = p.clamp(1e-12, 1.0 - 1e-12);
    (c / (1.0 - c)).ln()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}
