/// Central-difference gradient of `f` at `x`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Max over coordinates of `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_diff_check_fn(f: &dyn Fn(&[f64]) -> f64, analytic: &[f64], x: &[f64], step: f64) -> f64 {
    assert!(step > 0.0, "finite-difference step must be positive");
    let numeric = central_difference(f, x, step);
    analytic.iter().zip(&numeric).map(|(a, n)| (a - n).abs() / a.abs().max(1.0)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_under_central_differences() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] - 2.0 * x[0] * x[1] + 0.5 * x[1] * x[1] + x[0];
        let x = [0.7, -1.3];
        let analytic = [6.0 * x[0] - 2.0 * x[1] + 1.0, -2.0 * x[0] + x[1]];
        assert!(finite_diff_check_fn(&f, &analytic, &x, 1e-5) < 1e-9);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let f = |_: &[f64]| 4.2;
        assert_eq!(finite_diff_check_fn(&f, &[0.0, 0.0], &[1.0, 2.0], 1e-5), 0.0);
    }
}
