use crate::error::Result;

/// Compares an analytic gradient with central differences.
///
/// `f` returns the value and analytic gradient at a point. The analytic
/// gradient is taken at `point`; each coordinate is then perturbed by `±h`
/// and only the values are used. Returns
/// `max_i |analytic_i − fd_i| / max(1, |analytic_i|)`.
pub fn finite_difference_check<F>(mut f: F, point: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (_, analytic) = f(point)?;
    assert_eq!(analytic.len(), point.len(), "gradient length must match the point");
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let (plus, _) = f(&x)?;
        x[i] = orig - h;
        let (minus, _) = f(&x)?;
        x[i] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        let err = finite_difference_check(|x| Ok((x[0] * x[0], vec![2.0 * x[0]])), &[1.0], 1e-5).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let err = finite_difference_check(|x| Ok((x[0] * x[0], vec![3.0 * x[0]])), &[1.0], 1e-5).unwrap();
        assert!(err > 0.3);
    }
}
