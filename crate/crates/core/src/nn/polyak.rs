use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// `target ← τ·online + (1 − τ)·target`, elementwise.
///
/// `τ = 0` is accepted and leaves the target untouched (frozen targets).
pub fn polyak_update(target: &mut [Tensor], online: &[Tensor], tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("polyak coefficient {tau} outside [0, 1]")));
    }
    if target.len() != online.len() || target.iter().zip(online).any(|(t, o)| t.shape() != o.shape()) {
        return Err(Error::Structural("target and online parameters are not aligned".into()));
    }
    for (t, o) in target.iter_mut().zip(online) {
        for (tv, &ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_one_copies_online() {
        let mut t = vec![Tensor::vector(vec![0.0, 5.0])];
        let o = vec![Tensor::vector(vec![1.0, -2.0])];
        polyak_update(&mut t, &o, 1.0).unwrap();
        assert_eq!(t, o);
    }

    #[test]
    fn equal_sets_are_fixed_points() {
        let o = vec![Tensor::vector(vec![0.3, -0.7, 11.0])];
        let mut t = o.clone();
        polyak_update(&mut t, &o, 0.005).unwrap();
        assert_eq!(t, o);
    }

    #[test]
    fn direct_formula() {
        let mut t = vec![Tensor::scalar(0.0)];
        polyak_update(&mut t, &[Tensor::scalar(1.0)], 0.005).unwrap();
        assert_eq!(t[0].item(), 0.005);
    }

    #[test]
    fn out_of_range_tau_is_a_config_error() {
        let mut t = vec![Tensor::scalar(0.0)];
        assert!(matches!(polyak_update(&mut t, &[Tensor::scalar(1.0)], 1.5), Err(Error::Config(_))));
        assert!(matches!(polyak_update(&mut t, &[Tensor::scalar(1.0)], -0.1), Err(Error::Config(_))));
    }
}
