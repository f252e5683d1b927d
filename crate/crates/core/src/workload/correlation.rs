use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Lag-0 Pearson correlation of two expert-index sequences.
///
/// A sequence with zero variance correlates 0 with anything.
pub fn cross_correlation<T: Real>(a: &[usize], b: &[usize]) -> Result<T> {
    if a.len() != b.len() {
        return Err(invalid(
            "sequence",
            format!("length mismatch {} vs {}", a.len(), b.len()),
        ));
    }
    if a.len() < 2 {
        return Err(invalid("sequence", "need at least two samples"));
    }
    let n = T::from_count(a.len());
    let to = |v: usize| T::from_count(v);
    let mean_a = a.iter().fold(T::zero(), |s, &v| s + to(v)) / n;
    let mean_b = b.iter().fold(T::zero(), |s, &v| s + to(v)) / n;
    let (mut cov, mut var_a, mut var_b) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let dx = to(x) - mean_a;
        let dy = to(y) - mean_b;
        cov = cov + dx * dy;
        var_a = var_a + dx * dx;
        var_b = var_b + dy * dy;
    }
    if var_a <= T::zero() || var_b <= T::zero() {
        return Ok(T::zero());
    }
    let r = cov / (var_a.sqrt() * var_b.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_anti_correlation() {
        let r: f64 = cross_correlation(&[1, 2, 3, 4], &[1, 2, 3, 4]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let r: f64 = cross_correlation(&[1, 2, 3, 4], &[4, 3, 2, 1]).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
        let r: f32 = cross_correlation(&[1, 2, 3, 4], &[4, 3, 2, 1]).unwrap();
        assert!((r + 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_sequence_is_zero() {
        let r: f64 = cross_correlation(&[1, 2, 3, 4], &[5, 5, 5, 5]).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(cross_correlation::<f64>(&[1], &[1]).is_err());
        assert!(cross_correlation::<f64>(&[1, 2], &[1, 2, 3]).is_err());
    }
}
