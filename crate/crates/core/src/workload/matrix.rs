use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Square row-stochastic matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de> + Real"))]
#[serde(try_from = "Vec<Vec<T>>", into = "Vec<Vec<T>>")]
pub struct StochasticMatrix<T: Real> {
    dim: usize,
    data: Vec<T>,
}

fn row_tolerance<T: Real>(dim: usize) -> T {
    let eps = T::epsilon() * T::from_count(8 * dim.max(1));
    eps.max(T::from_f64_lossy(1e-9))
}

impl<T: Real> StochasticMatrix<T> {
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(invalid("matrix", "empty"));
        }
        let tol = row_tolerance::<T>(dim);
        let mut data = Vec::with_capacity(dim * dim);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(invalid(
                    format!("matrix row {i}"),
                    format!("has {} entries, expected {dim}", row.len()),
                ));
            }
            if row.iter().any(|&p| !(p >= T::zero()) || !p.is_finite()) {
                return Err(invalid(format!("matrix row {i}"), "negative or non-finite entry"));
            }
            let s = row.iter().fold(T::zero(), |a, &b| a + b);
            if (s - T::one()).abs() > tol {
                return Err(invalid(
                    format!("matrix row {i}"),
                    format!("sums to {:?}, expected 1", s),
                ));
            }
            data.extend(row);
        }
        Ok(Self { dim, data })
    }

    pub fn identity(dim: usize) -> Self {
        Self::mixture(dim, T::one())
    }

    pub fn uniform(dim: usize) -> Self {
        Self::mixture(dim, T::zero())
    }

    /// `stickiness * I + (1 - stickiness) * U` where `U` is the uniform matrix.
    pub fn mixture(dim: usize, stickiness: T) -> Self {
        let u = (T::one() - stickiness) / T::from_count(dim);
        let mut data = vec![u; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = data[i * dim + i] + stickiness;
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.dim + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.dim)
    }
}

impl<T: Real> TryFrom<Vec<Vec<T>>> for StochasticMatrix<T> {
    type Error = crate::error::Error;

    fn try_from(rows: Vec<Vec<T>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl<T: Real> From<StochasticMatrix<T>> for Vec<Vec<T>> {
    fn from(m: StochasticMatrix<T>) -> Self {
        m.rows().map(|r| r.to_vec()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_rows_are_stochastic() {
        let m = StochasticMatrix::<f64>::mixture(5, 0.3);
        for row in m.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((m.get(2, 2) - (0.3 + 0.7 / 5.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_unnormalized_rows() {
        assert!(StochasticMatrix::from_rows(vec![vec![0.5, 0.4], vec![0.5, 0.5]]).is_err());
        assert!(StochasticMatrix::from_rows(vec![vec![1.0f64]]).is_ok());
        assert!(StochasticMatrix::from_rows(vec![vec![1.5, -0.5], vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn serde_round_trip_validates() {
        let m = StochasticMatrix::<f64>::mixture(3, 0.5);
        let s = serde_json::to_string(&m).unwrap();
        let back: StochasticMatrix<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(m, back);
        assert!(serde_json::from_str::<StochasticMatrix<f64>>("[[0.2,0.2],[0.5,0.5]]").is_err());
    }
}
