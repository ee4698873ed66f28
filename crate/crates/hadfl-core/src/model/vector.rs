//! Flat parameter vector, the unit of all communication and aggregation.

use crate::error::{Error, Result};

/// Flat 64-bit parameter or gradient vector. Every entry is finite; the
/// constructors and arithmetic below reject NaN/Inf so the invariant holds
/// after every operation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector {
            values: vec![0.0; dim],
        }
    }

    /// Builds a vector from raw values, rejecting non-finite entries.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "param vector construction",
            });
        }
        Ok(ParamVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `self - lr * g`, element-wise.
    pub fn step(&self, g: &ParamVector, lr: f64) -> Result<ParamVector> {
        self.check_dim(g)?;
        let values: Vec<f64> = self
            .values
            .iter()
            .zip(&g.values)
            .map(|(w, g)| w - lr * g)
            .collect();
        ParamVector::from_values(values)
    }

    /// `(1 - beta) * self + beta * other`.
    pub fn blend(&self, other: &ParamVector, beta: f64) -> Result<ParamVector> {
        self.check_dim(other)?;
        let values: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (1.0 - beta) * a + beta * b)
            .collect();
        ParamVector::from_values(values)
    }

    /// Largest absolute element-wise difference; used by trajectory tests.
    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn check_dim(&self, other: &ParamVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(ParamVector::from_values(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::from_values(vec![f64::INFINITY]).is_err());
        assert!(ParamVector::from_values(vec![1.0, -2.0]).is_ok());
    }

    #[test]
    fn step_arithmetic() {
        let w = ParamVector::from_values(vec![1.0]).unwrap();
        let g = ParamVector::from_values(vec![2.0]).unwrap();
        let out = w.step(&g, 0.1).unwrap();
        assert!((out.as_slice()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn step_dim_mismatch() {
        let w = ParamVector::zeros(2);
        let g = ParamVector::zeros(3);
        assert!(matches!(w.step(&g, 0.1), Err(Error::DimMismatch { .. })));
    }
}
