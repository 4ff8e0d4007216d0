//! Optional per-feature z-scoring, fitted on source and target training rows
//! together.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: DVector<f64>,
    /// Population standard deviation; constant features get 1.
    pub scale: DVector<f64>,
}

impl Normalizer {
    pub fn fit(parts: &[&DMatrix<f64>]) -> Result<Self> {
        let m = parts.first().map(|p| p.ncols()).unwrap_or(0);
        let n: usize = parts.iter().map(|p| p.nrows()).sum();
        if n == 0 || m == 0 {
            return Err(Error::Empty("no rows to fit a normalizer on".into()));
        }
        if parts.iter().any(|p| p.ncols() != m) {
            return Err(Error::DimensionMismatch("normalizer inputs differ in width".into()));
        }
        let mut mean = DVector::zeros(m);
        for p in parts {
            for row in p.row_iter() {
                mean += row.transpose();
            }
        }
        mean /= n as f64;
        let mut var = DVector::<f64>::zeros(m);
        for p in parts {
            for row in p.row_iter() {
                for c in 0..m {
                    var[c] += (row[c] - mean[c]).powi(2);
                }
            }
        }
        let scale = var.map(|v| {
            let s = (v / n as f64).sqrt();
            if s > 0.0 { s } else { 1.0 }
        });
        Ok(Normalizer { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "normalizer expects {} features, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, c| (x[(i, c)] - self.mean[c]) / self.scale[c]))
    }

    pub fn check(&self) -> Result<()> {
        if self.scale.len() != self.mean.len() {
            return Err(Error::Format("normalizer mean and scale lengths differ".into()));
        }
        if self.mean.iter().any(|v| !v.is_finite()) || self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Format("normalizer needs finite means and positive scales".into()));
        }
        Ok(())
    }
}
