use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// `x -> b(x)`, written into the output slice of length `d`.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// `x -> sigma(x)`, written row-major into the output slice of length `d*d`.
pub type MatrixField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Declared global bounds on the coefficients. `None` means unknown or
/// unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBounds {
    /// `sup |b|`
    pub drift: Option<f64>,
    /// `sup ||sigma||` (operator norm)
    pub diffusion: Option<f64>,
    /// `sup ||sigma^-1||` (operator norm)
    pub inverse_diffusion: Option<f64>,
}

/// A time-homogeneous diffusion `dX = b(X) dt + sigma(X) dW` in `R^d`.
///
/// Coefficient functions must be pure; ensembles call them concurrently.
#[derive(Clone)]
pub struct SdeModel {
    name: String,
    dim: usize,
    drift: VectorField,
    diffusion: MatrixField,
    bounds: CoefficientBounds,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

impl SdeModel {
    pub fn new<B, S>(
        name: impl Into<String>,
        dim: usize,
        drift: B,
        diffusion: S,
        bounds: CoefficientBounds,
    ) -> Result<Self>
    where
        B: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        S: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::from_fields(name, dim, Arc::new(drift), Arc::new(diffusion), bounds)
    }

    pub fn from_fields(
        name: impl Into<String>,
        dim: usize,
        drift: VectorField,
        diffusion: MatrixField,
        bounds: CoefficientBounds,
    ) -> Result<Self> {
        if dim == 0 {
            return invalid("model dimension must be at least 1");
        }
        for (label, v) in [
            ("sup|b|", bounds.drift),
            ("sup|sigma|", bounds.diffusion),
            ("sup|sigma^-1|", bounds.inverse_diffusion),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return invalid(format!("declared bound {label} = {v} is not a finite nonnegative real"));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            drift,
            diffusion,
            bounds,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> CoefficientBounds {
        self.bounds
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    /// Returns the declared `sup ||sigma^-1||`, or an error if the model does
    /// not declare one.
    pub fn require_nondegenerate(&self) -> Result<f64> {
        self.bounds.inverse_diffusion.ok_or(Error::DegenerateDiffusion)
    }

    pub fn eval_drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift(x, &mut out);
        out
    }

    pub fn eval_diffusion(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.diffusion(x, &mut out);
        out
    }

    /// Checks the declared bounds at one state. Ensembles call this on
    /// start and terminal states.
    pub fn check_bounds_at(&self, x: &[f64]) -> Result<()> {
        const REL: f64 = 1e-9;
        let b = self.eval_drift(x);
        let s = self.eval_diffusion(x);
        if b.iter().chain(&s).any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup { state: x.to_vec(), time: f64::NAN });
        }
        if let Some(sup) = self.bounds.drift {
            let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > sup * (1.0 + REL) + 1e-12 {
                return Err(Error::BoundViolation(format!(
                    "|b(x)| = {norm} > {sup} at x = {x:?}"
                )));
            }
        }
        if self.bounds.diffusion.is_none() && self.bounds.inverse_diffusion.is_none() {
            return Ok(());
        }
        let (lo, hi) = gram_extreme_eigenvalues(&s, self.dim);
        if let Some(sup) = self.bounds.diffusion {
            if hi > sup * sup * (1.0 + REL) + 1e-12 {
                return Err(Error::BoundViolation(format!(
                    "|sigma(x)|^2 = {hi} > {} at x = {x:?}",
                    sup * sup
                )));
            }
        }
        if let Some(sup_inv) = self.bounds.inverse_diffusion {
            let floor = 1.0 / (sup_inv * sup_inv);
            if lo < floor * (1.0 - REL) {
                return Err(Error::BoundViolation(format!(
                    "smallest eigenvalue of sigma sigma^T is {lo} < {floor} at x = {x:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Smallest and largest eigenvalue of `S S^T` for a row-major `d x d` matrix.
fn gram_extreme_eigenvalues(s: &[f64], d: usize) -> (f64, f64) {
    if d == 1 {
        let v = s[0] * s[0];
        return (v, v);
    }
    let m = DMatrix::from_row_slice(d, d, s);
    let gram = &m * m.transpose();
    let eig = gram.symmetric_eigenvalues();
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Solves `sigma y = v` for a row-major `d x d` matrix.
pub(crate) fn solve_diffusion(s: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
    let d = v.len();
    if d == 1 {
        if s[0] == 0.0 {
            return Err(Error::DegenerateDiffusion);
        }
        out[0] = v[0] / s[0];
        return Ok(());
    }
    let m = DMatrix::from_row_slice(d, d, s);
    let y = m
        .lu()
        .solve(&DVector::from_column_slice(v))
        .ok_or(Error::DegenerateDiffusion)?;
    out.copy_from_slice(y.as_slice());
    Ok(())
}
