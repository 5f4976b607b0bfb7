//! Stationary RBF kernel for the latent functions and the non-stationary
//! Gibbs kernel for the observed process.
//!
//! Point sets are [`Matrix`] values with one point per row.
//!
//! The RBF amplitude multiplies the exponential directly:
//! `k(x, x') = σ_h·exp(-‖x-x'‖²/(2ℓ_h²))`. The Gibbs kernel instead uses
//! `σ(x)·σ(x')`, so its diagonal is `σ(x)²`. A Gibbs kernel with constant
//! amplitude `s` therefore reduces to an RBF kernel with amplitude `s²`.
//!
//! Length scales for the Gibbs kernel are either one per point (isotropic,
//! broadcast over every input dimension) or one per point and dimension
//! (ARD). Per dimension the prefactor is `√(2ab/(a²+b²))` and the exponent
//! is `(x_d-x'_d)²/(a²+b²)`; the kernel is the product over dimensions.

use serde::{Deserialize, Serialize};

use crate::error::{NsgpError, Result};
use crate::numerics::{squared_distance, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfParams {
    lengthscale: f64,
    amplitude: f64,
}

impl RbfParams {
    pub fn new(lengthscale: f64, amplitude: f64) -> Result<Self> {
        check_positive("lengthscale", lengthscale)?;
        check_positive("amplitude", amplitude)?;
        Ok(Self {
            lengthscale,
            amplitude,
        })
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(NsgpError::NonPositiveParam { name, value })
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(NsgpError::DimensionMismatch(format!(
            "points of dimension {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn rbf(x: &[f64], x_prime: &[f64], params: &RbfParams) -> Result<f64> {
    check_dims(x, x_prime)?;
    Ok(rbf_unchecked(x, x_prime, params))
}

#[inline]
pub(crate) fn rbf_unchecked(x: &[f64], x_prime: &[f64], p: &RbfParams) -> f64 {
    let r2 = squared_distance(x, x_prime);
    p.amplitude * (-r2 / (2.0 * p.lengthscale * p.lengthscale)).exp()
}

/// Per-point Gibbs hyper-values aligned with a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsInputs {
    lengthscales: Matrix,
    amplitudes: Vec<f64>,
}

impl GibbsInputs {
    /// `lengthscales` is `N×1` (isotropic) or `N×D` (ARD).
    pub fn new(lengthscales: Matrix, amplitudes: Vec<f64>) -> Result<Self> {
        if lengthscales.rows() != amplitudes.len() {
            return Err(NsgpError::DimensionMismatch(format!(
                "{} length-scale rows vs {} amplitudes",
                lengthscales.rows(),
                amplitudes.len()
            )));
        }
        for &l in lengthscales.as_slice() {
            check_positive("gibbs lengthscale", l)?;
        }
        for &s in &amplitudes {
            check_positive("gibbs amplitude", s)?;
        }
        Ok(Self {
            lengthscales,
            amplitudes,
        })
    }

    /// Same length scale and amplitude at each of `n` points.
    pub fn constant(n: usize, lengthscale: f64, amplitude: f64) -> Result<Self> {
        Self::new(
            Matrix::from_fn(n, 1, |_, _| lengthscale),
            vec![amplitude; n],
        )
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn lengthscales(&self) -> &Matrix {
        &self.lengthscales
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    fn check_points(&self, points: &Matrix) -> Result<()> {
        if points.rows() != self.len() {
            return Err(NsgpError::DimensionMismatch(format!(
                "{} points vs {} gibbs inputs",
                points.rows(),
                self.len()
            )));
        }
        let c = self.lengthscales.cols();
        if c != 1 && c != points.cols() {
            return Err(NsgpError::DimensionMismatch(format!(
                "{c} length-scale columns for {}-dimensional points",
                points.cols()
            )));
        }
        Ok(())
    }
}

/// Gibbs kernel between two points with their own hyper-values.
///
/// `lx` and `lx_prime` hold either one isotropic length scale or one per
/// input dimension.
pub fn gibbs(
    x: &[f64],
    x_prime: &[f64],
    lx: &[f64],
    lx_prime: &[f64],
    sx: f64,
    sx_prime: f64,
) -> Result<f64> {
    check_dims(x, x_prime)?;
    if lx.len() != lx_prime.len() || (lx.len() != 1 && lx.len() != x.len()) {
        return Err(NsgpError::DimensionMismatch(format!(
            "length scales of size {} and {} for dimension {}",
            lx.len(),
            lx_prime.len(),
            x.len()
        )));
    }
    for &l in lx.iter().chain(lx_prime) {
        check_positive("gibbs lengthscale", l)?;
    }
    check_positive("gibbs amplitude", sx)?;
    check_positive("gibbs amplitude", sx_prime)?;
    Ok(gibbs_unchecked(x, x_prime, lx, lx_prime, sx, sx_prime))
}

#[inline]
pub(crate) fn gibbs_unchecked(
    x: &[f64],
    x_prime: &[f64],
    lx: &[f64],
    lx_prime: &[f64],
    sx: f64,
    sx_prime: f64,
) -> f64 {
    let mut log_prefactor = 0.0;
    let mut exponent = 0.0;
    if lx.len() == 1 {
        let (a, b) = (lx[0], lx_prime[0]);
        let s = a * a + b * b;
        let ratio = 2.0 * a * b / s;
        if ratio != 1.0 {
            log_prefactor = 0.5 * x.len() as f64 * ratio.ln();
        }
        exponent = squared_distance(x, x_prime) / s;
    } else {
        for d in 0..x.len() {
            let (a, b) = (lx[d], lx_prime[d]);
            let s = a * a + b * b;
            let ratio = 2.0 * a * b / s;
            if ratio != 1.0 {
                log_prefactor += 0.5 * ratio.ln();
            }
            let r = x[d] - x_prime[d];
            exponent += r * r / s;
        }
    }
    sx * sx_prime * (log_prefactor - exponent).exp()
}

#[derive(Debug, Clone, Copy)]
pub enum GramKernel<'a> {
    Rbf(&'a RbfParams),
    Gibbs(&'a GibbsInputs),
}

#[derive(Debug, Clone, Copy)]
pub enum CrossKernel<'a> {
    Rbf(&'a RbfParams),
    /// Hyper-values for the row set and the column set.
    Gibbs(&'a GibbsInputs, &'a GibbsInputs),
}

/// Symmetric matrix of pairwise kernel values over one point set.
pub fn gram(points: &Matrix, kernel: GramKernel<'_>) -> Result<Matrix> {
    let n = points.rows();
    if let GramKernel::Gibbs(inputs) = kernel {
        inputs.check_points(points)?;
    }
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = match kernel {
                GramKernel::Rbf(p) => rbf_unchecked(points.row(i), points.row(j), p),
                GramKernel::Gibbs(g) => gibbs_unchecked(
                    points.row(i),
                    points.row(j),
                    g.lengthscales.row(i),
                    g.lengthscales.row(j),
                    g.amplitudes[i],
                    g.amplitudes[j],
                ),
            };
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Rectangular matrix of kernel values between two point sets.
pub fn cross_gram(a: &Matrix, b: &Matrix, kernel: CrossKernel<'_>) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(NsgpError::DimensionMismatch(format!(
            "point sets of dimension {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    if let CrossKernel::Gibbs(ga, gb) = kernel {
        ga.check_points(a)?;
        gb.check_points(b)?;
        if ga.lengthscales.cols() != gb.lengthscales.cols() {
            return Err(NsgpError::DimensionMismatch(
                "mixed isotropic and ARD length scales".into(),
            ));
        }
    }
    Ok(Matrix::from_fn(a.rows(), b.rows(), |i, j| match kernel {
        CrossKernel::Rbf(p) => rbf_unchecked(a.row(i), b.row(j), p),
        CrossKernel::Gibbs(ga, gb) => gibbs_unchecked(
            a.row(i),
            b.row(j),
            ga.lengthscales.row(i),
            gb.lengthscales.row(j),
            ga.amplitudes[i],
            gb.amplitudes[j],
        ),
    }))
}
