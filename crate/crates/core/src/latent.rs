//! Log-scale hyper-functions: a learned constant or a latent GP pinned down
//! by its values at the shared inducing inputs.
//!
//! Latent GP outputs are whitened: with `L = chol(K_h(X̄, X̄) + jitter·I)`
//! the values at the inducing inputs are `z̄ = μ_h + L·γ`, so `γ ~ N(0, I)`
//! gives `z̄ ~ N(μ_h, K_h)`. Away from the inducing inputs the log-value is
//! the conditional mean `μ_h + K_h(x, X̄)·K_h⁻¹·(z̄ - μ_h)`, which simplifies
//! to `μ_h + K_h(x, X̄)·L⁻ᵀ·γ`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{NsgpError, Result};
use crate::kernels::{cross_gram, gram, CrossKernel, GramKernel, RbfParams};
use crate::numerics::{cholesky_psd, CholFactor, Matrix};

/// Diagonal jitter on `K_h(X̄, X̄)`, relative to the latent amplitude.
pub const LATENT_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperTag {
    Lengthscale,
    Signal,
    Noise,
}

impl HyperTag {
    pub const ALL: [HyperTag; 3] = [HyperTag::Lengthscale, HyperTag::Signal, HyperTag::Noise];

    pub fn key(self) -> &'static str {
        match self {
            HyperTag::Lengthscale => "ell",
            HyperTag::Signal => "sigma",
            HyperTag::Noise => "omega",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            HyperTag::Lengthscale => "ℓ",
            HyperTag::Signal => "σ",
            HyperTag::Noise => "ω",
        }
    }
}

impl fmt::Display for HyperTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentGp {
    pub mean: f64,
    pub rbf: RbfParams,
    /// `M×C` whitened outputs; `C` is the number of output channels
    /// (the input dimension for ARD length scales, otherwise 1).
    pub whitened: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentConstant {
    /// Log of the hyper-parameter value.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Latent {
    Gp(LatentGp),
    Constant(LatentConstant),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperFunction {
    pub tag: HyperTag,
    pub latent: Latent,
}

/// A latent GP with its inducing Cholesky factor computed.
#[derive(Debug, Clone)]
pub struct ConditionedLatent {
    pub(crate) mean: f64,
    pub(crate) rbf: RbfParams,
    pub(crate) factor: CholFactor,
    /// `L⁻ᵀ·γ`, `M×C`.
    pub(crate) alpha: Matrix,
}

impl LatentGp {
    pub fn new(mean: f64, rbf: RbfParams, whitened: Matrix) -> Result<Self> {
        if whitened.rows() == 0 || whitened.cols() == 0 {
            return Err(NsgpError::DimensionMismatch(
                "latent GP needs at least one inducing point".into(),
            ));
        }
        if !mean.is_finite() || whitened.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(NsgpError::NonFinite("latent GP parameters".into()));
        }
        Ok(Self {
            mean,
            rbf,
            whitened,
        })
    }

    pub fn channels(&self) -> usize {
        self.whitened.cols()
    }

    /// Factorizes `K_h(X̄, X̄)` and caches `L⁻ᵀ·γ`.
    pub fn condition(&self, inducing: &Matrix) -> Result<ConditionedLatent> {
        if inducing.rows() != self.whitened.rows() {
            return Err(NsgpError::DimensionMismatch(format!(
                "{} inducing points vs {} whitened rows",
                inducing.rows(),
                self.whitened.rows()
            )));
        }
        let k = gram(inducing, GramKernel::Rbf(&self.rbf))?;
        let factor = cholesky_psd(&k, LATENT_JITTER * self.rbf.amplitude())?;
        let alpha = factor.solve_lower_t(&self.whitened)?;
        Ok(ConditionedLatent {
            mean: self.mean,
            rbf: self.rbf,
            factor,
            alpha,
        })
    }

    /// `z̄ = μ_h + L·γ` at the inducing inputs.
    pub fn latent_outputs(&self, inducing: &Matrix) -> Result<Matrix> {
        self.condition(inducing)?.latent_outputs(&self.whitened)
    }
}

impl ConditionedLatent {
    pub fn factor(&self) -> &CholFactor {
        &self.factor
    }

    fn latent_outputs(&self, whitened: &Matrix) -> Result<Matrix> {
        let z = self.factor.lower().matmul(whitened)?;
        Ok(z.map(|v| v + self.mean))
    }

    /// Conditional-mean log-values at `points`, `N×C`.
    pub fn predict_log(&self, inducing: &Matrix, points: &Matrix) -> Result<Matrix> {
        let kxz = cross_gram(points, inducing, CrossKernel::Rbf(&self.rbf))?;
        Ok(kxz.matmul(&self.alpha)?.map(|v| v + self.mean))
    }
}

impl HyperFunction {
    pub fn constant(tag: HyperTag, log_value: f64) -> Self {
        Self {
            tag,
            latent: Latent::Constant(LatentConstant { value: log_value }),
        }
    }

    pub fn gp(tag: HyperTag, gp: LatentGp) -> Self {
        Self {
            tag,
            latent: Latent::Gp(gp),
        }
    }

    pub fn is_latent_gp(&self) -> bool {
        matches!(self.latent, Latent::Gp(_))
    }

    /// Log hyper-values at `points`: `N×C` for a latent GP, `N×1` for a
    /// constant.
    pub fn predict_log(&self, inducing: Option<&Matrix>, points: &Matrix) -> Result<Matrix> {
        match &self.latent {
            Latent::Constant(c) => Ok(Matrix::from_fn(points.rows(), 1, |_, _| c.value)),
            Latent::Gp(gp) => {
                let inducing = inducing.ok_or_else(|| {
                    NsgpError::LayoutMismatch(format!(
                        "latent GP for {} without inducing inputs",
                        self.tag
                    ))
                })?;
                if inducing.cols() != points.cols() {
                    return Err(NsgpError::DimensionMismatch(format!(
                        "inducing inputs of dimension {} vs query dimension {}",
                        inducing.cols(),
                        points.cols()
                    )));
                }
                gp.condition(inducing)?.predict_log(inducing, points)
            }
        }
    }

    /// `exp` of [`Self::predict_log`].
    pub fn predict_value(&self, inducing: Option<&Matrix>, points: &Matrix) -> Result<Matrix> {
        Ok(self.predict_log(inducing, points)?.map(f64::exp))
    }
}
