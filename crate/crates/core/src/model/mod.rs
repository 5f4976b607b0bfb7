//! The assembled non-stationary heteroscedastic GP.
//!
//! Observations follow `y(x) = f(x) + ε(x)` with `f ~ GP(0, K_f)` under the
//! Gibbs kernel and `ε(x) ~ N(0, ω(x)²)`. Each of `ℓ(x)`, `σ(x)`, `ω(x)` is a
//! [`HyperFunction`]; latent-GP hyper-functions share one set of inducing
//! inputs.

mod objective;
mod params;

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{NsgpError, Result};
use crate::kernels::{cross_gram, gram, CrossKernel, GibbsInputs, GramKernel};
use crate::latent::{HyperFunction, HyperTag, Latent};
use crate::numerics::{cholesky_psd, CholFactor, Matrix};

pub(crate) use objective::Evaluation;
pub use objective::{gaussian_nlml, LN_2PI};
pub use params::{param_count, ParamLayout, ParamVector, Segment, SegmentKind, Transform};

/// Which hyper-functions are latent GPs; the rest are learned constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub latent_ell: bool,
    pub latent_sigma: bool,
    pub latent_omega: bool,
}

impl Variant {
    pub const STATIONARY: Variant = Variant::new(false, false, false);
    pub const FULL: Variant = Variant::new(true, true, true);

    pub const fn new(latent_ell: bool, latent_sigma: bool, latent_omega: bool) -> Self {
        Self {
            latent_ell,
            latent_sigma,
            latent_omega,
        }
    }

    /// The eight ablation variants in results-table order.
    pub fn all() -> [Variant; 8] {
        [
            Variant::new(false, false, false),
            Variant::new(true, false, false),
            Variant::new(false, false, true),
            Variant::new(false, true, false),
            Variant::new(true, false, true),
            Variant::new(true, true, false),
            Variant::new(false, true, true),
            Variant::new(true, true, true),
        ]
    }

    pub fn is_latent(&self, tag: HyperTag) -> bool {
        match tag {
            HyperTag::Lengthscale => self.latent_ell,
            HyperTag::Signal => self.latent_sigma,
            HyperTag::Noise => self.latent_omega,
        }
    }

    pub fn any_latent(&self) -> bool {
        self.latent_ell || self.latent_sigma || self.latent_omega
    }

    /// Table label such as `(ℓ,σ,ω)-GP`.
    pub fn label(&self) -> String {
        if !self.any_latent() {
            return "Stationary Homoskedastic GP".to_string();
        }
        let parts: Vec<&str> = HyperTag::ALL
            .iter()
            .filter(|t| self.is_latent(**t))
            .map(|t| t.symbol())
            .collect();
        format!("({})-GP", parts.join(","))
    }

    /// ASCII identifier, e.g. `ell-sigma-omega` or `stationary`.
    pub fn key(&self) -> String {
        if !self.any_latent() {
            return "stationary".to_string();
        }
        HyperTag::ALL
            .iter()
            .filter(|t| self.is_latent(**t))
            .map(|t| t.key())
            .collect::<Vec<_>>()
            .join("-")
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Gamma density with shape/rate parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn log_density(&self, x: f64) -> f64 {
        self.shape * self.rate.ln() + (self.shape - 1.0) * x.ln() - self.rate * x - ln_gamma(self.shape)
    }

    /// d(-log density)/d(log x).
    pub(crate) fn neg_log_density_dlog(&self, x: f64) -> f64 {
        -(self.shape - 1.0) + self.rate * x
    }
}

/// Priors on the latent-GP hyper-parameters. Means, constants and inducing
/// inputs carry flat priors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSet {
    pub latent_lengthscale: GammaPrior,
    pub latent_amplitude: GammaPrior,
}

impl Default for PriorSet {
    fn default() -> Self {
        Self {
            latent_lengthscale: GammaPrior {
                shape: 5.0,
                rate: 1.0,
            },
            latent_amplitude: GammaPrior {
                shape: 0.5,
                rate: 1.0,
            },
        }
    }
}

/// Standard normal log-density, the prior on every whitened element.
pub fn std_normal_log_density(x: f64) -> f64 {
    -0.5 * (x * x + LN_2PI)
}

/// Predictive moments with the epistemic/aleatoric split.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    /// Epistemic variance `var(f(x*))`.
    pub var_f: Vec<f64>,
    /// Aleatoric variance `ω(x*)²`.
    pub var_noise: Vec<f64>,
    /// `var_f + var_noise`.
    pub var_y: Vec<f64>,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Hyper-function values at a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperValues {
    /// `N×1` or `N×D`.
    pub lengthscale: Matrix,
    pub signal: Vec<f64>,
    pub noise: Vec<f64>,
}

/// Round-off tolerance below zero for epistemic variances, relative to the
/// prior variance at the query point.
pub const VARIANCE_CLAMP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NsgpModel {
    inducing: Option<Matrix>,
    ell: HyperFunction,
    sigma: HyperFunction,
    omega: HyperFunction,
    priors: PriorSet,
    train_x: Matrix,
    train_y: Vec<f64>,
}

impl NsgpModel {
    /// Validates the hyper-function layout against the data.
    pub fn new(
        inducing: Option<Matrix>,
        ell: HyperFunction,
        sigma: HyperFunction,
        omega: HyperFunction,
        train_x: Matrix,
        train_y: Vec<f64>,
    ) -> Result<Self> {
        let model = Self {
            inducing,
            ell,
            sigma,
            omega,
            priors: PriorSet::default(),
            train_x,
            train_y,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let n = self.train_x.rows();
        let d = self.train_x.cols();
        if n == 0 {
            return Err(NsgpError::EmptyDataset);
        }
        if d == 0 {
            return Err(NsgpError::DimensionMismatch("inputs have no columns".into()));
        }
        if self.train_y.len() != n {
            return Err(NsgpError::DimensionMismatch(format!(
                "{n} input rows vs {} targets",
                self.train_y.len()
            )));
        }
        if self.train_y.iter().any(|v| !v.is_finite()) {
            return Err(NsgpError::NonFinite("training targets".into()));
        }
        for (tag, h) in self.hypers() {
            if h.tag != tag {
                return Err(NsgpError::LayoutMismatch(format!(
                    "hyper-function tagged {} in the {} slot",
                    h.tag, tag
                )));
            }
        }
        let any_latent = self.hypers().iter().any(|(_, h)| h.is_latent_gp());
        match (&self.inducing, any_latent) {
            (None, true) => {
                return Err(NsgpError::LayoutMismatch(
                    "latent GP hyper-functions need inducing inputs".into(),
                ))
            }
            (Some(_), false) => {
                return Err(NsgpError::LayoutMismatch(
                    "inducing inputs given but no latent GP hyper-function".into(),
                ))
            }
            _ => {}
        }
        if let Some(z) = &self.inducing {
            if z.rows() == 0 || z.cols() != d {
                return Err(NsgpError::DimensionMismatch(format!(
                    "inducing inputs are {}x{} for {d}-dimensional data",
                    z.rows(),
                    z.cols()
                )));
            }
            for (tag, h) in self.hypers() {
                if let Latent::Gp(gp) = &h.latent {
                    let want = if tag == HyperTag::Lengthscale { d } else { 1 };
                    if gp.whitened.rows() != z.rows() || gp.whitened.cols() != want {
                        return Err(NsgpError::LayoutMismatch(format!(
                            "{tag} whitened block is {}x{}, expected {}x{want}",
                            gp.whitened.rows(),
                            gp.whitened.cols(),
                            z.rows()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        Variant::new(
            self.ell.is_latent_gp(),
            self.sigma.is_latent_gp(),
            self.omega.is_latent_gp(),
        )
    }

    pub fn inducing(&self) -> Option<&Matrix> {
        self.inducing.as_ref()
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.as_ref().map_or(0, Matrix::rows)
    }

    pub fn input_dim(&self) -> usize {
        self.train_x.cols()
    }

    pub fn hyper(&self, tag: HyperTag) -> &HyperFunction {
        match tag {
            HyperTag::Lengthscale => &self.ell,
            HyperTag::Signal => &self.sigma,
            HyperTag::Noise => &self.omega,
        }
    }

    pub(crate) fn hypers(&self) -> [(HyperTag, &HyperFunction); 3] {
        [
            (HyperTag::Lengthscale, &self.ell),
            (HyperTag::Signal, &self.sigma),
            (HyperTag::Noise, &self.omega),
        ]
    }

    pub fn priors(&self) -> &PriorSet {
        &self.priors
    }

    pub fn train_x(&self) -> &Matrix {
        &self.train_x
    }

    pub fn train_y(&self) -> &[f64] {
        &self.train_y
    }

    /// Same hyper-functions conditioned on different observations.
    pub fn with_training_data(&self, train_x: Matrix, train_y: Vec<f64>) -> Result<Self> {
        let mut m = self.clone();
        m.train_x = train_x;
        m.train_y = train_y;
        m.validate()?;
        Ok(m)
    }

    pub fn hyper_values(&self, points: &Matrix) -> Result<HyperValues> {
        let z = self.inducing.as_ref();
        Ok(HyperValues {
            lengthscale: self.ell.predict_value(z, points)?,
            signal: self.sigma.predict_value(z, points)?.into_vec(),
            noise: self.omega.predict_value(z, points)?.into_vec(),
        })
    }

    fn gibbs_inputs(values: &HyperValues) -> Result<GibbsInputs> {
        GibbsInputs::new(values.lengthscale.clone(), values.signal.clone())
    }

    /// Cholesky factor of `K_f(X, X) + diag(ω(X)²)` and the Gibbs inputs
    /// at the training points.
    fn train_factor(&self) -> Result<(CholFactor, GibbsInputs)> {
        let values = self.hyper_values(&self.train_x)?;
        let inputs = Self::gibbs_inputs(&values)?;
        let mut k = gram(&self.train_x, GramKernel::Gibbs(&inputs))?;
        for (i, w) in values.noise.iter().enumerate() {
            k[(i, i)] += w * w;
        }
        Ok((cholesky_psd(&k, 0.0)?, inputs))
    }

    /// Negative log marginal likelihood of the training targets.
    pub fn nlml(&self) -> Result<f64> {
        Ok(objective::evaluate(self, false)?.nlml)
    }

    /// Negative log marginal likelihood minus the log prior.
    pub fn objective(&self) -> Result<f64> {
        Ok(objective::evaluate(self, false)?.objective())
    }

    /// Sum of prior log-densities over latent hyper-parameters and whitened
    /// outputs.
    pub fn log_prior(&self) -> f64 {
        objective::log_prior(self)
    }

    pub(crate) fn evaluate(&self, with_gradient: bool) -> Result<Evaluation> {
        objective::evaluate(self, with_gradient)
    }

    /// GP conditionals at `query` with the epistemic/aleatoric split.
    pub fn predict(&self, query: &Matrix) -> Result<Prediction> {
        if query.cols() != self.input_dim() {
            return Err(NsgpError::DimensionMismatch(format!(
                "query dimension {} vs model dimension {}",
                query.cols(),
                self.input_dim()
            )));
        }
        let (factor, train_inputs) = self.train_factor()?;
        let query_values = self.hyper_values(query)?;
        let query_inputs = Self::gibbs_inputs(&query_values)?;
        let k_star = cross_gram(
            &self.train_x,
            query,
            CrossKernel::Gibbs(&train_inputs, &query_inputs),
        )?;
        let alpha = factor.solve_vec(&self.train_y)?;
        let mean = k_star.t_matmul(&Matrix::column_vector(&alpha))?.into_vec();
        let v = factor.solve_lower(&k_star)?;
        let q = query.rows();
        let mut explained = vec![0.0; q];
        for n in 0..v.rows() {
            for (e, &x) in explained.iter_mut().zip(v.row(n)) {
                *e += x * x;
            }
        }
        let mut var_f = Vec::with_capacity(q);
        for (i, (&s, e)) in query_values.signal.iter().zip(explained).enumerate() {
            let prior = s * s;
            let raw = prior - e;
            if raw < 0.0 {
                if raw < -VARIANCE_CLAMP_TOL * prior.max(1.0) {
                    return Err(NsgpError::NegativeVariance {
                        index: i,
                        value: raw,
                    });
                }
                var_f.push(0.0);
            } else {
                var_f.push(raw);
            }
        }
        let var_noise: Vec<f64> = query_values.noise.iter().map(|w| w * w).collect();
        let var_y = var_f.iter().zip(&var_noise).map(|(a, b)| a + b).collect();
        Ok(Prediction {
            mean,
            var_f,
            var_noise,
            var_y,
        })
    }
}
