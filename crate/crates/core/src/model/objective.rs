//! Negative log marginal likelihood, priors, and the exact gradient of their
//! difference with respect to the flat parameter vector.
//!
//! The gradient is accumulated backwards through the same steps as the
//! forward pass:
//!
//! 1. `∂/∂K = ½(K⁻¹ - ααᵀ)` with `α = K⁻¹y`, pushed onto the log hyper-values
//!    at each training point through the Gibbs kernel and the noise diagonal;
//! 2. through `h̃(X) = μ + K_h(X, X̄)·L⁻ᵀγ` into `μ`, `γ`, and the cross gram;
//! 3. through the Cholesky factor `L` of `K_h(X̄, X̄)` into the latent gram,
//!    and from both grams into `X̄`, `ℓ_h`, `σ_h`.

use super::{std_normal_log_density, NsgpModel, ParamLayout, SegmentKind};
use crate::error::{NsgpError, Result};
use crate::kernels::{cross_gram, gram, CrossKernel, GibbsInputs, GramKernel};
use crate::latent::{ConditionedLatent, HyperTag, Latent, LatentGp, LATENT_JITTER};
use crate::numerics::{cholesky_psd, dot, squared_distance, Matrix};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Textbook `½yᵀK⁻¹y + ½log|K| + (N/2)·log 2π`.
pub fn gaussian_nlml(k: &Matrix, y: &[f64]) -> Result<f64> {
    let factor = cholesky_psd(k, 0.0)?;
    let alpha = factor.solve_vec(y)?;
    Ok(0.5 * dot(y, &alpha) + 0.5 * factor.logdet() + 0.5 * y.len() as f64 * LN_2PI)
}

#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub nlml: f64,
    pub log_prior: f64,
    /// In [`ParamLayout::for_model`] order, when requested.
    pub gradient: Option<Vec<f64>>,
    /// Factorizations that needed more than their base jitter.
    pub jitter_events: usize,
}

impl Evaluation {
    pub fn objective(&self) -> f64 {
        self.nlml - self.log_prior
    }
}

pub(crate) fn log_prior(model: &NsgpModel) -> f64 {
    let priors = model.priors();
    model
        .hypers()
        .iter()
        .filter_map(|(_, h)| match &h.latent {
            Latent::Gp(gp) => Some(
                priors.latent_lengthscale.log_density(gp.rbf.lengthscale())
                    + priors.latent_amplitude.log_density(gp.rbf.amplitude())
                    + gp
                        .whitened
                        .as_slice()
                        .iter()
                        .map(|&g| std_normal_log_density(g))
                        .sum::<f64>(),
            ),
            Latent::Constant(_) => None,
        })
        .sum()
}

struct LatentForward<'a> {
    gp: &'a LatentGp,
    cond: ConditionedLatent,
    kxz: Matrix,
}

pub(crate) fn evaluate(model: &NsgpModel, with_gradient: bool) -> Result<Evaluation> {
    let x = model.train_x();
    let y = model.train_y();
    let n = x.rows();
    let d = x.cols();
    let inducing = model.inducing();
    let mut jitter_events = 0;

    let mut logs: Vec<Matrix> = Vec::with_capacity(3);
    let mut forwards: Vec<Option<LatentForward<'_>>> = Vec::with_capacity(3);
    for (_, h) in model.hypers() {
        match &h.latent {
            Latent::Constant(c) => {
                logs.push(Matrix::from_fn(n, 1, |_, _| c.value));
                forwards.push(None);
            }
            Latent::Gp(gp) => {
                let z = inducing.expect("validated: latent GP has inducing inputs");
                let cond = gp.condition(z)?;
                if cond.factor.jitter_used() > LATENT_JITTER * gp.rbf.amplitude() {
                    jitter_events += 1;
                }
                let kxz = cross_gram(x, z, CrossKernel::Rbf(&gp.rbf))?;
                logs.push(kxz.matmul(&cond.alpha)?.map(|v| v + cond.mean));
                forwards.push(Some(LatentForward { gp, cond, kxz }));
            }
        }
    }

    let ell = logs[0].map(f64::exp);
    let sig: Vec<f64> = logs[1].as_slice().iter().map(|v| v.exp()).collect();
    let om: Vec<f64> = logs[2].as_slice().iter().map(|v| v.exp()).collect();
    if let Some(bad) = ell.as_slice().iter().chain(&sig).chain(&om).find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(NsgpError::NonFinite(format!("hyper-function value {bad}")));
    }
    let inputs = GibbsInputs::new(ell.clone(), sig.clone())?;
    let kf = gram(x, GramKernel::Gibbs(&inputs))?;
    let mut k = kf.clone();
    for (i, w) in om.iter().enumerate() {
        k[(i, i)] += w * w;
    }
    let factor = cholesky_psd(&k, 0.0)?;
    if factor.jitter_used() > 0.0 {
        jitter_events += 1;
    }
    let alpha = factor.solve_vec(y)?;
    let nlml = 0.5 * dot(y, &alpha) + 0.5 * factor.logdet() + 0.5 * n as f64 * LN_2PI;
    let log_prior = log_prior(model);
    if !nlml.is_finite() {
        return Err(NsgpError::NonFinite("negative log marginal likelihood".into()));
    }

    if !with_gradient {
        return Ok(Evaluation {
            nlml,
            log_prior,
            gradient: None,
            jitter_events,
        });
    }

    // Adjoints of the log hyper-values at the training inputs.
    let kinv = factor.inverse();
    let ell_cols = ell.cols();
    let mut g_ell = Matrix::zeros(n, ell_cols);
    let mut g_sig = vec![0.0; n];
    let mut g_om = vec![0.0; n];
    for i in 0..n {
        let xi = x.row(i);
        let li = ell.row(i);
        g_om[i] = om[i] * om[i] * (kinv[(i, i)] - alpha[i] * alpha[i]);
        for j in 0..n {
            let w = 0.5 * (kinv[(i, j)] - alpha[i] * alpha[j]);
            let p2 = 2.0 * w * kf[(i, j)];
            if p2 == 0.0 {
                continue;
            }
            g_sig[i] += p2;
            let xj = x.row(j);
            let lj = ell.row(j);
            if ell_cols == 1 {
                let (a, b) = (li[0], lj[0]);
                let a2 = a * a;
                let s = a2 + b * b;
                let r2 = squared_distance(xi, xj);
                g_ell[(i, 0)] += p2 * (d as f64 * (0.5 - a2 / s) + 2.0 * a2 * r2 / (s * s));
            } else {
                let row = g_ell.row_mut(i);
                for dd in 0..d {
                    let (a, b) = (li[dd], lj[dd]);
                    let a2 = a * a;
                    let s = a2 + b * b;
                    let r = xi[dd] - xj[dd];
                    row[dd] += p2 * (0.5 - a2 / s + 2.0 * a2 * r * r / (s * s));
                }
            }
        }
    }
    let adjoints = [
        g_ell,
        Matrix::column_vector(&g_sig),
        Matrix::column_vector(&g_om),
    ];

    let layout = ParamLayout::for_model(model);
    let mut grad = vec![0.0; layout.len()];
    let mut grad_z = inducing.map(|z| Matrix::zeros(z.rows(), z.cols()));
    for (idx, tag) in HyperTag::ALL.into_iter().enumerate() {
        let g = &adjoints[idx];
        match &forwards[idx] {
            None => {
                grad[layout.offset(SegmentKind::Constant(tag))] = g.as_slice().iter().sum();
            }
            Some(fwd) => {
                let z = inducing.expect("latent GP has inducing inputs");
                let gz = grad_z.as_mut().expect("latent GP has inducing inputs");
                latent_backward(model, &layout, tag, fwd, g, x, z, gz, &mut grad)?;
            }
        }
    }
    if let (Some(gz), Some(seg)) = (grad_z, layout.segment(SegmentKind::Inducing)) {
        grad[seg.offset..seg.offset + seg.len].copy_from_slice(gz.as_slice());
    }
    if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
        return Err(NsgpError::NonFinite(format!(
            "gradient entry {i} ({})",
            layout
                .segments
                .iter()
                .find(|s| i >= s.offset && i < s.offset + s.len)
                .map_or("?".to_string(), |s| s.name.clone())
        )));
    }
    Ok(Evaluation {
        nlml,
        log_prior,
        gradient: Some(grad),
        jitter_events,
    })
}

/// Pushes `g = ∂objective/∂h̃(X)` (`N×C`) back into one latent GP's
/// parameters and the shared inducing inputs.
#[allow(clippy::too_many_arguments)]
fn latent_backward(
    model: &NsgpModel,
    layout: &ParamLayout,
    tag: HyperTag,
    fwd: &LatentForward<'_>,
    g: &Matrix,
    x: &Matrix,
    z: &Matrix,
    grad_z: &mut Matrix,
    grad: &mut [f64],
) -> Result<()> {
    let LatentForward { gp, cond, kxz } = fwd;
    let l = cond.factor.lower();
    let alpha = &cond.alpha;
    let m = z.rows();
    let n = x.rows();
    let d = x.cols();
    let channels = alpha.cols();

    grad[layout.offset(SegmentKind::Mean(tag))] = g.as_slice().iter().sum();

    // h̃ = μ + K_xz·α
    let alpha_bar = kxz.t_matmul(g)?;
    let kxz_bar = Matrix::from_fn(n, m, |i, j| dot(g.row(i), alpha.row(j)));

    // α = L⁻ᵀγ
    let gamma_bar = cond.factor.solve_lower(&alpha_bar)?;
    let mut l_bar = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            l_bar[(i, j)] = -(0..channels)
                .map(|c| alpha[(i, c)] * gamma_bar[(j, c)])
                .sum::<f64>();
        }
    }

    // L = chol(A): Ā = L⁻ᵀ·Φ(Lᵀ·L̄)·L⁻¹, symmetrized.
    let mut phi = l.t_matmul(&l_bar)?;
    for i in 0..m {
        phi[(i, i)] *= 0.5;
        for j in (i + 1)..m {
            phi[(i, j)] = 0.0;
        }
    }
    let left = cond.factor.solve_lower_t(&phi)?;
    let s = cond.factor.solve_lower_t(&left.transpose())?.transpose();
    let a_bar = Matrix::from_fn(m, m, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]));

    let kzz = gram(z, GramKernel::Rbf(&gp.rbf))?;
    let jitter = cond.factor.jitter_used();
    let ell_h = gp.rbf.lengthscale();
    let inv_l2 = 1.0 / (ell_h * ell_h);

    let mut g_log_amp = 0.0;
    let mut g_log_ell = 0.0;
    for i in 0..m {
        let zi = z.row(i);
        for j in 0..m {
            let zj = z.row(j);
            let ab = a_bar[(i, j)];
            let kij = kzz[(i, j)];
            let w = ab * kij;
            g_log_amp += w;
            if i == j {
                g_log_amp += ab * jitter;
                continue;
            }
            g_log_ell += w * squared_distance(zi, zj) * inv_l2;
            let gzi = grad_z.row_mut(i);
            for dd in 0..d {
                gzi[dd] += 2.0 * w * (zj[dd] - zi[dd]) * inv_l2;
            }
        }
    }
    for r in 0..n {
        let xr = x.row(r);
        for j in 0..m {
            let w = kxz_bar[(r, j)] * kxz[(r, j)];
            if w == 0.0 {
                continue;
            }
            let zj = z.row(j);
            g_log_amp += w;
            g_log_ell += w * squared_distance(xr, zj) * inv_l2;
            let gzj = grad_z.row_mut(j);
            for dd in 0..d {
                gzj[dd] += w * (xr[dd] - zj[dd]) * inv_l2;
            }
        }
    }

    let priors = model.priors();
    g_log_ell += priors.latent_lengthscale.neg_log_density_dlog(ell_h);
    g_log_amp += priors
        .latent_amplitude
        .neg_log_density_dlog(gp.rbf.amplitude());
    grad[layout.offset(SegmentKind::LatentLengthscale(tag))] = g_log_ell;
    grad[layout.offset(SegmentKind::LatentAmplitude(tag))] = g_log_amp;

    let w_off = layout.offset(SegmentKind::Whitened(tag));
    for ((out, &gb), &gamma) in grad[w_off..w_off + m * channels]
        .iter_mut()
        .zip(gamma_bar.as_slice())
        .zip(gp.whitened.as_slice())
    {
        *out = gb + gamma;
    }
    Ok(())
}
