//! Prior-based initialization and full-batch Adam on the MAP objective.

use std::io::Write;
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NsgpError, Result};
use crate::kernels::RbfParams;
use crate::latent::{HyperFunction, HyperTag, LatentGp};
use crate::model::{NsgpModel, ParamLayout, PriorSet, Variant};
use crate::numerics::{squared_distance, Matrix};
use crate::seed::substream;

pub const DEFAULT_STEP_SIZE: f64 = 0.05;
pub const DEFAULT_EPOCHS: usize = 1000;
/// Step-size halvings attempted after a non-finite objective.
pub const MAX_RETRIES: usize = 3;

/// Objective and its gradient at flat parameters `values`.
pub fn objective_and_gradient(
    values: &[f64],
    layout: &ParamLayout,
    train_x: &Matrix,
    train_y: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let model = layout.unpack(values, train_x.clone(), train_y.to_vec())?;
    let eval = model.evaluate(true)?;
    Ok((
        eval.objective(),
        eval.gradient.expect("gradient was requested"),
    ))
}

/// Gradient of the objective with respect to every entry of `values`.
pub fn gradient(
    values: &[f64],
    layout: &ParamLayout,
    train_x: &Matrix,
    train_y: &[f64],
) -> Result<Vec<f64>> {
    Ok(objective_and_gradient(values, layout, train_x, train_y)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl AdamState {
    pub fn new(len: usize, step_size: f64) -> Self {
        Self {
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: vec![0.0; len],
            second: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One bias-corrected Adam update; returns the new state and parameters.
    pub fn step(&self, params: &[f64], grad: &[f64]) -> (AdamState, Vec<f64>) {
        assert_eq!(params.len(), self.first.len(), "parameter length");
        assert_eq!(grad.len(), self.first.len(), "gradient length");
        let mut next = self.clone();
        next.steps += 1;
        let t = next.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut out = params.to_vec();
        for i in 0..params.len() {
            let g = grad[i];
            next.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * g;
            next.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * g * g;
            let m_hat = next.first[i] / c1;
            let v_hat = next.second[i] / c2;
            out[i] -= self.step_size * m_hat / (v_hat.sqrt() + self.eps);
        }
        (next, out)
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(state: &AdamState, params: &[f64], grad: &[f64]) -> (AdamState, Vec<f64>) {
    state.step(params, grad)
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

fn median_pairwise_distance(x: &Matrix) -> f64 {
    let n = x.rows();
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(squared_distance(x.row(i), x.row(j)).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

fn positive_or_one(v: f64) -> f64 {
    if v > 0.0 && v.is_finite() {
        v
    } else {
        1.0
    }
}

/// Initial log-means: median pairwise input distance for ℓ, the target
/// standard deviation for σ and a tenth of it for ω.
pub fn initial_log_means(train_x: &Matrix, train_y: &[f64]) -> [f64; 3] {
    let sd = positive_or_one(std_dev(train_y));
    [
        positive_or_one(median_pairwise_distance(train_x)).ln(),
        sd.ln(),
        (0.1 * sd).ln(),
    ]
}

/// Draws a model from the priors. Inducing inputs are `num_inducing`
/// training inputs picked uniformly without replacement.
pub fn init(
    variant: Variant,
    train_x: &Matrix,
    train_y: &[f64],
    num_inducing: usize,
    seed: u64,
) -> Result<NsgpModel> {
    let n = train_x.rows();
    if n == 0 {
        return Err(NsgpError::EmptyDataset);
    }
    if variant.any_latent() && (num_inducing == 0 || num_inducing > n) {
        return Err(NsgpError::MTooLarge {
            requested: num_inducing,
            available: n,
        });
    }
    let mut rng = substream(seed, "init");
    let priors = PriorSet::default();
    let ell_dist = Gamma::new(
        priors.latent_lengthscale.shape,
        1.0 / priors.latent_lengthscale.rate,
    )
    .expect("valid gamma prior");
    let amp_dist = Gamma::new(
        priors.latent_amplitude.shape,
        1.0 / priors.latent_amplitude.rate,
    )
    .expect("valid gamma prior");

    let inducing = if variant.any_latent() {
        let idx = sample(&mut rng, n, num_inducing).into_vec();
        Some(train_x.select_rows(&idx))
    } else {
        None
    };
    let means = initial_log_means(train_x, train_y);
    let d = train_x.cols();
    let mut hypers = Vec::with_capacity(3);
    for (tag, &mean) in HyperTag::ALL.iter().zip(&means) {
        if variant.is_latent(*tag) {
            let ell: f64 = ell_dist.sample(&mut rng);
            let amp: f64 = amp_dist.sample(&mut rng);
            let channels = if *tag == HyperTag::Lengthscale { d } else { 1 };
            let whitened = Matrix::from_fn(num_inducing, channels, |_, _| {
                rng.sample::<f64, _>(StandardNormal)
            });
            let rbf = RbfParams::new(ell.max(1e-12), amp.max(1e-12))?;
            hypers.push(HyperFunction::gp(*tag, LatentGp::new(mean, rbf, whitened)?));
        } else {
            hypers.push(HyperFunction::constant(*tag, mean));
        }
    }
    let omega = hypers.pop().expect("three hypers");
    let sigma = hypers.pop().expect("three hypers");
    let ell = hypers.pop().expect("three hypers");
    NsgpModel::new(inducing, ell, sigma, omega, train_x.clone(), train_y.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub num_inducing: usize,
    pub epochs: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            num_inducing: 10,
            epochs: DEFAULT_EPOCHS,
            step_size: DEFAULT_STEP_SIZE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Objective at the initial parameters and after every epoch.
    pub objective_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    /// Objective at the last iterate.
    pub final_objective: f64,
    /// Lowest objective seen; the returned model has these parameters.
    pub best_objective: f64,
    pub best_epoch: usize,
    pub jitter_events: usize,
    pub step_size_halvings: usize,
    pub wall_time_secs: f64,
    pub seed: u64,
}

impl FitReport {
    /// `epoch,objective,grad_norm` lines with a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,objective,grad_norm")?;
        for (i, (o, g)) in self
            .objective_trace
            .iter()
            .zip(&self.grad_norm_trace)
            .enumerate()
        {
            writeln!(out, "{i},{o},{g}")?;
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs [`init`] and then full-batch Adam, returning the best parameters
/// seen.
pub fn fit(
    variant: Variant,
    train_x: &Matrix,
    train_y: &[f64],
    opts: &FitOptions,
) -> Result<(NsgpModel, FitReport)> {
    let model = init(variant, train_x, train_y, opts.num_inducing, opts.seed)?;
    fit_from(model, opts.epochs, opts.step_size, opts.seed)
}

/// Adam from an already-initialized model.
pub fn fit_from(
    model: NsgpModel,
    epochs: usize,
    step_size: f64,
    seed: u64,
) -> Result<(NsgpModel, FitReport)> {
    let started = Instant::now();
    let layout = ParamLayout::for_model(&model);
    let mut params = model.pack().values;
    let first = model.evaluate(true)?;
    let mut jitter_events = first.jitter_events;
    let mut objective = first.objective();
    let mut grad = first.gradient.expect("gradient was requested");

    let mut objective_trace = Vec::with_capacity(epochs + 1);
    let mut grad_norm_trace = Vec::with_capacity(epochs + 1);
    objective_trace.push(objective);
    grad_norm_trace.push(norm(&grad));
    let mut best = (objective, 0, params.clone());
    let mut adam = AdamState::new(params.len(), step_size);
    let mut halvings = 0;

    for epoch in 1..=epochs {
        let mut retries = 0;
        loop {
            let (next_state, next_params) = adam.step(&params, &grad);
            let attempt = layout
                .unpack(&next_params, model.train_x().clone(), model.train_y().to_vec())
                .and_then(|m| m.evaluate(true));
            match attempt {
                Ok(eval) if eval.objective().is_finite() => {
                    jitter_events += eval.jitter_events;
                    objective = eval.objective();
                    grad = eval.gradient.expect("gradient was requested");
                    adam = next_state;
                    params = next_params;
                    break;
                }
                _ if retries < MAX_RETRIES => {
                    retries += 1;
                    halvings += 1;
                    adam.step_size *= 0.5;
                }
                _ => return Err(NsgpError::Diverged { epoch }),
            }
        }
        objective_trace.push(objective);
        grad_norm_trace.push(norm(&grad));
        if objective < best.0 {
            best = (objective, epoch, params.clone());
        }
    }

    let fitted = if best.1 == 0 {
        model
    } else {
        layout.unpack(&best.2, model.train_x().clone(), model.train_y().to_vec())?
    };
    Ok((
        fitted,
        FitReport {
            final_objective: objective,
            best_objective: best.0,
            best_epoch: best.1,
            objective_trace,
            grad_norm_trace,
            jitter_events,
            step_size_halvings: halvings,
            wall_time_secs: started.elapsed().as_secs_f64(),
            seed,
        },
    ))
}

/// Per-entry comparison of the analytic gradient with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Parameter names per entry, from the layout.
    pub names: Vec<String>,
}

/// Relative tolerance for gradient agreement.
pub const GRAD_REL_TOL: f64 = 1e-4;
/// Absolute tolerance for gradient agreement.
pub const GRAD_ABS_TOL: f64 = 1e-6;
/// Central-difference step on the unconstrained scale.
pub const FD_STEP: f64 = 1e-5;

impl GradCheck {
    /// Relative error per entry; entries within the absolute tolerance
    /// count as zero.
    pub fn relative_errors(&self) -> Vec<f64> {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(|(&a, &n)| {
                let diff = (a - n).abs();
                if diff <= GRAD_ABS_TOL {
                    0.0
                } else {
                    diff / a.abs().max(n.abs())
                }
            })
            .collect()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors().into_iter().fold(0.0, f64::max)
    }

    pub fn passes(&self) -> bool {
        self.analytic.iter().zip(&self.numeric).all(|(&a, &n)| {
            (a - n).abs() <= (GRAD_REL_TOL * a.abs().max(n.abs())).max(GRAD_ABS_TOL)
        })
    }
}

/// Compares [`gradient`] with central differences of the objective.
pub fn gradcheck(model: &NsgpModel, step: f64) -> Result<GradCheck> {
    let v = model.pack();
    let analytic = model.evaluate(true)?.gradient.expect("gradient was requested");
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe = v.values.clone();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = model.with_params(&probe)?.objective()?;
        probe[i] = orig - step;
        let down = model.with_params(&probe)?.objective()?;
        probe[i] = orig;
        numeric.push((up - down) / (2.0 * step));
    }
    let names = v
        .layout
        .segments
        .iter()
        .flat_map(|s| (0..s.len).map(move |k| format!("{}[{k}]", s.name)))
        .collect();
    Ok(GradCheck {
        analytic,
        numeric,
        names,
    })
}

/// Data and a jittered prior draw used to exercise the gradient away from
/// the initialization.
pub fn random_check_model(
    variant: Variant,
    seed: u64,
    n: usize,
    num_inducing: usize,
    dim: usize,
) -> Result<NsgpModel> {
    let mut rng = substream(seed, "gradcheck-data");
    let x = Matrix::from_fn(n, dim, |_, _| rng.random_range(-2.0..2.0));
    let y: Vec<f64> = (0..n)
        .map(|i| {
            x.row(i).iter().map(|v| (1.5 * v).sin()).sum::<f64>()
                + 0.2 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let base = init(variant, &x, &y, num_inducing, seed)?;
    let mut v = base.pack();
    for seg in &v.layout.segments {
        for p in &mut v.values[seg.offset..seg.offset + seg.len] {
            *p += 0.3 * rng.random_range(-1.0..1.0);
        }
        if seg.name.ends_with(".lengthscale") {
            v.values[seg.offset] = rng.random_range(-0.5..1.0);
        } else if seg.name.ends_with(".amplitude") {
            v.values[seg.offset] = rng.random_range(-1.5..0.5);
        }
    }
    base.with_params(&v.values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatteryEntry {
    pub variant: Variant,
    pub n: usize,
    pub num_inducing: usize,
    pub dim: usize,
    pub check: GradCheck,
}

/// `configs` random gradient checks cycling through `variants`, with
/// `N ≤ 20`, `M ≤ 5` and `D ≤ 2`.
pub fn gradcheck_battery(variants: &[Variant], configs: usize, seed: u64) -> Result<Vec<BatteryEntry>> {
    if variants.is_empty() {
        return Err(NsgpError::Config("no variants to check".into()));
    }
    let mut rng = substream(seed, "gradcheck");
    let mut out = Vec::with_capacity(configs);
    for i in 0..configs {
        let variant = variants[i % variants.len()];
        let n = rng.random_range(6..=20);
        let num_inducing = rng.random_range(1..=5);
        let dim = rng.random_range(1..=2);
        let model_seed = rng.random::<u64>();
        let model = random_check_model(variant, model_seed, n, num_inducing, dim)?;
        out.push(BatteryEntry {
            variant,
            n,
            num_inducing,
            dim,
            check: gradcheck(&model, FD_STEP)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_data() -> (Matrix, Vec<f64>) {
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 3.0).collect();
        let y: Vec<f64> = x.iter().map(|v| (1.3 * v).sin() + 0.1 * v).collect();
        (Matrix::column_vector(&x), y)
    }

    #[test]
    fn battery_is_deterministic_and_passes() {
        let a = gradcheck_battery(&Variant::all(), 8, 3).unwrap();
        let b = gradcheck_battery(&Variant::all(), 8, 3).unwrap();
        assert_eq!(a, b);
        for e in &a {
            assert!(e.check.passes(), "{} max rel {}", e.variant.label(), e.check.max_relative_error());
        }
    }

    #[test]
    fn first_adam_step_moves_by_step_size() {
        let s = AdamState::new(3, 0.05);
        let (_, p) = s.step(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]);
        for (a, b) in p.iter().zip([1.0, 2.0, 3.0]) {
            assert_abs_diff_eq!(b - a, 0.05 / (1.0 + 1e-8), epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(2, 0.05);
        let mut p = vec![0.3, -0.7];
        for _ in 0..5 {
            let (ns, np) = s.step(&p, &[0.0, 0.0]);
            s = ns;
            p = np;
        }
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn constant_gradient_steps_are_equal() {
        let s = AdamState::new(1, 0.05);
        let (s1, p1) = s.step(&[0.0], &[2.5]);
        let (_, p2) = s1.step(&p1, &[2.5]);
        let first = -p1[0];
        let second = p1[0] - p2[0];
        // both bias-corrected moments equal g exactly for a constant gradient
        assert_abs_diff_eq!(first, second, epsilon = 1e-12);
    }

    #[test]
    fn init_is_deterministic() {
        let (x, y) = toy_data();
        let a = init(Variant::FULL, &x, &y, 4, 11).unwrap();
        let b = init(Variant::FULL, &x, &y, 4, 11).unwrap();
        assert_eq!(a, b);
        let c = init(Variant::FULL, &x, &y, 4, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_with_all_points_permutes_inputs() {
        let (x, y) = toy_data();
        let m = init(Variant::FULL, &x, &y, 12, 3).unwrap();
        let mut got = m.inducing().unwrap().clone().into_vec();
        let mut want = x.clone().into_vec();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        assert_eq!(got, want);
    }

    #[test]
    fn init_rejects_too_many_inducing() {
        let (x, y) = toy_data();
        assert!(matches!(
            init(Variant::FULL, &x, &y, 13, 0),
            Err(NsgpError::MTooLarge { .. })
        ));
    }

    #[test]
    fn zero_epochs_returns_init() {
        let (x, y) = toy_data();
        let opts = FitOptions {
            num_inducing: 4,
            epochs: 0,
            step_size: 0.05,
            seed: 5,
        };
        let (m, report) = fit(Variant::FULL, &x, &y, &opts).unwrap();
        assert_eq!(m, init(Variant::FULL, &x, &y, 4, 5).unwrap());
        assert_eq!(report.objective_trace.len(), 1);
    }

    #[test]
    fn fit_improves_and_traces_have_epoch_plus_one() {
        let (x, y) = toy_data();
        let opts = FitOptions {
            num_inducing: 4,
            epochs: 30,
            step_size: 0.05,
            seed: 1,
        };
        let (m, report) = fit(Variant::FULL, &x, &y, &opts).unwrap();
        assert_eq!(report.objective_trace.len(), 31);
        assert_eq!(report.grad_norm_trace.len(), 31);
        assert!(report.best_objective <= report.objective_trace[0]);
        assert_abs_diff_eq!(m.objective().unwrap(), report.best_objective, epsilon = 1e-9);
    }

    #[test]
    fn stationary_gradcheck() {
        let (x, y) = toy_data();
        let m = init(Variant::STATIONARY, &x, &y, 0, 2).unwrap();
        let check = gradcheck(&m, FD_STEP).unwrap();
        assert!(check.passes(), "{check:?}");
    }

    #[test]
    fn csv_has_header_and_rows() {
        let report = FitReport {
            objective_trace: vec![3.0, 2.0],
            grad_norm_trace: vec![1.0, 0.5],
            final_objective: 2.0,
            best_objective: 2.0,
            best_epoch: 1,
            jitter_events: 0,
            step_size_halvings: 0,
            wall_time_secs: 0.0,
            seed: 0,
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,objective,grad_norm\n0,3,1\n1,2,0.5\n"
        );
    }
}
