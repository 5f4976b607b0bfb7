//! Pool-based active learning on synthetic data with known latent values.
//!
//! A full-variant model is fitted on an initial random subset. Each round
//! then conditions on the labelled points with the hyper-functions held
//! fixed (unless retraining is requested), scores the unlabelled pool by
//! either the total predictive variance or the epistemic part alone, and
//! reveals the best-scoring label.

use std::io::Write;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardizer};
use crate::error::{NsgpError, Result};
use crate::model::{NsgpModel, Prediction, Variant};
use crate::seed::substream;
use crate::train::{fit, fit_from, FitOptions, DEFAULT_EPOCHS, DEFAULT_STEP_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acquisition {
    /// Total predictive variance `var_f + ω²`.
    VarY,
    /// Epistemic variance `var_f`.
    VarF,
}

impl Acquisition {
    pub fn key(self) -> &'static str {
        match self {
            Acquisition::VarY => "var_y",
            Acquisition::VarF => "var_f",
        }
    }

    pub fn score(self, pred: &Prediction) -> &[f64] {
        match self {
            Acquisition::VarY => &pred.var_y,
            Acquisition::VarF => &pred.var_f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retrain {
    /// Hyper-functions stay as fitted on the initial subset.
    None,
    /// Continue optimizing from the current parameters after every label.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlConfig {
    pub initial_n: usize,
    pub acquisitions: usize,
    pub acquisition: Acquisition,
    pub retrain: Retrain,
    pub num_inducing: usize,
    pub epochs: usize,
    /// Epochs per acquisition when retraining.
    pub retrain_epochs: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            initial_n: 30,
            acquisitions: 50,
            acquisition: Acquisition::VarF,
            retrain: Retrain::None,
            num_inducing: 10,
            epochs: DEFAULT_EPOCHS,
            retrain_epochs: 100,
            step_size: DEFAULT_STEP_SIZE,
            seed: 0,
        }
    }
}

/// Index of the largest score, the lowest index on ties.
pub fn argmax(scores: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if !(s > b) => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i).ok_or(NsgpError::EmptyPool)
}

/// Position within `pred` of the point to label next.
pub fn acquire(pred: &Prediction, kind: Acquisition) -> Result<usize> {
    argmax(kind.score(pred))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlStep {
    /// Row of the dataset that was labelled.
    pub index: usize,
    pub x: Vec<f64>,
    pub acquisition_value: f64,
    /// Mean absolute error of the predictive mean against the true latent
    /// function over every grid point, after adding this label.
    pub mae: f64,
    pub mse: f64,
}

#[derive(Debug, Clone)]
pub struct AlTrace {
    pub acquisition: Acquisition,
    pub initial_indices: Vec<usize>,
    pub initial_mae: f64,
    pub initial_mse: f64,
    pub steps: Vec<AlStep>,
    /// Conditioned on every labelled point, standardized target scale.
    pub model: NsgpModel,
    pub standardizer: Standardizer,
}

impl AlTrace {
    pub fn chosen(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.index).collect()
    }

    /// MAE after 0, 1, …, `acquisitions` labels.
    pub fn mae_curve(&self) -> Vec<f64> {
        std::iter::once(self.initial_mae)
            .chain(self.steps.iter().map(|s| s.mae))
            .collect()
    }

    /// Trapezoidal area under [`AlTrace::mae_curve`] with unit spacing.
    pub fn mae_area(&self) -> f64 {
        self.mae_curve()
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .sum()
    }

    /// `step,index,chosen_x,acquisition_value,mae,mse`, one row per
    /// acquisition; multi-dimensional inputs are `;`-separated.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,index,chosen_x,acquisition_value,mae,mse")?;
        for (i, s) in self.steps.iter().enumerate() {
            let x: Vec<String> = s.x.iter().map(f64::to_string).collect();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                i + 1,
                s.index,
                x.join(";"),
                s.acquisition_value,
                s.mae,
                s.mse
            )?;
        }
        Ok(())
    }

    /// Predictions of the final model over `d` on the original target
    /// scale: `x…,mean,var_f,var_y`.
    pub fn write_predictions<W: Write>(&self, d: &Dataset, mut out: W) -> Result<()> {
        let pred = self.model.predict(&d.x)?;
        let s2 = self.standardizer.y_scale * self.standardizer.y_scale;
        writeln!(out, "{},mean,var_f,var_y", d.x_names.join(","))?;
        for i in 0..d.len() {
            let x: Vec<String> = d.x.row(i).iter().map(f64::to_string).collect();
            writeln!(
                out,
                "{},{},{},{}",
                x.join(","),
                self.standardizer.inverse_y(pred.mean[i]),
                pred.var_f[i] * s2,
                pred.var_y[i] * s2
            )?;
        }
        Ok(())
    }
}

/// Errors of the predictive mean against `f` over every row of `d`, on the
/// original target scale.
fn errors(model: &NsgpModel, scaler: &Standardizer, d: &Dataset, f: &[f64]) -> Result<(f64, f64)> {
    let pred = model.predict(&d.x)?;
    let n = f.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (&m, &t) in pred.mean.iter().zip(f) {
        let e = scaler.inverse_y(m) - t;
        abs += e.abs();
        sq += e * e;
    }
    Ok((abs / n, sq / n))
}

/// Runs one acquisition arm. The initial subset and fit depend only on the
/// seed, so arms with the same seed start from the same model.
pub fn run_al(d: &Dataset, cfg: &AlConfig) -> Result<AlTrace> {
    let truth = d
        .truth
        .as_ref()
        .ok_or_else(|| NsgpError::Config(format!("dataset {} has no latent truth", d.name)))?;
    if cfg.initial_n == 0 || cfg.initial_n + cfg.acquisitions > d.len() {
        return Err(NsgpError::Config(format!(
            "{} initial points plus {} acquisitions exceed the {} available",
            cfg.initial_n,
            cfg.acquisitions,
            d.len()
        )));
    }
    let mut rng = substream(cfg.seed, "active");
    let initial = sample(&mut rng, d.len(), cfg.initial_n).into_vec();
    let mut labelled = vec![false; d.len()];
    for &i in &initial {
        labelled[i] = true;
    }
    let mut order = initial.clone();

    let start = d.subset(&initial);
    let scaler = Standardizer::fit_targets(&start)?;
    let y_std: Vec<f64> = d.y.iter().map(|&v| scaler.transform_y(v)).collect();
    let opts = FitOptions {
        num_inducing: cfg.num_inducing,
        epochs: cfg.epochs,
        step_size: cfg.step_size,
        seed: cfg.seed,
    };
    let labelled_data = |order: &[usize]| {
        (
            d.x.select_rows(order),
            order.iter().map(|&i| y_std[i]).collect::<Vec<_>>(),
        )
    };
    let (x0, y0) = labelled_data(&order);
    let (mut model, _) = fit(Variant::FULL, &x0, &y0, &opts)?;
    let (initial_mae, initial_mse) = errors(&model, &scaler, d, &truth.f)?;

    let mut steps = Vec::with_capacity(cfg.acquisitions);
    for _ in 0..cfg.acquisitions {
        let pool: Vec<usize> = (0..d.len()).filter(|&i| !labelled[i]).collect();
        let pred = model.predict(&d.x.select_rows(&pool))?;
        let pick = acquire(&pred, cfg.acquisition)?;
        let index = pool[pick];
        let acquisition_value = cfg.acquisition.score(&pred)[pick];
        labelled[index] = true;
        order.push(index);

        let (x, y) = labelled_data(&order);
        model = match cfg.retrain {
            Retrain::None => model.with_training_data(x, y)?,
            Retrain::Full => {
                let warm = model.with_training_data(x, y)?;
                fit_from(warm, cfg.retrain_epochs, cfg.step_size, cfg.seed)?.0
            }
        };
        let (mae, mse) = errors(&model, &scaler, d, &truth.f)?;
        steps.push(AlStep {
            index,
            x: d.x.row(index).to_vec(),
            acquisition_value,
            mae,
            mse,
        });
    }
    Ok(AlTrace {
        acquisition: cfg.acquisition,
        initial_indices: initial,
        initial_mae,
        initial_mse,
        steps,
        model,
        standardizer: scaler,
    })
}
