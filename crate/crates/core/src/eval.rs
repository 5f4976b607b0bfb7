//! Predictive metrics, k-fold cross-validation and the eight-variant
//! ablation grid.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{kfold, Dataset, Standardizer};
use crate::error::{NsgpError, Result};
use crate::model::{Prediction, Variant, LN_2PI};
use crate::train::{fit, FitOptions, DEFAULT_EPOCHS, DEFAULT_STEP_SIZE};

fn check_len(pred: &Prediction, y: &[f64]) -> Result<()> {
    if pred.len() != y.len() {
        return Err(NsgpError::DimensionMismatch(format!(
            "{} predictions vs {} targets",
            pred.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Negative log predictive density summed over the points.
pub fn nlpd(pred: &Prediction, y: &[f64]) -> Result<f64> {
    check_len(pred, y)?;
    let mut total = 0.0;
    for (i, ((&m, &v), &t)) in pred.mean.iter().zip(&pred.var_y).zip(y).enumerate() {
        if !(v > 0.0) {
            return Err(NsgpError::NonPositiveVariance { index: i, value: v });
        }
        let r = t - m;
        total += 0.5 * (LN_2PI + v.ln()) + r * r / (2.0 * v);
    }
    Ok(total)
}

pub fn rmse(pred: &Prediction, y: &[f64]) -> Result<f64> {
    check_len(pred, y)?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let sse: f64 = pred
        .mean
        .iter()
        .zip(y)
        .map(|(m, t)| (t - m) * (t - m))
        .sum();
    Ok((sse / y.len() as f64).sqrt())
}

/// Inducing-point count used when none is given: 10 for 1-D inputs, 25
/// otherwise.
pub fn default_num_inducing(input_dim: usize) -> usize {
    if input_dim <= 1 {
        10
    } else {
        25
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub k: usize,
    /// `None` picks [`default_num_inducing`].
    pub num_inducing: Option<usize>,
    pub epochs: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            k: 5,
            num_inducing: None,
            epochs: DEFAULT_EPOCHS,
            step_size: DEFAULT_STEP_SIZE,
            seed: 0,
        }
    }
}

impl CvOptions {
    pub fn inducing_for(&self, d: &Dataset) -> usize {
        self.num_inducing
            .unwrap_or_else(|| default_num_inducing(d.dim()))
    }
}

/// Cross-validated scores of one variant on one dataset. A failed cell
/// carries `error` and NaN scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub variant: Variant,
    pub label: String,
    pub nlpd: f64,
    pub rmse: f64,
    pub fold_nlpd: Vec<f64>,
    pub fold_rmse: Vec<f64>,
    pub seed: u64,
    pub num_inducing: usize,
    pub epochs: usize,
    pub error: Option<String>,
}

impl MetricRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Scores of a single train/test split. Targets are standardized with the
/// training split's moments; inputs are used as given.
pub fn score_split(
    train: &Dataset,
    test: &Dataset,
    variant: Variant,
    opts: &FitOptions,
) -> Result<(f64, f64)> {
    let scaler = Standardizer::fit_targets(train)?;
    let y: Vec<f64> = train.y.iter().map(|&v| scaler.transform_y(v)).collect();
    let (model, _) = fit(variant, &train.x, &y, opts)?;
    let pred = model.predict(&test.x)?;
    let y_test: Vec<f64> = test.y.iter().map(|&v| scaler.transform_y(v)).collect();
    Ok((nlpd(&pred, &y_test)?, rmse(&pred, &y_test)?))
}

/// k-fold cross-validation of `variant`; NLPD is a per-fold sum, both
/// metrics are averaged across folds.
pub fn cross_validate(d: &Dataset, variant: Variant, opts: &CvOptions) -> Result<MetricRow> {
    let plan = kfold(d.len(), opts.k, opts.seed)?;
    let num_inducing = opts.inducing_for(d);
    let fit_opts = FitOptions {
        num_inducing,
        epochs: opts.epochs,
        step_size: opts.step_size,
        seed: opts.seed,
    };
    let mut fold_nlpd = Vec::with_capacity(opts.k);
    let mut fold_rmse = Vec::with_capacity(opts.k);
    for fold in 0..opts.k {
        let train = d.subset(&plan.train_indices(fold));
        let test = d.subset(&plan.test_indices(fold));
        let (n, r) = score_split(&train, &test, variant, &fit_opts)?;
        fold_nlpd.push(n);
        fold_rmse.push(r);
    }
    Ok(MetricRow {
        dataset: d.name.clone(),
        variant,
        label: variant.label(),
        nlpd: mean(&fold_nlpd),
        rmse: mean(&fold_rmse),
        fold_nlpd,
        fold_rmse,
        seed: opts.seed,
        num_inducing,
        epochs: opts.epochs,
        error: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<MetricRow>,
}

/// Every variant on every dataset, in dataset order then table order.
/// Failed cells are kept as rows with an error message.
pub fn ablation(datasets: &[Dataset], opts: &CvOptions) -> AblationTable {
    let mut rows = Vec::with_capacity(8 * datasets.len());
    for d in datasets {
        for variant in Variant::all() {
            let row = cross_validate(d, variant, opts).unwrap_or_else(|e| MetricRow {
                dataset: d.name.clone(),
                variant,
                label: variant.label(),
                nlpd: f64::NAN,
                rmse: f64::NAN,
                fold_nlpd: Vec::new(),
                fold_rmse: Vec::new(),
                seed: opts.seed,
                num_inducing: opts.inducing_for(d),
                epochs: opts.epochs,
                error: Some(e.to_string()),
            });
            rows.push(row);
        }
    }
    AblationTable { rows }
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

impl AblationTable {
    pub fn datasets(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.dataset) {
                names.push(r.dataset.clone());
            }
        }
        names
    }

    pub fn rows_for(&self, dataset: &str) -> Vec<&MetricRow> {
        self.rows.iter().filter(|r| r.dataset == dataset).collect()
    }

    /// 1-based NLPD rank of `variant` within `dataset`; failed cells rank
    /// last.
    pub fn nlpd_rank(&self, dataset: &str, variant: Variant) -> Option<usize> {
        let ranked = self.ranked(dataset);
        ranked.iter().position(|r| r.variant == variant).map(|p| p + 1)
    }

    /// Rows of `dataset` sorted by mean NLPD, failures last, ties in table
    /// order.
    pub fn ranked(&self, dataset: &str) -> Vec<&MetricRow> {
        let mut rows = self.rows_for(dataset);
        rows.sort_by(|a, b| match (a.failed(), b.failed()) {
            (false, false) => a.nlpd.total_cmp(&b.nlpd),
            (a_failed, b_failed) => a_failed.cmp(&b_failed),
        });
        rows
    }

    /// `dataset,variant,rank,nlpd_mean,rmse_mean,nlpd_folds,rmse_folds,seed,M,epochs,error`,
    /// fold lists separated by `;`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "dataset",
            "variant",
            "rank",
            "nlpd_mean",
            "rmse_mean",
            "nlpd_folds",
            "rmse_folds",
            "seed",
            "M",
            "epochs",
            "error",
        ])
        .map_err(|e| NsgpError::Parse(e.to_string()))?;
        for r in &self.rows {
            let rank = self.nlpd_rank(&r.dataset, r.variant).unwrap_or(0);
            w.write_record([
                r.dataset.clone(),
                r.label.clone(),
                rank.to_string(),
                r.nlpd.to_string(),
                r.rmse.to_string(),
                join(&r.fold_nlpd),
                join(&r.fold_rmse),
                r.seed.to_string(),
                r.num_inducing.to_string(),
                r.epochs.to_string(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(|e| NsgpError::Parse(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned plain-text table, one block per dataset ranked by NLPD.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for name in self.datasets() {
            let ranked = self.ranked(&name);
            let width = ranked
                .iter()
                .map(|r| r.label.chars().count())
                .max()
                .unwrap_or(0)
                .max("variant".len());
            s.push_str(&format!("{name}\n"));
            s.push_str(&format!(
                "{:>4}  {:<width$}  {:>10}  {:>8}\n",
                "rank", "variant", "NLPD", "RMSE"
            ));
            for (i, r) in ranked.iter().enumerate() {
                if let Some(e) = &r.error {
                    s.push_str(&format!(
                        "{:>4}  {:<width$}  failed: {e}\n",
                        i + 1,
                        r.label
                    ));
                } else {
                    s.push_str(&format!(
                        "{:>4}  {:<width$}  {:>10.3}  {:>8.3}\n",
                        i + 1,
                        r.label,
                        r.nlpd,
                        r.rmse
                    ));
                }
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;

    fn pred(mean: Vec<f64>, var_y: Vec<f64>) -> Prediction {
        let n = mean.len();
        Prediction {
            mean,
            var_f: var_y.clone(),
            var_noise: vec![0.0; n],
            var_y,
        }
    }

    #[test]
    fn nlpd_single_point() {
        let p = pred(vec![1.0], vec![1.0]);
        assert!((nlpd(&p, &[1.0]).unwrap() - 0.918_938_533_204_672_7).abs() < 1e-12);
        let p = pred(vec![0.0], vec![1.0 / (2.0 * std::f64::consts::PI)]);
        assert!(nlpd(&p, &[0.0]).unwrap().abs() < 1e-14);
    }

    #[test]
    fn nlpd_is_additive() {
        let one = nlpd(&pred(vec![0.3], vec![0.7]), &[0.3]).unwrap();
        let two = nlpd(&pred(vec![0.3, 0.3], vec![0.7, 0.7]), &[0.3, 0.3]).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-14);
    }

    #[test]
    fn nlpd_rejects_zero_variance() {
        let err = nlpd(&pred(vec![0.0, 0.0], vec![1.0, 0.0]), &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, NsgpError::NonPositiveVariance { index: 1, .. }));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&pred(vec![1.0, 2.0], vec![1.0, 1.0]), &[1.0, 2.0]).unwrap(), 0.0);
        let r = rmse(&pred(vec![1.5, 2.5], vec![1.0, 1.0]), &[1.0, 2.0]).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        let r = rmse(&pred(vec![0.0, 0.0], vec![1.0, 1.0]), &[3.0, 4.0]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rmse_ignores_variance() {
        let a = rmse(&pred(vec![0.1, 0.9], vec![1.0, 1.0]), &[0.0, 1.0]).unwrap();
        let b = rmse(&pred(vec![0.1, 0.9], vec![9.0, 0.01]), &[0.0, 1.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn length_mismatch() {
        assert!(nlpd(&pred(vec![0.0], vec![1.0]), &[0.0, 1.0]).is_err());
        assert!(rmse(&pred(vec![0.0], vec![1.0]), &[]).is_err());
    }

    fn tiny() -> Dataset {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let y = xs.iter().map(|x| (0.7 * x).sin()).collect();
        Dataset::new("tiny", Matrix::column_vector(&xs), y).unwrap()
    }

    #[test]
    fn cv_has_k_folds_and_is_deterministic() {
        let opts = CvOptions {
            k: 4,
            num_inducing: Some(3),
            epochs: 5,
            ..CvOptions::default()
        };
        let a = cross_validate(&tiny(), Variant::FULL, &opts).unwrap();
        let b = cross_validate(&tiny(), Variant::FULL, &opts).unwrap();
        assert_eq!(a.fold_nlpd.len(), 4);
        assert_eq!(a.fold_rmse.len(), 4);
        assert_eq!(a, b);
        assert!((a.nlpd - a.fold_nlpd.iter().sum::<f64>() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn ablation_rows_and_failures() {
        let opts = CvOptions {
            k: 2,
            num_inducing: Some(15),
            epochs: 2,
            ..CvOptions::default()
        };
        // 10 training points per fold cannot host 15 inducing inputs.
        let t = ablation(&[tiny()], &opts);
        assert_eq!(t.rows.len(), 8);
        let failed = t.rows.iter().filter(|r| r.failed()).count();
        assert_eq!(failed, 7);
        assert_eq!(t.nlpd_rank("tiny", Variant::STATIONARY), Some(1));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("dataset,variant,rank,nlpd_mean,rmse_mean"));
        assert!(t.to_text().contains("failed"));
    }

    #[test]
    fn default_inducing_counts() {
        assert_eq!(default_num_inducing(1), 10);
        assert_eq!(default_num_inducing(2), 25);
    }
}
