//! Command bodies. Each returns its output files in memory so nothing is
//! written unless the whole command succeeds.

use std::fmt::Write as _;
use std::time::Instant;

use nsgp::active::{run_al, AlConfig};
use nsgp::data::{generate, load_inputs, Standardizer};
use nsgp::eval::{ablation, default_num_inducing, CvOptions};
use nsgp::io::{load_model, ModelFile};
use nsgp::train::{fit, gradcheck_battery, FitOptions};
use nsgp::{Matrix, NsgpError, Result};

use crate::config::{Command, QuerySpec, RunConfig};

pub struct Outcome {
    /// File name and contents, in write order.
    pub files: Vec<(String, Vec<u8>)>,
    /// Human-readable report for stdout; may include timings.
    pub summary: String,
    /// A check ran to completion but did not pass.
    pub check_failed: bool,
}

impl Outcome {
    fn new() -> Self {
        Self {
            files: Vec::new(),
            summary: String::new(),
            check_failed: false,
        }
    }

    fn file(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }
}

fn csv_line(values: impl IntoIterator<Item = String>) -> String {
    let mut s = values.into_iter().collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    let seed = cfg.seed;
    let mut out = Outcome::new();
    match &cfg.run {
        Command::Synth { name } => {
            let d = generate(name, seed)?;
            let mut buf = Vec::new();
            d.write_csv(&mut buf)?;
            out.file(format!("{name}.csv"), buf);
            writeln!(out.summary, "{name}: {} rows, seed {seed}", d.len()).unwrap();
        }

        Command::Fit {
            dataset,
            variant,
            train,
        } => {
            let d = dataset.load(seed)?;
            let scaler = Standardizer::fit_targets(&d)?;
            let y: Vec<f64> = d.y.iter().map(|&v| scaler.transform_y(v)).collect();
            let opts = FitOptions {
                num_inducing: train.num_inducing.unwrap_or_else(|| default_num_inducing(d.dim())),
                epochs: train.epochs,
                step_size: train.lr,
                seed,
            };
            let (model, report) = fit(*variant, &d.x, &y, &opts)?;
            let file = ModelFile::new(&model, scaler);
            let mut json = file.to_json()?;
            json.push('\n');
            out.file("model.json", json.into_bytes());
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            out.file("fit_report.csv", buf);
            writeln!(
                out.summary,
                "{} on {} (N={}, M={}): objective {:.4} -> best {:.4} at epoch {}, {} jitter events, {:.2}s",
                variant.label(),
                d.name,
                d.len(),
                opts.num_inducing,
                report.objective_trace[0],
                report.best_objective,
                report.best_epoch,
                report.jitter_events,
                report.wall_time_secs
            )
            .unwrap();
        }

        Command::Predict { model, query } => {
            let file = load_model(model).map_err(|e| match e {
                NsgpError::Io(io) => NsgpError::Io(std::io::Error::new(
                    io.kind(),
                    format!("{}: {io}", model.display()),
                )),
                other => other,
            })?;
            let fitted = file.model()?;
            let q = match query {
                QuerySpec::Training => file.standardizer.inverse_x(fitted.train_x()),
                QuerySpec::Grid { lo, hi, n } => {
                    if fitted.input_dim() != 1 {
                        return Err(NsgpError::Config(
                            "grid queries need a one-dimensional model".into(),
                        ));
                    }
                    let step = if *n > 1 { (hi - lo) / (*n - 1) as f64 } else { 0.0 };
                    let xs: Vec<f64> = (0..*n)
                        .map(|i| if i + 1 == *n { *hi } else { lo + step * i as f64 })
                        .collect();
                    Matrix::column_vector(&xs)
                }
                QuerySpec::Csv { path, x_cols } => {
                    let cols: Vec<&str> = x_cols.iter().map(String::as_str).collect();
                    load_inputs(path, &cols)?
                }
            };
            let pred = file.predict(&q)?;
            let names: Vec<String> = if q.cols() == 1 {
                vec!["x".into()]
            } else {
                (0..q.cols()).map(|c| format!("x{c}")).collect()
            };
            let mut s = csv_line(
                names
                    .into_iter()
                    .chain(["mean", "var_f", "var_noise", "var_y"].map(String::from)),
            );
            for i in 0..q.rows() {
                s.push_str(&csv_line(q.row(i).iter().map(f64::to_string).chain([
                    pred.mean[i].to_string(),
                    pred.var_f[i].to_string(),
                    pred.var_noise[i].to_string(),
                    pred.var_y[i].to_string(),
                ])));
            }
            out.file("predictions.csv", s.into_bytes());
            writeln!(out.summary, "{} predictions", q.rows()).unwrap();
        }

        Command::Ablate { datasets, train, k } => {
            let data = datasets
                .iter()
                .map(|d| d.load(seed))
                .collect::<Result<Vec<_>>>()?;
            let opts = CvOptions {
                k: *k,
                num_inducing: train.num_inducing,
                epochs: train.epochs,
                step_size: train.lr,
                seed,
            };
            let started = Instant::now();
            let table = ablation(&data, &opts);
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            out.file("ablation.csv", buf);
            let text = table.to_text();
            out.file("ablation.txt", text.clone().into_bytes());
            out.summary.push_str(&text);
            writeln!(out.summary, "{:.1}s", started.elapsed().as_secs_f64()).unwrap();
        }

        Command::Active {
            dataset,
            arms,
            initial_n,
            acquisitions,
            retrain,
            retrain_epochs,
            train,
        } => {
            let d = generate(dataset, seed)?;
            let mut summary = csv_line(
                ["arm", "mae_area", "initial_mae", "final_mae", "final_mse"].map(String::from),
            );
            for &arm in arms {
                let cfg = AlConfig {
                    initial_n: *initial_n,
                    acquisitions: *acquisitions,
                    acquisition: arm,
                    retrain: *retrain,
                    num_inducing: train
                        .num_inducing
                        .unwrap_or_else(|| default_num_inducing(d.dim())),
                    epochs: train.epochs,
                    retrain_epochs: *retrain_epochs,
                    step_size: train.lr,
                    seed,
                };
                let trace = run_al(&d, &cfg)?;
                let mut buf = Vec::new();
                trace.write_csv(&mut buf)?;
                out.file(format!("trace_{}.csv", arm.key()), buf);
                let mut buf = Vec::new();
                trace.write_predictions(&d, &mut buf)?;
                out.file(format!("predictions_{}.csv", arm.key()), buf);
                let (final_mae, final_mse) = trace
                    .steps
                    .last()
                    .map_or((trace.initial_mae, trace.initial_mse), |s| (s.mae, s.mse));
                summary.push_str(&csv_line([
                    arm.key().to_string(),
                    trace.mae_area().to_string(),
                    trace.initial_mae.to_string(),
                    final_mae.to_string(),
                    final_mse.to_string(),
                ]));
                writeln!(
                    out.summary,
                    "{}: MAE {:.4} -> {:.4}, area {:.4}",
                    arm.key(),
                    trace.initial_mae,
                    final_mae,
                    trace.mae_area()
                )
                .unwrap();
            }
            out.file("summary.csv", summary.into_bytes());
        }

        Command::Gradcheck {
            variants,
            configs,
            perturb,
        } => {
            let mut battery = gradcheck_battery(variants, *configs, seed)?;
            let mut s = csv_line(
                ["config", "variant", "N", "M", "D", "params", "max_rel_error", "pass"]
                    .map(String::from),
            );
            let mut worst = 0.0f64;
            let mut all_pass = true;
            for (i, e) in battery.iter_mut().enumerate() {
                if *perturb != 0.0 {
                    e.check.analytic.iter_mut().for_each(|g| *g += perturb);
                }
                let err = e.check.max_relative_error();
                let pass = e.check.passes();
                worst = worst.max(err);
                all_pass &= pass;
                s.push_str(&csv_line([
                    i.to_string(),
                    e.variant.key(),
                    e.n.to_string(),
                    e.num_inducing.to_string(),
                    e.dim.to_string(),
                    e.check.analytic.len().to_string(),
                    err.to_string(),
                    pass.to_string(),
                ]));
            }
            out.file("gradcheck.csv", s.into_bytes());
            writeln!(
                out.summary,
                "{} configurations, max relative error {worst:.3e}: {}",
                battery.len(),
                if all_pass { "pass" } else { "FAIL" }
            )
            .unwrap();
            out.check_failed = !all_pass;
        }
    }
    Ok(out)
}
