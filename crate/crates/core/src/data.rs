//! Datasets: synthetic generators with ground-truth traces, CSV ingestion,
//! standardization and k-fold plans.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{NsgpError, Result};
use crate::kernels::{gram, GibbsInputs, GramKernel, RbfParams};
use crate::model::Prediction;
use crate::numerics::{cholesky_psd, Matrix};
use crate::seed::substream;

/// Per-point generating hyper-functions and latent function values.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub f: Vec<f64>,
    pub noise: Vec<f64>,
    /// Isotropic length scale, when the generator has one.
    pub lengthscale: Option<Vec<f64>>,
    pub signal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Matrix,
    pub y: Vec<f64>,
    pub x_names: Vec<String>,
    pub y_name: String,
    pub truth: Option<Truth>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Matrix, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(NsgpError::DimensionMismatch(format!(
                "{} input rows vs {} targets",
                x.rows(),
                y.len()
            )));
        }
        if y.is_empty() {
            return Err(NsgpError::EmptyDataset);
        }
        if y.iter().chain(x.as_slice()).any(|v| !v.is_finite()) {
            return Err(NsgpError::NonFinite("dataset values".into()));
        }
        let x_names = if x.cols() == 1 {
            vec!["x".to_string()]
        } else {
            (0..x.cols()).map(|d| format!("x{d}")).collect()
        };
        Ok(Self {
            name: name.into(),
            x,
            y,
            x_names,
            y_name: "y".to_string(),
            truth: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            name: self.name.clone(),
            x: self.x.select_rows(indices),
            y: pick(&self.y),
            x_names: self.x_names.clone(),
            y_name: self.y_name.clone(),
            truth: self.truth.as_ref().map(|t| Truth {
                f: pick(&t.f),
                noise: pick(&t.noise),
                lengthscale: t.lengthscale.as_deref().map(pick),
                signal: t.signal.as_deref().map(pick),
            }),
        }
    }

    /// Headered CSV of inputs, target and any truth columns.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = self.x_names.clone();
        header.push(self.y_name.clone());
        if let Some(t) = &self.truth {
            header.push("true_f".into());
            header.push("true_noise".into());
            if t.lengthscale.is_some() {
                header.push("true_lengthscale".into());
            }
            if t.signal.is_some() {
                header.push("true_signal".into());
            }
        }
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(f64::to_string).collect();
            rec.push(self.y[i].to_string());
            if let Some(t) = &self.truth {
                rec.push(t.f[i].to_string());
                rec.push(t.noise[i].to_string());
                if let Some(l) = &t.lengthscale {
                    rec.push(l[i].to_string());
                }
                if let Some(s) = &t.signal {
                    rec.push(s[i].to_string());
                }
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> NsgpError {
    NsgpError::Parse(e.to_string())
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + step * i as f64 })
        .collect()
}

/// Generating hyper-functions of SYNTH-1D.
pub fn synth1d_lengthscale(x: f64) -> f64 {
    0.5 * (x / 8.0).sin() + 1.5
}

pub fn synth1d_signal(x: f64) -> f64 {
    1.5 * (0.2 * x).sin().exp()
}

pub fn synth1d_noise(x: f64) -> f64 {
    2.5 * (1.0 + (-0.2 * x).sin().exp()).ln()
}

pub const SYNTH1D_N: usize = 200;

fn draw_gp(inputs: &GibbsInputs, x: &Matrix, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let k = gram(x, GramKernel::Gibbs(inputs))?;
    let base = 1e-10 * k.trace() / k.rows() as f64;
    let factor = cholesky_psd(&k, base)?;
    let eps: Vec<f64> = (0..x.rows()).map(|_| rng.sample(StandardNormal)).collect();
    Ok(factor.lower().matmul(&Matrix::column_vector(&eps))?.into_vec())
}

/// 200 equally spaced inputs on [-30, 30] with input-dependent length
/// scale, amplitude and noise; `f` is one Gibbs-GP draw.
pub fn gen_synth1d(seed: u64) -> Result<Dataset> {
    let mut rng = substream(seed, "synth1d");
    let xs = linspace(-30.0, 30.0, SYNTH1D_N);
    let ell: Vec<f64> = xs.iter().map(|&v| synth1d_lengthscale(v)).collect();
    let sig: Vec<f64> = xs.iter().map(|&v| synth1d_signal(v)).collect();
    let noise: Vec<f64> = xs.iter().map(|&v| synth1d_noise(v)).collect();
    let x = Matrix::column_vector(&xs);
    let inputs = GibbsInputs::new(Matrix::column_vector(&ell), sig.clone())?;
    let f = draw_gp(&inputs, &x, &mut rng)?;
    let y = f
        .iter()
        .zip(&noise)
        .map(|(fi, w)| fi + w * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut d = Dataset::new("synth1d", x, y)?;
    d.truth = Some(Truth {
        f,
        noise,
        lengthscale: Some(ell),
        signal: Some(sig),
    });
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump1dConfig {
    pub n: usize,
    /// `f` jumps from `-amplitude` to `+amplitude` at 0.
    pub jump_amplitude: f64,
    pub smooth_lengthscale: f64,
    pub smooth_std: f64,
    pub noise_std: f64,
}

impl Default for Jump1dConfig {
    fn default() -> Self {
        Self {
            n: 100,
            jump_amplitude: 2.0,
            smooth_lengthscale: 0.3,
            smooth_std: 0.3,
            noise_std: 0.1,
        }
    }
}

pub fn gen_jump1d(seed: u64) -> Result<Dataset> {
    gen_jump1d_with(seed, &Jump1dConfig::default())
}

/// Step of height `2·jump_amplitude` at 0 on [-1, 1], plus a smooth RBF-GP
/// component and homoskedastic noise.
pub fn gen_jump1d_with(seed: u64, cfg: &Jump1dConfig) -> Result<Dataset> {
    let mut rng = substream(seed, "jump1d");
    let xs = linspace(-1.0, 1.0, cfg.n);
    let x = Matrix::column_vector(&xs);
    let rbf = RbfParams::new(cfg.smooth_lengthscale, cfg.smooth_std * cfg.smooth_std)?;
    let k = gram(&x, GramKernel::Rbf(&rbf))?;
    let factor = cholesky_psd(&k, 1e-10 * rbf.amplitude())?;
    let eps: Vec<f64> = (0..cfg.n).map(|_| rng.sample(StandardNormal)).collect();
    let smooth = factor.lower().matmul(&Matrix::column_vector(&eps))?.into_vec();
    let f: Vec<f64> = xs
        .iter()
        .zip(&smooth)
        .map(|(&v, s)| {
            let step = if v < 0.0 { -1.0 } else { 1.0 };
            step * cfg.jump_amplitude + s
        })
        .collect();
    let y = f
        .iter()
        .map(|fi| fi + cfg.noise_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut d = Dataset::new("jump1d", x, y)?;
    d.truth = Some(Truth {
        f,
        noise: vec![cfg.noise_std; cfg.n],
        lengthscale: None,
        signal: None,
    });
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nonstat2dConfig {
    /// Points per side of the square grid on [0, 1]².
    pub grid: usize,
    pub short_lengthscale: f64,
    pub long_lengthscale: f64,
    /// Width of the short-length-scale bump around the centre.
    pub bump_width: f64,
    pub amplitude: f64,
    /// Noise standard deviation at the smallest and largest first input.
    pub noise_low: f64,
    pub noise_high: f64,
}

impl Default for Nonstat2dConfig {
    fn default() -> Self {
        Self {
            grid: 13,
            short_lengthscale: 0.15,
            long_lengthscale: 0.6,
            bump_width: 0.2,
            amplitude: 1.0,
            noise_low: 0.01,
            noise_high: 0.1,
        }
    }
}

pub fn gen_nonstat2d(seed: u64) -> Result<Dataset> {
    gen_nonstat2d_with(seed, &Nonstat2dConfig::default())
}

/// Length-scale field with a short-scale bump at the centre of the unit
/// square; noise standard deviation linear in the first input.
pub fn gen_nonstat2d_with(seed: u64, cfg: &Nonstat2dConfig) -> Result<Dataset> {
    let mut rng = substream(seed, "nonstat2d");
    let ticks = linspace(0.0, 1.0, cfg.grid);
    let mut rows = Vec::with_capacity(cfg.grid * cfg.grid);
    for &a in &ticks {
        for &b in &ticks {
            rows.push(vec![a, b]);
        }
    }
    let x = Matrix::from_rows(&rows)?;
    let n = x.rows();
    let ell: Vec<f64> = rows
        .iter()
        .map(|p| {
            let r2 = (p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2);
            cfg.long_lengthscale
                - (cfg.long_lengthscale - cfg.short_lengthscale)
                    * (-r2 / (2.0 * cfg.bump_width * cfg.bump_width)).exp()
        })
        .collect();
    let noise: Vec<f64> = rows
        .iter()
        .map(|p| cfg.noise_low + (cfg.noise_high - cfg.noise_low) * p[0])
        .collect();
    let sig = vec![cfg.amplitude; n];
    let inputs = GibbsInputs::new(Matrix::column_vector(&ell), sig.clone())?;
    let f = draw_gp(&inputs, &x, &mut rng)?;
    let y = f
        .iter()
        .zip(&noise)
        .map(|(fi, w)| fi + w * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut d = Dataset::new("nonstat2d", x, y)?;
    d.truth = Some(Truth {
        f,
        noise,
        lengthscale: Some(ell),
        signal: Some(sig),
    });
    Ok(d)
}

/// Generates a named synthetic dataset.
pub fn generate(name: &str, seed: u64) -> Result<Dataset> {
    match name {
        "synth1d" => gen_synth1d(seed),
        "jump1d" => gen_jump1d(seed),
        "nonstat2d" => gen_nonstat2d(seed),
        other => Err(NsgpError::UnknownDataset(other.to_string())),
    }
}

pub const SYNTHETIC_NAMES: [&str; 3] = ["synth1d", "jump1d", "nonstat2d"];

/// The motorcycle-helmet acceleration data (Silverman, 1985) as shipped
/// with this crate.
pub const MOTORCYCLE_CSV: &str = include_str!("../data/mcycle.csv");

pub fn motorcycle() -> Result<Dataset> {
    let mut d = read_csv(MOTORCYCLE_CSV.as_bytes(), &["times"], "accel")?;
    d.name = "motorcycle".into();
    Ok(d)
}

/// Loads a headered CSV, taking `x_cols` as inputs and `y_col` as target.
pub fn load_csv(path: impl AsRef<Path>, x_cols: &[&str], y_col: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut d = read_csv(file, x_cols, y_col)?;
    d.name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(d)
}

pub fn read_csv<R: Read>(input: R, x_cols: &[&str], y_col: &str) -> Result<Dataset> {
    if x_cols.is_empty() {
        return Err(NsgpError::Parse("no input columns requested".into()));
    }
    let mut cols: Vec<&str> = x_cols.to_vec();
    cols.push(y_col);
    let (rows, values) = read_columns(input, &cols)?;
    let width = cols.len();
    let mut xs = Vec::with_capacity(rows * x_cols.len());
    let mut ys = Vec::with_capacity(rows);
    for rec in values.chunks(width) {
        xs.extend_from_slice(&rec[..width - 1]);
        ys.push(rec[width - 1]);
    }
    let x = Matrix::from_vec(rows, x_cols.len(), xs)?;
    let mut d = Dataset::new("csv", x, ys)?;
    d.x_names = x_cols.iter().map(|s| s.to_string()).collect();
    d.y_name = y_col.to_string();
    Ok(d)
}

/// Reads only the input columns of a headered CSV, e.g. a query grid.
pub fn read_inputs<R: Read>(input: R, x_cols: &[&str]) -> Result<Matrix> {
    if x_cols.is_empty() {
        return Err(NsgpError::Parse("no input columns requested".into()));
    }
    let (rows, values) = read_columns(input, x_cols)?;
    Matrix::from_vec(rows, x_cols.len(), values)
}

pub fn load_inputs(path: impl AsRef<Path>, x_cols: &[&str]) -> Result<Matrix> {
    read_inputs(std::fs::File::open(path)?, x_cols)
}

/// Row count and row-major values of the named columns. Row numbers in
/// errors count data rows from 1.
fn read_columns<R: Read>(input: R, cols: &[&str]) -> Result<(usize, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let idx = cols
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| NsgpError::Parse(format!("column `{name}` not found")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut values = Vec::new();
    let mut rows = 0;
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| NsgpError::Parse(format!("row {}: {e}", row + 1)))?;
        for (&i, col) in idx.iter().zip(cols) {
            let raw = rec.get(i).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| {
                NsgpError::Parse(format!("row {}: column `{col}` has value `{raw}`", row + 1))
            })?;
            if !v.is_finite() {
                return Err(NsgpError::Parse(format!(
                    "row {}: column `{col}` is not finite",
                    row + 1
                )));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(NsgpError::EmptyDataset);
    }
    Ok((rows, values))
}

/// Affine per-column transform to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Standardizer {
    /// Fits on every input column and the target.
    pub fn fit(d: &Dataset) -> Result<Self> {
        let mut s = Self::fit_targets(d)?;
        for c in 0..d.dim() {
            let (m, sd) = mean_std((0..d.len()).map(|i| d.x[(i, c)]));
            if !(sd > 0.0) {
                return Err(NsgpError::DegenerateColumn(d.x_names[c].clone()));
            }
            s.x_mean[c] = m;
            s.x_scale[c] = sd;
        }
        Ok(s)
    }

    /// Fits on the target only; inputs pass through unchanged.
    pub fn fit_targets(d: &Dataset) -> Result<Self> {
        let (y_mean, y_scale) = mean_std(d.y.iter().copied());
        if !(y_scale > 0.0) {
            return Err(NsgpError::DegenerateColumn(d.y_name.clone()));
        }
        Ok(Self {
            x_mean: vec![0.0; d.dim()],
            x_scale: vec![1.0; d.dim()],
            y_mean,
            y_scale,
        })
    }

    /// Geometric mean of the input scales; converts isotropic length scales.
    pub fn length_scale_factor(&self) -> f64 {
        let n = self.x_scale.len() as f64;
        (self.x_scale.iter().map(|s| s.ln()).sum::<f64>() / n).exp()
    }

    pub fn transform_x(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            (x[(i, j)] - self.x_mean[j]) / self.x_scale[j]
        })
    }

    pub fn inverse_x(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            x[(i, j)] * self.x_scale[j] + self.x_mean[j]
        })
    }

    pub fn transform_y(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    pub fn inverse_y(&self, y: f64) -> f64 {
        y * self.y_scale + self.y_mean
    }

    /// Maps a prediction made on the standardized target scale back to the
    /// original one.
    pub fn inverse_prediction(&self, p: &Prediction) -> Prediction {
        let s2 = self.y_scale * self.y_scale;
        let scale = |v: &[f64]| v.iter().map(|x| x * s2).collect::<Vec<_>>();
        Prediction {
            mean: p.mean.iter().map(|&m| self.inverse_y(m)).collect(),
            var_f: scale(&p.var_f),
            var_noise: scale(&p.var_noise),
            var_y: scale(&p.var_y),
        }
    }

    pub fn apply(&self, d: &Dataset) -> Dataset {
        self.map(d, false)
    }

    pub fn inverse(&self, d: &Dataset) -> Dataset {
        self.map(d, true)
    }

    fn map(&self, d: &Dataset, inverse: bool) -> Dataset {
        let ls = self.length_scale_factor();
        let (x, fy, fscale, lscale): (Matrix, Box<dyn Fn(f64) -> f64>, f64, f64) = if inverse {
            (
                self.inverse_x(&d.x),
                Box::new(|v| self.inverse_y(v)),
                self.y_scale,
                ls,
            )
        } else {
            (
                self.transform_x(&d.x),
                Box::new(|v| self.transform_y(v)),
                1.0 / self.y_scale,
                1.0 / ls,
            )
        };
        let scale = |v: &[f64], s: f64| v.iter().map(|x| x * s).collect::<Vec<_>>();
        Dataset {
            name: d.name.clone(),
            x,
            y: d.y.iter().map(|&v| fy(v)).collect(),
            x_names: d.x_names.clone(),
            y_name: d.y_name.clone(),
            truth: d.truth.as_ref().map(|t| Truth {
                f: t.f.iter().map(|&v| fy(v)).collect(),
                noise: scale(&t.noise, fscale),
                lengthscale: t.lengthscale.as_deref().map(|l| scale(l, lscale)),
                signal: t.signal.as_deref().map(|s| scale(s, fscale)),
            }),
        }
    }
}

/// Standardizes every column; returns the transformed data and the record
/// needed to invert it.
pub fn standardize(d: &Dataset) -> Result<(Dataset, Standardizer)> {
    let s = Standardizer::fit(d)?;
    Ok((s.apply(d), s))
}

/// Assignment of each point to one of `k` test folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

/// Seeded shuffle, then round-robin assignment, so fold sizes differ by at
/// most one.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || n < k {
        return Err(NsgpError::Config(format!(
            "k-fold needs n >= k >= 2, got n={n}, k={k}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, "folds"));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldPlan {
        k,
        assignment,
        seed,
    })
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }
}
