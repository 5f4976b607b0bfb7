//! Resolved run configurations and the manifests that record them.

use std::path::{Path, PathBuf};

use nsgp::active::{Acquisition, Retrain};
use nsgp::data::{self, Dataset, SYNTHETIC_NAMES};
use nsgp::{NsgpError, Result, Variant};
use serde::{Deserialize, Serialize};

pub const MANIFEST_SCHEMA: &str = "nsgp-manifest/v1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Where a dataset comes from. Synthetic generators take the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic { name: String },
    Motorcycle,
    Csv {
        path: PathBuf,
        x_cols: Vec<String>,
        y_col: String,
    },
}

impl DatasetSpec {
    /// Parses a dataset argument: a generator name, `motorcycle`, or a CSV
    /// path (which then needs columns).
    pub fn parse(arg: &str, x_cols: &[String], y_col: Option<&str>) -> Result<Self> {
        if SYNTHETIC_NAMES.contains(&arg) {
            return Ok(DatasetSpec::Synthetic {
                name: arg.to_string(),
            });
        }
        if arg == "motorcycle" {
            return Ok(DatasetSpec::Motorcycle);
        }
        if arg.ends_with(".csv") {
            let y_col = y_col.ok_or_else(|| {
                NsgpError::Config(format!("CSV dataset {arg} needs --y-col"))
            })?;
            if x_cols.is_empty() {
                return Err(NsgpError::Config(format!("CSV dataset {arg} needs --x-cols")));
            }
            return Ok(DatasetSpec::Csv {
                path: PathBuf::from(arg),
                x_cols: x_cols.to_vec(),
                y_col: y_col.to_string(),
            });
        }
        Err(NsgpError::UnknownDataset(arg.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::Synthetic { name } if !SYNTHETIC_NAMES.contains(&name.as_str()) => {
                Err(NsgpError::UnknownDataset(name.clone()))
            }
            DatasetSpec::Csv { x_cols, .. } if x_cols.is_empty() => {
                Err(NsgpError::Config("CSV dataset without input columns".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::Synthetic { name } => data::generate(name, seed),
            DatasetSpec::Motorcycle => data::motorcycle(),
            DatasetSpec::Csv {
                path,
                x_cols,
                y_col,
            } => {
                let cols: Vec<&str> = x_cols.iter().map(String::as_str).collect();
                data::load_csv(path, &cols, y_col)
            }
        }
    }
}

/// Query points for `predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuerySpec {
    /// The model's own training inputs.
    Training,
    /// `n` evenly spaced points on `[lo, hi]`, 1-D models only.
    Grid { lo: f64, hi: f64, n: usize },
    Csv { path: PathBuf, x_cols: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    /// `None` uses the dataset default.
    pub num_inducing: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
}

impl TrainSettings {
    fn validate(&self) -> Result<()> {
        if self.num_inducing == Some(0) {
            return Err(NsgpError::Config("--num-inducing must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(NsgpError::Config(format!("--lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    Synth {
        name: String,
    },
    Fit {
        dataset: DatasetSpec,
        variant: Variant,
        train: TrainSettings,
    },
    Predict {
        model: PathBuf,
        query: QuerySpec,
    },
    Ablate {
        datasets: Vec<DatasetSpec>,
        train: TrainSettings,
        k: usize,
    },
    Active {
        dataset: String,
        arms: Vec<Acquisition>,
        initial_n: usize,
        acquisitions: usize,
        retrain: Retrain,
        retrain_epochs: usize,
        train: TrainSettings,
    },
    Gradcheck {
        variants: Vec<Variant>,
        configs: usize,
        /// Added to every analytic partial; exercises the failure path.
        #[serde(default, skip_serializing_if = "is_zero")]
        perturb: f64,
    },
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub run: Command,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.run {
            Command::Synth { name } => {
                if !SYNTHETIC_NAMES.contains(&name.as_str()) {
                    return Err(NsgpError::UnknownDataset(name.clone()));
                }
            }
            Command::Fit { dataset, train, .. } => {
                dataset.validate()?;
                train.validate()?;
            }
            Command::Predict { query, .. } => match query {
                QuerySpec::Grid { lo, hi, n } => {
                    if *n == 0 || !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                        return Err(NsgpError::Config("grid needs lo <= hi and n >= 1".into()));
                    }
                }
                QuerySpec::Csv { x_cols, .. } if x_cols.is_empty() => {
                    return Err(NsgpError::Config("query CSV needs --x-cols".into()));
                }
                _ => {}
            },
            Command::Ablate { datasets, train, k } => {
                if datasets.is_empty() {
                    return Err(NsgpError::Config("no datasets given".into()));
                }
                for d in datasets {
                    d.validate()?;
                }
                train.validate()?;
                if *k < 2 {
                    return Err(NsgpError::Config("--k must be at least 2".into()));
                }
            }
            Command::Active {
                dataset,
                arms,
                initial_n,
                train,
                ..
            } => {
                if !SYNTHETIC_NAMES.contains(&dataset.as_str()) {
                    return Err(NsgpError::UnknownDataset(dataset.clone()));
                }
                if arms.is_empty() {
                    return Err(NsgpError::Config("no acquisition arms given".into()));
                }
                if *initial_n == 0 {
                    return Err(NsgpError::Config("--initial-n must be at least 1".into()));
                }
                train.validate()?;
            }
            Command::Gradcheck {
                variants,
                configs,
                perturb,
            } => {
                if variants.is_empty() || *configs == 0 {
                    return Err(NsgpError::Config("gradcheck needs variants and configs".into()));
                }
                if !perturb.is_finite() {
                    return Err(NsgpError::Config("perturbation must be finite".into()));
                }
            }
        }
        let needs_out = !matches!(self.run, Command::Gradcheck { .. });
        if needs_out && self.out.is_none() {
            return Err(NsgpError::Config("--out is required".into()));
        }
        Ok(())
    }
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: String,
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(config: &RunConfig, outputs: Vec<String>) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.to_string(),
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: nsgp::VERSION.to_string(),
            seed: config.seed,
            config: config.clone(),
            outputs,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| NsgpError::Config(format!("{}: {e}", path.display())))?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(NsgpError::Config(format!(
                "unsupported manifest schema `{}`",
                m.schema
            )));
        }
        if m.seed != m.config.seed {
            return Err(NsgpError::Config("manifest seed disagrees with its config".into()));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
