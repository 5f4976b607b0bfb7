//! `nsgp`: datasets, fitting, prediction, ablations, active learning and
//! gradient checks for non-stationary heteroscedastic GPs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure (or a
//! failed gradient check), 4 I/O or input-file error.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nsgp::active::{Acquisition, Retrain};
use nsgp::io::write_atomic;
use nsgp::{NsgpError, Result, Variant};

use config::{Command, DatasetSpec, Manifest, QuerySpec, RunConfig, TrainSettings, MANIFEST_FILE};

#[derive(Parser)]
#[command(name = "nsgp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset (with its true latent traces) as CSV.
    Synth {
        /// synth1d, jump1d or nonstat2d.
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one variant and save the model with its training trace.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        variant: VariantArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// CSV of query inputs; defaults to the training inputs.
        #[arg(long, conflicts_with = "grid")]
        query: Option<PathBuf>,
        /// Columns of the query CSV.
        #[arg(long, value_delimiter = ',')]
        x_cols: Vec<String>,
        /// `lo:hi:n` evenly spaced 1-D query points.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate all eight variants on each dataset.
    Ablate {
        /// Comma-separated dataset names or CSV paths.
        #[arg(long, value_delimiter = ',', required = true)]
        datasets: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        x_cols: Vec<String>,
        #[arg(long)]
        y_col: Option<String>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pool-based active learning on a synthetic dataset.
    Active {
        #[arg(long, default_value = "synth1d")]
        dataset: String,
        /// Acquisition rules to run.
        #[arg(long, value_delimiter = ',', default_value = "var_f,var_y")]
        arms: Vec<ArmArg>,
        #[arg(long, default_value_t = 30)]
        initial_n: usize,
        #[arg(long, default_value_t = 50)]
        acquisitions: usize,
        #[arg(long, value_enum, default_value_t = RetrainArg::None)]
        retrain: RetrainArg,
        /// Epochs per acquisition with `--retrain full`.
        #[arg(long, default_value_t = 100)]
        retrain_epochs: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with central differences on random models.
    Gradcheck {
        #[command(flatten)]
        variant: VariantArgs,
        /// Check every variant instead of the one given by the flags.
        #[arg(long)]
        all_variants: bool,
        #[arg(long, default_value_t = 20)]
        configs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true, default_value_t = 0.0)]
        perturb_gradient: f64,
    },
    /// Re-run the command recorded in a manifest.
    Rerun {
        manifest: PathBuf,
        /// Write here instead of the recorded output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset name (synth1d, jump1d, nonstat2d, motorcycle) or CSV path.
    #[arg(long)]
    dataset: String,
    #[arg(long, value_delimiter = ',')]
    x_cols: Vec<String>,
    #[arg(long)]
    y_col: Option<String>,
}

#[derive(Args)]
struct VariantArgs {
    /// Input-dependent length scale.
    #[arg(long)]
    latent_ell: bool,
    /// Input-dependent signal amplitude.
    #[arg(long)]
    latent_sigma: bool,
    /// Input-dependent noise.
    #[arg(long)]
    latent_omega: bool,
}

impl VariantArgs {
    fn variant(&self) -> Variant {
        Variant::new(self.latent_ell, self.latent_sigma, self.latent_omega)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Inducing inputs; default 10 for 1-D data, 25 otherwise.
    #[arg(long)]
    num_inducing: Option<usize>,
    #[arg(long, default_value_t = nsgp::train::DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = nsgp::train::DEFAULT_STEP_SIZE, allow_negative_numbers = true)]
    lr: f64,
}

impl TrainArgs {
    fn settings(&self) -> TrainSettings {
        TrainSettings {
            num_inducing: self.num_inducing,
            epochs: self.epochs,
            lr: self.lr,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ArmArg {
    #[value(name = "var_f")]
    VarF,
    #[value(name = "var_y")]
    VarY,
}

#[derive(Clone, Copy, ValueEnum)]
enum RetrainArg {
    None,
    Full,
}

fn parse_grid(s: &str) -> Result<QuerySpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || NsgpError::Config(format!("--grid expects lo:hi:n, got `{s}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok(QuerySpec::Grid {
        lo: parts[0].parse().map_err(|_| bad())?,
        hi: parts[1].parse().map_err(|_| bad())?,
        n: parts[2].parse().map_err(|_| bad())?,
    })
}

/// Turns parsed arguments into a config; `rerun` reads it from a manifest.
fn resolve(cmd: Cmd) -> Result<RunConfig> {
    let (seed, out, run) = match cmd {
        Cmd::Synth { name, seed, out } => (seed, Some(out), Command::Synth { name }),
        Cmd::Fit {
            data,
            variant,
            train,
            seed,
            out,
        } => (
            seed,
            Some(out),
            Command::Fit {
                dataset: DatasetSpec::parse(&data.dataset, &data.x_cols, data.y_col.as_deref())?,
                variant: variant.variant(),
                train: train.settings(),
            },
        ),
        Cmd::Predict {
            model,
            query,
            x_cols,
            grid,
            out,
        } => {
            let query = match (query, grid) {
                (Some(path), None) => QuerySpec::Csv { path, x_cols },
                (None, Some(g)) => parse_grid(&g)?,
                (None, None) => QuerySpec::Training,
                (Some(_), Some(_)) => {
                    return Err(NsgpError::Config("--query and --grid are exclusive".into()))
                }
            };
            (0, Some(out), Command::Predict { model, query })
        }
        Cmd::Ablate {
            datasets,
            x_cols,
            y_col,
            k,
            train,
            seed,
            out,
        } => (
            seed,
            Some(out),
            Command::Ablate {
                datasets: datasets
                    .iter()
                    .map(|d| DatasetSpec::parse(d, &x_cols, y_col.as_deref()))
                    .collect::<Result<_>>()?,
                train: train.settings(),
                k,
            },
        ),
        Cmd::Active {
            dataset,
            arms,
            initial_n,
            acquisitions,
            retrain,
            retrain_epochs,
            train,
            seed,
            out,
        } => (
            seed,
            Some(out),
            Command::Active {
                dataset,
                arms: arms
                    .into_iter()
                    .map(|a| match a {
                        ArmArg::VarF => Acquisition::VarF,
                        ArmArg::VarY => Acquisition::VarY,
                    })
                    .collect(),
                initial_n,
                acquisitions,
                retrain: match retrain {
                    RetrainArg::None => Retrain::None,
                    RetrainArg::Full => Retrain::Full,
                },
                retrain_epochs,
                train: train.settings(),
            },
        ),
        Cmd::Gradcheck {
            variant,
            all_variants,
            configs,
            seed,
            out,
            perturb_gradient,
        } => (
            seed,
            out,
            Command::Gradcheck {
                variants: if all_variants {
                    Variant::all().to_vec()
                } else {
                    vec![variant.variant()]
                },
                configs,
                perturb: perturb_gradient,
            },
        ),
        Cmd::Rerun { manifest, out } => {
            let path = if manifest.is_dir() {
                manifest.join(MANIFEST_FILE)
            } else {
                manifest
            };
            let mut cfg = Manifest::load(&path)?.config;
            if out.is_some() {
                cfg.out = out;
            }
            return Ok(cfg);
        }
    };
    Ok(RunConfig { seed, out, run })
}

fn write_outputs(dir: &Path, cfg: &RunConfig, files: &[(String, Vec<u8>)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        write_atomic(dir.join(name), bytes)?;
    }
    let manifest = Manifest::new(cfg, files.iter().map(|(n, _)| n.clone()).collect());
    write_atomic(dir.join(MANIFEST_FILE), manifest.to_json().as_bytes())
}

fn exit_code(e: &NsgpError) -> u8 {
    match e {
        NsgpError::Io(_) | NsgpError::Parse(_) | NsgpError::EmptyDataset => 4,
        NsgpError::Config(_)
        | NsgpError::UnknownDataset(_)
        | NsgpError::MTooLarge { .. }
        | NsgpError::LayoutMismatch(_)
        | NsgpError::DimensionMismatch(_)
        | NsgpError::DegenerateColumn(_)
        | NsgpError::EmptyPool => 2,
        NsgpError::NonSymmetric { .. }
        | NsgpError::NotPositiveDefinite { .. }
        | NsgpError::NonPositiveParam { .. }
        | NsgpError::NonFinite(_)
        | NsgpError::Diverged { .. }
        | NsgpError::NegativeVariance { .. }
        | NsgpError::NonPositiveVariance { .. } => 3,
    }
}

fn run(cmd: Cmd) -> Result<bool> {
    let cfg = resolve(cmd)?;
    cfg.validate()?;
    let outcome = commands::execute(&cfg)?;
    if let Some(dir) = &cfg.out {
        write_outputs(dir, &cfg, &outcome.files)?;
    }
    print!("{}", outcome.summary);
    Ok(!outcome.check_failed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
