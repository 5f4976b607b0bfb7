//! Versioned JSON model files and atomic file output.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{NsgpError, Result};
use crate::model::{NsgpModel, ParamLayout, ParamVector, Prediction, Variant};
use crate::numerics::Matrix;

pub const MODEL_SCHEMA: &str = "nsgp-model/v1";

/// Everything needed to rebuild a fitted model: the unconstrained parameter
/// vector with its layout, the (standardized) training data it conditions
/// on, and the target transform used during fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema: String,
    pub variant: Variant,
    pub num_inducing: usize,
    pub input_dim: usize,
    pub params: ParamVector,
    pub standardizer: Standardizer,
    pub train_x: Matrix,
    pub train_y: Vec<f64>,
}

impl ModelFile {
    pub fn new(model: &NsgpModel, standardizer: Standardizer) -> Self {
        Self {
            schema: MODEL_SCHEMA.to_string(),
            variant: model.variant(),
            num_inducing: model.num_inducing(),
            input_dim: model.input_dim(),
            params: model.pack(),
            standardizer,
            train_x: model.train_x().clone(),
            train_y: model.train_y().to_vec(),
        }
    }

    /// Rebuilds the model after checking the header against the layout.
    pub fn model(&self) -> Result<NsgpModel> {
        if self.schema != MODEL_SCHEMA {
            return Err(NsgpError::Parse(format!(
                "unsupported model schema `{}` (expected `{MODEL_SCHEMA}`)",
                self.schema
            )));
        }
        let layout = &self.params.layout;
        let expected = ParamLayout::new(self.variant, self.num_inducing, self.input_dim);
        if *layout != expected {
            return Err(NsgpError::LayoutMismatch(
                "stored layout disagrees with variant, M and D".into(),
            ));
        }
        if self.standardizer.x_mean.len() != self.input_dim {
            return Err(NsgpError::DimensionMismatch(
                "standardizer width vs input dimension".into(),
            ));
        }
        let x = Matrix::from_vec(
            self.train_x.rows(),
            self.train_x.cols(),
            self.train_x.as_slice().to_vec(),
        )?;
        layout.unpack(&self.params.values, x, self.train_y.clone())
    }

    /// Predictions at `query` (original input scale) on the original target
    /// scale.
    pub fn predict(&self, query: &Matrix) -> Result<Prediction> {
        let model = self.model()?;
        let q = self.standardizer.transform_x(query);
        Ok(self.standardizer.inverse_prediction(&model.predict(&q)?))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| NsgpError::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| NsgpError::Parse(e.to_string()))
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| NsgpError::Io(e.error))?;
    Ok(())
}

pub fn save_model(path: impl AsRef<Path>, file: &ModelFile) -> Result<()> {
    let mut json = file.to_json()?;
    json.push('\n');
    write_atomic(path, json.as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    ModelFile::from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_jump1d_with, Jump1dConfig};
    use crate::train::{fit, FitOptions};

    fn fitted() -> ModelFile {
        let d = gen_jump1d_with(
            2,
            &Jump1dConfig {
                n: 25,
                ..Default::default()
            },
        )
        .unwrap();
        let s = Standardizer::fit_targets(&d).unwrap();
        let sd = s.apply(&d);
        let opts = FitOptions {
            num_inducing: 4,
            epochs: 10,
            ..FitOptions::default()
        };
        let (m, _) = fit(Variant::new(true, false, true), &sd.x, &sd.y, &opts).unwrap();
        ModelFile::new(&m, s)
    }

    #[test]
    fn json_round_trip_is_exact() {
        let f = fitted();
        let back = ModelFile::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(back, f);
        let q = Matrix::column_vector(&[-0.9, 0.0, 0.33, 1.4]);
        assert_eq!(back.predict(&q).unwrap(), f.predict(&q).unwrap());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let f = fitted();
        save_model(&path, &f).unwrap();
        assert_eq!(load_model(&path).unwrap(), f);
        let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn rejects_unknown_fields_and_schema() {
        let f = fitted();
        let mut v: serde_json::Value = serde_json::from_str(&f.to_json().unwrap()).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(ModelFile::from_json(&v.to_string()).is_err());
        let mut g = f.clone();
        g.schema = "nsgp-model/v0".into();
        assert!(matches!(g.model(), Err(NsgpError::Parse(_))));
    }

    #[test]
    fn rejects_inconsistent_layout() {
        let mut f = fitted();
        f.num_inducing += 1;
        assert!(matches!(f.model(), Err(NsgpError::LayoutMismatch(_))));
    }

    #[test]
    fn prediction_is_on_original_scale() {
        let f = fitted();
        let q = Matrix::column_vector(&[0.5]);
        let raw = f.model().unwrap().predict(&q).unwrap();
        let p = f.predict(&q).unwrap();
        let s = &f.standardizer;
        assert!((p.mean[0] - (raw.mean[0] * s.y_scale + s.y_mean)).abs() < 1e-12);
        assert!((p.var_y[0] - raw.var_y[0] * s.y_scale * s.y_scale).abs() < 1e-12);
    }
}
