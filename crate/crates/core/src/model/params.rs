use serde::{Deserialize, Serialize};

use super::{NsgpModel, Variant};
use crate::error::{NsgpError, Result};
use crate::kernels::RbfParams;
use crate::latent::{HyperFunction, HyperTag, Latent, LatentGp};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    /// Stored value is the log of a positive quantity.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "hyper", rename_all = "snake_case")]
pub enum SegmentKind {
    Inducing,
    Mean(HyperTag),
    LatentLengthscale(HyperTag),
    LatentAmplitude(HyperTag),
    Whitened(HyperTag),
    Constant(HyperTag),
}

impl SegmentKind {
    pub fn name(&self) -> String {
        match self {
            SegmentKind::Inducing => "inducing".to_string(),
            SegmentKind::Mean(t) => format!("{t}.mean"),
            SegmentKind::LatentLengthscale(t) => format!("{t}.lengthscale"),
            SegmentKind::LatentAmplitude(t) => format!("{t}.amplitude"),
            SegmentKind::Whitened(t) => format!("{t}.whitened"),
            SegmentKind::Constant(t) => format!("{t}.constant"),
        }
    }

    pub fn transform(&self) -> Transform {
        match self {
            SegmentKind::LatentLengthscale(_)
            | SegmentKind::LatentAmplitude(_)
            | SegmentKind::Constant(_) => Transform::Log,
            _ => Transform::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub kind: SegmentKind,
    pub offset: usize,
    pub len: usize,
    pub transform: Transform,
}

/// Ordered map from named segments to ranges of the flat parameter vector.
///
/// Order: inducing inputs (row-major), then for each of ℓ, σ, ω either
/// `mean, lengthscale, amplitude, whitened` (latent GP) or `constant`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub variant: Variant,
    pub num_inducing: usize,
    pub input_dim: usize,
    pub segments: Vec<Segment>,
}

/// Unconstrained parameters plus their layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

/// Number of trainable scalars for a variant.
///
/// With every hyper-function latent this is `2MD + 2M + 9`.
pub fn param_count(variant: Variant, num_inducing: usize, input_dim: usize) -> usize {
    ParamLayout::new(variant, num_inducing, input_dim).len()
}

impl ParamLayout {
    pub fn new(variant: Variant, num_inducing: usize, input_dim: usize) -> Self {
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |kind: SegmentKind, len: usize| {
            segments.push(Segment {
                name: kind.name(),
                kind,
                offset,
                len,
                transform: kind.transform(),
            });
            offset += len;
        };
        let m = if variant.any_latent() { num_inducing } else { 0 };
        if m > 0 {
            push(SegmentKind::Inducing, m * input_dim);
        }
        for tag in HyperTag::ALL {
            if variant.is_latent(tag) {
                let channels = if tag == HyperTag::Lengthscale {
                    input_dim
                } else {
                    1
                };
                push(SegmentKind::Mean(tag), 1);
                push(SegmentKind::LatentLengthscale(tag), 1);
                push(SegmentKind::LatentAmplitude(tag), 1);
                push(SegmentKind::Whitened(tag), m * channels);
            } else {
                push(SegmentKind::Constant(tag), 1);
            }
        }
        Self {
            variant,
            num_inducing: m,
            input_dim,
            segments,
        }
    }

    pub fn for_model(model: &NsgpModel) -> Self {
        Self::new(model.variant(), model.num_inducing(), model.input_dim())
    }

    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment(&self, kind: SegmentKind) -> Option<&Segment> {
        self.segments.iter().find(|s| s.kind == kind)
    }

    /// Offset of a segment that must exist in this layout.
    pub(crate) fn offset(&self, kind: SegmentKind) -> usize {
        self.segment(kind)
            .unwrap_or_else(|| panic!("layout has no {} segment", kind.name()))
            .offset
    }

    /// Checks structural consistency after deserialization.
    pub fn validate(&self) -> Result<()> {
        let expected = ParamLayout::new(self.variant, self.num_inducing, self.input_dim);
        if expected != *self {
            return Err(NsgpError::LayoutMismatch(
                "layout does not match its variant, M and D".into(),
            ));
        }
        Ok(())
    }

    /// Flattens a model into this layout.
    pub fn pack(&self, model: &NsgpModel) -> Result<ParamVector> {
        let own = ParamLayout::for_model(model);
        if own != *self {
            return Err(NsgpError::LayoutMismatch(format!(
                "model is {} with M={}, D={}; layout is {} with M={}, D={}",
                own.variant,
                own.num_inducing,
                own.input_dim,
                self.variant,
                self.num_inducing,
                self.input_dim
            )));
        }
        let mut values = Vec::with_capacity(self.len());
        if let Some(z) = model.inducing() {
            values.extend_from_slice(z.as_slice());
        }
        for (_, h) in model.hypers() {
            match &h.latent {
                Latent::Gp(gp) => {
                    values.push(gp.mean);
                    values.push(gp.rbf.lengthscale().ln());
                    values.push(gp.rbf.amplitude().ln());
                    values.extend_from_slice(gp.whitened.as_slice());
                }
                Latent::Constant(c) => values.push(c.value),
            }
        }
        debug_assert_eq!(values.len(), self.len());
        Ok(ParamVector {
            layout: self.clone(),
            values,
        })
    }

    /// Rebuilds a model from flat values and training data.
    pub fn unpack(&self, values: &[f64], train_x: Matrix, train_y: Vec<f64>) -> Result<NsgpModel> {
        if values.len() != self.len() {
            return Err(NsgpError::LayoutMismatch(format!(
                "expected {} parameters, got {}",
                self.len(),
                values.len()
            )));
        }
        if train_x.cols() != self.input_dim {
            return Err(NsgpError::LayoutMismatch(format!(
                "layout has D={}, data has D={}",
                self.input_dim,
                train_x.cols()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(NsgpError::NonFinite(format!("parameter {i}")));
        }
        let m = self.num_inducing;
        let d = self.input_dim;
        let inducing = match self.segment(SegmentKind::Inducing) {
            Some(s) => Some(Matrix::from_vec(
                m,
                d,
                values[s.offset..s.offset + s.len].to_vec(),
            )?),
            None => None,
        };
        let build = |tag: HyperTag| -> Result<HyperFunction> {
            if self.variant.is_latent(tag) {
                let mean = values[self.offset(SegmentKind::Mean(tag))];
                let ell = values[self.offset(SegmentKind::LatentLengthscale(tag))].exp();
                let amp = values[self.offset(SegmentKind::LatentAmplitude(tag))].exp();
                let w = self
                    .segment(SegmentKind::Whitened(tag))
                    .expect("latent layout has a whitened segment");
                let channels = w.len / m;
                let whitened =
                    Matrix::from_vec(m, channels, values[w.offset..w.offset + w.len].to_vec())?;
                Ok(HyperFunction::gp(
                    tag,
                    LatentGp::new(mean, RbfParams::new(ell, amp)?, whitened)?,
                ))
            } else {
                Ok(HyperFunction::constant(
                    tag,
                    values[self.offset(SegmentKind::Constant(tag))],
                ))
            }
        };
        NsgpModel::new(
            inducing,
            build(HyperTag::Lengthscale)?,
            build(HyperTag::Signal)?,
            build(HyperTag::Noise)?,
            train_x,
            train_y,
        )
    }
}

impl NsgpModel {
    pub fn pack(&self) -> ParamVector {
        ParamLayout::for_model(self)
            .pack(self)
            .expect("a model always packs into its own layout")
    }

    /// Same structure and data with new parameter values.
    pub fn with_params(&self, values: &[f64]) -> Result<NsgpModel> {
        ParamLayout::for_model(self).unpack(values, self.train_x.clone(), self.train_y.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_count_formula() {
        assert_eq!(param_count(Variant::FULL, 10, 1), 49);
        for m in 1..=50 {
            for d in 1..=5 {
                assert_eq!(param_count(Variant::FULL, m, d), 2 * m * d + 2 * m + 9);
            }
        }
    }

    #[test]
    fn stationary_has_three() {
        for m in [1, 5, 30] {
            assert_eq!(param_count(Variant::STATIONARY, m, 1), 3);
            assert_eq!(param_count(Variant::STATIONARY, m, 3), 3);
        }
    }

    #[test]
    fn omega_only_count() {
        assert_eq!(param_count(Variant::new(false, false, true), 10, 1), 25);
    }

    #[test]
    fn layout_is_contiguous() {
        for v in Variant::all() {
            let l = ParamLayout::new(v, 4, 2);
            let mut next = 0;
            for s in &l.segments {
                assert_eq!(s.offset, next);
                next += s.len;
            }
            assert_eq!(next, l.len());
            l.validate().unwrap();
        }
    }

    #[test]
    fn constant_of_one_is_stored_as_zero() {
        let m = NsgpModel::new(
            None,
            HyperFunction::constant(HyperTag::Lengthscale, 1f64.ln()),
            HyperFunction::constant(HyperTag::Signal, 2f64.ln()),
            HyperFunction::constant(HyperTag::Noise, 0.5f64.ln()),
            Matrix::column_vector(&[0.0, 1.0]),
            vec![0.0, 1.0],
        )
        .unwrap();
        let v = m.pack();
        assert_eq!(v.values[0], 0.0);
        assert_eq!(v.layout.segments[0].transform, Transform::Log);
    }

    #[test]
    fn unpack_rejects_wrong_length() {
        let l = ParamLayout::new(Variant::FULL, 3, 1);
        let err = l.unpack(&[0.0; 5], Matrix::column_vector(&[0.0, 1.0]), vec![0.0, 1.0]);
        assert!(matches!(err, Err(NsgpError::LayoutMismatch(_))));
    }
}
