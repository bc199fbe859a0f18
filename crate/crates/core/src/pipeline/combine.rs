//! Patch averaging, argmax prediction and multi-front-end ensembling.

use super::PipelineError;

/// Tolerance on the unit sum of a probability vector.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// A probability vector over C classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel(Vec<f64>);

impl SoftLabel {
    pub fn new(probs: Vec<f64>) -> Result<Self, PipelineError> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(PipelineError::InvalidLabel(format!("{probs:?}")));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(class: usize, n_classes: usize) -> Self {
        assert!(class < n_classes, "class {class} out of range");
        let mut v = vec![0.0; n_classes];
        v[class] = 1.0;
        Self(v)
    }

    /// Renormalizes a nonnegative vector (model outputs in single precision
    /// sum to one only approximately).
    pub fn from_unnormalized(values: &[f32]) -> Result<Self, PipelineError> {
        let v: Vec<f64> = values.iter().map(|&x| f64::from(x)).collect();
        let s: f64 = v.iter().sum();
        if !(s > 0.0 && s.is_finite()) || v.iter().any(|x| *x < 0.0) {
            return Err(PipelineError::InvalidLabel(format!("{values:?}")));
        }
        Self::new(v.into_iter().map(|x| x / s).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn n_classes(&self) -> usize {
        self.0.len()
    }
}

fn mean_rows(rows: &[SoftLabel]) -> Result<SoftLabel, PipelineError> {
    let first = rows.first().ok_or(PipelineError::EmptyInput)?;
    let c = first.n_classes();
    if let Some(bad) = rows.iter().find(|r| r.n_classes() != c) {
        return Err(PipelineError::ShapeMismatch(format!("{} vs {} classes", bad.n_classes(), c)));
    }
    let m = rows.len() as f64;
    Ok(SoftLabel((0..c).map(|j| rows.iter().map(|r| r.0[j]).sum::<f64>() / m).collect()))
}

/// Mean class probability over the patches of one instance.
pub fn aggregate_patches(patch_probs: &[SoftLabel]) -> Result<SoftLabel, PipelineError> {
    mean_rows(patch_probs)
}

/// Elementwise mean over the outputs of K models for one instance.
pub fn ensemble(prob_sets: &[SoftLabel]) -> Result<SoftLabel, PipelineError> {
    mean_rows(prob_sets)
}

/// Index of the largest probability; ties go to the lowest index.
pub fn predict_label(p: &SoftLabel) -> usize {
    argmax(p.probs())
}

pub(crate) fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
