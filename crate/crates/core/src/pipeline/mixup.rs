use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::PipelineError;

/// A minibatch of flattened inputs with soft labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `n x feature_len`, row-major.
    pub inputs: Vec<f32>,
    /// `n x n_classes`, each row on the simplex.
    pub labels: Vec<f32>,
    pub n: usize,
    pub feature_len: usize,
    pub n_classes: usize,
}

impl Batch {
    pub fn label_row(&self, i: usize) -> &[f32] {
        &self.labels[i * self.n_classes..(i + 1) * self.n_classes]
    }
}

/// Convex combination of each example with its partner `perm[i]`.
pub fn mixup_with(batch: &Batch, lambda: f64, perm: &[usize]) -> Batch {
    assert_eq!(perm.len(), batch.n, "one partner per example");
    let mix = |data: &[f32], width: usize| -> Vec<f32> {
        let (a, b) = (lambda as f32, (1.0 - lambda) as f32);
        let mut out = Vec::with_capacity(data.len());
        for (i, &j) in perm.iter().enumerate() {
            let (x1, x2) = (&data[i * width..(i + 1) * width], &data[j * width..(j + 1) * width]);
            out.extend(x1.iter().zip(x2).map(|(p, q)| a * p + b * q));
        }
        out
    };
    Batch {
        inputs: mix(&batch.inputs, batch.feature_len),
        labels: mix(&batch.labels, batch.n_classes),
        n: batch.n,
        feature_len: batch.feature_len,
        n_classes: batch.n_classes,
    }
}

/// Draws `λ ~ Beta(alpha, alpha)` and a uniform random pairing, then mixes.
/// Returns the mixed batch and the drawn `λ`.
pub fn mixup_batch<R: Rng + ?Sized>(batch: &Batch, alpha: f64, rng: &mut R) -> Result<(Batch, f64), PipelineError> {
    if batch.n < 2 {
        return Err(PipelineError::BatchTooSmall(batch.n));
    }
    let beta = Beta::new(alpha, alpha).map_err(|_| PipelineError::Config(format!("mixup alpha must be positive, got {alpha}")))?;
    let lambda = beta.sample(rng);
    let mut perm: Vec<usize> = (0..batch.n).collect();
    perm.shuffle(rng);
    Ok((mixup_with(batch, lambda, &perm), lambda))
}
