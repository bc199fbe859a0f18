//! Inference over cached instances: per-patch probabilities, patch
//! averaging, ensembling across front-ends, and ICBHI scoring.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::combine::{aggregate_patches, ensemble, predict_label, SoftLabel};
use super::prep::load_instances;
use super::PipelineError;
use crate::dataset::{Manifest, Split, Task};
use crate::metrics::{ConfusionMatrix, EvalReport};
use crate::models::Model;
use crate::nn::{flush_denormals, Graph, Mode, Tensor};
use crate::spectrogram::FrontEndKind;

/// Patches per forward pass during inference.
pub const EVAL_BATCH: usize = 32;

/// One evaluation unit (a cycle or a recording) with its patches under one
/// front-end.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub key: String,
    pub label: usize,
    /// Each patch is `rows x cols`, row-major.
    pub patches: Vec<Vec<f32>>,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub key: String,
    pub true_class: usize,
    /// Per member, the probability row of every patch.
    pub patch_probs: Vec<Vec<SoftLabel>>,
    /// Per member, the mean over its patches.
    pub member_probs: Vec<SoftLabel>,
    /// Mean over members.
    pub probs: SoftLabel,
    pub predicted: usize,
}

/// Eval-mode class probabilities for `n` patches; dropout is off and
/// batchnorm uses running statistics, so rows do not depend on batching.
pub fn predict_probs(model: &Model, inputs: &[f32], rows: usize, cols: usize) -> Result<Vec<SoftLabel>, PipelineError> {
    let f = rows * cols;
    if f == 0 || inputs.len() % f != 0 {
        return Err(PipelineError::ShapeMismatch(format!("{} values are not whole {rows}x{cols} patches", inputs.len())));
    }
    let chunks: Vec<Vec<SoftLabel>> = inputs
        .par_chunks(EVAL_BATCH * f)
        .map(|chunk| {
            flush_denormals();
            let n = chunk.len() / f;
            let mut g = Graph::new(model.store(), Mode::Eval);
            let x = g.input(Tensor::new(&[n, rows, cols, 1], chunk.to_vec())?);
            let fwd = model.forward(&mut g, x, &mut ChaCha8Rng::seed_from_u64(0))?;
            let c = model.config().n_classes;
            g.value(fwd.probs).data().chunks(c).map(SoftLabel::from_unnormalized).collect()
        })
        .collect::<Result<_, PipelineError>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Predictions for instances scored by K members. Member k scores its own
/// instance list; all lists must name the same instances in the same order.
pub fn evaluate_instances(members: &[(&Model, &[Instance])]) -> Result<Vec<PredictionRecord>, PipelineError> {
    let (_, reference) = members.first().ok_or(PipelineError::EmptyInput)?;
    if reference.is_empty() {
        return Err(PipelineError::SplitEmpty);
    }
    for (_, insts) in members {
        let aligned = insts.len() == reference.len() && insts.iter().zip(reference.iter()).all(|(a, b)| a.key == b.key && a.label == b.label);
        if !aligned {
            return Err(PipelineError::ShapeMismatch("ensemble members disagree on the instance list".into()));
        }
    }
    let mut per_member: Vec<Vec<Vec<SoftLabel>>> = Vec::with_capacity(members.len());
    for (model, insts) in members {
        let (rows, cols) = (insts[0].rows, insts[0].cols);
        let flat: Vec<f32> = insts.iter().flat_map(|i| i.patches.iter().flatten().copied()).collect();
        let mut probs = predict_probs(model, &flat, rows, cols)?.into_iter();
        per_member.push(insts.iter().map(|i| probs.by_ref().take(i.patches.len()).collect()).collect());
    }
    reference
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let patch_probs: Vec<Vec<SoftLabel>> = per_member.iter().map(|m| m[i].clone()).collect();
            let member_probs = patch_probs.iter().map(|p| aggregate_patches(p)).collect::<Result<Vec<_>, _>>()?;
            let probs = ensemble(&member_probs)?;
            let predicted = predict_label(&probs);
            Ok(PredictionRecord { key: inst.key.clone(), true_class: inst.label, patch_probs, member_probs, probs, predicted })
        })
        .collect()
}

pub fn report_for(task: Task, records: &[PredictionRecord]) -> Result<EvalReport, PipelineError> {
    let mut m = ConfusionMatrix::for_task(task);
    for r in records {
        m.record(r.true_class, r.predicted)?;
    }
    Ok(EvalReport::from_matrix(task, m)?)
}

/// Scores a split with K (model, front-end) members read from the cache.
pub fn evaluate(
    manifest: &Manifest,
    task: Task,
    split: Split,
    members: &[(&Model, FrontEndKind)],
    cache_dir: &Path,
) -> Result<(EvalReport, Vec<PredictionRecord>), PipelineError> {
    for (model, _) in members {
        if model.config().n_classes != task.num_classes() {
            return Err(PipelineError::ShapeMismatch(format!("{}-class model for {task}", model.config().n_classes)));
        }
    }
    let sets = members.iter().map(|(_, kind)| load_instances(manifest, task, split, *kind, cache_dir)).collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(&Model, &[Instance])> = members.iter().zip(&sets).map(|((m, _), s)| (*m, s.as_slice())).collect();
    let records = evaluate_instances(&pairs)?;
    Ok((report_for(task, &records)?, records))
}

/// `key true pred p_1..p_C`, tab-separated, one instance per line.
pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), PipelineError> {
    let mut out = String::new();
    for r in records {
        write!(out, "{}\t{}\t{}", r.key, r.true_class, r.predicted).expect("string write");
        for p in r.probs.probs() {
            write!(out, "\t{p}").expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
