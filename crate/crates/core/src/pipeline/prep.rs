//! Per-task audio conditioning and the on-disk patch cache.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::eval::Instance;
use super::train::TrainingSet;
use super::PipelineError;
use crate::dataset::{read_wav, Manifest, Recording, Split, Task};
use crate::dsp::{bandpass, highpass, normalize_duration, peak_normalize, resample, AudioClip, DurationMode};
use crate::spectrogram::{read_patch_file, write_patch_file, FrontEnd, FrontEndKind, SpectrogramPatch, PATCH_SECONDS, PATCH_WIDTH};

/// Time-domain conditioning applied before the front-end.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub mode: DurationMode,
    /// Pass band; an upper edge at or above Nyquist degrades to a high-pass.
    pub band: Option<(f64, f64)>,
    pub peak_normalize: bool,
}

impl Conditioning {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Anomaly => {
                Self { sample_rate: 4000, duration_s: PATCH_SECONDS, mode: DurationMode::Exact, band: Some((100.0, 2000.0)), peak_normalize: true }
            }
            Task::Disease => Self { sample_rate: 16000, duration_s: PATCH_SECONDS, mode: DurationMode::AtLeast, band: None, peak_normalize: true },
        }
    }

    /// Conditions a clip already at `self.sample_rate`.
    pub fn apply(&self, clip: &AudioClip) -> Result<AudioClip, PipelineError> {
        let mut out = normalize_duration(clip, self.duration_s, self.mode)?;
        if let Some((lo, hi)) = self.band {
            out = if hi < f64::from(out.sample_rate()) / 2.0 { bandpass(&out, lo, hi)? } else { highpass(&out, lo)? };
        }
        if self.peak_normalize {
            out = peak_normalize(&out);
        }
        Ok(out)
    }
}

/// Conditioned clips of one recording: one per cycle for the anomaly task,
/// one for the whole recording otherwise.
pub fn condition_recording(recording: &Recording, task: Task, cond: &Conditioning) -> Result<Vec<AudioClip>, PipelineError> {
    let key = &recording.meta.recording_key;
    let raw = read_wav(&recording.meta.audio_path, key)?;
    let audio = resample(&raw, cond.sample_rate)?;
    match task {
        Task::Disease => Ok(vec![cond.apply(&audio)?]),
        Task::Anomaly => recording
            .cycles
            .iter()
            .enumerate()
            .map(|(ci, c)| cond.apply(&audio.segment(c.onset_s, c.offset_s, ci)).map_err(|e| e.context(format!("{key} cycle {ci}"))))
            .collect(),
    }
}

/// `<cache>/<task>/<frontend>/<recording_key>.rspc`
pub fn cache_path(cache_dir: &Path, task: Task, kind: FrontEndKind, recording_key: &str) -> PathBuf {
    cache_dir.join(task.token()).join(kind.token()).join(format!("{recording_key}.rspc"))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrepReport {
    pub recordings: usize,
    pub instances: usize,
    pub patches: usize,
}

fn patches_for(recording: &Recording, task: Task, frontend: &FrontEnd, cond: &Conditioning) -> Result<(usize, Vec<SpectrogramPatch>), PipelineError> {
    let clips = condition_recording(recording, task, cond)?;
    let mut all = Vec::new();
    for clip in &clips {
        let mut p = frontend.patches(clip)?;
        // One patch per cycle keeps the cache index equal to the cycle index.
        if task == Task::Anomaly {
            p.truncate(1);
        }
        all.extend(p);
    }
    Ok((clips.len(), all))
}

/// Writes the patch cache for every recording of the manifest, in parallel
/// on the current rayon pool.
pub fn prep_manifest(
    manifest: &Manifest,
    task: Task,
    frontend: &FrontEnd,
    cond: &Conditioning,
    cache_dir: &Path,
) -> Result<PrepReport, PipelineError> {
    let dir = cache_dir.join(task.token()).join(frontend.kind.token());
    std::fs::create_dir_all(&dir)?;
    let counts: Vec<(usize, usize)> = manifest
        .recordings()
        .par_iter()
        .filter(|r| task == Task::Disease || !r.cycles.is_empty())
        .map(|r| {
            let key = &r.meta.recording_key;
            let (instances, patches) = patches_for(r, task, frontend, cond).map_err(|e| e.context(key.clone()))?;
            write_patch_file(&cache_path(cache_dir, task, frontend.kind, key), &patches, cond.peak_normalize)?;
            log::debug!("cached {key}: {} patches", patches.len());
            Ok((instances, patches.len()))
        })
        .collect::<Result<_, PipelineError>>()?;
    Ok(PrepReport { recordings: counts.len(), instances: counts.iter().map(|c| c.0).sum(), patches: counts.iter().map(|c| c.1).sum() })
}

/// Cached patches of every instance in a split, in manifest order. Anomaly
/// instances are keyed `recording:cycle`.
pub fn load_instances(manifest: &Manifest, task: Task, split: Split, kind: FrontEndKind, cache_dir: &Path) -> Result<Vec<Instance>, PipelineError> {
    let examples = manifest.examples(task, split);
    let mut out = Vec::with_capacity(examples.len());
    let mut loaded: Option<(usize, Vec<SpectrogramPatch>)> = None;
    for ex in examples {
        let r = &manifest.recordings()[ex.recording];
        let key = &r.meta.recording_key;
        if loaded.as_ref().map(|l| l.0) != Some(ex.recording) {
            let path = cache_path(cache_dir, task, kind, key);
            if !path.is_file() {
                return Err(PipelineError::CacheMissing(path));
            }
            let (header, patches) = read_patch_file(&path, PATCH_WIDTH, crate::dsp::ClipSource { recording_key: key.clone(), cycle: None })?;
            if header.kind != kind {
                return Err(PipelineError::ShapeMismatch(format!("{} holds {} patches", path.display(), header.kind)));
            }
            loaded = Some((ex.recording, patches));
        }
        let patches = &loaded.as_ref().expect("loaded above").1;
        let (name, selected) = match ex.cycle {
            Some(ci) => {
                let p = patches.get(ci).ok_or_else(|| PipelineError::ShapeMismatch(format!("{key}: no cached patch for cycle {ci}")))?;
                (format!("{key}:{ci}"), vec![p.values.clone()])
            }
            None => (key.clone(), patches.iter().map(|p| p.values.clone()).collect()),
        };
        let (rows, cols) = patches.first().map_or((0, 0), |p| (p.rows, p.cols));
        out.push(Instance { key: name, label: ex.label, patches: selected, rows, cols });
    }
    Ok(out)
}

/// Flattens instances into one training example per patch, each carrying
/// its instance label.
pub fn training_set_from_instances(instances: &[Instance], n_classes: usize) -> Result<TrainingSet, PipelineError> {
    let first = instances.first().ok_or(PipelineError::SplitEmpty)?;
    let mut set = TrainingSet::new(first.rows, first.cols, n_classes);
    for inst in instances {
        for p in &inst.patches {
            set.push(p, inst.label)?;
        }
    }
    Ok(set)
}

pub fn load_training_set(manifest: &Manifest, task: Task, kind: FrontEndKind, cache_dir: &Path) -> Result<TrainingSet, PipelineError> {
    let instances = load_instances(manifest, task, Split::Train, kind, cache_dir)?;
    training_set_from_instances(&instances, task.num_classes())
}
