//! Seeded synthetic audio: a two-class tone-burst vs noise set, and a small
//! corpus in the ICBHI directory layout.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::eval::Instance;
use super::PipelineError;
use crate::dataset::{render_annotations, write_wav, CycleAnnotation};
use crate::dsp::{peak_normalize, AudioClip};
use crate::spectrogram::FrontEnd;

pub const TONE_CLASS: usize = 0;
pub const NOISE_CLASS: usize = 1;

fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64)
}

/// Hann-windowed sinusoidal bursts at one random frequency in
/// [250, 1500] Hz over a faint noise floor.
pub fn tone_bursts(rng: &mut impl Rng, rate: u32, seconds: f64) -> Vec<f32> {
    let n = (seconds * f64::from(rate)).round() as usize;
    let freq = rng.gen_range(250.0..1500.0);
    let mut x: Vec<f64> = (0..n).map(|_| 0.02 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut t = rng.gen_range(0.0..0.5);
    while t < seconds {
        let len = rng.gen_range(0.3..1.0);
        let (a, b) = ((t * f64::from(rate)) as usize, (((t + len) * f64::from(rate)) as usize).min(n));
        let phase = rng.gen_range(0.0..2.0 * PI);
        for (k, v) in x[a..b].iter_mut().enumerate() {
            let env = (PI * k as f64 / (b - a) as f64).sin().powi(2);
            *v += env * (2.0 * PI * freq * (a + k) as f64 / f64::from(rate) + phase).sin();
        }
        t += len + rng.gen_range(0.2..1.0);
    }
    x.into_iter().map(|v| v as f32).collect()
}

/// White Gaussian noise with a slow random amplitude envelope.
pub fn broadband_noise(rng: &mut impl Rng, rate: u32, seconds: f64) -> Vec<f32> {
    let n = (seconds * f64::from(rate)).round() as usize;
    let (mod_freq, depth, phase) = (rng.gen_range(0.1..1.0), rng.gen_range(0.0..0.5), rng.gen_range(0.0..2.0 * PI));
    (0..n)
        .map(|i| {
            let env = 1.0 - depth * (0.5 + 0.5 * (2.0 * PI * mod_freq * i as f64 / f64::from(rate) + phase).sin());
            (0.5 * env * rng.sample::<f64, _>(StandardNormal)) as f32
        })
        .collect()
}

/// `n` peak-normalized clips with labels alternating tone, noise, tone, ...
/// Clip `i` depends only on `(seed, i)`.
pub fn two_class_clips(n: usize, rate: u32, seconds: f64, seed: u64) -> Vec<(AudioClip, usize)> {
    (0..n)
        .map(|i| {
            let mut rng = example_rng(seed, i);
            let label = i % 2;
            let samples = if label == TONE_CLASS { tone_bursts(&mut rng, rate, seconds) } else { broadband_noise(&mut rng, rate, seconds) };
            let clip = AudioClip::new(samples, rate, &format!("synth-{i:04}"), None).expect("synthetic samples are finite");
            (peak_normalize(&clip), label)
        })
        .collect()
}

/// Front-end patches of each clip as evaluation instances.
pub fn instances_from_clips(clips: &[(AudioClip, usize)], frontend: &FrontEnd) -> Result<Vec<Instance>, PipelineError> {
    clips
        .iter()
        .map(|(clip, label)| {
            let patches = frontend.patches(clip)?;
            Ok(Instance {
                key: clip.source().recording_key.clone(),
                label: *label,
                rows: patches[0].rows,
                cols: patches[0].cols,
                patches: patches.into_iter().map(|p| p.values).collect(),
            })
        })
        .collect()
}

/// Paths of a corpus written by [`write_corpus`].
#[derive(Debug, Clone)]
pub struct Corpus {
    pub data_dir: PathBuf,
    pub split_file: PathBuf,
    pub diagnosis_file: PathBuf,
}

const CORPUS_DIAGNOSES: [&str; 4] = ["COPD", "URTI", "Healthy", "Pneumonia"];
const CORPUS_RATE: u32 = 8000;
const CORPUS_SECONDS: f64 = 12.0;
const CORPUS_CYCLES: [(f64, f64); 3] = [(0.4, 3.6), (4.0, 7.5), (8.0, 11.2)];

/// Writes `n_patients x recordings_per_patient` WAV + annotation pairs plus
/// split and diagnosis tables. Patients alternate train and test; crackles
/// add clicks and wheezes add a sustained tone to their cycle.
pub fn write_corpus(dir: &Path, n_patients: usize, recordings_per_patient: usize, seed: u64) -> Result<Corpus, PipelineError> {
    let data_dir = dir.join("audio");
    fs::create_dir_all(&data_dir)?;
    let mut split = String::new();
    let mut diagnosis = String::new();
    for p in 0..n_patients {
        let pid = 101 + p;
        let side = if p % 2 == 0 { "train" } else { "test" };
        diagnosis.push_str(&format!("{pid}\t{}\n", CORPUS_DIAGNOSES[p % CORPUS_DIAGNOSES.len()]));
        for r in 0..recordings_per_patient {
            let key = format!("{pid}_{}b1_Al_sc_Meditron", r + 1);
            let mut rng = example_rng(seed, p * 1000 + r);
            let n = (CORPUS_SECONDS * f64::from(CORPUS_RATE)) as usize;
            let mut x: Vec<f32> = (0..n).map(|_| 0.05 * rng.sample::<f32, _>(StandardNormal)).collect();
            let mut cycles = Vec::new();
            for &(on, off) in &CORPUS_CYCLES {
                let (crackle, wheeze) = (rng.gen_bool(0.4), rng.gen_bool(0.4));
                let (a, b) = ((on * f64::from(CORPUS_RATE)) as usize, (off * f64::from(CORPUS_RATE)) as usize);
                for (k, v) in x[a..b].iter_mut().enumerate() {
                    let t = k as f64 / f64::from(CORPUS_RATE);
                    *v += (0.3 * (2.0 * PI * 0.5 * t).sin().abs()) as f32;
                    if wheeze {
                        *v += (0.4 * (2.0 * PI * 600.0 * t).sin()) as f32;
                    }
                    if crackle && k % 1700 < 8 {
                        *v += 0.8;
                    }
                }
                cycles.push(CycleAnnotation { onset_s: on, offset_s: off, crackle, wheeze });
            }
            let clip = AudioClip::new(x, CORPUS_RATE, &key, None)?;
            write_wav(&data_dir.join(format!("{key}.wav")), &clip)?;
            fs::write(data_dir.join(format!("{key}.txt")), render_annotations(&cycles))?;
            split.push_str(&format!("{key}\t{side}\n"));
        }
    }
    let split_file = dir.join("split.txt");
    let diagnosis_file = dir.join("diagnosis.txt");
    fs::write(&split_file, split)?;
    fs::write(&diagnosis_file, diagnosis)?;
    Ok(Corpus { data_dir, split_file, diagnosis_file })
}
