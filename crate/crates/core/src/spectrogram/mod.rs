//! Time-frequency front-ends and the fixed-size patches fed to the models.

mod cache;
mod cwt;
mod gammatone;

use std::fmt;
use std::str::FromStr;

pub use cache::{read_patch_file, write_patch_file, CacheHeader, PATCH_MAGIC, PATCH_VERSION};
pub use cwt::{cwt_scalogram, Mother, AMOR_CENTER, MORSE_BETA, MORSE_GAMMA};
pub use gammatone::{erb, erb_rate, erb_space, frame_count, gammatonegram, ERB_BANDWIDTH, GAMMATONE_ORDER};

use crate::dsp::{AudioClip, ClipSource};

pub const N_FREQ: usize = 124;
pub const PATCH_WIDTH: usize = 154;
/// Audio duration spanned by one patch width.
pub const PATCH_SECONDS: f64 = 10.0;
pub const LOG_EPS: f64 = 1e-6;
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum SpectrogramError {
    #[error("band [{fmin}, {fmax}] Hz invalid at sample rate {rate} Hz")]
    BandOutOfRange { fmin: f64, fmax: f64, rate: u32 },
    #[error("clip of {len} samples is shorter than {min}")]
    ClipTooShort { len: usize, min: usize },
    #[error("window {window} must exceed hop {hop} > 0")]
    BadFraming { window: usize, hop: usize },
    #[error("image of width {width} is narrower than a patch ({patch})")]
    ImageTooNarrow { width: usize, patch: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("patch cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrontEndKind {
    ScalMorse,
    ScalAmor,
    Gamma,
}

impl FrontEndKind {
    pub const ALL: [FrontEndKind; 3] = [FrontEndKind::ScalMorse, FrontEndKind::ScalAmor, FrontEndKind::Gamma];

    pub fn token(self) -> &'static str {
        match self {
            FrontEndKind::ScalMorse => "scal-morse",
            FrontEndKind::ScalAmor => "scal-amor",
            FrontEndKind::Gamma => "gamma",
        }
    }

    /// Cache header code.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code)).copied()
    }
}

impl fmt::Display for FrontEndKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for FrontEndKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.token() == s).ok_or_else(|| format!("unknown front-end `{s}`"))
    }
}

/// Row-major `rows x cols` magnitudes, rows ascending in frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramImage {
    values: Vec<f32>,
    rows: usize,
    cols: usize,
    kind: FrontEndKind,
    freq_axis: Vec<f64>,
    source: ClipSource,
}

impl SpectrogramImage {
    pub fn new(
        values: Vec<f32>,
        rows: usize,
        cols: usize,
        kind: FrontEndKind,
        freq_axis: Vec<f64>,
        source: ClipSource,
    ) -> Result<Self, SpectrogramError> {
        if values.len() != rows * cols || freq_axis.len() != rows {
            return Err(SpectrogramError::Shape(format!("{} values, {} freqs for {rows}x{cols}", values.len(), freq_axis.len())));
        }
        Ok(Self { values, rows, cols, kind, freq_axis, source })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> FrontEndKind {
        self.kind
    }

    pub fn freq_axis(&self) -> &[f64] {
        &self.freq_axis
    }

    pub fn source(&self) -> &ClipSource {
        &self.source
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_means(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).iter().map(|&v| f64::from(v)).sum::<f64>() / self.cols.max(1) as f64).collect()
    }
}

/// One `rows x width` slice of an image, standardized before use.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramPatch {
    pub values: Vec<f32>,
    pub rows: usize,
    pub cols: usize,
    pub kind: FrontEndKind,
    pub source: ClipSource,
}

pub(crate) fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| match i {
            0 => lo,
            _ if i + 1 == n => hi,
            _ => lo * (hi / lo).powf(i as f64 / (n - 1) as f64),
        })
        .collect()
}

/// Linear interpolation along time with the first and last columns pinned.
pub fn rescale_time(img: &SpectrogramImage, target: usize) -> SpectrogramImage {
    assert!(img.cols >= 1 && target >= 1, "rescale needs nonempty widths");
    if img.cols == target {
        return img.clone();
    }
    let step = if target > 1 { (img.cols - 1) as f64 / (target - 1) as f64 } else { 0.0 };
    let taps: Vec<(usize, usize, f64)> = (0..target)
        .map(|j| {
            let pos = j as f64 * step;
            let i0 = (pos.floor() as usize).min(img.cols - 1);
            let i1 = (i0 + 1).min(img.cols - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect();
    let mut values = Vec::with_capacity(img.rows * target);
    for r in 0..img.rows {
        let row = img.row(r);
        values.extend(taps.iter().map(|&(i0, i1, t)| ((1.0 - t) * f64::from(row[i0]) + t * f64::from(row[i1])) as f32));
    }
    SpectrogramImage { values, rows: img.rows, cols: target, kind: img.kind, freq_axis: img.freq_axis.clone(), source: img.source.clone() }
}

/// Columns for an image of `duration_s` under the fixed time scale.
pub fn scaled_width(duration_s: f64) -> usize {
    ((duration_s * PATCH_WIDTH as f64 / PATCH_SECONDS).round() as usize).max(1)
}

/// Consecutive non-overlapping patches; a trailing remainder is dropped.
pub fn split_patches(img: &SpectrogramImage, width: usize) -> Result<Vec<SpectrogramPatch>, SpectrogramError> {
    if width == 0 || img.cols < width {
        return Err(SpectrogramError::ImageTooNarrow { width: img.cols, patch: width });
    }
    Ok((0..img.cols / width)
        .map(|p| {
            let mut values = Vec::with_capacity(img.rows * width);
            for r in 0..img.rows {
                values.extend_from_slice(&img.row(r)[p * width..(p + 1) * width]);
            }
            SpectrogramPatch { values, rows: img.rows, cols: width, kind: img.kind, source: img.source.clone() }
        })
        .collect())
}

/// `log(1 + x / eps)`, elementwise.
pub fn log_compress(values: &mut [f32]) {
    for v in values {
        *v = (f64::from(*v) / LOG_EPS).ln_1p() as f32;
    }
}

/// Zero mean and unit (population) variance; the deviation is floored so
/// constant input maps to zeros.
pub fn standardize(values: &mut [f32]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = values.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / var.sqrt().max(STD_FLOOR);
    for v in values {
        *v = ((f64::from(*v) - mean) * inv) as f32;
    }
}

/// Front-end settings shared by both tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontEnd {
    pub kind: FrontEndKind,
    pub fmin: f64,
    pub fmax: f64,
    pub n_freq: usize,
    pub window: usize,
    pub hop: usize,
}

impl FrontEnd {
    pub fn new(kind: FrontEndKind) -> Self {
        Self { kind, fmin: 100.0, fmax: 2000.0, n_freq: N_FREQ, window: 512, hop: 256 }
    }

    pub fn image(&self, clip: &AudioClip) -> Result<SpectrogramImage, SpectrogramError> {
        match self.kind {
            FrontEndKind::ScalMorse => cwt_scalogram(clip, Mother::Morse, self.fmin, self.fmax, self.n_freq),
            FrontEndKind::ScalAmor => cwt_scalogram(clip, Mother::Amor, self.fmin, self.fmax, self.n_freq),
            FrontEndKind::Gamma => gammatonegram(clip, self.window, self.hop, self.n_freq, self.fmin, self.fmax),
        }
    }

    /// Image, time rescale, split, log compression and standardization.
    pub fn patches(&self, clip: &AudioClip) -> Result<Vec<SpectrogramPatch>, SpectrogramError> {
        let img = self.image(clip)?;
        let img = rescale_time(&img, scaled_width(clip.duration_s()));
        let mut patches = split_patches(&img, PATCH_WIDTH)?;
        for p in &mut patches {
            log_compress(&mut p.values);
            standardize(&mut p.values);
        }
        Ok(patches)
    }
}
