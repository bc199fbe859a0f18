//! Time-domain conditioning of audio clips.

mod filter;
mod resample;

pub use filter::{bandpass, butterworth_bandpass, butterworth_highpass, highpass, magnitude, sosfiltfilt, Biquad, BUTTERWORTH_ORDER};
pub use resample::resample;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DspError {
    #[error("clip is empty")]
    EmptyClip,
    #[error("band [{lo}, {hi}] Hz invalid at sample rate {rate} Hz")]
    BandOutOfRange { lo: f64, hi: f64, rate: u32 },
    #[error("sample rate must be positive")]
    BadRate,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("target duration must be positive")]
    BadDuration,
}

/// Where a clip came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClipSource {
    pub recording_key: String,
    pub cycle: Option<usize>,
}

/// Mono samples at a fixed rate. Samples are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
    source: ClipSource,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32, recording_key: &str, cycle: Option<usize>) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::BadRate);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::NonFinite(i));
        }
        Ok(Self { samples, sample_rate, source: ClipSource { recording_key: recording_key.to_string(), cycle } })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source(&self) -> &ClipSource {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Same source, new samples and rate. Non-finite values are a bug in the
    /// caller's transform.
    pub(crate) fn with_samples(&self, samples: Vec<f32>, sample_rate: u32) -> Self {
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self { samples, sample_rate, source: self.source.clone() }
    }

    /// Samples between two instants, clamped to the clip.
    pub fn segment(&self, onset_s: f64, offset_s: f64, cycle: usize) -> Self {
        let rate = f64::from(self.sample_rate);
        let a = ((onset_s * rate).round().max(0.0) as usize).min(self.len());
        let b = ((offset_s * rate).round().max(0.0) as usize).clamp(a, self.len());
        let mut out = self.with_samples(self.samples[a..b].to_vec(), self.sample_rate);
        out.source.cycle = Some(cycle);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DurationMode {
    /// Repeat cyclically, then truncate to exactly the target.
    Exact,
    /// Repeat cyclically until at least the target; longer clips pass
    /// through.
    AtLeast,
}

pub fn normalize_duration(clip: &AudioClip, target_s: f64, mode: DurationMode) -> Result<AudioClip, DspError> {
    if clip.is_empty() {
        return Err(DspError::EmptyClip);
    }
    if !(target_s > 0.0) {
        return Err(DspError::BadDuration);
    }
    let target = (target_s * f64::from(clip.sample_rate)).round() as usize;
    let n = clip.len();
    let out_len = match mode {
        DurationMode::Exact => target,
        DurationMode::AtLeast if n >= target => return Ok(clip.clone()),
        DurationMode::AtLeast => n * target.div_ceil(n),
    };
    let samples = clip.samples.iter().copied().cycle().take(out_len).collect();
    Ok(clip.with_samples(samples, clip.sample_rate))
}

/// Scales so that max |x| = 1; silent clips are returned unchanged.
pub fn peak_normalize(clip: &AudioClip) -> AudioClip {
    let peak = clip.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    if peak == 0.0 {
        return clip.clone();
    }
    clip.with_samples(clip.samples.iter().map(|s| s / peak).collect(), clip.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(n: usize, rate: u32) -> AudioClip {
        AudioClip::new((0..n).map(|i| i as f32).collect(), rate, "k", None).unwrap()
    }

    #[test]
    fn exact_duration_repeats_then_truncates() {
        let c = clip(12_000, 4000);
        let out = normalize_duration(&c, 10.0, DurationMode::Exact).unwrap();
        assert_eq!(out.len(), 40_000);
        for k in 0..3 {
            assert_eq!(&out.samples()[k * 12_000..(k + 1) * 12_000], c.samples());
        }
        assert_eq!(&out.samples()[36_000..], &c.samples()[..4000]);
    }

    #[test]
    fn at_least_leaves_long_clips_and_identity_cases() {
        let long = clip(48_000, 4000);
        assert_eq!(normalize_duration(&long, 10.0, DurationMode::AtLeast).unwrap(), long);
        let ten = clip(40_000, 4000);
        assert_eq!(normalize_duration(&ten, 10.0, DurationMode::Exact).unwrap(), ten);
        let short = normalize_duration(&clip(15_000, 4000), 10.0, DurationMode::AtLeast).unwrap();
        assert_eq!(short.len(), 45_000);
    }

    #[test]
    fn empty_clip_is_rejected() {
        let c = AudioClip::new(vec![], 4000, "k", None).unwrap();
        assert_eq!(normalize_duration(&c, 10.0, DurationMode::Exact), Err(DspError::EmptyClip));
    }

    #[test]
    fn clip_rejects_bad_input() {
        assert_eq!(AudioClip::new(vec![0.0], 0, "k", None), Err(DspError::BadRate));
        assert_eq!(AudioClip::new(vec![0.0, f32::NAN], 8, "k", None), Err(DspError::NonFinite(1)));
    }

    #[test]
    fn peak_normalization() {
        let c = AudioClip::new(vec![0.5, -2.0, 1.0], 4, "k", None).unwrap();
        assert_eq!(peak_normalize(&c).samples(), &[0.25, -1.0, 0.5]);
        let z = AudioClip::new(vec![0.0; 3], 4, "k", None).unwrap();
        assert_eq!(peak_normalize(&z), z);
    }

    #[test]
    fn segment_takes_cycle_bounds() {
        let c = clip(4000, 1000);
        let s = c.segment(0.5, 1.25, 3);
        assert_eq!(s.len(), 750);
        assert_eq!(s.samples()[0], 500.0);
        assert_eq!(s.source().cycle, Some(3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn exact_length_for_any_input(n in 1usize..=120) {
            let c = AudioClip::new(vec![1.0; n], 4, "k", None).unwrap();
            prop_assert_eq!(normalize_duration(&c, 10.0, DurationMode::Exact).unwrap().len(), 40);
        }
    }
}
