//! Continuous wavelet transform with analytic mother wavelets, computed per
//! scale by filtering in the frequency domain.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{log_spaced, FrontEndKind, SpectrogramError, SpectrogramImage};
use crate::dsp::AudioClip;

/// Mother wavelet families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mother {
    /// Generalized Morse wavelet with γ = 3, β = 20.
    Morse,
    /// Analytic Morlet with centre frequency 6 rad/s.
    Amor,
}

pub const MORSE_GAMMA: f64 = 3.0;
pub const MORSE_BETA: f64 = 20.0;
pub const AMOR_CENTER: f64 = 6.0;

impl Mother {
    /// Peak radian frequency of the unit-scale wavelet.
    pub fn peak_frequency(self) -> f64 {
        match self {
            Mother::Morse => (MORSE_BETA / MORSE_GAMMA).powf(1.0 / MORSE_GAMMA),
            Mother::Amor => AMOR_CENTER,
        }
    }

    /// Fourier transform of the unit-scale wavelet; zero for ω ≤ 0, peak
    /// value 2 at [`Mother::peak_frequency`].
    pub fn spectrum(self, omega: f64) -> f64 {
        if omega <= 0.0 {
            return 0.0;
        }
        match self {
            Mother::Morse => {
                let wp = self.peak_frequency();
                let log = MORSE_BETA * (omega / wp).ln() - (omega.powf(MORSE_GAMMA) - MORSE_BETA / MORSE_GAMMA);
                2.0 * log.exp()
            }
            Mother::Amor => 2.0 * (-(omega - AMOR_CENTER).powi(2) / 2.0).exp(),
        }
    }

    pub fn front_end(self) -> FrontEndKind {
        match self {
            Mother::Morse => FrontEndKind::ScalMorse,
            Mother::Amor => FrontEndKind::ScalAmor,
        }
    }
}

/// Magnitude scalogram at `n_freq` log-spaced centre frequencies in
/// `[fmin, fmax]`, one column per input sample. A unit-amplitude sinusoid
/// at a centre frequency yields magnitude 1 on that row.
pub fn cwt_scalogram(clip: &AudioClip, mother: Mother, fmin: f64, fmax: f64, n_freq: usize) -> Result<SpectrogramImage, SpectrogramError> {
    let fs = f64::from(clip.sample_rate());
    if !(fmin > 0.0 && fmin < fmax && fmax <= fs / 2.0 && n_freq >= 2) {
        return Err(SpectrogramError::BandOutOfRange { fmin, fmax, rate: clip.sample_rate() });
    }
    let freqs = log_spaced(fmin, fmax, n_freq);
    let x = clip.samples();
    let n = x.len();
    if n == 0 {
        return Err(SpectrogramError::ClipTooShort { len: 0, min: 1 });
    }
    // Half-sample symmetric extension on both sides.
    let pad = n / 2;
    let total = n + 2 * pad;
    let mut buf: Vec<Complex64> = Vec::with_capacity(total);
    buf.extend(x[..pad].iter().rev().map(|&v| Complex64::new(f64::from(v), 0.0)));
    buf.extend(x.iter().map(|&v| Complex64::new(f64::from(v), 0.0)));
    buf.extend(x[n - pad..].iter().rev().map(|&v| Complex64::new(f64::from(v), 0.0)));

    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(total).process(&mut buf);
    let inverse = planner.plan_fft_inverse(total);
    let spectrum = buf;

    let half = total / 2;
    let wp = mother.peak_frequency();
    let mut values = vec![0.0f32; n_freq * n];
    let mut work = vec![Complex64::new(0.0, 0.0); total];
    let mut scratch = vec![Complex64::new(0.0, 0.0); inverse.get_inplace_scratch_len()];
    for (row, &f) in values.chunks_exact_mut(n).zip(&freqs) {
        let scale = wp / (2.0 * PI * f / fs);
        work.iter_mut().for_each(|w| *w = Complex64::new(0.0, 0.0));
        for k in 1..=half {
            let omega = 2.0 * PI * k as f64 / total as f64;
            let g = mother.spectrum(scale * omega);
            if g > 0.0 {
                work[k] = spectrum[k] * g;
            }
        }
        inverse.process_with_scratch(&mut work, &mut scratch);
        let norm = 1.0 / total as f64;
        for (out, c) in row.iter_mut().zip(&work[pad..pad + n]) {
            *out = (c.norm() * norm) as f32;
        }
    }
    SpectrogramImage::new(values, n_freq, n, mother.front_end(), freqs, clip.source().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, secs: f64, amp: f64) -> AudioClip {
        let n = (secs * f64::from(rate)) as usize;
        let s = (0..n).map(|i| (amp * (2.0 * PI * freq * i as f64 / f64::from(rate)).cos()) as f32).collect();
        AudioClip::new(s, rate, "t", None).unwrap()
    }

    #[test]
    fn mother_spectra_peak_at_two() {
        for m in [Mother::Morse, Mother::Amor] {
            let wp = m.peak_frequency();
            assert!((m.spectrum(wp) - 2.0).abs() < 1e-12);
            assert!(m.spectrum(wp * 0.9) < 2.0 && m.spectrum(wp * 1.1) < 2.0);
            assert_eq!(m.spectrum(-1.0), 0.0);
        }
        assert!((Mother::Morse.peak_frequency() - (20.0f64 / 3.0).cbrt()).abs() < 1e-12);
    }

    #[test]
    fn tone_localizes_within_one_bin() {
        for mother in [Mother::Morse, Mother::Amor] {
            for f in [200.0, 500.0, 1000.0, 1800.0] {
                let img = cwt_scalogram(&tone(f, 4000, 1.0, 1.0), mother, 100.0, 2000.0, 124).unwrap();
                let best = img.row_means().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                let nearest = img.freq_axis().iter().enumerate().min_by(|a, b| (a.1 - f).abs().total_cmp(&(b.1 - f).abs())).unwrap().0;
                assert!(best.abs_diff(nearest) <= 1, "{mother:?} {f} Hz: row {best} vs {nearest}");
            }
        }
    }

    #[test]
    fn unit_tone_has_unit_magnitude_on_its_row() {
        let img = cwt_scalogram(&tone(500.0, 4000, 1.0, 1.0), Mother::Morse, 500.0, 1000.0, 8).unwrap();
        let row = img.row(0);
        let mid = &row[1000..3000];
        assert!(mid.iter().all(|v| (v - 1.0).abs() < 0.01), "{:?}", &mid[..4]);
    }

    #[test]
    fn zero_clip_and_homogeneity() {
        let z = AudioClip::new(vec![0.0; 800], 4000, "z", None).unwrap();
        assert!(cwt_scalogram(&z, Mother::Amor, 100.0, 2000.0, 16).unwrap().values().iter().all(|&v| v == 0.0));
        let t = tone(700.0, 4000, 0.2, 0.4);
        let scaled = AudioClip::new(t.samples().iter().map(|v| -3.0 * v).collect(), 4000, "t", None).unwrap();
        let (a, b) =
            (cwt_scalogram(&t, Mother::Morse, 100.0, 2000.0, 16).unwrap(), cwt_scalogram(&scaled, Mother::Morse, 100.0, 2000.0, 16).unwrap());
        let peak = b.values().iter().fold(0.0f32, |m, v| m.max(*v));
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((3.0 * x - y).abs() <= 1e-6 * peak.max(1e-30) + 1e-6 * y.abs(), "{x} {y}");
        }
    }

    #[test]
    fn axis_and_shape() {
        let img = cwt_scalogram(&tone(300.0, 4000, 0.1, 1.0), Mother::Morse, 100.0, 2000.0, 124).unwrap();
        assert_eq!((img.rows(), img.cols()), (124, 400));
        let ax = img.freq_axis();
        assert!(ax.windows(2).all(|w| w[1] > w[0]));
        assert!((ax[0] - 100.0).abs() <= 0.1 && (ax[123] - 2000.0).abs() <= 2.0);
    }

    #[test]
    fn band_is_validated() {
        let t = tone(300.0, 4000, 0.1, 1.0);
        assert!(matches!(cwt_scalogram(&t, Mother::Morse, 100.0, 2001.0, 124), Err(SpectrogramError::BandOutOfRange { .. })));
        assert!(matches!(cwt_scalogram(&t, Mother::Morse, 300.0, 200.0, 124), Err(SpectrogramError::BandOutOfRange { .. })));
    }
}
