//! Fourth-order gammatone filterbank on the ERB-rate scale.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::{FrontEndKind, SpectrogramError, SpectrogramImage};
use crate::dsp::AudioClip;

pub const GAMMATONE_ORDER: usize = 4;
/// Bandwidth factor relating a fourth-order gammatone to the ERB.
pub const ERB_BANDWIDTH: f64 = 1.019;

/// Equivalent rectangular bandwidth in Hz at `f` Hz.
pub fn erb(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

/// ERB-rate (number of ERBs below `f`).
pub fn erb_rate(f: f64) -> f64 {
    21.4 * (4.37e-3 * f + 1.0).log10()
}

pub fn erb_rate_inverse(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 4.37e-3
}

/// `n` centre frequencies equally spaced in ERB-rate, ascending, with the
/// ends at exactly `fmin` and `fmax`.
pub fn erb_space(fmin: f64, fmax: f64, n: usize) -> Vec<f64> {
    let (a, b) = (erb_rate(fmin), erb_rate(fmax));
    (0..n)
        .map(|i| match i {
            0 => fmin,
            _ if i + 1 == n => fmax,
            _ => erb_rate_inverse(a + (b - a) * i as f64 / (n - 1) as f64),
        })
        .collect()
}

/// Real output of one filter: cascaded complex one-pole sections centred on
/// `fc`, with unit gain at `fc`.
fn filter(x: &[f32], fc: f64, fs: f64) -> Vec<f64> {
    let decay = (-2.0 * PI * ERB_BANDWIDTH * erb(fc) / fs).exp();
    let pole = Complex64::from_polar(decay, 2.0 * PI * fc / fs);
    let gain = 1.0 - decay;
    let mut state = [Complex64::new(0.0, 0.0); GAMMATONE_ORDER];
    x.iter()
        .map(|&v| {
            let mut input = Complex64::new(f64::from(v), 0.0);
            for s in state.iter_mut() {
                *s = input * gain + pole * *s;
                input = *s;
            }
            2.0 * input.re
        })
        .collect()
}

/// Number of complete frames.
pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / hop + 1
    }
}

/// Per-frame RMS of each filter output, rows ascending in centre frequency.
pub fn gammatonegram(
    clip: &AudioClip,
    window: usize,
    hop: usize,
    n_filters: usize,
    fmin: f64,
    fmax: f64,
) -> Result<SpectrogramImage, SpectrogramError> {
    let fs = f64::from(clip.sample_rate());
    if !(window > hop && hop > 0) {
        return Err(SpectrogramError::BadFraming { window, hop });
    }
    if !(fmin > 0.0 && fmin < fmax && fmax <= fs / 2.0 && n_filters >= 2) {
        return Err(SpectrogramError::BandOutOfRange { fmin, fmax, rate: clip.sample_rate() });
    }
    if clip.len() < window {
        return Err(SpectrogramError::ClipTooShort { len: clip.len(), min: window });
    }
    let freqs = erb_space(fmin, fmax, n_filters);
    let frames = frame_count(clip.len(), window, hop);
    let mut values = vec![0.0f32; n_filters * frames];
    for (row, &fc) in values.chunks_exact_mut(frames).zip(&freqs) {
        let y = filter(clip.samples(), fc, fs);
        for (j, out) in row.iter_mut().enumerate() {
            let seg = &y[j * hop..j * hop + window];
            *out = (seg.iter().map(|v| v * v).sum::<f64>() / window as f64).sqrt() as f32;
        }
    }
    SpectrogramImage::new(values, n_filters, frames, FrontEndKind::Gamma, freqs, clip.source().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, n: usize, amp: f64) -> AudioClip {
        let s = (0..n).map(|i| (amp * (2.0 * PI * freq * i as f64 / f64::from(rate)).sin()) as f32).collect();
        AudioClip::new(s, rate, "t", None).unwrap()
    }

    #[test]
    fn frame_count_formula() {
        assert_eq!(frame_count(40_000, 512, 256), 155);
        let img = gammatonegram(&tone(500.0, 4000, 40_000, 1.0), 512, 256, 124, 100.0, 2000.0).unwrap();
        assert_eq!((img.rows(), img.cols()), (124, 155));
        for len in [512, 767, 768, 1000] {
            let img = gammatonegram(&tone(500.0, 4000, len, 1.0), 512, 256, 8, 100.0, 2000.0).unwrap();
            assert_eq!(img.cols(), (len - 512) / 256 + 1);
        }
    }

    #[test]
    fn erb_axis() {
        let f = erb_space(100.0, 2000.0, 124);
        assert_eq!((f[0], f[123]), (100.0, 2000.0));
        assert!(f.windows(2).all(|w| w[1] > w[0]));
        let steps: Vec<f64> = f.windows(2).map(|w| erb_rate(w[1]) - erb_rate(w[0])).collect();
        assert!(steps.iter().all(|s| (s - steps[0]).abs() < 1e-9));
        assert!((erb(1000.0) - 132.639).abs() < 1e-9);
    }

    #[test]
    fn unit_gain_at_centre() {
        let y = filter(tone(1000.0, 16_000, 16_000, 1.0).samples(), 1000.0, 16_000.0);
        let peak = y[8000..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 1e-3, "{peak}");
    }

    #[test]
    fn tone_peaks_at_nearest_filter() {
        for f in [250.0, 1000.0, 1500.0] {
            let img = gammatonegram(&tone(f, 4000, 8000, 1.0), 512, 256, 124, 100.0, 2000.0).unwrap();
            let best = img.row_means().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let nearest = img.freq_axis().iter().enumerate().min_by(|a, b| (a.1 - f).abs().total_cmp(&(b.1 - f).abs())).unwrap().0;
            assert_eq!(best, nearest, "{f} Hz");
        }
    }

    #[test]
    fn zero_and_power_scaling() {
        let z = AudioClip::new(vec![0.0; 1024], 4000, "z", None).unwrap();
        assert!(gammatonegram(&z, 512, 256, 16, 100.0, 2000.0).unwrap().values().iter().all(|&v| v == 0.0));
        let t = tone(600.0, 4000, 4000, 0.3);
        let t2 = AudioClip::new(t.samples().iter().map(|v| 2.0 * v).collect(), 4000, "t", None).unwrap();
        let (a, b) = (gammatonegram(&t, 512, 256, 16, 100.0, 2000.0).unwrap(), gammatonegram(&t2, 512, 256, 16, 100.0, 2000.0).unwrap());
        for (x, y) in a.values().iter().zip(b.values()) {
            let (px, py) = (f64::from(*x).powi(2), f64::from(*y).powi(2));
            assert!((4.0 * px - py).abs() <= 1e-4 * py.max(1e-30));
        }
    }

    #[test]
    fn shifting_by_one_hop_shifts_one_frame() {
        let t = tone(900.0, 4000, 4000, 0.5);
        let mut shifted = vec![0.0f32; 256];
        shifted.extend_from_slice(t.samples());
        let s = AudioClip::new(shifted, 4000, "s", None).unwrap();
        let (a, b) = (gammatonegram(&t, 512, 256, 16, 100.0, 2000.0).unwrap(), gammatonegram(&s, 512, 256, 16, 100.0, 2000.0).unwrap());
        assert_eq!(b.cols(), a.cols() + 1);
        for r in 0..16 {
            for j in 0..a.cols() {
                assert!((a.row(r)[j] - b.row(r)[j + 1]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn rejects_short_clips_and_bad_framing() {
        let t = tone(500.0, 4000, 511, 1.0);
        assert!(matches!(gammatonegram(&t, 512, 256, 8, 100.0, 2000.0), Err(SpectrogramError::ClipTooShort { .. })));
        let t = tone(500.0, 4000, 1000, 1.0);
        assert!(matches!(gammatonegram(&t, 256, 256, 8, 100.0, 2000.0), Err(SpectrogramError::BadFraming { .. })));
    }
}
