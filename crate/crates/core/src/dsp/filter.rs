//! Butterworth design via analog prototype poles and the bilinear
//! transform, applied as cascaded biquads in both directions.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{AudioClip, DspError};

/// Prototype order of the conditioning filters; a band-pass has twice as
/// many poles.
pub const BUTTERWORTH_ORDER: usize = 4;

/// Second-order section, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + self.b[1] * zi + self.b[2] * zi * zi;
        let den = self.a[0] + self.a[1] * zi + self.a[2] * zi * zi;
        num / den
    }

    /// Direct-form II transposed state reached after a unit step.
    fn step_state(&self) -> [f64; 2] {
        let g = self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>();
        let z2 = self.b[2] - self.a[2] * g;
        [self.b[1] - self.a[1] * g + z2, z2]
    }
}

/// Magnitude response of a cascade at `freq` Hz.
pub fn magnitude(sections: &[Biquad], freq: f64, fs: f64) -> f64 {
    let z = Complex64::from_polar(1.0, 2.0 * PI * freq / fs);
    sections.iter().map(|s| s.response(z)).product::<Complex64>().norm()
}

fn prototype_poles(order: usize) -> Vec<Complex64> {
    (0..order).map(|k| Complex64::from_polar(1.0, PI * (2 * k + order + 1) as f64 / (2 * order) as f64)).collect()
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    (2.0 * fs + s) / (2.0 * fs - s)
}

fn prewarp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

/// Groups digital poles into conjugate (or real) pairs and builds sections
/// with the given numerator, then scales so `|H| = 1` at `ref_freq`.
fn assemble(mut poles: Vec<Complex64>, numerator: [f64; 3], single_numerator: [f64; 3], ref_freq: f64, fs: f64) -> Vec<Biquad> {
    const TOL: f64 = 1e-10;
    poles.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let mut sections = Vec::new();
    let mut real: Vec<f64> = Vec::new();
    for p in &poles {
        if p.im > TOL {
            sections.push(Biquad { b: numerator, a: [1.0, -2.0 * p.re, p.norm_sqr()] });
        } else if p.im.abs() <= TOL {
            real.push(p.re);
        }
    }
    for pair in real.chunks(2) {
        sections.push(match *pair {
            [p, q] => Biquad { b: numerator, a: [1.0, -(p + q), p * q] },
            [p] => Biquad { b: single_numerator, a: [1.0, -p, 0.0] },
            _ => unreachable!(),
        });
    }
    let gain = magnitude(&sections, ref_freq, fs);
    for v in &mut sections[0].b {
        *v /= gain;
    }
    sections
}

/// Digital Butterworth band-pass; `order` is the prototype order.
pub fn butterworth_bandpass(order: usize, lo: f64, hi: f64, fs: f64) -> Result<Vec<Biquad>, DspError> {
    if !(order > 0 && lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(DspError::BandOutOfRange { lo, hi, rate: fs as u32 });
    }
    let (wl, wh) = (prewarp(lo, fs), prewarp(hi, fs));
    let (bw, w0) = (wh - wl, (wl * wh).sqrt());
    let mut poles = Vec::with_capacity(2 * order);
    for p in prototype_poles(order) {
        let half = p * bw / 2.0;
        let disc = (half * half - w0 * w0).sqrt();
        poles.push(bilinear(half + disc, fs));
        poles.push(bilinear(half - disc, fs));
    }
    let center = fs / PI * (w0 / (2.0 * fs)).atan();
    Ok(assemble(poles, [1.0, 0.0, -1.0], [1.0, -1.0, 0.0], center, fs))
}

/// Digital Butterworth high-pass of the given order.
pub fn butterworth_highpass(order: usize, cutoff: f64, fs: f64) -> Result<Vec<Biquad>, DspError> {
    if !(order > 0 && cutoff > 0.0 && cutoff < fs / 2.0) {
        return Err(DspError::BandOutOfRange { lo: cutoff, hi: fs / 2.0, rate: fs as u32 });
    }
    let wc = prewarp(cutoff, fs);
    let poles = prototype_poles(order).into_iter().map(|p| bilinear(wc / p, fs)).collect();
    Ok(assemble(poles, [1.0, -2.0, 1.0], [1.0, -1.0, 0.0], fs / 2.0, fs))
}

fn sosfilt(sections: &[Biquad], x: &mut [f64], x0: f64) {
    let mut scale = x0;
    for s in sections {
        let [mut z1, mut z2] = s.step_state().map(|v| v * scale);
        scale *= s.b.iter().sum::<f64>() / s.a.iter().sum::<f64>();
        for v in x.iter_mut() {
            let y = s.b[0] * *v + z1;
            z1 = s.b[1] * *v - s.a[1] * y + z2;
            z2 = s.b[2] * *v - s.a[2] * y;
            *v = y;
        }
    }
}

/// Zero-phase filtering: odd extension at both ends, forward pass, reverse
/// pass, each started from the step-response state scaled to the edge
/// sample.
pub fn sosfiltfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let trivial = sections.iter().filter(|s| s.b[2] == 0.0).count().min(sections.iter().filter(|s| s.a[2] == 0.0).count());
    let pad = (3 * (2 * sections.len() + 1 - trivial)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    let first = ext[0];
    sosfilt(sections, &mut ext, first);
    ext.reverse();
    let first = ext[0];
    sosfilt(sections, &mut ext, first);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

fn apply(clip: &AudioClip, sections: &[Biquad]) -> AudioClip {
    let x: Vec<f64> = clip.samples().iter().map(|&v| f64::from(v)).collect();
    let y = sosfiltfilt(sections, &x);
    clip.with_samples(y.into_iter().map(|v| v as f32).collect(), clip.sample_rate())
}

/// Zero-phase Butterworth band-pass; requires `0 < lo < hi < rate / 2`.
pub fn bandpass(clip: &AudioClip, lo: f64, hi: f64) -> Result<AudioClip, DspError> {
    let fs = f64::from(clip.sample_rate());
    let sections = butterworth_bandpass(BUTTERWORTH_ORDER, lo, hi, fs).map_err(|_| DspError::BandOutOfRange { lo, hi, rate: clip.sample_rate() })?;
    Ok(apply(clip, &sections))
}

/// Zero-phase Butterworth high-pass; used when the upper band edge reaches
/// the Nyquist frequency.
pub fn highpass(clip: &AudioClip, cutoff: f64) -> Result<AudioClip, DspError> {
    let sections = butterworth_highpass(BUTTERWORTH_ORDER, cutoff, f64::from(clip.sample_rate()))?;
    Ok(apply(clip, &sections))
}
