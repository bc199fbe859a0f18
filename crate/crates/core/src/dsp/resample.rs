//! Polyphase windowed-sinc rate conversion.

use super::{AudioClip, DspError};

const TAPS_PER_PHASE: usize = 64;
const KAISER_BETA: f64 = 8.6;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut term, mut sum, mut k) = (1.0, 1.0, 1.0);
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Interpolation kernel sampled on the upsampled grid, indexed by offset
/// `d + half` for `d` in `-half..=half`, each polyphase branch normalized
/// to unit DC gain.
struct Kernel {
    taps: Vec<f64>,
    half: i64,
}

impl Kernel {
    fn new(up: u64, down: u64) -> Self {
        // Widened when decimating so the number of input samples under the
        // main lobe stays constant.
        let ratio = (down as f64 / up as f64).max(1.0);
        let taps_per_phase = (TAPS_PER_PHASE as f64 * ratio).ceil() as i64;
        let half = taps_per_phase * up as i64 / 2;
        let cutoff = 0.5 / ratio;
        let i0b = bessel_i0(KAISER_BETA);
        let mut taps: Vec<f64> = (-half..=half)
            .map(|d| {
                let t = d as f64 / up as f64;
                let r = d as f64 / half as f64;
                let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0b;
                2.0 * cutoff * sinc(2.0 * cutoff * t) * w
            })
            .collect();
        let up_i = up as i64;
        for phase in 0..up_i {
            let idx: Vec<usize> = (0..taps.len()).filter(|&i| (i as i64 - half).rem_euclid(up_i) == phase).collect();
            let sum: f64 = idx.iter().map(|&i| taps[i]).sum();
            if sum.abs() > 1e-12 {
                for i in idx {
                    taps[i] /= sum;
                }
            }
        }
        Self { taps, half }
    }
}

/// Band-limited conversion to `target_rate`. Output length is
/// `round(len * target / source)`; equal rates return the clip unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, DspError> {
    if target_rate == 0 {
        return Err(DspError::BadRate);
    }
    let src = clip.sample_rate();
    if src == target_rate {
        return Ok(clip.clone());
    }
    let g = gcd(u64::from(src), u64::from(target_rate));
    let (up, down) = (u64::from(target_rate) / g, u64::from(src) / g);
    let n = clip.len();
    let out_len = ((n as u128 * up as u128 + down as u128 / 2) / down as u128) as usize;
    let kernel = Kernel::new(up, down);
    let x = clip.samples();
    let (up_i, down_i) = (up as i64, down as i64);
    let out: Vec<f32> = (0..out_len as i64)
        .map(|m| {
            // Output m sits at upsampled position m*down; input j at j*up.
            let pos = m * down_i;
            let j_lo = ((pos - kernel.half) as f64 / up_i as f64).ceil().max(0.0) as i64;
            let j_hi = ((pos + kernel.half).div_euclid(up_i)).min(n as i64 - 1);
            let mut acc = 0.0f64;
            let mut j = j_lo;
            while j <= j_hi {
                let d = pos - j * up_i;
                acc += f64::from(x[j as usize]) * kernel.taps[(d + kernel.half) as usize];
                j += 1;
            }
            acc as f32
        })
        .collect();
    Ok(clip.with_samples(out, target_rate))
}
