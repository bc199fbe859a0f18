use std::path::Path;

use super::DatasetError;
use crate::dsp::AudioClip;

/// Decodes a PCM WAV file (integer or float). Multichannel input keeps only
/// the first channel; samples are scaled to [-1, 1].
pub fn read_wav(path: &Path, recording_key: &str) -> Result<AudioClip, DatasetError> {
    let wav_err = |e| DatasetError::Wav { path: path.to_path_buf(), source: e };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels.max(1));
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().step_by(channels).collect::<Result<_, _>>().map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader.samples::<i32>().step_by(channels).map(|s| s.map(|v| v as f32 * scale)).collect::<Result<_, _>>().map_err(wav_err)?
        }
    };
    AudioClip::new(samples, spec.sample_rate, recording_key, None).map_err(|e| DatasetError::Format(format!("{}: {e}", path.display())))
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<(), DatasetError> {
    let wav_err = |e| DatasetError::Wav { path: path.to_path_buf(), source: e };
    let spec = hound::WavSpec { channels: 1, sample_rate: clip.sample_rate(), bits_per_sample: 32, sample_format: hound::SampleFormat::Float };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in clip.samples() {
        w.write_sample(s).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}
