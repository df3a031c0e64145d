//! WAV ingest: 16-bit PCM, channel-averaged to mono, resampled with a
//! windowed-sinc interpolator when the rate differs from the target.

use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

/// Zero crossings of the sinc kernel on each side of the interpolation point.
const SINC_ZEROS: usize = 16;

fn wav_err(path: &Path, source: hound::Error) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a 16-bit PCM WAV file, averaging channels to mono.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::BadFormat {
            format: "WAV",
            path: path.to_path_buf(),
            reason: format!(
                "expected 16-bit PCM, got {:?} {}-bit",
                spec.sample_format, spec.bits_per_sample
            ),
        });
    }
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<i16> = reader
        .samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| wav_err(path, e))?;
    let samples = raw
        .chunks_exact(channels)
        .map(|frame| frame.iter().map(|s| *s as f32 / 32768.0).sum::<f32>() / channels as f32)
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes mono 16-bit PCM; samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Blackman-windowed sinc resampling. The cutoff sits at 95% of the lower
/// of the two Nyquist frequencies.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidConfig("target sample rate must be positive".into()));
    }
    if clip.sample_rate == target_rate {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let cutoff = ratio.min(1.0) * 0.95;
    let half = (SINC_ZEROS as f64 / cutoff).ceil() as isize;
    let n_out = (clip.samples.len() as f64 * ratio).floor() as usize;
    let x = &clip.samples;
    let out = (0..n_out)
        .map(|n| {
            let t = n as f64 / ratio;
            let center = t.floor() as isize;
            let mut acc = 0.0;
            for j in (center - half + 1)..=(center + half) {
                if j < 0 || j as usize >= x.len() {
                    continue;
                }
                let tau = t - j as f64;
                let u = tau / half as f64;
                if u.abs() >= 1.0 {
                    continue;
                }
                let pu = std::f64::consts::PI * u;
                let window = 0.42 + 0.5 * pu.cos() + 0.08 * (2.0 * pu).cos();
                acc += x[j as usize] as f64 * cutoff * sinc(cutoff * tau) * window;
            }
            acc as f32
        })
        .collect();
    AudioClip::new(out, target_rate)
}

/// Reads a WAV and brings it to `target_rate`.
pub fn load_audio(path: &Path, target_rate: u32) -> Result<AudioClip> {
    resample(&read_wav(path)?, target_rate)
}
