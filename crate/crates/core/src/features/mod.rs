//! Log-mel feature extraction, fixed-length segmentation, per-bin
//! standardization and the MELF container format.

mod mel;
pub mod melf;
mod norm;
mod segment;
mod stft;
pub mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mel::{hz_to_mel, log_mel, mel_filterbank, mel_to_hz, MelFilterbank};
pub use norm::{compute_norm_stats, NormStats};
pub use segment::{segment, stitch, MelSegment, SegmentLayout, SEGMENT_FRAMES, SEGMENT_MELS};
pub use stft::{hamming, stft_power};

/// Mono audio.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    /// Analysis window, samples (25 ms at 16 kHz).
    pub win_length: usize,
    /// Frame shift, samples (10 ms at 16 kHz).
    pub hop_length: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            win_length: 400,
            hop_length: 160,
            fft_size: 512,
            n_mels: 80,
            f_min: 0.0,
            f_max: 8_000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.win_length == 0 || self.win_length > self.fft_size {
            return bad(format!(
                "win_length {} must be in 1..={}",
                self.win_length, self.fft_size
            ));
        }
        if self.hop_length == 0 {
            return bad("hop_length must be positive".into());
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= self.sample_rate as f64 / 2.0) {
            return bad(format!(
                "need 0 <= f_min < f_max <= sample_rate/2, got f_min={} f_max={}",
                self.f_min, self.f_max
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// `1 + floor((len - win) / hop)`, or `None` when shorter than one window.
    pub fn n_frames(&self, n_samples: usize) -> Option<usize> {
        (n_samples >= self.win_length).then(|| 1 + (n_samples - self.win_length) / self.hop_length)
    }
}

/// Row-major `rows x cols` matrix of `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

/// Frame-major `n_frames x n_mels` log-mel energies (natural log), or their
/// standardized form when `normalized` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub n_frames: usize,
    pub n_mels: usize,
    pub values: Vec<f32>,
    pub normalized: bool,
}

impl MelSpectrogram {
    pub fn new(n_frames: usize, n_mels: usize, values: Vec<f32>, normalized: bool) -> Result<Self> {
        if n_frames == 0 || n_mels == 0 {
            return Err(Error::EmptySpectrogram);
        }
        if values.len() != n_frames * n_mels {
            return Err(Error::shape(format!(
                "{n_frames}x{n_mels} spectrogram needs {} values, got {}",
                n_frames * n_mels,
                values.len()
            )));
        }
        Ok(Self {
            n_frames,
            n_mels,
            values,
            normalized,
        })
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn get(&self, t: usize, m: usize) -> f32 {
        self.values[t * self.n_mels + m]
    }
}

/// Full extraction pipeline: power STFT, mel filterbank, log compression.
pub fn extract(clip: &AudioClip, cfg: &MelConfig) -> Result<MelSpectrogram> {
    let power = stft_power(clip, cfg)?;
    let fb = mel_filterbank(cfg)?;
    log_mel(&power, &fb, cfg)
}
