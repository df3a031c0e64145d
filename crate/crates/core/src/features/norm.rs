use super::MelSpectrogram;
use crate::error::{Error, Result};

/// Floor applied to per-bin standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-mel-bin mean and population standard deviation over a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    pub fn new(mean: Vec<f32>, std: Vec<f32>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::shape(format!(
                "norm stats: {} means, {} stds",
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidConfig("norm stats need finite means and positive stds".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn n_mels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, mel: &MelSpectrogram) -> Result<()> {
        if mel.n_mels != self.n_mels() {
            return Err(Error::shape(format!(
                "spectrogram has {} bins, stats have {}",
                mel.n_mels,
                self.n_mels()
            )));
        }
        Ok(())
    }

    /// `(x - mean) / std` per bin.
    pub fn normalize(&self, mel: &MelSpectrogram) -> Result<MelSpectrogram> {
        self.check(mel)?;
        let values = mel
            .values
            .chunks_exact(mel.n_mels)
            .flat_map(|frame| {
                frame
                    .iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(x, (m, s))| ((*x as f64 - *m as f64) / *s as f64) as f32)
            })
            .collect();
        MelSpectrogram::new(mel.n_frames, mel.n_mels, values, true)
    }

    /// `x * std + mean` per bin.
    pub fn denormalize(&self, mel: &MelSpectrogram) -> Result<MelSpectrogram> {
        self.check(mel)?;
        let values = mel
            .values
            .chunks_exact(mel.n_mels)
            .flat_map(|frame| {
                frame
                    .iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(x, (m, s))| (*x as f64 * *s as f64 + *m as f64) as f32)
            })
            .collect();
        MelSpectrogram::new(mel.n_frames, mel.n_mels, values, false)
    }
}

/// Per-bin mean and population standard deviation over every frame of every
/// utterance; standard deviations are floored at [`STD_FLOOR`].
pub fn compute_norm_stats<'a>(corpus: impl IntoIterator<Item = &'a MelSpectrogram>) -> Result<NormStats> {
    let corpus: Vec<&MelSpectrogram> = corpus.into_iter().collect();
    let Some(first) = corpus.first() else {
        return Err(Error::EmptyCorpus);
    };
    let n_mels = first.n_mels;
    if let Some(bad) = corpus.iter().find(|m| m.n_mels != n_mels) {
        return Err(Error::shape(format!("corpus mixes {n_mels} and {} mel bins", bad.n_mels)));
    }
    let frames: usize = corpus.iter().map(|m| m.n_frames).sum();
    let frames_of = || corpus.iter().flat_map(|m| m.values.chunks_exact(n_mels));

    let mut mean = vec![0.0f64; n_mels];
    for frame in frames_of() {
        for (acc, v) in mean.iter_mut().zip(frame) {
            *acc += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= frames as f64);

    let mut var = vec![0.0f64; n_mels];
    for frame in frames_of() {
        for ((acc, v), m) in var.iter_mut().zip(frame).zip(&mean) {
            let d = *v as f64 - m;
            *acc += d * d;
        }
    }
    Ok(NormStats {
        mean: mean.iter().map(|m| *m as f32).collect(),
        std: var
            .iter()
            .map(|v| (v / frames as f64).sqrt().max(STD_FLOOR) as f32)
            .collect(),
    })
}
