use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{MelSegment, MelSpectrogram, SEGMENT_FRAMES, SEGMENT_MELS};

/// Draws unpaired batches of random 20-frame crops from two corpora.
///
/// Utterances shorter than a segment are right-padded by repeating their
/// last frame. Each draw picks an utterance uniformly, then a start frame
/// uniformly; domain A is drawn before domain B.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    corpora: [Vec<MelSpectrogram>; 2],
    batch_size: usize,
}

impl BatchSampler {
    pub fn new(a: Vec<MelSpectrogram>, b: Vec<MelSpectrogram>, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        let mut corpora = [a, b];
        for corpus in &mut corpora {
            if corpus.is_empty() {
                return Err(Error::EmptyCorpus);
            }
            for (i, m) in corpus.iter_mut().enumerate() {
                if m.n_frames == 0 {
                    return Err(Error::UtteranceTooShort(format!("#{i}")));
                }
                if m.n_mels != SEGMENT_MELS {
                    return Err(Error::shape(format!(
                        "utterance #{i} has {} mel bins, segments need {SEGMENT_MELS}",
                        m.n_mels
                    )));
                }
                if m.n_frames < SEGMENT_FRAMES {
                    *m = pad_to_segment(m)?;
                }
            }
        }
        Ok(Self { corpora, batch_size })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn corpus(&self, domain: usize) -> &[MelSpectrogram] {
        &self.corpora[domain]
    }

    /// One crop: `(utterance index, start frame, segment)`.
    pub fn draw(&self, domain: usize, rng: &mut ChaCha8Rng) -> (usize, usize, MelSegment) {
        let corpus = &self.corpora[domain];
        let u = rng.random_range(0..corpus.len());
        let m = &corpus[u];
        let start = rng.random_range(0..=m.n_frames - SEGMENT_FRAMES);
        let values = m.values[start * SEGMENT_MELS..(start + SEGMENT_FRAMES) * SEGMENT_MELS].to_vec();
        (u, start, MelSegment::new(values).expect("crop of a finite spectrogram"))
    }

    pub fn sample_batch(&self, rng: &mut ChaCha8Rng) -> (Vec<MelSegment>, Vec<MelSegment>) {
        let a = (0..self.batch_size).map(|_| self.draw(0, rng).2).collect();
        let b = (0..self.batch_size).map(|_| self.draw(1, rng).2).collect();
        (a, b)
    }
}

fn pad_to_segment(m: &MelSpectrogram) -> Result<MelSpectrogram> {
    let mut values = m.values.clone();
    let last = m.frame(m.n_frames - 1).to_vec();
    for _ in m.n_frames..SEGMENT_FRAMES {
        values.extend_from_slice(&last);
    }
    MelSpectrogram::new(SEGMENT_FRAMES, m.n_mels, values, m.normalized)
}
