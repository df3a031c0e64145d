use super::MelSpectrogram;
use crate::error::{Error, Result};

pub const SEGMENT_FRAMES: usize = 20;
pub const SEGMENT_MELS: usize = 80;

/// A 20-frame x 80-bin slice of a (normalized) log-mel spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSegment {
    values: Vec<f32>,
}

impl MelSegment {
    pub const LEN: usize = SEGMENT_FRAMES * SEGMENT_MELS;

    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != Self::LEN {
            return Err(Error::shape(format!(
                "segment needs {} values, got {}",
                Self::LEN,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::shape("segment contains non-finite values"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, t: usize, m: usize) -> f32 {
        self.values[t * SEGMENT_MELS + m]
    }
}

/// Where each segment sits in the source spectrogram.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentLayout {
    pub n_frames: usize,
    pub n_mels: usize,
    pub hop: usize,
    pub starts: Vec<usize>,
    /// Frames of last-frame repetition appended to the final segment.
    pub pad: usize,
    pub normalized: bool,
}

/// Cuts `mel` into 20-frame segments every `hop` frames. The final segment is
/// right-padded by repeating the last frame.
pub fn segment(mel: &MelSpectrogram, seg_len: usize, hop: usize) -> Result<(Vec<MelSegment>, SegmentLayout)> {
    if seg_len != SEGMENT_FRAMES {
        return Err(Error::InvalidConfig(format!(
            "segment length is fixed at {SEGMENT_FRAMES}, got {seg_len}"
        )));
    }
    if hop == 0 || hop > seg_len {
        return Err(Error::InvalidConfig(format!("segment hop must be in 1..={seg_len}, got {hop}")));
    }
    if mel.n_frames == 0 {
        return Err(Error::EmptySpectrogram);
    }
    if mel.n_mels != SEGMENT_MELS {
        return Err(Error::shape(format!(
            "segments need {SEGMENT_MELS} mel bins, spectrogram has {}",
            mel.n_mels
        )));
    }
    let n = mel.n_frames;
    let count = if n <= seg_len { 1 } else { 1 + (n - seg_len).div_ceil(hop) };
    let starts: Vec<usize> = (0..count).map(|i| i * hop).collect();
    let pad = (starts[count - 1] + seg_len).saturating_sub(n);
    let segments = starts
        .iter()
        .map(|&s| {
            let mut v = Vec::with_capacity(MelSegment::LEN);
            for t in s..s + seg_len {
                v.extend_from_slice(mel.frame(t.min(n - 1)));
            }
            MelSegment::new(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        segments,
        SegmentLayout {
            n_frames: n,
            n_mels: mel.n_mels,
            hop,
            starts,
            pad,
            normalized: mel.normalized,
        },
    ))
}

/// Reassembles segments; overlapping frames are averaged with equal weight
/// and padding is dropped.
pub fn stitch(segments: &[MelSegment], layout: &SegmentLayout) -> Result<MelSpectrogram> {
    if segments.len() != layout.starts.len() || segments.is_empty() {
        return Err(Error::LayoutMismatch(format!(
            "{} segments for a layout of {}",
            segments.len(),
            layout.starts.len()
        )));
    }
    if layout.n_mels != SEGMENT_MELS {
        return Err(Error::LayoutMismatch(format!("layout has {} mel bins", layout.n_mels)));
    }
    let n = layout.n_frames;
    let mut sum = vec![0.0f64; n * SEGMENT_MELS];
    let mut count = vec![0u32; n];
    for (seg, &start) in segments.iter().zip(&layout.starts) {
        for t in 0..SEGMENT_FRAMES {
            let dst = start + t;
            if dst >= n {
                break;
            }
            count[dst] += 1;
            for m in 0..SEGMENT_MELS {
                sum[dst * SEGMENT_MELS + m] += seg.get(t, m) as f64;
            }
        }
    }
    if let Some(t) = count.iter().position(|c| *c == 0) {
        return Err(Error::LayoutMismatch(format!("frame {t} is not covered by any segment")));
    }
    let values = sum
        .chunks_exact(SEGMENT_MELS)
        .zip(&count)
        .flat_map(|(row, c)| row.iter().map(move |v| (v / *c as f64) as f32))
        .collect();
    MelSpectrogram::new(n, SEGMENT_MELS, values, layout.normalized)
}
