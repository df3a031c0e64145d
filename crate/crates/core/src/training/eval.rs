use serde::{Deserialize, Serialize};

use super::state::{Nets, TrainState};
use crate::data::ToyBands;
use crate::error::{Error, Result};
use crate::features::{segment, stitch, MelSegment, MelSpectrogram, NormStats, SEGMENT_FRAMES};
use crate::models::{DomainCode, Side};

/// Held-out `(noisy, clean)` log-mel pairs and the bins the metrics use.
#[derive(Clone, Debug)]
pub struct ToyEvalSet {
    pub pairs: Vec<(MelSpectrogram, MelSpectrogram)>,
    pub bands: ToyBands,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyMetrics {
    /// Mean elementwise L1 between converted and clean log-mels.
    pub l1_to_reference: f64,
    /// Converted over noisy linear energy in the noise-band bins.
    pub noise_band_energy_ratio: f64,
    /// Mean per-segment Pearson correlation with the clean reference over
    /// the harmonic bins.
    pub harmonic_correlation: f64,
    /// `l1_to_reference` of the unconverted noisy input.
    pub identity_l1: f64,
}

/// Runs one utterance through normalize, segment (hop 20), per-segment
/// translation from `src`, stitch and denormalize. `code` is required by
/// the proposed model and ignored by the baseline.
pub fn convert_utterance(
    nets: &Nets,
    stats: &NormStats,
    mel: &MelSpectrogram,
    src: Side,
    code: Option<&DomainCode>,
) -> Result<MelSpectrogram> {
    let x = if mel.normalized { mel.clone() } else { stats.normalize(mel)? };
    let (segs, layout) = segment(&x, SEGMENT_FRAMES, SEGMENT_FRAMES)?;
    let out: Vec<MelSegment> = match nets {
        Nets::Proposed(pair) => {
            let code = code.ok_or_else(|| Error::InvalidConfig("the proposed model needs a target domain code".into()))?;
            pair.translate_segments(&segs, src, code)?
        }
        Nets::Baseline(u) => u.generate_segments(&segs, src)?,
    };
    stats.denormalize(&stitch(&out, &layout)?)
}

/// At most this many segments per domain enter a mean domain code.
pub const MEAN_CODE_SEGMENTS: usize = 512;

/// Non-overlapping segments of each utterance, in corpus order, capped at
/// [`MEAN_CODE_SEGMENTS`].
pub fn corpus_segments(corpus: &[MelSpectrogram]) -> Result<Vec<MelSegment>> {
    let mut out = Vec::new();
    for m in corpus {
        let (segs, _) = segment(m, SEGMENT_FRAMES, SEGMENT_FRAMES)?;
        for s in segs {
            if out.len() == MEAN_CODE_SEGMENTS {
                return Ok(out);
            }
            out.push(s);
        }
    }
    Ok(out)
}

/// Mean `Enc^d` codes of two normalized training corpora.
pub fn compute_domain_means(nets: &Nets, corpora: [&[MelSpectrogram]; 2]) -> Result<Option<[DomainCode; 2]>> {
    let Nets::Proposed(pair) = nets else {
        return Ok(None);
    };
    let a = pair.mean_domain_code(&corpus_segments(corpora[0])?, Side::A)?;
    let b = pair.mean_domain_code(&corpus_segments(corpora[1])?, Side::B)?;
    Ok(Some([a, b]))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Scores `convert` on every `(noisy, clean)` pair.
pub fn evaluate_conversion(
    eval: &ToyEvalSet,
    mut convert: impl FnMut(&MelSpectrogram) -> Result<MelSpectrogram>,
) -> Result<ToyMetrics> {
    if eval.pairs.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let (mut l1, mut l1_id, mut n) = (0.0f64, 0.0f64, 0usize);
    let (mut e_conv, mut e_noisy) = (0.0f64, 0.0f64);
    let (mut corr, mut n_corr) = (0.0f64, 0usize);
    for (noisy, clean) in &eval.pairs {
        if noisy.n_frames != clean.n_frames || noisy.n_mels != clean.n_mels {
            return Err(Error::shape("eval pair shapes differ"));
        }
        let conv = convert(noisy)?;
        if conv.n_frames != clean.n_frames || conv.n_mels != clean.n_mels || conv.normalized {
            return Err(Error::shape("conversion changed the spectrogram shape or scale"));
        }
        for ((c, y), x) in conv.values.iter().zip(&clean.values).zip(&noisy.values) {
            l1 += (c - y).abs() as f64;
            l1_id += (x - y).abs() as f64;
        }
        n += clean.values.len();
        for t in 0..clean.n_frames {
            for &k in &eval.bands.noise {
                e_conv += (conv.get(t, k) as f64).exp();
                e_noisy += (noisy.get(t, k) as f64).exp();
            }
        }
        for start in (0..clean.n_frames).step_by(SEGMENT_FRAMES) {
            let end = (start + SEGMENT_FRAMES).min(clean.n_frames);
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for t in start..end {
                for &k in &eval.bands.harmonic {
                    a.push(conv.get(t, k) as f64);
                    b.push(clean.get(t, k) as f64);
                }
            }
            corr += pearson(&a, &b);
            n_corr += 1;
        }
    }
    Ok(ToyMetrics {
        l1_to_reference: l1 / n as f64,
        noise_band_energy_ratio: e_conv / e_noisy,
        harmonic_correlation: corr / n_corr as f64,
        identity_l1: l1_id / n as f64,
    })
}

/// Converts every noisy eval utterance B to A (with the mean A-domain code
/// for the proposed model) and scores it against its clean pair.
pub fn evaluate_toy(state: &TrainState, eval: &ToyEvalSet) -> Result<ToyMetrics> {
    let code = match (&state.nets, &state.domain_means) {
        (Nets::Proposed(_), Some(m)) => Some(m[Side::A.index()].clone()),
        (Nets::Proposed(_), None) => {
            return Err(Error::InvalidConfig("state has no mean domain codes; train or load a checkpoint first".into()))
        }
        (Nets::Baseline(_), _) => None,
    };
    evaluate_conversion(eval, |noisy| {
        convert_utterance(&state.nets, &state.norm_stats, noisy, Side::B, code.as_ref())
    })
}
