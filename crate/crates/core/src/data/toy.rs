use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::manifest::{CorpusManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::features::melf::write_melf;
use crate::features::{extract, mel_filterbank, AudioClip, MelConfig};
use crate::models::Side;
use crate::seeding;

/// Peak amplitude scale of the rendered harmonic complex.
pub const TOY_GAIN: f64 = 0.15;

pub const TRAIN_A_MANIFEST: &str = "train_A.tsv";
pub const TRAIN_B_MANIFEST: &str = "train_B.tsv";
pub const EVAL_MANIFEST: &str = "eval_pairs.tsv";
pub const TOY_CONFIG_FILE: &str = "toy.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub n_train_utts: usize,
    pub n_eval_utts: usize,
    pub duration_s: f64,
    pub f0_range: (f64, f64),
    pub n_harmonics: usize,
    pub noise_band: (f64, f64),
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_train_utts: 200,
            n_eval_utts: 40,
            duration_s: 1.0,
            f0_range: (100.0, 300.0),
            n_harmonics: 8,
            noise_band: (2000.0, 6000.0),
            snr_db: 0.0,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self, mel: &MelConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let nyquist = mel.sample_rate as f64 / 2.0;
        let (f_lo, f_hi) = self.f0_range;
        if !(f_lo > 0.0 && f_lo <= f_hi) {
            return bad(format!("f0_range must be positive and ordered, got {f_lo}-{f_hi}"));
        }
        let (n_lo, n_hi) = self.noise_band;
        if !(0.0 <= n_lo && n_lo < n_hi && n_hi <= nyquist) {
            return bad(format!("noise_band {n_lo}-{n_hi} must lie within 0-{nyquist} Hz"));
        }
        if self.n_train_utts == 0 {
            return bad("n_train_utts must be at least 1".into());
        }
        if self.n_harmonics == 0 {
            return bad("n_harmonics must be at least 1".into());
        }
        if !(self.duration_s.is_finite() && mel.n_frames((self.duration_s * mel.sample_rate as f64) as usize).is_some()) {
            return bad(format!("duration_s {} is shorter than one analysis window", self.duration_s));
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db must be finite".into());
        }
        Ok(())
    }

    pub fn n_samples(&self, sample_rate: u32) -> usize {
        (self.duration_s * sample_rate as f64) as usize
    }
}

/// Indices of mel filters whose peak frequency lies in `[lo, hi]` Hz.
pub fn band_to_bins(band: (f64, f64), cfg: &MelConfig) -> Result<Vec<usize>> {
    let (lo, hi) = band;
    if !(cfg.f_min <= lo && lo <= hi && hi <= cfg.f_max) {
        return Err(Error::InvalidConfig(format!(
            "band {lo}-{hi} Hz must lie within {}-{} Hz",
            cfg.f_min, cfg.f_max
        )));
    }
    let fb = mel_filterbank(cfg)?;
    let bins: Vec<usize> = (0..fb.n_mels())
        .filter(|&m| (lo..=hi).contains(&fb.centers_hz[m]))
        .collect();
    if bins.is_empty() {
        return Err(Error::EmptyBand { lo, hi });
    }
    Ok(bins)
}

/// Mel bins used by the toy metrics.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyBands {
    /// Filters peaking inside the noise band.
    pub noise: Vec<usize>,
    /// Filters peaking between the lowest f0 and the noise band.
    pub harmonic: Vec<usize>,
}

impl ToyBands {
    pub fn new(toy: &ToyConfig, mel: &MelConfig) -> Result<Self> {
        let noise = band_to_bins(toy.noise_band, mel)?;
        let lo = toy.f0_range.0.max(mel.f_min);
        let hi = toy.noise_band.0.min(mel.f_max);
        let harmonic: Vec<usize> = band_to_bins((lo, hi.max(lo)), mel)?
            .into_iter()
            .filter(|m| !noise.contains(m))
            .collect();
        if harmonic.is_empty() {
            return Err(Error::EmptyBand { lo, hi });
        }
        Ok(Self { noise, harmonic })
    }
}

/// One harmonic complex: f0 and per-partial phases.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicSource {
    pub f0: f64,
    pub phases: Vec<f64>,
}

impl HarmonicSource {
    pub fn draw(cfg: &ToyConfig, rng: &mut ChaCha8Rng) -> Self {
        let (lo, hi) = cfg.f0_range;
        let f0 = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let phases = (0..cfg.n_harmonics)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        Self { f0, phases }
    }

    /// `gain * sum_k sin(2 pi k f0 t + phi_k) / k`, partials above Nyquist dropped.
    pub fn render(&self, n: usize, sample_rate: u32) -> Vec<f64> {
        let sr = sample_rate as f64;
        let mut out = vec![0.0; n];
        for (k, phi) in self.phases.iter().enumerate() {
            let k = (k + 1) as f64;
            if k * self.f0 >= sr / 2.0 {
                break;
            }
            let w = std::f64::consts::TAU * k * self.f0 / sr;
            for (i, o) in out.iter_mut().enumerate() {
                *o += (w * i as f64 + phi).sin() / k;
            }
        }
        out.iter_mut().for_each(|v| *v *= TOY_GAIN);
        out
    }
}

/// Gaussian noise band-limited to `band` by zeroing FFT bins outside it,
/// scaled to `power` mean square.
pub fn band_noise(n: usize, sample_rate: u32, band: (f64, f64), power: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let hz = sample_rate as f64 / n as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * hz;
        if f < band.0 || f > band.1 {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let noise: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let ms = mean_square(&noise);
    let scale = if ms > 0.0 { (power / ms).sqrt() } else { 0.0 };
    noise.into_iter().map(|v| v * scale).collect()
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Clean waveform and its noisy counterpart, sample-identical apart from
/// the additive noise.
pub fn render_pair(src: &HarmonicSource, cfg: &ToyConfig, sample_rate: u32, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = cfg.n_samples(sample_rate);
    let clean = src.render(n, sample_rate);
    let power = mean_square(&clean) / 10f64.powf(cfg.snr_db / 10.0);
    let noise = band_noise(n, sample_rate, cfg.noise_band, power, rng);
    let noisy = clean.iter().zip(&noise).map(|(c, e)| c + e).collect();
    (clean, noisy)
}

fn to_clip(x: &[f64], sample_rate: u32) -> Result<AudioClip> {
    AudioClip::new(x.iter().map(|v| *v as f32).collect(), sample_rate)
}

/// Paths of a generated toy corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpus {
    pub train_a: PathBuf,
    pub train_b: PathBuf,
    /// `None` when `n_eval_utts` is 0.
    pub eval_pairs: Option<PathBuf>,
    pub bands: ToyBands,
}

fn write_features(path: &Path, wave: &[f64], mel: &MelConfig) -> Result<()> {
    write_melf(path, &extract(&to_clip(wave, mel.sample_rate)?, mel)?)
}

/// Renders the clean domain A, the noisy domain B and held-out
/// `(noisy, clean)` eval pairs to MELF files plus manifests under `out_dir`.
/// Every utterance draws from its own seeded stream.
pub fn generate_toy_corpus(cfg: &ToyConfig, mel: &MelConfig, out_dir: &Path) -> Result<ToyCorpus> {
    cfg.validate(mel)?;
    mel.validate()?;
    let bands = ToyBands::new(cfg, mel)?;
    let sr = mel.sample_rate;
    for sub in ["A", "B", "eval"] {
        fs::create_dir_all(out_dir.join("melf").join(sub))?;
    }

    let mut train = [Vec::new(), Vec::new()];
    for side in Side::BOTH {
        let tag = side.to_string().to_lowercase();
        for i in 0..cfg.n_train_utts {
            let mut rng = seeding::stream(cfg.seed, &format!("toy/{side}/{i}"));
            let src = HarmonicSource::draw(cfg, &mut rng);
            let wave = match side {
                Side::A => src.render(cfg.n_samples(sr), sr),
                Side::B => render_pair(&src, cfg, sr, &mut rng).1,
            };
            let id = format!("{tag}{i:04}");
            let path = out_dir.join("melf").join(side.to_string()).join(format!("{id}.melf"));
            write_features(&path, &wave, mel)?;
            train[side.index()].push(ManifestEntry {
                id,
                path,
                reference: None,
            });
        }
    }
    let [a, b] = train;
    let manifest_a = CorpusManifest {
        domain: Some(Side::A),
        entries: a,
    };
    let manifest_b = CorpusManifest {
        domain: Some(Side::B),
        entries: b,
    };
    super::assert_unpaired(&manifest_a, &manifest_b)?;
    let train_a = out_dir.join(TRAIN_A_MANIFEST);
    let train_b = out_dir.join(TRAIN_B_MANIFEST);
    manifest_a.write(&train_a)?;
    manifest_b.write(&train_b)?;

    let eval_path = out_dir.join(EVAL_MANIFEST);
    let eval_pairs = if cfg.n_eval_utts == 0 {
        if eval_path.exists() {
            fs::remove_file(&eval_path)?;
        }
        None
    } else {
        let mut entries = Vec::with_capacity(cfg.n_eval_utts);
        for i in 0..cfg.n_eval_utts {
            let mut rng = seeding::stream(cfg.seed, &format!("toy/eval/{i}"));
            let src = HarmonicSource::draw(cfg, &mut rng);
            let (clean, noisy) = render_pair(&src, cfg, sr, &mut rng);
            let dir = out_dir.join("melf").join("eval");
            let (np, cp) = (dir.join(format!("noisy{i:04}.melf")), dir.join(format!("clean{i:04}.melf")));
            write_features(&np, &noisy, mel)?;
            write_features(&cp, &clean, mel)?;
            entries.push(ManifestEntry {
                id: format!("eval{i:04}"),
                path: np,
                reference: Some(cp),
            });
        }
        let m = CorpusManifest {
            domain: Some(Side::B),
            entries,
        };
        m.write(&eval_path)?;
        Some(eval_path)
    };
    fs::write(out_dir.join(TOY_CONFIG_FILE), serde_json::to_string_pretty(cfg)?)?;
    Ok(ToyCorpus {
        train_a,
        train_b,
        eval_pairs,
        bands,
    })
}
