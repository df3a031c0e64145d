use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioClip, MelConfig, Matrix};
use crate::error::{Error, Result};

/// Symmetric Hamming window.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Squared-magnitude spectra of Hamming-windowed frames, zero-padded to
/// `fft_size`. Frames start at multiples of `hop_length` with no centering.
pub fn stft_power(clip: &AudioClip, cfg: &MelConfig) -> Result<Matrix> {
    cfg.validate()?;
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::SampleRateMismatch {
            clip: clip.sample_rate,
            expected: cfg.sample_rate,
        });
    }
    let n_frames = cfg.n_frames(clip.samples.len()).ok_or(Error::AudioTooShort {
        len: clip.samples.len(),
        needed: cfg.win_length,
    })?;
    let window = hamming(cfg.win_length);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let n_bins = cfg.n_bins();
    let mut out = Matrix::zeros(n_frames, n_bins);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for t in 0..n_frames {
        let start = t * cfg.hop_length;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, w) in window.iter().enumerate() {
            buf[i].re = clip.samples[start + i] as f64 * w;
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (dst, c) in out.row_mut(t).iter_mut().zip(&buf[..n_bins]) {
            *dst = c.norm_sqr() as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, secs: f64, sr: u32) -> AudioClip {
        let n = (secs * sr as f64) as usize;
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin() as f32 * 0.5)
            .collect();
        AudioClip::new(samples, sr).unwrap()
    }

    /// Direct O(N^2) DFT of one windowed frame.
    fn brute_dft_power(frame: &[f64], fft_size: usize) -> Vec<f64> {
        (0..=fft_size / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, x) in frame.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / fft_size as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let cfg = MelConfig::default();
        let p = stft_power(&sine(440.0, 1.0, 16_000), &cfg).unwrap();
        assert_eq!(p.rows, 98);
        assert_eq!(p.cols, 257);
    }

    #[test]
    fn zero_clip_gives_zero_power() {
        let cfg = MelConfig::default();
        let clip = AudioClip::new(vec![0.0; 16_000], 16_000).unwrap();
        let p = stft_power(&clip, &cfg).unwrap();
        assert!(p.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sine_peak_bin_matches_brute_force_dft() {
        let cfg = MelConfig::default();
        let clip = sine(1000.0, 1.0, 16_000);
        let p = stft_power(&clip, &cfg).unwrap();
        let w = hamming(cfg.win_length);
        for t in [0, 17, 97] {
            let frame: Vec<f64> = (0..cfg.win_length)
                .map(|i| clip.samples[t * cfg.hop_length + i] as f64 * w[i])
                .collect();
            let oracle = brute_dft_power(&frame, cfg.fft_size);
            let oracle_peak = (0..oracle.len()).max_by(|&a, &b| oracle[a].total_cmp(&oracle[b])).unwrap();
            let row = p.row(t);
            let peak = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(oracle_peak, 32);
            assert_eq!(peak, 32);
            for (a, b) in row.iter().zip(&oracle) {
                assert!((*a as f64 - b).abs() <= 1e-4 * b.max(1.0));
            }
        }
    }

    #[test]
    fn errors() {
        let cfg = MelConfig::default();
        let short = AudioClip::new(vec![0.0; 399], 16_000).unwrap();
        assert!(matches!(stft_power(&short, &cfg), Err(Error::AudioTooShort { .. })));
        let wrong = AudioClip::new(vec![0.0; 1000], 8_000).unwrap();
        assert!(matches!(stft_power(&wrong, &cfg), Err(Error::SampleRateMismatch { .. })));
    }

    #[test]
    fn white_noise_power_scales_with_length() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let cfg = MelConfig::default();
        let noise: Vec<f32> = (0..64_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (0.1 * z) as f32
            })
            .collect();
        let total = |n: usize| -> f64 {
            let clip = AudioClip::new(noise[..n].to_vec(), 16_000).unwrap();
            stft_power(&clip, &cfg).unwrap().data.iter().map(|v| *v as f64).sum()
        };
        let (a, b) = (total(16_000), total(64_000));
        let frames = |n: usize| cfg.n_frames(n).unwrap() as f64;
        let ratio = (b / a) / (frames(64_000) / frames(16_000));
        assert!((ratio - 1.0).abs() < 0.1, "ratio {ratio}");
    }

    proptest! {
        #[test]
        fn frame_count_matches_brute_force_framing(len in 400usize..6000, hop in 1usize..400) {
            let cfg = MelConfig { hop_length: hop, ..MelConfig::default() };
            let mut count = 0;
            let mut start = 0;
            while start + cfg.win_length <= len {
                count += 1;
                start += hop;
            }
            prop_assert_eq!(cfg.n_frames(len), Some(count));
            let clip = AudioClip::new(vec![0.0; len], 16_000).unwrap();
            prop_assert_eq!(stft_power(&clip, &cfg).unwrap().rows, count);
        }
    }
}
