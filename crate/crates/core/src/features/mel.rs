use super::{MelConfig, MelSpectrogram, Matrix};
use crate::error::{Error, Result};

// Slaney mel scale: linear below 1 kHz, logarithmic above.
const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < MIN_LOG_MEL {
        mel * F_SP
    } else {
        MIN_LOG_HZ * ((mel - MIN_LOG_MEL) * log_step()).exp()
    }
}

/// Triangular filters with unit peak, centers equally spaced on the mel scale.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    /// `n_mels x (fft_size / 2 + 1)`.
    pub weights: Matrix,
    /// Peak frequency of each filter, Hz.
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.weights.rows
    }

    /// Index of the largest weight in each row.
    pub fn peak_bins(&self) -> Vec<usize> {
        (0..self.weights.rows)
            .map(|r| {
                let row = self.weights.row(r);
                (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0)
            })
            .collect()
    }
}

pub fn mel_filterbank(cfg: &MelConfig) -> Result<MelFilterbank> {
    cfg.validate()?;
    let n_bins = cfg.n_bins();
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    let mut weights = Matrix::zeros(cfg.n_mels, n_bins);
    for m in 0..cfg.n_mels {
        let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
        for (k, w) in weights.row_mut(m).iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let up = (f - left) / (center - left);
            let down = (right - f) / (right - center);
            *w = up.min(down).max(0.0) as f32;
        }
        if weights.row(m).iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidConfig(format!(
                "mel filter {m} ({left:.1}-{right:.1} Hz) covers no FFT bin; use fewer mels or a larger fft_size"
            )));
        }
    }
    Ok(MelFilterbank {
        weights,
        centers_hz: points[1..=cfg.n_mels].to_vec(),
    })
}

/// `ln(max(fb . power^T, floor))`, transposed to `n_frames x n_mels`.
pub fn log_mel(power: &Matrix, fb: &MelFilterbank, cfg: &MelConfig) -> Result<MelSpectrogram> {
    if power.cols != fb.weights.cols {
        return Err(Error::shape(format!(
            "power spectrum has {} bins, filterbank expects {}",
            power.cols, fb.weights.cols
        )));
    }
    let floor = cfg.log_floor;
    let n_mels = fb.weights.rows;
    let mut values = Vec::with_capacity(power.rows * n_mels);
    for t in 0..power.rows {
        let frame = power.row(t);
        for m in 0..n_mels {
            let e: f64 = fb
                .weights
                .row(m)
                .iter()
                .zip(frame)
                .map(|(w, p)| *w as f64 * *p as f64)
                .sum();
            values.push(e.max(floor).ln() as f32);
        }
    }
    MelSpectrogram::new(power.rows, n_mels, values, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 200.0, 999.0, 1000.0, 3000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn default_filterbank_shape_and_rows() {
        let fb = mel_filterbank(&MelConfig::default()).unwrap();
        assert_eq!((fb.weights.rows, fb.weights.cols), (80, 257));
        for m in 0..80 {
            let row = fb.weights.row(m);
            assert!(row.iter().sum::<f32>() > 0.0);
            assert!(row.iter().all(|w| *w >= 0.0));
            // unimodal: nondecreasing up to the peak, nonincreasing after
            let peak = fb.peak_bins()[m];
            assert!(row[..=peak].windows(2).all(|p| p[0] <= p[1]));
            assert!(row[peak..].windows(2).all(|p| p[0] >= p[1]));
        }
    }

    #[test]
    fn peaks_strictly_increase() {
        let fb = mel_filterbank(&MelConfig::default()).unwrap();
        assert!(fb.peak_bins().windows(2).all(|p| p[0] < p[1]));
        assert!(fb.centers_hz.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn first_and_last_centers_by_hand() {
        // Slaney scale: mel(8000) = 15 + 27 ln(8) / ln(6.4) = 45.2452...
        // spacing = 45.2452 / 81 = 0.558583 mel -> first center 37.24 Hz.
        let fb = mel_filterbank(&MelConfig::default()).unwrap();
        let top = 15.0 + 27.0 * 8f64.ln() / 6.4f64.ln();
        let step = top / 81.0;
        assert!((fb.centers_hz[0] - step * 200.0 / 3.0).abs() < 1e-9);
        assert!((fb.centers_hz[0] - 37.2389).abs() < 1e-3);
        assert!(fb.centers_hz[0] < fb.centers_hz[79]);
        assert!(fb.centers_hz[79] <= 8000.0);
        let last = 1000.0 * ((80.0 * step - 15.0) * 6.4f64.ln() / 27.0).exp();
        assert!((fb.centers_hz[79] - last).abs() < 1e-6);
    }

    #[test]
    fn log_mel_floor_shape_and_log_identity() {
        let cfg = MelConfig::default();
        let fb = mel_filterbank(&cfg).unwrap();
        let zero = Matrix::zeros(98, 257);
        let m = log_mel(&zero, &fb, &cfg).unwrap();
        assert_eq!((m.n_frames, m.n_mels), (98, 80));
        let floor = (1e-5f64).ln() as f32;
        assert!(m.values.iter().all(|v| *v == floor));

        let mut p = Matrix::zeros(3, 257);
        for (i, v) in p.data.iter_mut().enumerate() {
            *v = ((i % 17) as f32 + 1.0) * 0.37;
        }
        let mut p2 = p.clone();
        p2.data.iter_mut().for_each(|v| *v *= 2.0);
        let a = log_mel(&p, &fb, &cfg).unwrap();
        let b = log_mel(&p2, &fb, &cfg).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            if *x > floor {
                assert!((y - x - std::f32::consts::LN_2).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let cfg = MelConfig::default();
        let fb = mel_filterbank(&cfg).unwrap();
        assert!(matches!(
            log_mel(&Matrix::zeros(2, 100), &fb, &cfg),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
