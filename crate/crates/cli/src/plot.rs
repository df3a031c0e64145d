//! Side-by-side log-mel heatmaps on one shared color scale.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use sda_core::{Error, MelSpectrogram, Result};

/// Pixels per frame and per mel bin.
pub const SCALE: usize = 3;
/// Blank columns between the two panels.
pub const GAP: usize = 6;

const STOPS: [[f64; 3]; 5] = [
    [0.0, 0.0, 4.0],
    [81.0, 18.0, 124.0],
    [183.0, 55.0, 121.0],
    [252.0, 137.0, 97.0],
    [252.0, 253.0, 191.0],
];

fn color(t: f64) -> [u8; 3] {
    let x = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let mut c = [0u8; 3];
    for (k, v) in c.iter_mut().enumerate() {
        *v = (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    }
    c
}

/// Shared `(min, max)` over both spectrograms.
pub fn shared_range(a: &MelSpectrogram, b: &MelSpectrogram) -> (f32, f32) {
    a.values
        .iter()
        .chain(&b.values)
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// RGB image `(width, height, pixels)`: input on the left, converted on the
/// right, low frequencies at the bottom.
pub fn pair_image(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<(usize, usize, Vec<u8>)> {
    if a.n_frames != b.n_frames || a.n_mels != b.n_mels {
        return Err(Error::ShapeMismatch(format!(
            "plot: {}x{} vs {}x{}",
            a.n_frames, a.n_mels, b.n_frames, b.n_mels
        )));
    }
    let (lo, hi) = shared_range(a, b);
    let span = if hi > lo { (hi - lo) as f64 } else { 1.0 };
    let panel_w = a.n_frames * SCALE;
    let (w, h) = (2 * panel_w + GAP, a.n_mels * SCALE);
    let mut px = vec![255u8; w * h * 3];
    for (p, m) in [a, b].into_iter().enumerate() {
        let x0 = p * (panel_w + GAP);
        for y in 0..h {
            let bin = a.n_mels - 1 - y / SCALE;
            for x in 0..panel_w {
                let c = color((m.get(x / SCALE, bin) - lo) as f64 / span);
                let o = (y * w + x0 + x) * 3;
                px[o..o + 3].copy_from_slice(&c);
            }
        }
    }
    Ok((w, h, px))
}

pub fn write_pair_png(path: &Path, a: &MelSpectrogram, b: &MelSpectrogram) -> Result<()> {
    let (w, h, px) = pair_image(a, b)?;
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writer
        .write_image_data(&px)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writer.finish().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}
