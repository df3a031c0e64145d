//! MELF feature container.
//!
//! Layout (little-endian): magic `MELF`, u32 version (1), u32 n_frames,
//! u32 n_mels, u8 normalized flag, then `n_frames * n_mels` f32 values,
//! frame-major. Norm stats use the same container with two rows
//! (mean, then std).

use std::fs;
use std::io::Read;
use std::path::Path;

use super::{MelSpectrogram, NormStats};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MELF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 17;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MelfHeader {
    pub n_frames: usize,
    pub n_mels: usize,
    pub normalized: bool,
}

pub fn encode(mel: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + mel.values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(mel.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(mel.n_mels as u32).to_le_bytes());
    out.push(mel.normalized as u8);
    for v in &mel.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadFormat {
        format: "MELF",
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<MelfHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(bad(path, "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad(path, "bad magic"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::VersionError {
            found: version,
            expected: VERSION,
        });
    }
    let normalized = match bytes[16] {
        0 => false,
        1 => true,
        f => return Err(bad(path, format!("normalized flag {f}"))),
    };
    Ok(MelfHeader {
        n_frames: u32_at(8) as usize,
        n_mels: u32_at(12) as usize,
        normalized,
    })
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<MelSpectrogram> {
    let h = parse_header(bytes, path)?;
    let body = &bytes[HEADER_LEN..];
    let expected = h.n_frames * h.n_mels * 4;
    if body.len() != expected {
        return Err(bad(path, format!("payload is {} bytes, header implies {expected}", body.len())));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    MelSpectrogram::new(h.n_frames, h.n_mels, values, h.normalized)
}

pub fn write_melf(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    fs::write(path, encode(mel))?;
    Ok(())
}

pub fn read_melf(path: &Path) -> Result<MelSpectrogram> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode(&bytes, path)
}

/// Reads only the 17-byte header.
pub fn read_header(path: &Path) -> Result<MelfHeader> {
    let mut f = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut buf = [0u8; HEADER_LEN];
    f.read_exact(&mut buf).map_err(|_| bad(path, "truncated header"))?;
    parse_header(&buf, path)
}

pub fn write_norm_stats(path: &Path, stats: &NormStats) -> Result<()> {
    let mut values = stats.mean.clone();
    values.extend_from_slice(&stats.std);
    write_melf(path, &MelSpectrogram::new(2, stats.n_mels(), values, false)?)
}

pub fn read_norm_stats(path: &Path) -> Result<NormStats> {
    let m = read_melf(path)?;
    if m.n_frames != 2 {
        return Err(bad(path, format!("norm stats need 2 rows, found {}", m.n_frames)));
    }
    NormStats::new(m.frame(0).to_vec(), m.frame(1).to_vec())
}
