use std::fs;
use std::path::{Path, PathBuf};

use sda_core::data::{parse_manifest, CorpusManifest, ManifestEntry};
use sda_core::features::melf::write_melf;
use sda_core::features::wav::load_audio;
use sda_core::features::extract as log_mel_features;
use sda_core::{Error, MelConfig, Result};

use super::input_error;
use crate::config::RunConfig;
use crate::EXIT_OK;

fn convert_one(wav: &Path, dst: &Path, mel: &MelConfig, failures: &mut Vec<String>) -> Option<PathBuf> {
    let res = load_audio(wav, mel.sample_rate)
        .and_then(|clip| log_mel_features(&clip, mel))
        .and_then(|m| write_melf(dst, &m));
    match res {
        Ok(()) => Some(dst.to_path_buf()),
        Err(e) => {
            failures.push(format!("{}: {e}", wav.display()));
            None
        }
    }
}

pub const FEATURE_MANIFEST: &str = "features.tsv";

/// Converts every WAV of `wav_manifest` (and its reference, if paired) into
/// `<out_dir>/melf/<id>.melf` and writes `<out_dir>/features.tsv`.
pub fn extract(cfg: &RunConfig) -> Result<i32> {
    let src = cfg.require_path("wav_manifest")?;
    let out = cfg.require_path("out_dir")?;
    let mel = cfg.mel()?;
    let text = fs::read_to_string(&src).map_err(|_| Error::MissingFile(src.clone()))?;
    let manifest = parse_manifest(&text, &src)?;
    let melf_dir = out.join("melf");
    fs::create_dir_all(&melf_dir)?;

    let mut failures = Vec::new();
    let mut entries = Vec::with_capacity(manifest.len());
    for e in &manifest.entries {
        let path = convert_one(&e.path, &melf_dir.join(format!("{}.melf", e.id)), &mel, &mut failures);
        let reference = e
            .reference
            .as_ref()
            .map(|r| convert_one(r, &melf_dir.join(format!("{}.ref.melf", e.id)), &mel, &mut failures));
        let reference = match reference {
            None => None,
            Some(Some(r)) => Some(r),
            Some(None) => continue,
        };
        if let Some(path) = path {
            entries.push(ManifestEntry {
                id: e.id.clone(),
                path,
                reference,
            });
        }
    }
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("  {f}");
        }
        return input_error(format!("{} file(s) failed to decode", failures.len()));
    }
    let feats = CorpusManifest {
        domain: manifest.domain,
        entries,
    };
    let dst = out.join(FEATURE_MANIFEST);
    feats.write(&dst)?;
    cfg.write(&out)?;
    println!("extracted {} utterances to {}", feats.len(), dst.display());
    Ok(EXIT_OK)
}
