use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sda_core::data::{load_manifest, parse_manifest, CorpusManifest, ManifestEntry};
use sda_core::features::melf::{read_melf, write_melf};
use sda_core::models::{sample_domain_prior, DomainCode, Side};
use sda_core::seeding::stream;
use sda_core::training::{convert_utterance, corpus_segments, load_checkpoint, Nets, TrainState};
use sda_core::{Error, MelSpectrogram, Result};

use crate::config::RunConfig;
use crate::plot::write_pair_png;
use crate::EXIT_OK;

pub const CONVERTED_MANIFEST: &str = "converted.tsv";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DomainSource {
    MeanTarget,
    Prior,
    Exemplar(PathBuf),
}

impl FromStr for DomainSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean-target" => Ok(Self::MeanTarget),
            "prior" => Ok(Self::Prior),
            other => match other.strip_prefix("exemplar:") {
                Some(p) if !p.is_empty() => Ok(Self::Exemplar(PathBuf::from(p))),
                _ => Err(Error::InvalidConfig(format!(
                    "domain_source `{other}`: expected mean-target, prior or exemplar:<manifest>"
                ))),
            },
        }
    }
}

fn parse_direction(s: &str) -> Result<Side> {
    match s.trim().to_ascii_uppercase().as_str() {
        "A2B" => Ok(Side::A),
        "B2A" => Ok(Side::B),
        other => Err(Error::InvalidConfig(format!("direction `{other}`: expected A2B or B2A"))),
    }
}

/// Target-domain code for the proposed model; `None` for the baseline.
pub fn target_code(
    state: &TrainState,
    source: &DomainSource,
    target: Side,
    seed: u64,
    n_mels: usize,
) -> Result<Option<DomainCode>> {
    let Nets::Proposed(pair) = &state.nets else {
        return Ok(None);
    };
    Ok(Some(match source {
        DomainSource::MeanTarget => state
            .domain_means
            .as_ref()
            .map(|m| m[target.index()].clone())
            .ok_or_else(|| Error::CorruptCheckpoint("checkpoint has no mean domain codes".into()))?,
        DomainSource::Prior => sample_domain_prior(&mut stream(seed, "convert/prior"), 1).remove(0),
        DomainSource::Exemplar(p) => {
            let feats = load_manifest(p, n_mels)?.load_features()?;
            let normed = feats.iter().map(|m| state.norm_stats.normalize(m)).collect::<Result<Vec<_>>>()?;
            pair.mean_domain_code(&corpus_segments(&normed)?, target)?
        }
    }))
}

/// Inputs as `(id, path)`: a single MELF, or every entry of a manifest.
fn inputs(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    if path.extension().is_some_and(|e| e == "melf") {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![(id, path.to_path_buf())]);
    }
    let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    let m = parse_manifest(&text, path)?;
    Ok(m.entries.into_iter().map(|e| (e.id, e.path)).collect())
}

pub fn convert(cfg: &RunConfig) -> Result<i32> {
    let ck = cfg.require_path("checkpoint")?;
    let input = cfg.require_path("input")?;
    let out = cfg.require_path("out_dir")?;
    let src = parse_direction(cfg.raw("direction"))?;
    let source: DomainSource = cfg.get("domain_source")?;
    let plot: bool = cfg.get("plot")?;
    let n_mels = cfg.mel()?.n_mels;

    let state = load_checkpoint(&ck)?;
    let code = target_code(&state, &source, src.other(), cfg.get("seed")?, n_mels)?;
    fs::create_dir_all(&out)?;
    let mut entries = Vec::new();
    for (id, path) in inputs(&input)? {
        let mel: MelSpectrogram = read_melf(&path)?;
        if mel.n_mels != n_mels {
            return Err(Error::HeaderMismatch {
                path,
                reason: format!("{} mel bins, expected {n_mels}", mel.n_mels),
            });
        }
        let conv = convert_utterance(&state.nets, &state.norm_stats, &mel, src, code.as_ref())?;
        let dst = out.join(format!("{id}.melf"));
        write_melf(&dst, &conv)?;
        if plot {
            write_pair_png(&out.join(format!("{id}.png")), &mel, &conv)?;
        }
        entries.push(ManifestEntry {
            id,
            path: dst,
            reference: None,
        });
    }
    let n = entries.len();
    CorpusManifest {
        domain: Some(src.other()),
        entries,
    }
    .write(&out.join(CONVERTED_MANIFEST))?;
    cfg.write(&out)?;
    println!(
        "converted {n} utterance(s) {src}->{} with {} ({}) into {}",
        src.other(),
        state.config.model,
        cfg.raw("domain_source"),
        out.display()
    );
    Ok(EXIT_OK)
}
