use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::melf::read_header;
use crate::features::melf::read_melf;
use crate::features::MelSpectrogram;
use crate::models::Side;

/// Directive line naming the manifest's domain.
const DOMAIN_DIRECTIVE: &str = "# domain:";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    /// Noise-free counterpart, eval manifests only.
    pub reference: Option<PathBuf>,
}

/// Utterances of one domain. Paths are resolved against the manifest's
/// directory at load time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusManifest {
    pub domain: Option<Side>,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_paired(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.reference.is_some())
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }

    /// Reads every referenced spectrogram, in manifest order.
    pub fn load_features(&self) -> Result<Vec<MelSpectrogram>> {
        self.entries.iter().map(|e| read_melf(&e.path)).collect()
    }

    /// Reads `(input, reference)` pairs of an eval manifest.
    pub fn load_pairs(&self) -> Result<Vec<(MelSpectrogram, MelSpectrogram)>> {
        self.entries
            .iter()
            .map(|e| {
                let r = e.reference.as_ref().ok_or_else(|| {
                    Error::InvalidConfig(format!("manifest entry {} has no paired reference", e.id))
                })?;
                Ok((read_melf(&e.path)?, read_melf(r)?))
            })
            .collect()
    }

    /// Renders the manifest with paths relative to `dir` where possible.
    pub fn render(&self, dir: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
        let mut out = String::new();
        if let Some(d) = self.domain {
            let _ = writeln!(out, "{DOMAIN_DIRECTIVE} {d}");
        }
        for e in &self.entries {
            let _ = match &e.reference {
                Some(r) => writeln!(out, "{}\t{}\t{}", e.id, rel(&e.path), rel(r)),
                None => writeln!(out, "{}\t{}", e.id, rel(&e.path)),
            };
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        fs::write(path, self.render(dir))?;
        Ok(())
    }
}

/// Parses manifest text without touching the referenced files.
pub fn parse_manifest(text: &str, path: &Path) -> Result<CorpusManifest> {
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &str| {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let parse_err = |line: usize, reason: String| Error::ParseError {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut domain = None;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if let Some(rest) = line.strip_prefix(DOMAIN_DIRECTIVE) {
            domain = Some(rest.trim().parse::<Side>().map_err(|e| parse_err(line_no, e.to_string()))?);
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&cols.len()) || cols.iter().any(|c| c.trim().is_empty()) {
            return Err(parse_err(
                line_no,
                format!("expected `id<TAB>path[<TAB>reference]`, got {} columns", cols.len()),
            ));
        }
        let id = cols[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(parse_err(line_no, format!("duplicate utterance id {id}")));
        }
        entries.push(ManifestEntry {
            id,
            path: resolve(cols[1].trim()),
            reference: cols.get(2).map(|r| resolve(r.trim())),
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(CorpusManifest { domain, entries })
}

/// Parses a manifest and checks that every referenced MELF file exists and
/// has `n_mels` bins.
pub fn load_manifest(path: &Path, n_mels: usize) -> Result<CorpusManifest> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => return Err(e.into()),
    };
    let m = parse_manifest(&text, path)?;
    for e in &m.entries {
        for p in std::iter::once(&e.path).chain(e.reference.as_ref()) {
            let h = read_header(p)?;
            if h.n_mels != n_mels {
                return Err(Error::HeaderMismatch {
                    path: p.clone(),
                    reason: format!("{} mel bins, expected {n_mels}", h.n_mels),
                });
            }
        }
    }
    Ok(m)
}

/// Fails if the two training manifests share an utterance id.
pub fn assert_unpaired(a: &CorpusManifest, b: &CorpusManifest) -> Result<()> {
    let ids = a.ids();
    match b.entries.iter().find(|e| ids.contains(e.id.as_str())) {
        Some(e) => Err(Error::InvalidConfig(format!(
            "utterance id {} appears in both domains",
            e.id
        ))),
        None => Ok(()),
    }
}
