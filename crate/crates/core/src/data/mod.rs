//! Two-domain corpora: manifests, unpaired batch sampling and the synthetic
//! clean-vs-noisy toy corpus.

mod manifest;
mod sampler;
pub mod toy;

pub use manifest::{assert_unpaired, load_manifest, parse_manifest, CorpusManifest, ManifestEntry};
pub use sampler::BatchSampler;
pub use toy::{band_to_bins, generate_toy_corpus, ToyBands, ToyConfig, ToyCorpus};

#[cfg(test)]
mod tests;
