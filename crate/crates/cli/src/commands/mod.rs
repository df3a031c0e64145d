//! Subcommand bodies. Each returns the process exit code.

mod convert;
mod extract;
mod train;

use std::path::{Path, PathBuf};

use sda_core::data::toy::TOY_CONFIG_FILE;
use sda_core::data::{generate_toy_corpus, ToyBands, ToyConfig};
use sda_core::features::mel_filterbank;
use sda_core::selfcheck::{run_selfcheck, SelfCheckOptions};
use sda_core::training::{evaluate_toy, load_checkpoint, ToyEvalSet};
use sda_core::{Error, MelConfig, Result};

use crate::config::RunConfig;
use crate::{EXIT_INPUT, EXIT_OK};

pub use convert::{convert, DomainSource};
pub use extract::extract;
pub use train::train;

fn describe_bins(bins: &[usize], mel: &MelConfig) -> Result<String> {
    let centers = mel_filterbank(mel)?.centers_hz;
    Ok(match (bins.first(), bins.last()) {
        (Some(&a), Some(&b)) => format!(
            "bins {a}..={b} ({} bins, centers {:.0}-{:.0} Hz)",
            bins.len(),
            centers[a],
            centers[b]
        ),
        _ => "no bins".into(),
    })
}

pub fn toygen(cfg: &RunConfig) -> Result<i32> {
    let out = cfg.require_path("out_dir")?;
    let (toy, mel) = (cfg.toy()?, cfg.mel()?);
    let corpus = generate_toy_corpus(&toy, &mel, &out)?;
    cfg.write(&out)?;
    println!(
        "toy corpus in {}: {} clean (A) + {} noisy (B) training utterances, {} eval pairs",
        out.display(),
        toy.n_train_utts,
        toy.n_train_utts,
        toy.n_eval_utts
    );
    println!("  train A: {}", corpus.train_a.display());
    println!("  train B: {}", corpus.train_b.display());
    match &corpus.eval_pairs {
        Some(p) => println!("  eval:    {}", p.display()),
        None => eprintln!("warning: toy_n_eval_utts = 0, no eval manifest written"),
    }
    println!(
        "  noise band {:.0}-{:.0} Hz -> {}",
        toy.noise_band.0,
        toy.noise_band.1,
        describe_bins(&corpus.bands.noise, &mel)?
    );
    println!("  harmonic region -> {}", describe_bins(&corpus.bands.harmonic, &mel)?);
    Ok(EXIT_OK)
}

/// Toy config stored next to an eval manifest, else the configured one.
pub fn toy_config_for(manifest: &Path, cfg: &RunConfig) -> Result<ToyConfig> {
    let p = manifest.parent().unwrap_or(Path::new("")).join(TOY_CONFIG_FILE);
    if p.exists() {
        Ok(serde_json::from_str(&std::fs::read_to_string(&p)?)?)
    } else {
        cfg.toy()
    }
}

pub fn load_eval_set(manifest: &Path, cfg: &RunConfig) -> Result<ToyEvalSet> {
    let mel = cfg.mel()?;
    let m = sda_core::data::load_manifest(manifest, mel.n_mels)?;
    if !m.is_paired() {
        return Err(Error::InvalidConfig(format!(
            "{} is not a paired (input, reference) manifest",
            manifest.display()
        )));
    }
    let bands = ToyBands::new(&toy_config_for(manifest, cfg)?, &mel)?;
    Ok(ToyEvalSet {
        pairs: m.load_pairs()?,
        bands,
    })
}

pub fn eval_json_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("eval.json")
}

pub fn eval_toy(cfg: &RunConfig) -> Result<i32> {
    let ck = cfg.require_path("checkpoint")?;
    let manifest = cfg.require_path("eval_manifest")?;
    let state = load_checkpoint(&ck)?;
    let eval = load_eval_set(&manifest, cfg)?;
    let metrics = evaluate_toy(&state, &eval)?;
    let json = serde_json::json!({
        "checkpoint": ck.display().to_string(),
        "step": state.step,
        "model": state.config.model.to_string(),
        "eval_manifest": manifest.display().to_string(),
        "metrics": metrics,
    });
    let out = eval_json_path(&ck);
    std::fs::write(&out, serde_json::to_string_pretty(&json)?)?;
    println!("model {} at step {}", state.config.model, state.step);
    println!(
        "l1_to_reference          {:.4} (identity {:.4}, ratio {:.3})",
        metrics.l1_to_reference,
        metrics.identity_l1,
        metrics.l1_to_reference / metrics.identity_l1
    );
    println!("noise_band_energy_ratio  {:.4e}", metrics.noise_band_energy_ratio);
    println!("harmonic_correlation     {:.4}", metrics.harmonic_correlation);
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

pub fn selfcheck(cfg: &RunConfig) -> Result<i32> {
    let opts = SelfCheckOptions {
        seed: cfg.get("seed")?,
        grad_probes: cfg.get("grad_probes")?,
        ..SelfCheckOptions::default()
    };
    let report = run_selfcheck(&opts);
    println!("{report}");
    Ok(if report.passed() { EXIT_OK } else { 1 })
}

pub(crate) fn input_error(msg: impl Into<String>) -> Result<i32> {
    eprintln!("error: {}", msg.into());
    Ok(EXIT_INPUT)
}
