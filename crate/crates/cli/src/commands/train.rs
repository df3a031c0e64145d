use std::path::Path;

use sda_core::data::{assert_unpaired, load_manifest, BatchSampler};
use sda_core::features::compute_norm_stats;
use sda_core::features::melf::{read_norm_stats, write_norm_stats};
use sda_core::training::{load_checkpoint, postmortem_path, train_loop, LoopEvent, TrainData, TrainState};
use sda_core::{Error, MelSpectrogram, NormStats, Result};

use super::load_eval_set;
use crate::config::RunConfig;
use crate::{EXIT_DIVERGED, EXIT_OK};

pub const NORM_STATS_FILE: &str = "norm_stats.melf";

fn load_corpus(path: &Path, n_mels: usize) -> Result<(sda_core::data::CorpusManifest, Vec<MelSpectrogram>)> {
    let m = load_manifest(path, n_mels)?;
    let feats = m.load_features()?;
    Ok((m, feats))
}

fn resolve_stats(path: &Path, a: &[MelSpectrogram], b: &[MelSpectrogram]) -> Result<NormStats> {
    if path.exists() {
        return read_norm_stats(path);
    }
    let stats = compute_norm_stats(a.iter().chain(b))?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_norm_stats(path, &stats)?;
    println!("computed normalization stats over {} utterances -> {}", a.len() + b.len(), path.display());
    Ok(stats)
}

pub fn train(cfg: &RunConfig) -> Result<i32> {
    let run_dir = cfg.require_path("run_dir")?;
    let mel = cfg.mel()?;
    let train_cfg = cfg.train()?;
    let (ma, a) = load_corpus(&cfg.require_path("train_a")?, mel.n_mels)?;
    let (mb, b) = load_corpus(&cfg.require_path("train_b")?, mel.n_mels)?;
    assert_unpaired(&ma, &mb)?;

    let state = match cfg.path("resume") {
        Some(ck) => {
            let mut s = load_checkpoint(&ck)?;
            if s.config.model != train_cfg.model {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint holds a {} model, config asks for {}",
                    s.config.model, train_cfg.model
                )));
            }
            s.config.total_steps = train_cfg.total_steps;
            println!("resuming {} from step {}", ck.display(), s.step);
            s
        }
        None => {
            let stats_path = cfg.path("norm_stats").unwrap_or_else(|| run_dir.join(NORM_STATS_FILE));
            let stats = resolve_stats(&stats_path, &a, &b)?;
            let mut s = TrainState::init(&train_cfg, stats)?;
            s.norm_stats_path = Some(stats_path);
            s
        }
    };
    let norm = |c: Vec<MelSpectrogram>| -> Result<Vec<MelSpectrogram>> {
        c.iter().map(|m| state.norm_stats.normalize(m)).collect()
    };
    let sampler = BatchSampler::new(norm(a)?, norm(b)?, state.config.batch_size)?;
    let eval = cfg.path("eval_manifest").map(|p| load_eval_set(&p, cfg)).transpose()?;
    let data = TrainData { sampler, eval };
    let mut effective = cfg.clone();
    effective.set("total_steps", state.config.total_steps.to_string())?;
    effective.write(&run_dir)?;

    println!(
        "training {} for {} steps (batch {}, lr {}) in {}",
        state.config.model,
        state.config.total_steps,
        state.config.batch_size,
        state.config.learning_rate,
        run_dir.display()
    );
    let res = train_loop(state, &data, &run_dir, |ev| match ev {
        LoopEvent::Loss(r) => println!("{}", r.to_json_line()),
        LoopEvent::Checkpoint(p) => println!("checkpoint {}", p.display()),
        LoopEvent::Eval { step, metrics } => println!(
            "eval step {step}: l1 {:.4} (identity {:.4}), noise ratio {:.3e}, harmonic corr {:.4}",
            metrics.l1_to_reference, metrics.identity_l1, metrics.noise_band_energy_ratio, metrics.harmonic_correlation
        ),
    });
    match res {
        Ok(s) => {
            println!("done at step {}", s.step);
            Ok(EXIT_OK)
        }
        Err(Error::NonFiniteLoss { term, step }) => {
            eprintln!(
                "error: non-finite loss `{term}` at step {step}; post-mortem checkpoint {}",
                postmortem_path(&run_dir, step).display()
            );
            Ok(EXIT_DIVERGED)
        }
        Err(e) => Err(e),
    }
}
