//! Alternating discriminator/generator optimization with Adam, seeded
//! random streams, bit-exact checkpoints and toy-task metrics.

mod adam;
mod checkpoint;
mod config;
mod eval;
mod state;
mod step;

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub use adam::{optimizer_update, AdamState, ADAM_EPS, BETA1, BETA2};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ModelKind, TrainConfig};
pub use eval::{
    compute_domain_means, convert_utterance, corpus_segments, evaluate_conversion, evaluate_toy, ToyEvalSet,
    ToyMetrics, MEAN_CODE_SEGMENTS,
};
pub use state::{Nets, TrainState, DATA_STREAM, INIT_STREAM, PRIOR_STREAM};
pub use step::{d_phase, g_phase, train_step};

use crate::data::BatchSampler;
use crate::error::{Error, Result};
use crate::losses::LossRecord;

pub const LOSS_LOG: &str = "losses.jsonl";
pub const EVAL_LOG: &str = "eval.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("step_{step:07}.sdac"))
}

pub fn postmortem_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("postmortem_{step:07}.sdac"))
}

/// Normalized training corpora plus an optional toy eval set.
pub struct TrainData {
    pub sampler: BatchSampler,
    pub eval: Option<ToyEvalSet>,
}

/// Progress notifications from [`train_loop`].
#[derive(Debug)]
pub enum LoopEvent<'a> {
    Loss(&'a LossRecord),
    Checkpoint(&'a Path),
    Eval { step: u64, metrics: &'a ToyMetrics },
}

#[derive(serde::Serialize)]
struct EvalRecord<'a> {
    step: u64,
    #[serde(flatten)]
    metrics: &'a ToyMetrics,
}

/// Keeps log lines for steps before `step`, dropping anything a crashed
/// run wrote past its last checkpoint.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let mut keep = String::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let v: serde_json::Value = serde_json::from_str(&line)?;
        if v.get("step").and_then(|s| s.as_u64()).is_some_and(|s| s < step) {
            keep.push_str(&line);
            keep.push('\n');
        }
    }
    fs::write(path, keep)?;
    Ok(())
}

fn refresh_means(state: &mut TrainState, data: &TrainData) -> Result<()> {
    state.domain_means = compute_domain_means(&state.nets, [data.sampler.corpus(0), data.sampler.corpus(1)])?;
    Ok(())
}

fn checkpoint(state: &mut TrainState, data: &TrainData, path: &Path) -> Result<()> {
    refresh_means(state, data)?;
    save_checkpoint(state, path)
}

/// Trains from `state` up to `state.config.total_steps`.
///
/// Writes the JSON-lines loss log, periodic checkpoints (including one at
/// step 0 for fresh runs and one at the end) and, when an eval set is
/// given, toy metrics every `eval_every` steps. On a non-finite loss a
/// post-mortem checkpoint is written before the error is returned.
pub fn train_loop(
    mut state: TrainState,
    data: &TrainData,
    run_dir: &Path,
    mut on_event: impl FnMut(LoopEvent<'_>),
) -> Result<TrainState> {
    let cfg = state.config.clone();
    cfg.validate()?;
    if data.sampler.batch_size() != cfg.batch_size {
        return Err(Error::InvalidConfig(format!(
            "sampler draws batches of {}, config says {}",
            data.sampler.batch_size(),
            cfg.batch_size
        )));
    }
    fs::create_dir_all(run_dir.join(CHECKPOINT_DIR))?;
    let log_path = run_dir.join(LOSS_LOG);
    let eval_path = run_dir.join(EVAL_LOG);
    truncate_log(&log_path, state.step)?;
    truncate_log(&eval_path, state.step)?;
    let mut log = BufWriter::new(OpenOptions::new().create(true).append(true).open(&log_path)?);

    let mut last_saved = None;
    if state.step == 0 {
        let p = checkpoint_path(run_dir, 0);
        checkpoint(&mut state, data, &p)?;
        on_event(LoopEvent::Checkpoint(&p));
        last_saved = Some(0);
    }
    while state.step < cfg.total_steps {
        let step = state.step;
        let (a, b) = data.sampler.sample_batch(&mut state.data_rng);
        let losses = match train_step(&mut state, &a, &b) {
            Ok(l) => l,
            Err(e @ Error::NonFiniteLoss { .. }) => {
                log.flush()?;
                let p = postmortem_path(run_dir, step);
                save_checkpoint(&state, &p)?;
                log::error!("{e}; post-mortem checkpoint at {}", p.display());
                on_event(LoopEvent::Checkpoint(&p));
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if step.is_multiple_of(cfg.log_every) {
            let rec = LossRecord { step, losses };
            writeln!(log, "{}", rec.to_json_line())?;
            on_event(LoopEvent::Loss(&rec));
        }
        let done = state.step;
        if let Some(eval) = &data.eval {
            if cfg.eval_every > 0 && done.is_multiple_of(cfg.eval_every) {
                refresh_means(&mut state, data)?;
                let metrics = evaluate_toy(&state, eval)?;
                let line = serde_json::to_string(&EvalRecord { step: done, metrics: &metrics })?;
                let mut f = OpenOptions::new().create(true).append(true).open(&eval_path)?;
                writeln!(f, "{line}")?;
                on_event(LoopEvent::Eval { step: done, metrics: &metrics });
            }
        }
        if cfg.checkpoint_every > 0 && done.is_multiple_of(cfg.checkpoint_every) {
            log.flush()?;
            let p = checkpoint_path(run_dir, done);
            checkpoint(&mut state, data, &p)?;
            on_event(LoopEvent::Checkpoint(&p));
            last_saved = Some(done);
        }
    }
    log.flush()?;
    if last_saved != Some(state.step) {
        let p = checkpoint_path(run_dir, state.step);
        checkpoint(&mut state, data, &p)?;
        on_event(LoopEvent::Checkpoint(&p));
    }
    Ok(state)
}

#[cfg(test)]
mod tests;
