//! Flat `key = value` run configuration.
//!
//! Sources, lowest precedence first: built-in defaults, `preset`, config
//! file, `SDA_*` environment variables, command-line flags. Every key is a
//! long flag with dashes (`lambda_dom` is `--lambda-dom`) and an environment
//! variable with the [`ENV_PREFIX`] (`SDA_LAMBDA_DOM`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sda_core::data::ToyConfig;
use sda_core::losses::LossWeights;
use sda_core::training::{ModelKind, TrainConfig};
use sda_core::{Error, MelConfig, Result};

pub const ENV_PREFIX: &str = "SDA_";
pub const EFFECTIVE_CONFIG: &str = "effective.conf";

pub struct KeyDef {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn k(key: &'static str, default: &'static str, help: &'static str) -> KeyDef {
    KeyDef { key, default, help }
}

pub const KEYS: &[KeyDef] = &[
    k("preset", "default", "hyperparameter preset: default or gender (lambda_dom 10)"),
    // features
    k("sample_rate", "16000", "audio sample rate, Hz"),
    k("win_length", "400", "analysis window, samples"),
    k("hop_length", "160", "frame shift, samples"),
    k("fft_size", "512", "FFT size"),
    k("n_mels", "80", "mel bins"),
    k("f_min", "0", "lowest mel filter edge, Hz"),
    k("f_max", "8000", "highest mel filter edge, Hz"),
    k("log_floor", "1e-5", "floor added before the log"),
    // training
    k("model", "proposed", "proposed or cyclegan_baseline"),
    k("learning_rate", "1e-4", "Adam learning rate"),
    k("batch_size", "16", "segments per domain per step"),
    k("total_steps", "1000", "generator steps to train"),
    k("seed", "0", "master seed"),
    k("d_steps_per_g_step", "1", "discriminator updates per generator update"),
    k("lambda_cyc", "1", "cycle-consistency weight"),
    k("lambda_feat", "1", "feature reconstruction weight"),
    k("lambda_cont", "1", "context-code reconstruction weight"),
    k("lambda_dom", "5", "domain-code reconstruction weight"),
    k("log_every", "1", "steps between loss log lines"),
    k("checkpoint_every", "500", "steps between checkpoints, 0 for final only"),
    k("eval_every", "0", "steps between toy evaluations, 0 disables"),
    // toy corpus
    k("toy_n_train_utts", "200", "toy training utterances per domain"),
    k("toy_n_eval_utts", "40", "toy held-out noisy/clean pairs"),
    k("toy_duration_s", "1.0", "toy utterance length, s"),
    k("toy_f0_min", "100", "lowest toy fundamental, Hz"),
    k("toy_f0_max", "300", "highest toy fundamental, Hz"),
    k("toy_n_harmonics", "8", "harmonics per toy tone"),
    k("toy_noise_lo", "2000", "noise band lower edge, Hz"),
    k("toy_noise_hi", "6000", "noise band upper edge, Hz"),
    k("toy_snr_db", "0", "in-band SNR of the noisy domain, dB"),
    k("toy_seed", "0", "toy corpus seed"),
    // paths and command inputs
    k("wav_manifest", "", "extract: manifest of WAV files"),
    k("out_dir", "", "output directory"),
    k("train_a", "", "train: domain A manifest"),
    k("train_b", "", "train: domain B manifest"),
    k("eval_manifest", "", "train/eval-toy: paired noisy/clean manifest"),
    k("norm_stats", "", "normalization stats file; computed if absent (default <run_dir>/norm_stats.melf)"),
    k("run_dir", "", "train: run directory"),
    k("resume", "", "train: checkpoint to resume from"),
    k("checkpoint", "", "convert/eval-toy: checkpoint file"),
    k("input", "", "convert: MELF file or manifest"),
    k("direction", "B2A", "convert: A2B or B2A"),
    k("domain_source", "mean-target", "convert: mean-target, prior or exemplar:<manifest>"),
    k("plot", "false", "convert: also write input/converted PNG heatmaps"),
    k("grad_probes", "200", "selfcheck: gradient probes"),
];

pub fn key_def(key: &str) -> Option<&'static KeyDef> {
    KEYS.iter().find(|d| d.key == key)
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase())
}

fn unknown(key: &str, origin: &str) -> Error {
    Error::InvalidConfig(format!("unknown config key `{key}` ({origin})"))
}

/// Parses a `key = value` document with `#` comments.
pub fn parse_conf(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::ParseError {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = key.trim().replace('-', "_");
        if key_def(&key).is_none() {
            return Err(Error::ParseError {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("unknown config key `{key}`"),
            });
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

/// Resolved configuration with every key present.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl RunConfig {
    /// Layers the sources; `env` and `flags` are `(key, value)` pairs already
    /// named by config key.
    pub fn resolve(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        flags: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut explicit: BTreeMap<&'static str, String> = BTreeMap::new();
        if let Some(p) = file {
            let text = std::fs::read_to_string(p).map_err(|_| Error::MissingFile(p.to_path_buf()))?;
            for (key, v) in parse_conf(&text, p)? {
                explicit.insert(key_def(&key).expect("checked by parse_conf").key, v);
            }
        }
        for (origin, pairs) in [("environment", env.into_iter().collect::<Vec<_>>()), ("flag", flags.into_iter().collect())] {
            for (key, v) in pairs {
                let def = key_def(&key).ok_or_else(|| unknown(&key, origin))?;
                explicit.insert(def.key, v);
            }
        }
        let mut values: BTreeMap<&'static str, String> = KEYS.iter().map(|d| (d.key, d.default.to_string())).collect();
        let preset = explicit.get("preset").map(String::as_str).unwrap_or("default");
        match preset {
            "default" => {}
            "gender" => {
                values.insert("lambda_dom", LossWeights::gender().lambda_dom.to_string());
            }
            other => return Err(Error::InvalidConfig(format!("unknown preset `{other}`, expected default or gender"))),
        }
        values.extend(explicit);
        let cfg = Self { values };
        cfg.mel()?;
        cfg.train()?;
        cfg.toy()?;
        Ok(cfg)
    }

    pub fn defaults() -> Self {
        Self::resolve(None, [], []).expect("built-in defaults are valid")
    }

    /// `SDA_*` variables that name a key. Unknown `SDA_*` names are errors.
    pub fn env_pairs(vars: impl IntoIterator<Item = (String, String)>) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (name, v) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            if rest == "CONFIG" {
                continue;
            }
            let key = rest.to_ascii_lowercase();
            if key_def(&key).is_none() {
                return Err(unknown(&key, &format!("environment variable {name}")));
            }
            out.push((key, v));
        }
        Ok(out)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("no config key `{key}`"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.parse()
            .map_err(|e| Error::InvalidConfig(format!("{key} = `{v}`: {e}")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| Error::InvalidConfig(format!("`{key}` is required (--{})", flag_name(key))))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let def = key_def(key).ok_or_else(|| unknown(key, "set"))?;
        self.values.insert(def.key, value.into());
        Ok(())
    }

    pub fn mel(&self) -> Result<MelConfig> {
        let cfg = MelConfig {
            sample_rate: self.get("sample_rate")?,
            win_length: self.get("win_length")?,
            hop_length: self.get("hop_length")?,
            fft_size: self.get("fft_size")?,
            n_mels: self.get("n_mels")?,
            f_min: self.get("f_min")?,
            f_max: self.get("f_max")?,
            log_floor: self.get("log_floor")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let model: ModelKind = self.get("model")?;
        let cfg = TrainConfig {
            weights: LossWeights {
                lambda_cyc: self.get("lambda_cyc")?,
                lambda_feat: self.get("lambda_feat")?,
                lambda_cont: self.get("lambda_cont")?,
                lambda_dom: self.get("lambda_dom")?,
            },
            learning_rate: self.get("learning_rate")?,
            batch_size: self.get("batch_size")?,
            total_steps: self.get("total_steps")?,
            seed: self.get("seed")?,
            d_steps_per_g_step: self.get("d_steps_per_g_step")?,
            log_every: self.get("log_every")?,
            checkpoint_every: self.get("checkpoint_every")?,
            eval_every: self.get("eval_every")?,
            model,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn toy(&self) -> Result<ToyConfig> {
        Ok(ToyConfig {
            n_train_utts: self.get("toy_n_train_utts")?,
            n_eval_utts: self.get("toy_n_eval_utts")?,
            duration_s: self.get("toy_duration_s")?,
            f0_range: (self.get("toy_f0_min")?, self.get("toy_f0_max")?),
            n_harmonics: self.get("toy_n_harmonics")?,
            noise_band: (self.get("toy_noise_lo")?, self.get("toy_noise_hi")?),
            snr_db: self.get("toy_snr_db")?,
            seed: self.get("toy_seed")?,
        })
    }

    /// Every key, in table order, as a config document.
    pub fn render(&self) -> String {
        let mut s = String::from("# effective configuration\n");
        for d in KEYS {
            let _ = writeln!(s, "{} = {}", d.key, self.raw(d.key));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let p = dir.join(EFFECTIVE_CONFIG);
        std::fs::write(&p, self.render())?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(k: &str, v: &str) -> (String, String) {
        (k.into(), v.into())
    }

    #[test]
    fn defaults_match_core_defaults() {
        let c = RunConfig::defaults();
        assert_eq!(c.mel().unwrap(), MelConfig::default());
        assert_eq!(c.train().unwrap(), TrainConfig::default());
        assert_eq!(c.toy().unwrap(), ToyConfig::default());
    }

    #[test]
    fn precedence_file_env_flag() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.conf");
        std::fs::write(&p, "# c\nseed = 3\nbatch-size = 4 # trailing\nlambda_cyc=2\n").unwrap();
        let c = RunConfig::resolve(Some(&p), [kv("seed", "5")], [kv("lambda_cyc", "7")]).unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), 5);
        assert_eq!(c.get::<usize>("batch_size").unwrap(), 4);
        assert_eq!(c.train().unwrap().weights.lambda_cyc, 7.0);
    }

    #[test]
    fn gender_preset_sets_lambda_dom_unless_overridden() {
        let c = RunConfig::resolve(None, [], [kv("preset", "gender")]).unwrap();
        assert_eq!(c.train().unwrap().weights.lambda_dom, 10.0);
        let c = RunConfig::resolve(None, [], [kv("preset", "gender"), kv("lambda_dom", "2")]).unwrap();
        assert_eq!(c.train().unwrap().weights.lambda_dom, 2.0);
        assert!(RunConfig::resolve(None, [], [kv("preset", "x")]).is_err());
    }

    #[test]
    fn unknown_keys_rejected_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.conf");
        std::fs::write(&p, "seed = 1\nbogus = 2\n").unwrap();
        assert!(matches!(RunConfig::resolve(Some(&p), [], []), Err(Error::ParseError { line: 2, .. })));
        assert!(RunConfig::resolve(None, [], [kv("bogus", "1")]).is_err());
        assert!(RunConfig::env_pairs([kv("SDA_BOGUS", "1")]).is_err());
        let e = RunConfig::env_pairs([kv("SDA_LAMBDA_DOM", "3"), kv("HOME", "/"), kv("SDA_CONFIG", "x")]).unwrap();
        assert_eq!(e, vec![kv("lambda_dom", "3")]);
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(RunConfig::resolve(None, [], [kv("batch_size", "zero")]).is_err());
        assert!(RunConfig::resolve(None, [], [kv("model", "vae")]).is_err());
        assert!(RunConfig::resolve(None, [], [kv("learning_rate", "0")]).is_err());
    }

    #[test]
    fn effective_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig::resolve(None, [], [kv("preset", "gender"), kv("seed", "9"), kv("out_dir", "x y")]).unwrap();
        let p = c.write(dir.path()).unwrap();
        let back = RunConfig::resolve(Some(&p), [], []).unwrap();
        assert_eq!(back, c);
    }
}
