//! Run configuration: one flat `key = value` text file covering the model,
//! the noise schedule, the optimizer and the sampler, with overrides layered
//! in a fixed precedence order:
//!
//! ```text
//! built-in defaults  <  config file  <  DIFFSTYLE_* env vars  <  CLI
//! ```
//!
//! Within each source the pseudo-key `profile` (a named denoiser preset) is
//! expanded first, so `profile = paper` plus `layers = 2` means "the paper
//! preset with two layers" no matter which line comes first. Env vars are
//! the upper-cased keys with a `DIFFSTYLE_` prefix (`DIFFSTYLE_LR=0.01`),
//! applied in alphabetical order.

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::denoiser::DenoiserConfig;
use crate::diffusion::{linear_schedule, NoiseSchedule};
use crate::trainer::TrainConfig;

/// Environment variable prefix for overrides.
pub const ENV_PREFIX: &str = "DIFFSTYLE_";

/// Every settable key, in render order. `profile` is accepted by
/// [`RunConfig::set`] but not rendered (it expands into concrete keys).
pub const KEYS: &[&str] = &[
    "layers",
    "heads",
    "model_dim",
    "ffn_dim",
    "max_cond_len",
    "max_target_len",
    "dropout",
    "mask_cond_pad",
    "schedule_steps",
    "beta_start",
    "beta_end",
    "lr",
    "warmup",
    "clip",
    "weight_decay",
    "batch_size",
    "max_steps",
    "ckpt_every",
    "valid_every",
    "target_loss",
    "seed",
    "clamp",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: expected `key = value`, got {text:?}")]
    BadLine {
        path: PathBuf,
        line: usize,
        text: String,
    },
    #[error("unknown config key {key:?}; valid keys: profile, {valid}")]
    UnknownKey { key: String, valid: String },
    #[error("config key {key:?}: cannot parse {value:?} ({reason})")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("bad override {0:?}: expected key=value")]
    BadOverride(String),
    #[error("env var {0}: value is not valid UTF-8")]
    BadEnvValue(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn unknown_key(key: &str) -> ConfigError {
    ConfigError::UnknownKey {
        key: key.to_string(),
        valid: KEYS.join(", "),
    }
}

/// The full knob set for a run. Field groups mirror the module structs they
/// configure.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub denoiser: DenoiserConfig,
    pub train: TrainConfig,
    /// Diffusion steps `T`.
    pub schedule_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Snap intermediate states to their nearest embeddings while sampling.
    pub clamp: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            denoiser: DenoiserConfig::desk(),
            train: TrainConfig::default(),
            schedule_steps: 2000,
            beta_start: 1e-4,
            beta_end: 0.02,
            clamp: false,
        }
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(ConfigError::BadValue {
            key: key.to_string(),
            value: other.to_string(),
            reason: "expected true/false/1/0".to_string(),
        }),
    }
}

impl RunConfig {
    /// Set one key from its text form. `profile` expands a denoiser preset
    /// (`desk` or `paper`) in place.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "profile" => {
                self.denoiser = match value.trim() {
                    "desk" => DenoiserConfig::desk(),
                    "paper" => DenoiserConfig::paper(),
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            value: other.to_string(),
                            reason: "expected desk or paper".to_string(),
                        })
                    }
                };
            }
            "layers" => self.denoiser.layers = parse_as(key, value)?,
            "heads" => self.denoiser.heads = parse_as(key, value)?,
            "model_dim" => self.denoiser.model_dim = parse_as(key, value)?,
            "ffn_dim" => self.denoiser.ffn_dim = parse_as(key, value)?,
            "max_cond_len" => self.denoiser.max_cond_len = parse_as(key, value)?,
            "max_target_len" => self.denoiser.max_target_len = parse_as(key, value)?,
            "dropout" => self.denoiser.dropout = parse_as(key, value)?,
            "mask_cond_pad" => self.denoiser.mask_cond_pad = parse_bool(key, value)?,
            "schedule_steps" => self.schedule_steps = parse_as(key, value)?,
            "beta_start" => self.beta_start = parse_as(key, value)?,
            "beta_end" => self.beta_end = parse_as(key, value)?,
            "lr" => self.train.lr = parse_as(key, value)?,
            "warmup" => self.train.warmup = parse_as(key, value)?,
            "clip" => self.train.clip = parse_as(key, value)?,
            "weight_decay" => self.train.weight_decay = parse_as(key, value)?,
            "batch_size" => self.train.batch_size = parse_as(key, value)?,
            "max_steps" => self.train.max_steps = parse_as(key, value)?,
            "ckpt_every" => self.train.ckpt_every = parse_as(key, value)?,
            "valid_every" => self.train.valid_every = parse_as(key, value)?,
            "target_loss" => self.train.target_loss = parse_as(key, value)?,
            "seed" => self.train.seed = parse_as(key, value)?,
            "clamp" => self.clamp = parse_bool(key, value)?,
            other => return Err(unknown_key(other)),
        }
        Ok(())
    }

    fn apply_pairs(&mut self, pairs: &[(String, String)]) -> Result<(), ConfigError> {
        for (k, v) in pairs.iter().filter(|(k, _)| k == "profile") {
            self.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "profile") {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Layer in a config file: `key = value` lines, `#` comments, blank
    /// lines ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::BadLine {
                path: path.to_path_buf(),
                line: i + 1,
                text: raw.to_string(),
            })?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        self.apply_pairs(&pairs)
    }

    /// Layer in explicit name/value pairs as if they were `DIFFSTYLE_*` env
    /// vars (names with the prefix already stripped are also accepted).
    /// Applied in alphabetical key order.
    pub fn apply_env_pairs(&mut self, vars: &[(String, String)]) -> Result<(), ConfigError> {
        let mut pairs: Vec<(String, String)> = vars
            .iter()
            .map(|(name, value)| {
                let stripped = name.strip_prefix(ENV_PREFIX).unwrap_or(name);
                (stripped.to_lowercase(), value.clone())
            })
            .collect();
        pairs.sort();
        self.apply_pairs(&pairs)
    }

    /// Layer in overrides from the process environment (`DIFFSTYLE_*`).
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        let mut vars = Vec::new();
        for (name, value) in std::env::vars_os() {
            let Some(name) = name.to_str() else { continue };
            if !name.starts_with(ENV_PREFIX) {
                continue;
            }
            let value = value
                .to_str()
                .ok_or_else(|| ConfigError::BadEnvValue(name.to_string()))?
                .to_string();
            vars.push((name.to_string(), value));
        }
        self.apply_env_pairs(&vars)
    }

    /// Layer in CLI `--set key=value` overrides, in the order given.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<(), ConfigError> {
        let mut pairs = Vec::new();
        for item in sets {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| ConfigError::BadOverride(item.clone()))?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        self.apply_pairs(&pairs)
    }

    /// Resolve the full precedence stack: defaults, then `file`, then the
    /// process environment, then `--set` pairs, then `--seed` (the most
    /// specific spelling of the seed wins). Validates the result.
    pub fn load(
        file: Option<&Path>,
        sets: &[String],
        seed: Option<u64>,
    ) -> Result<RunConfig, ConfigError> {
        let mut env = Vec::new();
        for (name, value) in std::env::vars_os() {
            let Some(name) = name.to_str() else { continue };
            if name.starts_with(ENV_PREFIX) {
                let value = value
                    .to_str()
                    .ok_or_else(|| ConfigError::BadEnvValue(name.to_string()))?
                    .to_string();
                env.push((name.to_string(), value));
            }
        }
        Self::load_from(file, &env, sets, seed)
    }

    /// [`RunConfig::load`] with the environment passed explicitly.
    pub fn load_from(
        file: Option<&Path>,
        env: &[(String, String)],
        sets: &[String],
        seed: Option<u64>,
    ) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        cfg.apply_env_pairs(env)?;
        cfg.apply_overrides(sets)?;
        if let Some(seed) = seed {
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check the assembled configuration, including schedule constructability.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.denoiser
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.build_schedule()?;
        Ok(())
    }

    /// Construct the noise schedule these knobs describe.
    pub fn build_schedule(&self) -> Result<NoiseSchedule, ConfigError> {
        linear_schedule(self.schedule_steps, self.beta_start, self.beta_end)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "layers" => self.denoiser.layers.to_string(),
            "heads" => self.denoiser.heads.to_string(),
            "model_dim" => self.denoiser.model_dim.to_string(),
            "ffn_dim" => self.denoiser.ffn_dim.to_string(),
            "max_cond_len" => self.denoiser.max_cond_len.to_string(),
            "max_target_len" => self.denoiser.max_target_len.to_string(),
            "dropout" => self.denoiser.dropout.to_string(),
            "mask_cond_pad" => self.denoiser.mask_cond_pad.to_string(),
            "schedule_steps" => self.schedule_steps.to_string(),
            "beta_start" => self.beta_start.to_string(),
            "beta_end" => self.beta_end.to_string(),
            "lr" => self.train.lr.to_string(),
            "warmup" => self.train.warmup.to_string(),
            "clip" => self.train.clip.to_string(),
            "weight_decay" => self.train.weight_decay.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "max_steps" => self.train.max_steps.to_string(),
            "ckpt_every" => self.train.ckpt_every.to_string(),
            "valid_every" => self.train.valid_every.to_string(),
            "target_loss" => self.train.target_loss.to_string(),
            "seed" => self.train.seed.to_string(),
            "clamp" => self.clamp.to_string(),
            other => unreachable!("unlisted key {other}"),
        }
    }

    /// Render as a config file that parses back to the identical value.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.value_of(key));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_desk_profile_with_canonical_schedule() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.denoiser, DenoiserConfig::desk());
        assert_eq!(cfg.schedule_steps, 2000);
        assert_eq!(cfg.beta_start, 1e-4);
        assert_eq!(cfg.beta_end, 0.02);
        assert!(!cfg.clamp, "clamping is an opt-in trick, off by default");
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn every_key_renders_and_parses_back() {
        let mut cfg = RunConfig::default();
        cfg.set("profile", "paper").unwrap();
        cfg.set("dropout", "0.2").unwrap();
        cfg.set("mask_cond_pad", "true").unwrap();
        cfg.set("schedule_steps", "200").unwrap();
        cfg.set("lr", "0.001").unwrap();
        cfg.set("seed", "99").unwrap();
        cfg.set("clamp", "true").unwrap();
        let rendered = cfg.render();
        for key in KEYS {
            assert!(rendered.contains(&format!("{key} = ")), "missing {key}");
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, &rendered).unwrap();
        let mut reread = RunConfig::default();
        reread.apply_file(&path).unwrap();
        assert_eq!(reread, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_valid_list() {
        let err = RunConfig::default().set("laers", "3").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("laers"), "{msg}");
        assert!(msg.contains("layers"), "{msg}");
        assert!(msg.contains("beta_start"), "{msg}");
    }

    #[test]
    fn bad_values_name_the_key_and_value() {
        let err = RunConfig::default().set("layers", "many").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("layers") && msg.contains("many"), "{msg}");
        let err = RunConfig::default().set("clamp", "maybe").unwrap_err();
        assert!(err.to_string().contains("true/false"), "{err}");
        let err = RunConfig::default().set("profile", "huge").unwrap_err();
        assert!(err.to_string().contains("desk or paper"), "{err}");
    }

    #[test]
    fn files_support_comments_and_expand_profile_first() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# comment line\n\nlayers = 2   # trailing comment\nprofile = paper\nlr=0.5\n",
        )
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_file(&path).unwrap();
        // The preset expands before the explicit keys regardless of line
        // order, so layers = 2 survives while the rest is the paper preset.
        assert_eq!(cfg.denoiser.layers, 2);
        assert_eq!(cfg.denoiser.heads, DenoiserConfig::paper().heads);
        assert_eq!(cfg.denoiser.model_dim, DenoiserConfig::paper().model_dim);
        assert_eq!(cfg.train.lr, 0.5);

        std::fs::write(&path, "layers 4\n").unwrap();
        assert!(matches!(
            RunConfig::default().apply_file(&path),
            Err(ConfigError::BadLine { line: 1, .. })
        ));

        std::fs::write(&path, "lr = 0.1\nlr = 0.2\n").unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.train.lr, 0.2, "last duplicate wins");
    }

    #[test]
    fn env_pairs_strip_the_prefix_and_lowercase() {
        let mut cfg = RunConfig::default();
        cfg.apply_env_pairs(&[
            ("DIFFSTYLE_LR".to_string(), "0.01".to_string()),
            ("DIFFSTYLE_PROFILE".to_string(), "paper".to_string()),
            ("DIFFSTYLE_LAYERS".to_string(), "3".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.denoiser.layers, 3);
        assert_eq!(cfg.denoiser.heads, DenoiserConfig::paper().heads);

        let err = RunConfig::default()
            .apply_env_pairs(&[("DIFFSTYLE_TYPO".to_string(), "1".to_string())])
            .unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }));
    }

    #[test]
    fn precedence_matrix_default_file_env_cli() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "lr = 1.0\nwarmup = 7\n").unwrap();
        let env = vec![("DIFFSTYLE_LR".to_string(), "2.0".to_string())];
        let sets = vec!["lr=3.0".to_string(), "seed=5".to_string()];

        // Default only.
        let cfg = RunConfig::load_from(None, &[], &[], None).unwrap();
        assert_eq!(cfg.train.lr, TrainConfig::default().lr);

        // File beats default; untouched keys keep defaults.
        let cfg = RunConfig::load_from(Some(&path), &[], &[], None).unwrap();
        assert_eq!(cfg.train.lr, 1.0);
        assert_eq!(cfg.train.warmup, 7);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);

        // Env beats file but leaves other file keys alone.
        let cfg = RunConfig::load_from(Some(&path), &env, &[], None).unwrap();
        assert_eq!(cfg.train.lr, 2.0);
        assert_eq!(cfg.train.warmup, 7);

        // --set beats env; --seed beats a --set of the seed.
        let cfg = RunConfig::load_from(Some(&path), &env, &sets, Some(11)).unwrap();
        assert_eq!(cfg.train.lr, 3.0);
        assert_eq!(cfg.train.seed, 11);

        // Without --seed the --set value stands.
        let cfg = RunConfig::load_from(Some(&path), &env, &sets, None).unwrap();
        assert_eq!(cfg.train.seed, 5);

        // Env alone beats default.
        let cfg = RunConfig::load_from(None, &env, &[], None).unwrap();
        assert_eq!(cfg.train.lr, 2.0);

        // Malformed --set is rejected.
        let err = RunConfig::load_from(None, &[], &["lr:3".to_string()], None).unwrap_err();
        assert!(matches!(err, ConfigError::BadOverride(_)));
    }

    #[test]
    fn load_validates_the_final_configuration() {
        // 5 heads do not divide the desk model dim of 128.
        let err =
            RunConfig::load_from(None, &[], &["heads=5".to_string()], None).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
        let err =
            RunConfig::load_from(None, &[], &["beta_start=0".to_string()], None).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
        // A valid override set builds a usable schedule.
        let cfg = RunConfig::load_from(
            None,
            &[],
            &["schedule_steps=200".to_string()],
            None,
        )
        .unwrap();
        assert_eq!(cfg.build_schedule().unwrap().steps(), 200);
    }
}
