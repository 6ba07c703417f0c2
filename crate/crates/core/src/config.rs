//! The single JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::multitask::FinetuneConfig;
use crate::pretrain::PretrainConfig;
use crate::synthcorpus::CorpusConfig;

/// Environment variable overriding every seed; `--seed` wins over it.
pub const SEED_ENV: &str = "TAPFM_SEED";

const SECTIONS: [&str; 3] = ["corpus", "pretrain", "finetune"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Generated corpus and task datasets. Relative paths resolve against
    /// the config file's directory.
    pub corpus_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { corpus_dir: PathBuf::from("corpus") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    pub corpus: CorpusConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
}

impl RunConfig {
    /// Parses a config. Sections without their own `seed` inherit the
    /// top-level one (default 42); an override replaces every seed.
    pub fn from_json(text: &str, seed_override: Option<u64>) -> Result<RunConfig> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let obj = doc.as_object_mut().ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        let top = match seed_override {
            Some(s) => s,
            None => match obj.get("seed") {
                None => 42,
                Some(v) => v.as_u64().ok_or_else(|| Error::Config("seed must be a non-negative integer".into()))?,
            },
        };
        obj.insert("seed".into(), Value::from(top));
        for name in SECTIONS {
            let section = obj.entry(name).or_insert_with(|| Value::Object(Default::default()));
            let sec = section.as_object_mut().ok_or_else(|| Error::Config(format!("{name} must be an object")))?;
            if seed_override.is_some() || !sec.contains_key("seed") {
                sec.insert("seed".into(), Value::from(top));
            }
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        cfg.corpus.validate()?;
        cfg.pretrain.validate()?;
        cfg.finetune.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_json(&text, seed_override)?;
        if cfg.paths.corpus_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.paths.corpus_dir = base.join(&cfg.paths.corpus_dir);
        }
        Ok(cfg)
    }
}

/// Seed override from the flag, else from [`SEED_ENV`].
pub fn seed_override(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Usage(format!("{SEED_ENV}={v:?} is not a non-negative integer"))),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_materialized() {
        let c = RunConfig::from_json(r#"{"seed": 5, "pretrain": {"seed": 9}}"#, None).unwrap();
        assert_eq!((c.seed, c.corpus.seed, c.pretrain.seed, c.finetune.seed), (5, 5, 9, 5));
        let c = RunConfig::from_json(r#"{"pretrain": {"seed": 9}}"#, Some(3)).unwrap();
        assert_eq!((c.seed, c.corpus.seed, c.pretrain.seed, c.finetune.seed), (3, 3, 3, 3));
        let c = RunConfig::from_json("{}", None).unwrap();
        assert_eq!(c.corpus.seed, 42);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"colour": 1}"#, None).is_err());
        assert!(RunConfig::from_json(r#"{"pretrain": {"epoch": 3}}"#, None).is_err());
        assert!(RunConfig::from_json(r#"{"finetune": {"frontend": {"blocks": 2}}}"#, None).is_err());
    }

    #[test]
    fn invalid_sections_are_rejected() {
        let e = RunConfig::from_json(r#"{"corpus": {"speakers": 1}}"#, None).unwrap_err();
        assert!(e.to_string().contains("speakers"));
        let e = RunConfig::from_json(r#"{"finetune": {"best_metric": [1, 0, 1]}}"#, None).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
