//! Flat `key = value` run configuration with `[section]` headers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::CliError;
use crate::pipeline::{ModelConfig, StageConfig};

/// Every accepted key (`section.key`, or a bare key for the top level) with
/// its default, in the order the resolved file lists them.
fn defaults() -> Vec<(&'static str, String)> {
    let m = ModelConfig::default();
    let t = StageConfig::stage1();
    vec![
        ("seed", "0".into()),
        ("out", "molm-out".into()),
        ("prompt_mode", "both".into()),
        ("data.molecules", String::new()),
        ("data.instructions", String::new()),
        ("data.datasets", String::new()),
        ("data.valid", String::new()),
        ("data.ratios", "0.8, 0.1, 0.1".into()),
        ("data.descriptive_count", "5".into()),
        ("data.conformers", "synthetic".into()),
        ("model.encoder_layers", m.encoder.layers.to_string()),
        ("model.encoder_dim", m.encoder.dim.to_string()),
        ("model.encoder_heads", m.encoder.heads.to_string()),
        ("model.gaussian_kernels", m.encoder.gaussian_kernels.to_string()),
        ("model.d_max", m.encoder.d_max.to_string()),
        ("model.num_queries", m.projector.num_queries.to_string()),
        ("model.projector_blocks", m.projector.blocks.to_string()),
        ("model.projector_dim", m.projector.dim.to_string()),
        ("model.projector_heads", m.projector.heads.to_string()),
        ("model.cross_attention_every", m.projector.cross_attention_every.to_string()),
        ("model.max_text_len", m.projector.max_text_len.to_string()),
        ("model.contrast_dim", m.projector.contrast_dim.to_string()),
        ("model.lm_layers", m.lm.layers.to_string()),
        ("model.lm_dim", m.lm.dim.to_string()),
        ("model.lm_heads", m.lm.heads.to_string()),
        ("model.max_seq_len", m.lm.max_seq_len.to_string()),
        ("pretrain.lm_steps", "0".into()),
        ("pretrain.encoder_steps", "0".into()),
        ("pretrain.peak_lr", "0.003".into()),
        ("pretrain.min_lr", "0.0001".into()),
        ("pretrain.warmup_steps", "20".into()),
        ("pretrain.batch_size", "16".into()),
        ("train.init", String::new()),
        ("train.peak_lr", t.peak_lr.to_string()),
        ("train.min_lr", t.min_lr.to_string()),
        ("train.warmup_steps", t.warmup_steps.to_string()),
        ("train.weight_decay", t.weight_decay.to_string()),
        ("train.max_steps", "0".into()),
        ("train.epochs", t.epochs.unwrap_or(1).to_string()),
        ("train.batch_size", t.batch_size.to_string()),
        ("train.grad_accum", t.grad_accum.to_string()),
        ("train.loss_scope", "response_only".into()),
        ("train.temperature", t.temperature.to_string()),
        ("train.mtc_weight", t.weights.mtc.to_string()),
        ("train.mtm_weight", t.weights.mtm.to_string()),
        ("train.caption_weight", t.weights.caption.to_string()),
        ("train.lora_rank", t.lora.rank.to_string()),
        ("train.lora_alpha", t.lora.alpha.to_string()),
        ("train.lora_dropout", t.lora.dropout.to_string()),
        ("train.validate_every", t.validate_every.to_string()),
        ("train.mixing", "generalist".into()),
        ("eval.checkpoint", String::new()),
        ("eval.batch_size", "64".into()),
        ("eval.k", "20".into()),
        ("eval.rerank_mtm", "0".into()),
        ("eval.max_new", "128".into()),
    ]
}

/// Parses config text into `section.key → value`. Lines starting with `#`
/// or `;` are comments.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |message: String| CliError::Config { line: i + 1, message };
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| err("unterminated section header".into()))?.trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(err(format!("bad section name {name:?}")));
            }
            section = name.to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found {line:?}")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(err("empty key".into()));
        }
        let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(err(format!("`{key}` is set twice")));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: defaults().into_iter().collect() }
    }
}

impl RunConfig {
    /// Defaults overlaid with `text`; unknown keys are rejected.
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (k, v) in parse(text)? {
            cfg.set(&k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_text(&text)
            }
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        let slot = self.values.get_mut(key).ok_or_else(|| CliError::Usage(format!("unknown config key `{key}`")))?;
        *slot = value.into();
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("config key `{key}` is not declared"))
    }

    /// The value of `key` parsed as `T`.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.parse().map_err(|e| CliError::Usage(format!("`{key} = {v}`: {e}")))
    }

    /// `None` for an empty value.
    pub fn path(&self, key: &str) -> Option<std::path::PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| v.into())
    }

    /// Comma-separated list; empty for an empty value.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        if v.trim().is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| s.trim().parse().map_err(|e| CliError::Usage(format!("`{key} = {v}`: {e}"))))
            .collect()
    }

    /// Every key with its effective value, readable by [`RunConfig::from_text`].
    pub fn resolved_text(&self) -> String {
        let mut s = String::new();
        let mut section = "";
        for (key, _) in defaults() {
            let (sec, name) = key.split_once('.').unwrap_or(("", key));
            if sec != section {
                let _ = writeln!(s, "\n[{sec}]");
                section = sec;
            }
            let _ = writeln!(s, "{name} = {}", self.values[key]);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let m = parse("seed = 3\n# note\n[train]\npeak_lr = 0.01\n\n[eval]\nk=5\n").unwrap();
        assert_eq!(m["seed"], "3");
        assert_eq!(m["train.peak_lr"], "0.01");
        assert_eq!(m["eval.k"], "5");
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(parse("[train\n"), Err(CliError::Config { line: 1, .. })));
        assert!(matches!(parse("a = 1\nno equals\n"), Err(CliError::Config { line: 2, .. })));
        assert!(matches!(parse("a = 1\na = 2\n"), Err(CliError::Config { line: 2, .. })));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_text("[train]\nlearning_rate = 1\n"), Err(CliError::Usage(_))));
        assert!(RunConfig::from_text("[train]\npeak_lr = 1\n").is_ok());
    }

    #[test]
    fn resolved_round_trips() {
        let mut c = RunConfig::from_text("seed = 9\n[data]\nratios = 0.5, 0.25, 0.25\n").unwrap();
        c.set("eval.k", "3").unwrap();
        let back = RunConfig::from_text(&c.resolved_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.get::<u64>("seed").unwrap(), 9);
        assert_eq!(back.list::<f64>("data.ratios").unwrap(), vec![0.5, 0.25, 0.25]);
        assert!(back.path("train.init").is_none());
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let c = RunConfig::from_text("seed = x\n").unwrap();
        assert!(matches!(c.get::<u64>("seed"), Err(CliError::Usage(_))));
    }
}
