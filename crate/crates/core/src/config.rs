//! Run configuration: `key=value` lines grouped under `[model]`, `[train]`
//! and `[paths]` headers. `#` starts a comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::layers::AttentionKind;
use crate::tensorkit::{Hyperparams, DEFAULT_SEED};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub ctrl_layers: usize,
    pub ctrl_hidden: usize,
    pub memory_size: usize,
    pub tau: f64,
    pub reviser_kind: AttentionKind,
    pub reviser_layers: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lstm_layers: 1,
            lstm_hidden: 256,
            ctrl_layers: 1,
            ctrl_hidden: 256,
            memory_size: 5,
            tau: 0.5,
            reviser_kind: AttentionKind::Softmax,
            reviser_layers: 2,
            d_model: 256,
            ffn_dim: 1024,
            heads: 8,
            embed_dim: 300,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    /// `None` disables clipping.
    pub clip: Option<f64>,
    pub epochs: usize,
    pub patience: usize,
    pub warmup: usize,
    pub dropout: f64,
    pub seed: u64,
    pub unk_prob: f64,
    pub delay: usize,
    /// Fraction of the training corpus held out for early stopping.
    pub val_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch: 32,
            clip: Some(1.0),
            epochs: 50,
            patience: 10,
            warmup: 5,
            dropout: 0.1,
            seed: DEFAULT_SEED,
            unk_prob: 0.02,
            delay: 0,
            val_frac: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathsConfig {
    pub embeddings: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: PathsConfig,
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_clip(value: &str) -> Result<Option<f64>> {
    match value {
        "none" | "off" | "0" => Ok(None),
        v => parse_value("clip", v).map(Some),
    }
}

impl ModelConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lstm_layers" => self.lstm_layers = parse_value(key, value)?,
            "lstm_hidden" => self.lstm_hidden = parse_value(key, value)?,
            "ctrl_layers" => self.ctrl_layers = parse_value(key, value)?,
            "ctrl_hidden" => self.ctrl_hidden = parse_value(key, value)?,
            "memory_size" => self.memory_size = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "reviser_kind" => {
                self.reviser_kind = AttentionKind::parse(value)
                    .ok_or_else(|| Error::Config(format!("reviser_kind must be trf or lt, got {value:?}")))?
            }
            "reviser_layers" => self.reviser_layers = parse_value(key, value)?,
            "d_model" => self.d_model = parse_value(key, value)?,
            "ffn_dim" => self.ffn_dim = parse_value(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lstm_layers", self.lstm_layers),
            ("lstm_hidden", self.lstm_hidden),
            ("ctrl_layers", self.ctrl_layers),
            ("ctrl_hidden", self.ctrl_hidden),
            ("memory_size", self.memory_size),
            ("reviser_layers", self.reviser_layers),
            ("d_model", self.d_model),
            ("ffn_dim", self.ffn_dim),
            ("heads", self.heads),
            ("embed_dim", self.embed_dim),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    pub fn to_hparams(&self, h: &mut Hyperparams) {
        let mut put = |k: &str, v: String| {
            h.insert(k.to_string(), v);
        };
        put("lstm_layers", self.lstm_layers.to_string());
        put("lstm_hidden", self.lstm_hidden.to_string());
        put("ctrl_layers", self.ctrl_layers.to_string());
        put("ctrl_hidden", self.ctrl_hidden.to_string());
        put("memory_size", self.memory_size.to_string());
        put("tau", self.tau.to_string());
        put("reviser_kind", self.reviser_kind.name().to_string());
        put("reviser_layers", self.reviser_layers.to_string());
        put("d_model", self.d_model.to_string());
        put("ffn_dim", self.ffn_dim.to_string());
        put("heads", self.heads.to_string());
        put("embed_dim", self.embed_dim.to_string());
    }

    /// Reads every model key present in `h`; missing keys keep their defaults.
    pub fn from_hparams(h: &Hyperparams) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in h {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lr" => self.lr = parse_value(key, value)?,
            "batch" => self.batch = parse_value(key, value)?,
            "clip" => self.clip = parse_clip(value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "warmup" => self.warmup = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "unk_prob" => self.unk_prob = parse_value(key, value)?,
            "delay" => self.delay = parse_value(key, value)?,
            "val_frac" => self.val_frac = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Config("batch and epochs must be positive".into()));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::Config("clip must be positive or none".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.unk_prob) {
            return Err(Error::Config("dropout and unk_prob must be probabilities".into()));
        }
        if self.delay > 2 {
            return Err(Error::Config(format!("delay must be 0, 1 or 2, got {}", self.delay)));
        }
        if !(0.0..1.0).contains(&self.val_frac) {
            return Err(Error::Config("val_frac must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !matches!(section.as_str(), "model" | "train" | "paths") {
                    return Err(Error::Config(format!("line {}: unknown section [{section}]", i + 1)));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let known = match section.as_str() {
                "model" => cfg.model.set(key, value)?,
                "train" => cfg.train.set(key, value)?,
                "paths" => match key {
                    "embeddings" => {
                        cfg.paths.embeddings = (!value.is_empty()).then(|| PathBuf::from(value));
                        true
                    }
                    _ => false,
                },
                _ => return Err(Error::Config(format!("line {}: key outside a section", i + 1))),
            };
            if !known {
                return Err(Error::Config(format!("line {}: unknown key {key:?} in [{section}]", i + 1)));
            }
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut h = Hyperparams::new();
        self.model.to_hparams(&mut h);
        let mut out = String::from("[model]\n");
        for (k, v) in &h {
            let _ = writeln!(out, "{k}={v}");
        }
        let t = &self.train;
        let clip = t.clip.map_or("none".to_string(), |c| c.to_string());
        let _ = write!(
            out,
            "\n[train]\nlr={}\nbatch={}\nclip={clip}\nepochs={}\npatience={}\nwarmup={}\ndropout={}\nseed={}\nunk_prob={}\ndelay={}\nval_frac={}\n",
            t.lr, t.batch, t.epochs, t.patience, t.warmup, t.dropout, t.seed, t.unk_prob, t.delay, t.val_frac
        );
        out.push_str("\n[paths]\n");
        if let Some(p) = &self.paths.embeddings {
            let _ = writeln!(out, "embeddings={}", p.display());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_sections() {
        let cfg = Config::parse(
            "# desk\n[model]\nlstm_hidden=32\ntau = 0.3\nreviser_kind=lt\nd_model=32\nheads=4\n\n[train]\nclip=none\ndelay=1\n[paths]\nembeddings=\n",
        )
        .unwrap();
        assert_eq!(cfg.model.lstm_hidden, 32);
        assert_eq!(cfg.model.tau, 0.3);
        assert_eq!(cfg.model.reviser_kind, AttentionKind::Linear);
        assert_eq!(cfg.train.clip, None);
        assert_eq!(cfg.train.delay, 1);
        assert_eq!(cfg.train.seed, DEFAULT_SEED);
        assert_eq!(cfg.paths.embeddings, None);
    }

    #[test]
    fn defaults() {
        let c = Config::default();
        assert_eq!(c.model.heads, 8);
        assert_eq!(c.model.embed_dim, 300);
        assert_eq!((c.train.epochs, c.train.patience), (50, 10));
        assert_eq!((c.train.dropout, c.train.unk_prob), (0.1, 0.02));
        assert_eq!(c.train.seed, 42119392);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Config::parse("[model]\ntau=1.5\n").is_err());
        assert!(Config::parse("[model]\nbogus=1\n").is_err());
        assert!(Config::parse("lr=1\n").is_err());
        assert!(Config::parse("[weird]\n").is_err());
        assert!(Config::parse("[model]\nd_model=30\nheads=8\n").is_err());
        assert!(Config::parse("[train]\ndelay=3\n").is_err());
        assert!(matches!(Config::parse("[model]\nheads=x\n"), Err(Error::Config(_))));
    }

    #[test]
    fn text_and_hparams_roundtrip() {
        let mut c = Config::default();
        c.model.tau = 0.25;
        c.train.clip = None;
        c.paths.embeddings = Some("glove.txt".into());
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        let mut h = Hyperparams::new();
        c.model.to_hparams(&mut h);
        assert_eq!(ModelConfig::from_hparams(&h).unwrap(), c.model);
    }
}
