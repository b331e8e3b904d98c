//! Model and training configuration, plus the key=value config file.
//!
//! A config file is plain text: one `key=value` per line, `#` comments,
//! blank lines ignored. Every key must be consumed by a known setting;
//! leftovers are an error that lists them. Command-line flags override
//! file values, so loading order is file first, flags second.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Result, SldsError};
use crate::scaffold::NUM_LABELS;

/// Which generative model a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Switching dynamics over the three sentiment states.
    Slds,
    /// Single-state linear dynamics; no classifier, no state KL.
    Lds,
    /// Unconditional language model; no latent chain at all.
    Lm,
}

impl ModelKind {
    /// Number of discrete states in the latent chain.
    pub fn states(&self) -> usize {
        match self {
            ModelKind::Slds => NUM_LABELS,
            ModelKind::Lds => 1,
            ModelKind::Lm => 0,
        }
    }

    pub fn has_latent(&self) -> bool {
        !matches!(self, ModelKind::Lm)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Slds => "slds",
            ModelKind::Lds => "lds",
            ModelKind::Lm => "lm",
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "slds" => Ok(ModelKind::Slds),
            "lds" => Ok(ModelKind::Lds),
            "lm" => Ok(ModelKind::Lm),
            other => Err(format!("unknown model kind `{other}` (expected slds, lds, or lm)")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture sizes. Vocabulary size is data-derived and lives with
/// the checkpoint, not here.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Latent dimension d (0 is forced for the plain LM).
    pub latent_dim: usize,
    pub embed_dim: usize,
    /// Emission GRU hidden size.
    pub hidden_dim: usize,
    /// Recognition (sentence and context) GRU hidden size.
    pub recog_hidden: usize,
    /// Per-state embedding fed to the posterior network.
    pub state_embed: usize,
    /// Posterior MLP hidden size.
    pub posterior_hidden: usize,
    /// Minimum token frequency kept in the vocabulary.
    pub vocab_cutoff: usize,
}

impl ModelConfig {
    pub fn default_for(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            latent_dim: if kind.has_latent() { 16 } else { 0 },
            embed_dim: 64,
            hidden_dim: 128,
            recog_hidden: 64,
            state_embed: 8,
            posterior_hidden: 64,
            vocab_cutoff: 5,
        }
    }

    /// Applies config-file keys on top of the defaults for `kind`.
    pub fn from_file(kind: ModelKind, file: &mut ConfigFile) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::default_for(kind);
        if let Some(d) = file.take("d")? {
            cfg.latent_dim = d;
        }
        if let Some(k) = file.take::<usize>("k")? {
            if k != kind.states() {
                return Err(SldsError::ConfigValue {
                    key: "k".into(),
                    msg: format!("{kind} model has {} states, config says {k}", kind.states()),
                });
            }
        }
        if let Some(v) = file.take("embed")? {
            cfg.embed_dim = v;
        }
        if let Some(v) = file.take("hidden")? {
            cfg.hidden_dim = v;
        }
        if let Some(v) = file.take("recog_hidden")? {
            cfg.recog_hidden = v;
        }
        if let Some(v) = file.take("state_embed")? {
            cfg.state_embed = v;
        }
        if let Some(v) = file.take("posterior_hidden")? {
            cfg.posterior_hidden = v;
        }
        if let Some(v) = file.take("vocab_cutoff")? {
            cfg.vocab_cutoff = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SldsError::Invalid(msg));
        if self.kind == ModelKind::Lm {
            if self.latent_dim != 0 {
                return bad("LM takes no latent; set d = 0".into());
            }
        } else if self.latent_dim == 0 {
            return bad(format!("{} needs d >= 1", self.kind));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("embed and hidden must be >= 1".into());
        }
        if self.kind.has_latent() && (self.recog_hidden == 0 || self.posterior_hidden == 0) {
            return bad("recognition sizes must be >= 1".into());
        }
        if self.kind == ModelKind::Slds && self.state_embed == 0 {
            return bad("state_embed must be >= 1".into());
        }
        Ok(())
    }

    /// Echoes the architecture into checkpoint metadata.
    pub fn to_meta(&self, meta: &mut BTreeMap<String, String>) {
        meta.insert("config.kind".into(), self.kind.to_string());
        meta.insert("config.d".into(), self.latent_dim.to_string());
        meta.insert("config.embed".into(), self.embed_dim.to_string());
        meta.insert("config.hidden".into(), self.hidden_dim.to_string());
        meta.insert("config.recog_hidden".into(), self.recog_hidden.to_string());
        meta.insert("config.state_embed".into(), self.state_embed.to_string());
        meta.insert("config.posterior_hidden".into(), self.posterior_hidden.to_string());
        meta.insert("config.vocab_cutoff".into(), self.vocab_cutoff.to_string());
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<ModelConfig> {
        fn grab<T: FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = meta.get(key).ok_or_else(|| SldsError::ConfigMismatch {
                msg: format!("checkpoint metadata missing `{key}`"),
            })?;
            raw.parse().map_err(|_| SldsError::ConfigMismatch {
                msg: format!("checkpoint metadata `{key}` = `{raw}` unreadable"),
            })
        }
        let kind: String = grab(meta, "config.kind")?;
        let kind = ModelKind::from_str(&kind)
            .map_err(|msg| SldsError::ConfigMismatch { msg })?;
        Ok(ModelConfig {
            kind,
            latent_dim: grab(meta, "config.d")?,
            embed_dim: grab(meta, "config.embed")?,
            hidden_dim: grab(meta, "config.hidden")?,
            recog_hidden: grab(meta, "config.recog_hidden")?,
            state_embed: grab(meta, "config.state_embed")?,
            posterior_hidden: grab(meta, "config.posterior_hidden")?,
            vocab_cutoff: grab(meta, "config.vocab_cutoff")?,
        })
    }
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Stories per optimizer step (gradients accumulate across the batch).
    pub batch: usize,
    /// Global gradient norm clip.
    pub clip: f64,
    pub seed: u64,
    /// Percentage of stories that keep their gold labels (0..=100).
    pub label_fraction: f64,
    /// Linear KL weight ramp over the first epoch.
    pub kl_warmup: bool,
    /// Gumbel-Softmax temperature for relaxed state samples.
    pub temperature: f64,
    /// Weight on the Σ log q(S = gold) term for labeled stories.
    pub supervision_weight: f64,
    /// Early stopping: epochs without validation improvement.
    pub patience: usize,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 1e-3,
            batch: 8,
            clip: 5.0,
            seed: 0,
            label_fraction: 100.0,
            kl_warmup: true,
            temperature: 1.0,
            supervision_weight: 1.0,
            patience: 3,
            train_frac: 0.8,
            val_frac: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn from_file(file: &mut ConfigFile) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(v) = file.take("epochs")? {
            cfg.epochs = v;
        }
        if let Some(v) = file.take("lr")? {
            cfg.lr = v;
        }
        if let Some(v) = file.take("batch")? {
            cfg.batch = v;
        }
        if let Some(v) = file.take("clip")? {
            cfg.clip = v;
        }
        if let Some(v) = file.take("seed")? {
            cfg.seed = v;
        }
        if let Some(v) = file.take("label_fraction")? {
            cfg.label_fraction = v;
        }
        if let Some(v) = file.take("kl_warmup")? {
            cfg.kl_warmup = v;
        }
        if let Some(v) = file.take("temperature")? {
            cfg.temperature = v;
        }
        if let Some(v) = file.take("supervision_weight")? {
            cfg.supervision_weight = v;
        }
        if let Some(v) = file.take("patience")? {
            cfg.patience = v;
        }
        if let Some(v) = file.take("train_frac")? {
            cfg.train_frac = v;
        }
        if let Some(v) = file.take("val_frac")? {
            cfg.val_frac = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SldsError::Invalid(msg));
        if self.epochs == 0 || self.batch == 0 {
            return bad("epochs and batch must be >= 1".into());
        }
        if !(self.lr > 0.0) || !(self.clip > 0.0) || !(self.temperature > 0.0) {
            return bad("lr, clip, and temperature must be positive".into());
        }
        if !(0.0..=100.0).contains(&self.label_fraction) {
            return bad(format!("label_fraction {} outside 0..=100", self.label_fraction));
        }
        if self.supervision_weight < 0.0 {
            return bad("supervision_weight must be >= 0".into());
        }
        if !(self.train_frac > 0.0) || self.val_frac < 0.0 || self.train_frac + self.val_frac > 1.0
        {
            return bad("train_frac/val_frac must be a valid split".into());
        }
        Ok(())
    }
}

/// Parsed key=value file. Keys are taken out as they are consumed;
/// whatever remains at `ensure_empty` is reported as unknown.
#[derive(Debug)]
pub struct ConfigFile {
    path: PathBuf,
    entries: BTreeMap<String, (String, usize)>,
}

impl ConfigFile {
    /// An empty file stand-in for runs without a config file.
    pub fn empty() -> ConfigFile {
        ConfigFile {
            path: PathBuf::from("<none>"),
            entries: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path).map_err(|e| SldsError::io(path, e))?;
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(SldsError::parse(path, idx + 1, format!("expected key=value, got `{raw}`")));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(SldsError::parse(path, idx + 1, "empty key"));
            }
            if entries.insert(key.clone(), (value, idx + 1)).is_some() {
                return Err(SldsError::parse(path, idx + 1, format!("duplicate key `{key}`")));
            }
        }
        Ok(ConfigFile {
            path: path.to_path_buf(),
            entries,
        })
    }

    /// Consumes and parses one key if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((value, line)) => value.parse().map(Some).map_err(|_| SldsError::ConfigValue {
                key: key.into(),
                msg: format!("`{value}` at {}:{line}", self.path.display()),
            }),
        }
    }

    /// Errors if any keys were never consumed, listing them all.
    pub fn ensure_empty(&self) -> Result<()> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            Err(SldsError::ConfigKeys {
                keys: self.entries.keys().cloned().collect(),
            })
        }
    }
}
