//! Training configuration and shipped presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CeMode {
    /// Binary cross-entropy summed over all items.
    #[default]
    #[serde(rename = "paper_binary", alias = "binary")]
    Binary,
    /// `-log p(target)`.
    Multiclass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightScaling {
    /// Neighbor weights enter attention as raw co-occurrence counts.
    #[default]
    Raw,
    /// `ln(1 + w)`.
    Log1p,
}

impl WeightScaling {
    pub fn apply(self, w: u64) -> f64 {
        match self {
            WeightScaling::Raw => w as f64,
            WeightScaling::Log1p => (w as f64).ln_1p(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d: usize,
    pub num_factors: usize,
    pub layers: usize,
    pub epsilon: usize,
    pub max_neighbors: usize,
    /// Position-embedding width; `d / num_factors` when unset.
    pub d_p: Option<usize>,
    pub beta: f64,
    pub lambda: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub lr_every: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub ce_mode: CeMode,
    pub weight_scaling: WeightScaling,
    pub init_std: f64,
    pub max_session_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 100,
            num_factors: 4,
            layers: 2,
            epsilon: 3,
            max_neighbors: 12,
            d_p: None,
            beta: 5.0,
            lambda: 0.005,
            dropout: 0.2,
            batch_size: 100,
            weight_decay: 1e-5,
            base_lr: 1e-3,
            lr_decay: 0.1,
            lr_every: 3,
            max_epochs: 10,
            patience: 3,
            seed: 0,
            ce_mode: CeMode::Binary,
            weight_scaling: WeightScaling::Raw,
            init_std: 0.1,
            max_session_len: crate::dataset::DEFAULT_MAX_SESSION_LEN,
        }
    }
}

pub const PRESETS: [(&str, &str); 3] = [
    ("tmall", include_str!("../../../presets/tmall.toml")),
    ("lastfm", include_str!("../../../presets/lastfm.toml")),
    ("nowplaying", include_str!("../../../presets/nowplaying.toml")),
];

impl TrainConfig {
    pub fn chunk_dim(&self) -> usize {
        self.d / self.num_factors
    }

    pub fn position_dim(&self) -> usize {
        self.d_p.unwrap_or_else(|| self.chunk_dim())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
        Self::from_toml_str(text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("num_factors", self.num_factors),
            ("layers", self.layers),
            ("epsilon", self.epsilon),
            ("max_neighbors", self.max_neighbors),
            ("batch_size", self.batch_size),
            ("lr_every", self.lr_every),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("max_session_len", self.max_session_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d % self.num_factors != 0 {
            return Err(Error::Config(format!(
                "d = {} is not divisible by num_factors = {}",
                self.d, self.num_factors
            )));
        }
        if self.d_p == Some(0) {
            return Err(Error::Config("d_p must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("weight_decay", self.weight_decay),
            ("base_lr", self.base_lr),
            ("init_std", self.init_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for (name, _) in PRESETS {
            let cfg = TrainConfig::preset(name).unwrap();
            assert_eq!(cfg.layers, 2);
            assert_eq!((cfg.epsilon, cfg.max_neighbors, cfg.batch_size), (3, 12, 100));
        }
        assert!(TrainConfig::preset("nope").is_err());
    }

    #[test]
    fn defaults_fill_missing_keys() {
        let cfg = TrainConfig::from_toml_str("d = 8\nnum_factors = 2\n").unwrap();
        assert_eq!(cfg.chunk_dim(), 4);
        assert_eq!(cfg.position_dim(), 4);
        assert_eq!(cfg.ce_mode, CeMode::Binary);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(TrainConfig::from_toml_str("d = 10\nnum_factors = 3\n").is_err());
        assert!(TrainConfig::from_toml_str("epsilon = 0\n").is_err());
        assert!(TrainConfig::from_toml_str("bogus = 1\n").is_err());
        assert!(TrainConfig::from_toml_str("ce_mode = \"hinge\"\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = TrainConfig { d_p: Some(7), ..TrainConfig::default() };
        assert_eq!(TrainConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }
}
