//! Flat `key = value` configuration files.
//!
//! Keys mirror the training configuration fields. Blank lines and lines
//! starting with `#` are ignored.

use std::path::Path;

use crate::error::{Error, Result};
use crate::quantizer::EstimatorKind;
use crate::trainer::TrainConfig;

/// Optional settings layered onto a [`TrainConfig`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub run_id: Option<String>,
    pub epochs: Option<usize>,
    pub updates_per_epoch: Option<usize>,
    pub learning_rate: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub estimator: Option<EstimatorKind>,
    pub cl_weight: Option<f64>,
    pub na_ratio_db: Option<f64>,
    pub quantizer_bits: Option<u32>,
    pub p: Option<usize>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub resample_x: Option<bool>,
    pub resample_q: Option<bool>,
    pub decoder_output_prelu: Option<bool>,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

impl ConfigOverrides {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            out.set(key.trim(), value.trim())?;
        }
        Ok(out)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "run_id" => self.run_id = Some(value.to_string()),
            "epochs" => self.epochs = Some(parse(key, value)?),
            "updates_per_epoch" | "updates" => self.updates_per_epoch = Some(parse(key, value)?),
            "learning_rate" => self.learning_rate = Some(parse(key, value)?),
            "adam_beta1" => self.adam_beta1 = Some(parse(key, value)?),
            "adam_beta2" => self.adam_beta2 = Some(parse(key, value)?),
            "adam_eps" => self.adam_eps = Some(parse(key, value)?),
            "estimator" => self.estimator = Some(value.parse()?),
            "cl_weight" | "cl" => self.cl_weight = Some(parse(key, value)?),
            "na_ratio_db" | "na_db" => self.na_ratio_db = Some(parse(key, value)?),
            "quantizer_bits" | "bits" => self.quantizer_bits = Some(parse(key, value)?),
            "p" => self.p = Some(parse(key, value)?),
            "n" => self.n = Some(parse(key, value)?),
            "seed" => self.seed = Some(parse(key, value)?),
            "resample_x" => self.resample_x = Some(parse(key, value)?),
            "resample_q" => self.resample_q = Some(parse(key, value)?),
            "decoder_output_prelu" => self.decoder_output_prelu = Some(parse(key, value)?),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Fields set in `other` win.
    pub fn merge(self, other: Self) -> Self {
        Self {
            run_id: other.run_id.or(self.run_id),
            epochs: other.epochs.or(self.epochs),
            updates_per_epoch: other.updates_per_epoch.or(self.updates_per_epoch),
            learning_rate: other.learning_rate.or(self.learning_rate),
            adam_beta1: other.adam_beta1.or(self.adam_beta1),
            adam_beta2: other.adam_beta2.or(self.adam_beta2),
            adam_eps: other.adam_eps.or(self.adam_eps),
            estimator: other.estimator.or(self.estimator),
            cl_weight: other.cl_weight.or(self.cl_weight),
            na_ratio_db: other.na_ratio_db.or(self.na_ratio_db),
            quantizer_bits: other.quantizer_bits.or(self.quantizer_bits),
            p: other.p.or(self.p),
            n: other.n.or(self.n),
            seed: other.seed.or(self.seed),
            resample_x: other.resample_x.or(self.resample_x),
            resample_q: other.resample_q.or(self.resample_q),
            decoder_output_prelu: other.decoder_output_prelu.or(self.decoder_output_prelu),
        }
    }

    /// True when any per-run estimator setting is present; presets define
    /// those themselves.
    pub fn sets_run_fields(&self) -> bool {
        self.estimator.is_some() || self.cl_weight.is_some() || self.quantizer_bits.is_some()
    }

    pub fn apply(&self, mut cfg: TrainConfig) -> Result<TrainConfig> {
        if let Some(v) = &self.run_id {
            cfg.run_id = v.clone();
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.updates_per_epoch {
            cfg.updates_per_epoch = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.adam.learning_rate = v;
        }
        if let Some(v) = self.adam_beta1 {
            cfg.adam.beta1 = v;
        }
        if let Some(v) = self.adam_beta2 {
            cfg.adam.beta2 = v;
        }
        if let Some(v) = self.adam_eps {
            cfg.adam.eps = v;
        }
        if let Some(v) = self.estimator {
            cfg.estimator.kind = v;
        }
        if let Some(v) = self.cl_weight {
            cfg.estimator.cl_weight = v;
        }
        if let Some(v) = self.na_ratio_db {
            cfg.estimator.na_ratio_db = v;
        }
        if let Some(bits) = self.quantizer_bits {
            cfg = cfg.with_quantizer_bits(bits)?;
        }
        if let Some(v) = self.p {
            cfg.data.p = v;
            cfg.model.width = v;
        }
        if let Some(v) = self.n {
            cfg.data.n = v;
        }
        if let Some(v) = self.seed {
            cfg = cfg.with_seed(v);
        }
        if let Some(v) = self.resample_x {
            cfg.data.resample_x = v;
        }
        if let Some(v) = self.resample_q {
            cfg.data.resample_q = v;
        }
        if let Some(v) = self.decoder_output_prelu {
            cfg.model.decoder_output_prelu = v;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_applies() {
        let text = "# comment\nepochs = 3\nestimator=mste\ncl_weight = 0.0\nbits=4\nseed = 9\n\n";
        let o = ConfigOverrides::parse_str(text).unwrap();
        let cfg = o.apply(TrainConfig::default()).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.estimator.kind, EstimatorKind::Mste);
        assert_eq!(cfg.quantizer_levels.len(), 16);
        assert_eq!((cfg.seed, cfg.data.seed), (9, 9));
        assert!(o.sets_run_fields());
    }

    #[test]
    fn later_layer_wins() {
        let file = ConfigOverrides::parse_str("epochs=3\nseed=1").unwrap();
        let flags = ConfigOverrides {
            epochs: Some(7),
            ..Default::default()
        };
        let merged = file.merge(flags);
        assert_eq!(merged.epochs, Some(7));
        assert_eq!(merged.seed, Some(1));
    }

    #[test]
    fn errors() {
        assert!(ConfigOverrides::parse_str("nonsense").is_err());
        assert!(ConfigOverrides::parse_str("colour = red").is_err());
        assert!(ConfigOverrides::parse_str("epochs = many").is_err());
        assert!(ConfigOverrides::parse_str("estimator = spigot").is_err());
        let bad_bits = ConfigOverrides::parse_str("bits = 3").unwrap();
        assert!(bad_bits.apply(TrainConfig::default()).is_err());
    }
}
